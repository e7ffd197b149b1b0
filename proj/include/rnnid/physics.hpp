#pragma once

#include "rnnid/certificates.hpp"
#include "rnnid/model_io.hpp"
#include "rnnid/models.hpp"
#include "rnnid/plant.hpp"
#include "rnnid/training.hpp"

#include <string>
#include <vector>

namespace rnnid {

/// Inputs of one block: selected plant inputs followed by the full outputs of
/// the listed upstream blocks, in list order.
struct BlockWiring {
  std::vector<int> inputs;    // indices into u
  std::vector<int> upstream;  // block indices
};

/// Reactor 1 <- (Q1, Ff1, y3); reactor 2 <- (Q2, Ff2, y1); separator <- (Q3, Fr, y2).
std::vector<BlockWiring> default_wiring();

/// Three LSTM blocks, one per vessel, each emitting (H, xA, xB, T).
///
/// Block i at step k reads the upstream outputs y_{j,k}, which depend only on
/// the upstream state produced by the previous step, so a step never needs an
/// intra-step fixed point. Fraction channels emit out_scale * sigma(g) +
/// out_offset: sigma(g) is the physical fraction in (0, 1) and the affine part
/// maps it into the normalized data units.
struct CompositeModel {
  std::vector<ModelParams> blocks;
  std::vector<BlockWiring> wiring;
  std::vector<bool> sigmoid;  // per global output channel
  Vec out_scale, out_offset;  // per global output channel
  std::vector<bool> frozen;   // per block
  int n_u = kPlantInputs;

  int block_outputs() const { return 4; }
  int n_y() const { return static_cast<int>(blocks.size()) * block_outputs(); }
  int state_size() const;
  int hidden_units() const;
};

/// Throws DimensionError naming block and port when the wiring does not match
/// the block input widths.
void validate(const CompositeModel& cm);

/// Random blocks of n_x units. With a normalizer, fraction channels are scaled
/// so that sigma(g) is in physical units; without one they emit sigma(g).
CompositeModel build_composite(int n_x, const std::vector<BlockWiring>& wiring,
                               const Normalizer* normalizer, std::uint64_t seed);

/// Zero weights, same shapes and output maps.
CompositeModel zero_composite(const CompositeModel& like);

struct CompositeStep {
  Vec state;  // [chi_1; xi_1; chi_2; xi_2; chi_3; xi_3]
  Vec y;      // outputs y_k, vessels 1, 2, 3
};

CompositeStep composite_step(const CompositeModel& cm, const Vec& state, const Vec& u);
Mat composite_simulate(const CompositeModel& cm, const Vec& x0, const Mat& u);

struct ConsistencyPenaltyConfig {
  double weight = 0.05;
};

/// Unnormalized sum over counted steps of ||y_k - y_m,k||^2 plus
/// w * sum_vessels max(xA + xB - 1, 0), with xA, xB the physical fractions.
/// Weight gradients per block go to `grad` when non-null (frozen blocks get zeros).
double composite_sequence_loss(const CompositeModel& cm, const Vec& x0, const Sequence& s, int washout,
                               const ConsistencyPenaltyConfig& pen, std::vector<ModelParams>* grad);

/// Per-step mean of the sequence loss over a minibatch.
double composite_loss(const CompositeModel& cm, const std::vector<Sequence>& batch, int washout,
                      const ConsistencyPenaltyConfig& pen);

class CompositeTrainable final : public Trainable {
 public:
  CompositeTrainable(CompositeModel cm, ConsistencyPenaltyConfig pen) : cm_(std::move(cm)), pen_(pen) {}
  const CompositeModel& model() const { return cm_; }

  Vec parameters() const override;
  void set_parameters(const Vec& theta) override;
  int state_size() const override { return cm_.state_size(); }
  double sequence_loss(const Sequence& s, const Vec& x0, int washout, Vec* grad) const override;
  Mat predict(const Sequence& s, const Vec& x0) const override;

 private:
  CompositeModel cm_;
  ConsistencyPenaltyConfig pen_;
};

/// RMSProp by default.
TrainConfig composite_default_config();

struct CompositeTrainResult {
  CompositeModel model;
  TrainOutcome outcome;
};

CompositeTrainResult train_composite(const CompositeModel& cm0, const Dataset& data,
                                     const TrainConfig& cfg, const ConsistencyPenaltyConfig& pen = {});

/// Stacked LSTM: layer 1 reads u_k, layer l reads layer l-1's new hidden state,
/// y_k = U_y xi^(L)_k + b_y.
struct BlackBoxModel {
  std::vector<LstmParams> layers;
  Mat U_y;
  Vec b_y;
  int n_u = kPlantInputs;
  int n_x = 10;

  int n_y() const { return static_cast<int>(U_y.rows()); }
  int state_size() const { return 2 * n_x * static_cast<int>(layers.size()); }
  int hidden_units() const { return n_x * static_cast<int>(layers.size()); }
};

void validate(const BlackBoxModel& bb);
BlackBoxModel build_blackbox(int n_u, int n_y, int n_x, int n_layers, std::uint64_t seed);

Vec blackbox_parameters(const BlackBoxModel& bb);
void set_blackbox_parameters(BlackBoxModel& bb, const Vec& theta);
long parameter_count(const BlackBoxModel& bb);
long parameter_count(const CompositeModel& cm);

Mat blackbox_simulate(const BlackBoxModel& bb, const Vec& x0, const Mat& u);
/// Gradient of sum_k dl_dy.col(k)' y_k, flattened like blackbox_parameters.
Vec blackbox_gradient(const BlackBoxModel& bb, const Vec& x0, const Mat& u, const Mat& dl_dy);
double blackbox_sequence_loss(const BlackBoxModel& bb, const Vec& x0, const Sequence& s, int washout,
                              Vec* grad);

class BlackBoxTrainable final : public Trainable {
 public:
  explicit BlackBoxTrainable(BlackBoxModel bb) : bb_(std::move(bb)) {}
  const BlackBoxModel& model() const { return bb_; }

  Vec parameters() const override { return blackbox_parameters(bb_); }
  void set_parameters(const Vec& theta) override { set_blackbox_parameters(bb_, theta); }
  int state_size() const override { return bb_.state_size(); }
  double sequence_loss(const Sequence& s, const Vec& x0, int washout, Vec* grad) const override {
    return blackbox_sequence_loss(bb_, x0, s, washout, grad);
  }
  Mat predict(const Sequence& s, const Vec& x0) const override { return blackbox_simulate(bb_, x0, s.u); }

 private:
  BlackBoxModel bb_;
};

Json composite_to_json(const CompositeModel& cm);
CompositeModel composite_from_json(const Json& j);
Json blackbox_to_json(const BlackBoxModel& bb);
BlackBoxModel blackbox_from_json(const Json& j);

/// Any model file the tools understand, wrapped for prediction.
struct AnyModel {
  std::string kind;  // nnarx, esn, lstm, gru, composite, blackbox
  std::unique_ptr<Trainable> model;
  Json document;
};

AnyModel any_model_from_json(const Json& j);

struct ComparisonRow {
  std::string model;
  FitResult fit;
};

/// Header model, then one column per output channel, then overall.
std::string comparison_csv(const std::vector<ComparisonRow>& rows,
                           const std::vector<std::string>& channel_names);

}  // namespace rnnid
