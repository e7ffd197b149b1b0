#pragma once

#include "rnnid/certificates.hpp"
#include "rnnid/model_io.hpp"
#include "rnnid/models.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace rnnid {

/// One input/output record. Column k of `u` and `y` is time step k.
struct Sequence {
  Mat u;  // n_u x T
  Mat y;  // n_y x T
  int id = 0;

  Eigen::Index length() const { return u.cols(); }
};

struct DatasetSplit {
  std::vector<int> train, validation, test;
  int T_s = 1000;
  int T_w = 100;
};

/// Throws PreconditionError unless the id lists are disjoint, cover 0..n-1 and T_w < T_s.
void validate_split(const DatasetSplit& s, int n_sequences);

struct Dataset {
  std::vector<Sequence> sequences;  // indexed by id
  DatasetSplit split;

  std::vector<Sequence> subset(const std::vector<int>& ids) const;
};

/// Windows [j*stride, j*stride + T_s) over every full window, ids 0, 1, ...
std::vector<Sequence> make_subsequences(const Sequence& raw, int T_s, int T_w, int stride);

/// Initial state used when a model is run on a subsequence.
struct InitialStatePolicy {
  bool random = false;
  double half_width = 0.5;
  std::uint64_t seed = 0;
};

/// Anything the penalized training loop can optimize.
///
/// `sequence_loss` returns the unnormalized sum of per-step loss terms over
/// the counted steps k >= washout; the loop divides by the step count.
class Trainable {
 public:
  virtual ~Trainable() = default;

  virtual Vec parameters() const = 0;
  virtual void set_parameters(const Vec& theta) = 0;
  virtual int state_size() const = 0;
  virtual double sequence_loss(const Sequence& s, const Vec& x0, int washout, Vec* grad) const = 0;
  virtual Mat predict(const Sequence& s, const Vec& x0) const = 0;

  /// Certificate margins for the configured target and their gradients in
  /// parameter space. Empty when unconstrained.
  virtual std::vector<double> margins(std::vector<Vec>* gradients) const {
    if (gradients) gradients->clear();
    return {};
  }
  /// Margins of the full certificate, reported in traces.
  virtual std::vector<double> report_margins() const { return margins(nullptr); }
};

/// Adapter for the four single-network architectures.
class NetworkTrainable final : public Trainable {
 public:
  NetworkTrainable(ModelParams m, StabilityProperty target) : model_(std::move(m)), target_(target) {}

  const ModelParams& model() const { return model_; }

  Vec parameters() const override { return trainable_vector(model_); }
  void set_parameters(const Vec& theta) override { set_trainable_vector(model_, theta); }
  int state_size() const override { return rnnid::state_size(model_); }
  double sequence_loss(const Sequence& s, const Vec& x0, int washout, Vec* grad) const override;
  Mat predict(const Sequence& s, const Vec& x0) const override;
  std::vector<double> margins(std::vector<Vec>* gradients) const override;
  std::vector<double> report_margins() const override;

 private:
  ModelParams model_;
  StabilityProperty target_;
};

/// Mean per-step squared error (1 / (|I| (T_s - T_w))) sum_i sum_k ||y_k - y_m,k||^2,
/// summed over k = T_w .. T_s - 1.
double mse(const Trainable& model, const std::vector<Sequence>& data, int washout,
           const InitialStatePolicy& x0 = {});
double mse(const ModelParams& model, const std::vector<Sequence>& data, int washout,
           const InitialStatePolicy& x0 = {});

enum class OptimizerKind { adam, rmsprop };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;      // Adam
  double beta2 = 0.999;    // Adam
  double rms_alpha = 0.99; // RMSProp
  double epsilon = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  int epochs = 200;
  int batch_size = 16;
  int patience = 50;
  double penalty_weight = 1.0;
  double penalty_slack = 0.02;
  double penalty_ramp = 1.5;
  int penalty_ramp_every = 50;
  InitialStatePolicy x0;
  std::uint64_t seed = 0;
  StabilityProperty target = StabilityProperty::none;
};

/// Throws PreconditionError on invalid settings.
void validate(const TrainConfig& c);
Json config_to_json(const TrainConfig& c);
TrainConfig config_from_json(const Json& j);

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0;
  double val_mse = 0;
  std::vector<double> margins;
  double wall_seconds = 0;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;

  /// epoch, train_mse, val_mse, margin_1..m. Wall-clock is kept out so the
  /// file is reproducible.
  std::string to_csv() const;
};

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, Eigen::Index n);
  void step(Vec& theta, const Vec& grad);

 private:
  TrainConfig cfg_;
  Vec m_, v_;
  long t_ = 0;
};

struct TrainOutcome {
  TrainTrace trace;
  bool certified = false;   // returned snapshot satisfies the target certificate
  int best_epoch = -1;      // -1: model0 returned unchanged
  double best_val_mse = 0;
};

/// Penalized minibatch training L = MSE + rho(nu). On return `model` holds the
/// selected snapshot: lowest validation MSE among certified epochs, or the
/// lowest overall when none certified (outcome.certified = false).
TrainOutcome train(Trainable& model, const Dataset& data, const TrainConfig& cfg);

struct TrainResult {
  ModelParams model;
  TrainOutcome outcome;
};

TrainResult train(const ModelParams& model0, const Dataset& data, const TrainConfig& cfg);

struct EsnFit {
  ModelParams model;
  double lambda = 0;
  /// max |R (Y - Theta R)' - lambda Theta'| / (||R||_F ||Y||_F): zero at the ridge optimum.
  double orthogonality = 0;
  int lambda_increases = 0;
  bool certified = false;
};

/// Teacher-forced ridge least squares for [W_out1 W_out2]. With a target
/// property, lambda is multiplied by 10 until the certificate passes.
EsnFit train_esn(const ModelParams& esn, const std::vector<Sequence>& train, int washout,
                 double lambda, StabilityProperty target = StabilityProperty::none);

struct FitResult {
  std::vector<double> per_channel;
  double overall = 0;
  long floored_terms = 0;  // steps where |y_m,k - y_avg| < 1e-9
};

/// FIT[%] per channel: 100 (1 - mean_k |y_k - y_m,k| / |y_m,k - y_avg|) over
/// counted steps of all sequences; y_avg is the channel mean over those steps.
FitResult fit_from_predictions(const std::vector<Mat>& predictions,
                               const std::vector<Sequence>& data, int washout);
FitResult fit_metric(const Trainable& model, const std::vector<Sequence>& data, int washout);

}  // namespace rnnid
