#pragma once

#include "rnnid/linalg.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace rnnid {

enum class Architecture { nnarx, esn, lstm, gru };

std::string_view to_string(Architecture a);
/// Throws ParseError on an unknown tag.
Architecture architecture_from_string(std::string_view tag);

/// Model dimensions.
///
/// `n_x` is the recurrent width for ESN/LSTM/GRU and the hidden-layer width of
/// the regression network for NNARX. `n_regressors` (N) is only used by NNARX.
struct Dims {
  int n_u = 1;
  int n_y = 1;
  int n_x = 1;
  int n_regressors = 1;
};

enum class Activation { tanh, relu };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

/// NNARX regression network y_{k+1} = U0 psi(W1 u_k + U1 x_k + b1) + b0.
struct NnarxParams {
  Mat U0;  // n_y x n_h
  Vec b0;  // n_y
  Mat W1;  // n_h x n_u
  Mat U1;  // n_h x N(n_y + n_u)
  Vec b1;  // n_h
  Activation activation = Activation::tanh;
  double lipschitz = 1.0;
};

/// Echo state network. W_x, W_u, W_y are generated once and never trained.
struct EsnParams {
  Mat W_x;     // n_x x n_x, sparse in content
  Mat W_u;     // n_x x n_u
  Mat W_y;     // n_x x n_y
  Mat W_out1;  // n_y x n_x
  Mat W_out2;  // n_y x n_u
  double spectral_norm_Wx = 0.0;
};

/// One gate or candidate block: pre-activation W u + U h + b.
struct GateBlock {
  Mat W;
  Mat U;
  Vec b;
};

struct LstmParams {
  GateBlock forget, input, cell, output;
  Mat U_y;  // n_y x n_x
  Vec b_y;
};

struct GruParams {
  GateBlock candidate;  // (W_r, U_r, b_r)
  GateBlock update;     // (W_z, U_z, b_z)
  GateBlock reset;      // (W_f, U_f, b_f)
  Mat U_o;              // n_y x n_x
  Vec b_o;
};

using Network = std::variant<NnarxParams, EsnParams, LstmParams, GruParams>;

/// Weights of one model together with its dimensions.
///
/// Gradients returned by `bptt_gradient` use the same type: every matrix then
/// holds dL/d(entry).
struct ModelParams {
  Dims dims;
  Network net;
  std::uint64_t seed = 0;

  Architecture architecture() const { return static_cast<Architecture>(net.index()); }
};

/// Width of the state vector.
///
/// Layouts: NNARX [z_1; ...; z_N] with z_i = [y; u]; ESN [x; u_{k-1}];
/// LSTM [chi; xi]; GRU x.
int state_size(Architecture arch, const Dims& dims);
inline int state_size(const ModelParams& m) { return state_size(m.architecture(), m.dims); }

/// Throws DimensionError naming the first inconsistent matrix.
void validate(const ModelParams& m);

/// All-zero weights of the right shapes (ESN reservoir also zero).
ModelParams zero_model(Architecture arch, const Dims& dims);

/// Trainable weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases
/// included. ESN reservoirs come from `generate_reservoir` with sparsity
/// min(0.9, 1 - 1/n_x).
ModelParams random_model(Architecture arch, const Dims& dims, std::uint64_t seed);

struct StepResult {
  Vec x_next;
  Vec y;
};

/// One state update x_{k+1} = f(x_k, u_k), y_k = g(x_k, u_k).
StepResult step(const ModelParams& m, const Vec& x, const Vec& u);

struct Trajectory {
  Mat y;  // n_y x T, column k is y_k
  Mat x;  // n_state x (T + 1), column k is x_k
};

/// k-fold composition of `step`. `u` holds one input per column.
Trajectory simulate(const ModelParams& m, const Vec& x0, const Mat& u);

/// dL/dPhi for L = sum_k dl_dy.col(k)' y_k through the full unrolled graph of
/// `simulate`. ESN gradients only populate W_out1 and W_out2.
ModelParams bptt_gradient(const ModelParams& m, const Vec& x0, const Mat& u, const Mat& dl_dy);

/// Squared-error loss with washout: returns sum_{k >= washout} ||y_k - y_target,k||^2
/// and, when `grad` is non-null, overwrites it with the gradient.
double squared_error_and_gradient(const ModelParams& m, const Vec& x0, const Mat& u,
                                  const Mat& y_target, int washout, ModelParams* grad);

struct ReservoirConfig {
  double sparsity = 0.9;      // fraction of exactly-zero entries in W_x
  double target_norm = 0.9;   // ||W_x||_2 after rescaling
  double input_scale = 0.1;   // W_u, W_y entries uniform in [-1, 1] times this
  double feedback_scale = 0.1;
};

/// Random sparse reservoir with ||W_x||_2 = target_norm. Output weights are zero.
ModelParams generate_reservoir(const Dims& dims, const ReservoirConfig& cfg, std::uint64_t seed);

/// Flat view of the trainable weights Phi, in a fixed per-architecture order.
Vec trainable_vector(const ModelParams& m);
void set_trainable_vector(ModelParams& m, const Vec& theta);
std::vector<std::string> trainable_names(const ModelParams& m);

// LSTM cell pieces shared with the composite and stacked models.
namespace lstm {

/// Forward quantities cached for one cell step.
struct StepCache {
  Vec u, chi, xi;       // inputs to the step
  Vec f, i, o, c;       // gate activations and candidate
  Vec chi_next, tanh_chi_next;
};

/// Advances (chi, xi) in place and records the cache.
void forward(const LstmParams& p, Vec& chi, Vec& xi, const Vec& u, StepCache& cache);

/// Backward through one cell step. On entry d_chi/d_xi hold dL/dchi_{k+1},
/// dL/dxi_{k+1}; on exit they hold the contributions to dL/dchi_k, dL/dxi_k
/// through the recurrence (the output head is not included). Adds weight
/// gradients into `grad` (gate blocks only) and, if non-null, writes dL/du.
void backward(const LstmParams& p, const StepCache& cache, Vec& d_chi, Vec& d_xi,
              LstmParams& grad, Vec* d_u);

}  // namespace lstm

/// Teacher-forced ESN run: the state update consumes y.col(k) in place of the
/// model's own output. Column k of the result is [x_k; u_{k-1}], k = 0..T.
Mat esn_teacher_forced_states(const ModelParams& m, const Vec& x0, const Mat& u, const Mat& y);

/// Zero-shaped gradient holder for a model.
ModelParams zeros_like(const ModelParams& m);

}  // namespace rnnid
