#pragma once

#include "rnnid/certificates.hpp"
#include "rnnid/excitation.hpp"
#include "rnnid/model_io.hpp"
#include "rnnid/models.hpp"
#include "rnnid/training.hpp"

#include <string>
#include <vector>

namespace rnnid {

/// Smallest integer S with S >= (2 / eps) (ln(1 / beta) + 1).
int required_samples(double eps, double beta);

struct Box {
  Vec lo, hi;
};

/// Convex template: axis-aligned box {|y_j - c_j| <= r_j} or ellipsoid
/// {(y - c)' M (y - c) <= 1}.
struct OutputTemplate {
  enum class Kind { box, ellipsoid };
  Kind kind = Kind::box;
  Vec center;
  Vec radii;  // box
  Mat M;      // ellipsoid, symmetric positive definite

  /// Half-width along output axis j of the template scaled by rho.
  double extent(Eigen::Index j, double rho) const;
};

/// Throws PreconditionError on non-positive radii or a non-definite M.
void validate(const OutputTemplate& t);

/// Minkowski gauge of y - center with respect to the template.
double gauge(const OutputTemplate& t, const Vec& y);

/// Box centered at the data mean with radii equal to the data half-ranges.
OutputTemplate default_template(const std::vector<Sequence>& data);

struct ScenarioConfig {
  double eps = 0.05;
  double beta = 1e-6;
  int horizon = 100;
  /// Initial states: drawn uniformly from `pool` when it is nonempty,
  /// otherwise uniformly from `x0_box` (default box when empty).
  Box x0_box;
  std::vector<Vec> pool;
  ExcitationSpec inputs;  // empty: 11 levels on [-1, 1], holds 1..20
  OutputTemplate output_template;
};

/// (-0.5, 0.5) on every state coordinate, except the input-memory slots of
/// NNARX regressors and the ESN u_{k-1} block, which span the input range [-1, 1].
Box default_initial_box(const ModelParams& m);

/// Regressor states [y; u] windows taken from measured data, one per start index.
std::vector<Vec> nnarx_initial_pool(const ModelParams& m, const std::vector<Sequence>& data);

struct ScenarioResult {
  int S = 0;
  double rho = 0;
  std::vector<double> sample_gauges;  // max_k gauge(y_k) per sample
  int argmax_sample = -1;
  double eps = 0, beta = 0;
  int horizon = 0;
  bool advisory = false;  // model failed its certificate
  std::string certificate_status;
  std::string initial_measure;
  std::string input_measure;
  std::uint64_t seed = 0;
};

/// rho* = max over samples and k in {0..K} of gauge(y_k): the smallest scaling
/// of the template that covers every sampled output.
ScenarioResult scenario_reachable(const ModelParams& m, const ScenarioConfig& cfg, std::uint64_t seed);

struct SafetyVerdict {
  bool safe = false;
  double margin = 0;  // min face slack; negative when the scaled template sticks out
};

/// Closed containment of rho* times the template in the safe box.
SafetyVerdict safety_verdict(const ScenarioResult& r, const OutputTemplate& t, const Box& safe);

Json template_to_json(const OutputTemplate& t);
OutputTemplate template_from_json(const Json& j);
Json box_to_json(const Box& b);
Box box_from_json(const Json& j);

/// Scenario config file: eps, beta, horizon, optional template, x0 box,
/// inputs and safe set.
struct ScenarioFile {
  ScenarioConfig config;
  bool has_template = false;
  bool has_safe_set = false;
  Box safe_set;
};

ScenarioFile scenario_file_from_json(const Json& j);

Json scenario_report_to_json(const ScenarioResult& r, const OutputTemplate& t, const Box* safe,
                             const SafetyVerdict* verdict);

}  // namespace rnnid
