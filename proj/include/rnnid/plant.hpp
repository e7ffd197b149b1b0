#pragma once

#include "rnnid/excitation.hpp"
#include "rnnid/linalg.hpp"
#include "rnnid/training.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace rnnid {

/// Two CSTRs in series followed by a flash separator with recycle to reactor 1.
/// Reactions A -> B -> C (Arrhenius); feeds are pure A at T0.
///
/// State (12): per vessel i = 1..3: H_i [m], x_Ai, x_Bi [-], T_i [K].
/// Input (6): Q1, Q2, Q3 [kJ/s], F_f1, F_f2, F_r [kg/s].
struct PlantConfig {
  double rho = 1000.0;                       // kg/m^3
  std::array<double, 3> area = {0.3, 0.3, 0.2};  // m^2
  std::array<double, 3> kv = {12.5, 18.0, 10.0}; // outflow F_i = kv_i H_i, kg/(s m)
  double F_p = 3.0;                          // purge leaving the separator overhead, kg/s
  double kA0 = 2.0e5, EA = 5000.0;           // 1/s, K
  double kB0 = 7.0e4, EB = 5500.0;
  double dHA = -40.0, dHB = -30.0;           // kJ/kg
  double Cp = 4.2;                           // kJ/(kg K)
  double T0 = 300.0;                         // feed temperature, K
  std::array<double, 3> volatility = {3.5, 1.0, 0.5};  // alpha_A, alpha_B, alpha_C
  double dHvap = 150.0;                      // kJ/kg
  double dt = 0.01;                          // RK4 step, s
  double T_min = 250.0, T_max = 600.0;       // admissible temperature band
  double H_min = 1e-3;
  std::array<double, 6> u_nominal = {1200, 1200, 1000, 7.5, 5.5, 5.0};
  std::array<double, 6> u_lo = {600, 600, 500, 5, 3, 2};
  std::array<double, 6> u_hi = {1800, 1800, 1500, 10, 8, 8};
  std::uint64_t seed = 0;
};

void validate(const PlantConfig& c);

inline constexpr int kPlantStates = 12;
inline constexpr int kPlantInputs = 6;

/// Channel names in state order: H1, xA1, xB1, T1, H2, ...
const std::array<std::string, kPlantStates>& plant_output_names();
const std::array<std::string, kPlantInputs>& plant_input_names();

/// A state left the admissible region. `vessel` is 1-based.
class PlantEventError : public std::runtime_error {
 public:
  PlantEventError(int vessel, std::string variable, double value);
  int vessel() const noexcept { return vessel_; }
  const std::string& variable() const noexcept { return variable_; }

 private:
  int vessel_;
  std::string variable_;
};

/// Throws PlantEventError on the first breached invariant.
void check_plant_state(const PlantConfig& c, const Vec& x);

/// x_C per vessel, derived as 1 - x_A - x_B.
std::array<double, 3> c_fractions(const Vec& x);

Vec plant_rhs(const PlantConfig& c, const Vec& x, const Vec& u);

/// One classical RK4 step of length `dt`; checks invariants on the result.
Vec plant_step(const PlantConfig& c, const Vec& x, const Vec& u, double dt);

/// Steady state at constant input by damped Newton with a finite-difference Jacobian.
Vec steady_state(const PlantConfig& c, const Vec& u, const Vec& guess);
Vec nominal_steady_state(const PlantConfig& c);

/// Samples of the state at t_k = k dt_sample, k = 0..T-1, with u.col(k) held on [t_k, t_{k+1}).
Mat simulate_plant(const PlantConfig& c, const Vec& x0, const Mat& u, double dt_sample);

/// Per-channel affine map of [min, max] onto [-1, 1]; constant channels map to 0.
struct ChannelNormalizer {
  Vec min, max;

  static ChannelNormalizer fit(const std::vector<Mat>& data);
  Mat apply(const Mat& v) const;
  Mat invert(const Mat& v) const;
  /// Scale a and offset b with physical = a * normalized + b, per channel.
  Vec scale() const;
  Vec offset() const;
};

struct Normalizer {
  ChannelNormalizer u, y;
};

Json normalizer_to_json(const Normalizer& n);
Normalizer normalizer_from_json(const Json& j);

/// Default benchmark excitation: 5 levels across each actuator range, holds of 20..200 samples.
ExcitationSpec plant_excitation(const PlantConfig& c, std::uint64_t seed);

struct PlantDataset {
  std::vector<Sequence> raw;         // SI units
  std::vector<Sequence> normalized;
  Normalizer normalizer;
  std::vector<std::string> log;      // discarded attempts
};

/// One fresh excitation per sequence from the nominal steady state; a
/// sequence hitting a plant event is discarded and redrawn from the next substream.
PlantDataset collect_dataset(const PlantConfig& c, const ExcitationSpec& spec, int n_sequences,
                             int T_s, double dt_sample);

/// Random partition of 0..n-1 into sets of the given sizes.
DatasetSplit make_split(int n_train, int n_val, int n_test, int T_s, int T_w, std::uint64_t seed);

Json split_to_json(const DatasetSplit& s);
DatasetSplit split_from_json(const Json& j);

}  // namespace rnnid
