#pragma once

#include "rnnid/excitation.hpp"
#include "rnnid/model_io.hpp"
#include "rnnid/models.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace rnnid {

enum class StabilityProperty { none, iss, delta_iss };

std::string_view to_string(StabilityProperty p);

/// Margins are strict: a certificate holds when every margin is below -kMarginTolerance.
inline constexpr double kMarginTolerance = 1e-9;

double nu_nnarx(const NnarxParams& p, int n_regressors);

/// ||W_x + W_y W_out1||_2 - 1, the closed-loop reservoir matrix once y is fed back.
/// Throws PreconditionError when ||W_x||_2 >= 1.
double nu_esn(const EsnParams& p);

struct LstmBounds {
  double sigma_f = 0, sigma_i = 0, sigma_o = 0;
  double phi_c = 0;  // also used where the bound list names it phi_f
  double phi_x = 0;
  double alpha = 0;
};

struct LstmMargins {
  double iss = 0;
  double delta_iss[2] = {0, 0};
  LstmBounds bounds;
  double norm_residual = 0;
};

LstmMargins nu_lstm(const LstmParams& p);

struct GruBounds {
  double sigma_f = 0, sigma_z = 0, phi_r = 0;
};

struct GruMargins {
  double iss = 0;
  double delta_iss = 0;
  GruBounds bounds;
};

GruMargins nu_gru(const GruParams& p);

struct Margin {
  std::string name;
  double value = 0;
  /// Which property this inequality certifies: "ISS", "dISS" or "ISS+dISS".
  std::string certifies;
};

struct CertificateReport {
  Architecture architecture = Architecture::gru;
  std::vector<Margin> margins;
  std::map<std::string, double> auxiliary;
  /// "both", "ISS" or "none".
  std::string property = "none";
  bool pass = false;
  /// Largest power-iteration residual among the spectral norms used.
  double norm_residual = 0;
  std::vector<std::string> notes;

  double max_margin() const;
};

CertificateReport certify(const ModelParams& m);

Json report_to_json(const CertificateReport& r);
CertificateReport report_from_json(const Json& j);

/// A margin together with its (sub)gradient with respect to the weights.
/// Infinity norms use the sign pattern of the maximizing row, spectral norms
/// the leading singular pair.
struct MarginGradient {
  std::string name;
  double value = 0;
  ModelParams gradient;
};

/// Margins relevant for `target` (ISS: the ISS inequalities; delta_iss: every
/// inequality, since the incremental conditions dominate the ISS ones).
std::vector<MarginGradient> margin_gradients(const ModelParams& m, StabilityProperty target);

/// Piecewise-linear penalty sum_j w_j max(nu_j + slack, 0).
double penalty_rho(const std::vector<double>& margins, const std::vector<double>& weights,
                   double slack);
/// d rho / d nu_j (zero at and below the kink).
std::vector<double> penalty_rho_slopes(const std::vector<double>& margins,
                                       const std::vector<double>& weights, double slack);

// ---------------------------------------------------------------------------
// Empirical probes

/// Uniform draw from the box [-half_width, half_width]^n over the model state.
Vec random_state(const ModelParams& m, double half_width, std::mt19937_64& rng);

/// Smallest K with 0.9^K < 1e-4 is 88; rounded up to 100.
inline constexpr int kDefaultProbeHorizon = 100;

struct ProbeConfig {
  int trials = 100;
  int horizon = kDefaultProbeHorizon;
  double tolerance = 1e-3;
  double state_half_width = 1.0;
  ExcitationSpec inputs;  // empty: 11 levels on [-1, 1], holds 1..20
};

struct EmpiricalStabilityProbe {
  int trials = 0;
  int horizon = 0;
  double tolerance = 1e-3;
  std::string input_class;
  std::vector<double> initial_distances;
  std::vector<double> terminal_distances;

  double max_terminal_distance() const;
  bool verdict() const { return max_terminal_distance() < tolerance; }
};

/// Two random initial states, one shared input sequence per trial.
EmpiricalStabilityProbe probe_delta_iss(const ModelParams& m, const ProbeConfig& cfg,
                                        std::uint64_t seed);

Json probe_to_json(const EmpiricalStabilityProbe& p);

struct GainEstimate {
  std::vector<double> levels;      // ascending
  std::vector<double> raw;         // max deviation observed at each level
  std::vector<double> staircase;   // running maximum of raw
  bool advisory = false;           // model did not pass the incremental certificate
};

/// Empirical input-to-state gain: for each perturbation level d, inputs u and
/// u + du with ||du_k||_2 = d share an initial state; records max_k ||dx_k||_2.
GainEstimate estimate_gain(const ModelParams& m, std::vector<double> levels, int trials,
                           int horizon, std::uint64_t seed, const ProbeConfig& base = {});

}  // namespace rnnid
