#include "rnnid/certificates.hpp"

#include "rnnid/errors.hpp"

#include <algorithm>
#include <cmath>

namespace rnnid {

std::string_view to_string(StabilityProperty p) {
  switch (p) {
    case StabilityProperty::none: return "none";
    case StabilityProperty::iss: return "ISS";
    case StabilityProperty::delta_iss: return "dISS";
  }
  return "?";
}

namespace {

// 1 / (1 - sigma(s)) without forming 1 - sigma(s).
double inv_one_minus_sigmoid(double s) { return 1.0 + std::exp(std::min(s, 700.0)); }

double dsigmoid_from_value(double s) { return s * (1.0 - s); }

void require_finite(const ModelParams& m) {
  if (!trainable_vector(m).allFinite()) throw NumericError("certificate: non-finite weights");
}

}  // namespace

double nu_nnarx(const NnarxParams& p, int n_regressors) {
  const double n0 = spectral_norm(p.U0).value;
  const double n1 = spectral_norm(p.U1).value;
  return n0 * n1 - 1.0 / (p.lipschitz * std::sqrt(static_cast<double>(n_regressors)));
}

double nu_esn(const EsnParams& p) {
  const double wx = spectral_norm(p.W_x, 5000, 1e-12).value;
  if (!(wx < 1.0))
    throw PreconditionError("ESN reservoir violates ||W_x||_2 < 1 (generation contract)");
  return spectral_norm(Mat(p.W_x + p.W_y * p.W_out1)).value - 1.0;
}

namespace {

struct LstmScalars {
  double sf, si, so, sc;  // stacked infinity norms
  SpectralNorm nf, ni, nc, no;
};

LstmScalars lstm_scalars(const LstmParams& p) {
  return {stacked_inf_norm(p.forget.W, p.forget.U, p.forget.b),
          stacked_inf_norm(p.input.W, p.input.U, p.input.b),
          stacked_inf_norm(p.output.W, p.output.U, p.output.b),
          stacked_inf_norm(p.cell.W, p.cell.U, p.cell.b),
          spectral_norm(p.forget.U),
          spectral_norm(p.input.U),
          spectral_norm(p.cell.U),
          spectral_norm(p.output.U)};
}

// Margins and their partials with respect to the eight scalars
// (sf, si, so, sc, nf, ni, nc, no).
struct LstmEval {
  LstmMargins m;
  double d_iss[8];
  double d_d1[8];
  double d_d2[8];
};

LstmEval lstm_eval(const LstmScalars& s) {
  const double nf = s.nf.value, ni = s.ni.value, nc = s.nc.value, no = s.no.value;
  const double Sf = sigmoid(s.sf), Si = sigmoid(s.si), So = sigmoid(s.so);
  const double Pc = clamped_tanh(s.sc);
  const double Ef = inv_one_minus_sigmoid(s.sf);
  const double dSf = dsigmoid_from_value(Sf), dSi = dsigmoid_from_value(Si),
               dSo = dsigmoid_from_value(So), dPc = 1.0 - Pc * Pc;
  const double dEf = std::exp(std::min(s.sf, 700.0));

  const double q = Si * Pc * Ef;
  const double Px = clamped_tanh(q);
  const double alpha = 0.25 * nf * q + Si * nc + 0.25 * ni * Pc;

  LstmEval e{};
  e.m.bounds = {Sf, Si, So, Pc, Px, alpha};
  e.m.iss = Sf + So * Si * nc - 1.0;
  e.m.delta_iss[0] = -1.0 + Sf + alpha * So + 0.25 * Px * no - 0.25 * Sf * Px * no;
  e.m.delta_iss[1] = 0.25 * Sf * Px * no - 1.0;
  e.m.norm_residual = std::max({s.nf.residual, s.ni.residual, s.nc.residual, s.no.residual});

  const double q_sf = Si * Pc * dEf, q_si = dSi * Pc * Ef, q_sc = Si * dPc * Ef;
  const double dPx = 1.0 - Px * Px;
  const double Px_sf = dPx * q_sf, Px_si = dPx * q_si, Px_sc = dPx * q_sc;
  const double a_sf = 0.25 * nf * q_sf;
  const double a_si = 0.25 * nf * q_si + dSi * nc;
  const double a_sc = 0.25 * nf * q_sc + 0.25 * ni * dPc;
  const double a_nf = 0.25 * q, a_ni = 0.25 * Pc, a_nc = Si;

  // order: sf, si, so, sc, nf, ni, nc, no
  const double iss[8] = {dSf, So * dSi * nc, dSo * Si * nc, 0, 0, 0, So * Si, 0};
  const double d1[8] = {dSf + a_sf * So + 0.25 * no * (Px_sf * (1.0 - Sf) - Px * dSf),
                        a_si * So + 0.25 * no * (1.0 - Sf) * Px_si,
                        alpha * dSo,
                        a_sc * So + 0.25 * no * (1.0 - Sf) * Px_sc,
                        a_nf * So,
                        a_ni * So,
                        a_nc * So,
                        0.25 * Px * (1.0 - Sf)};
  const double d2[8] = {0.25 * no * (dSf * Px + Sf * Px_sf),
                        0.25 * Sf * no * Px_si,
                        0,
                        0.25 * Sf * no * Px_sc,
                        0,
                        0,
                        0,
                        0.25 * Sf * Px};
  std::copy(iss, iss + 8, e.d_iss);
  std::copy(d1, d1 + 8, e.d_d1);
  std::copy(d2, d2 + 8, e.d_d2);
  return e;
}

}  // namespace

LstmMargins nu_lstm(const LstmParams& p) { return lstm_eval(lstm_scalars(p)).m; }

namespace {

struct GruScalars {
  double sf, sz, sr;      // stacked infinity norms
  double nur, nuf, nuz;   // infinity norms of U_r, U_f, U_z
};

GruScalars gru_scalars(const GruParams& p) {
  return {stacked_inf_norm(p.reset.W, p.reset.U, p.reset.b),
          stacked_inf_norm(p.update.W, p.update.U, p.update.b),
          stacked_inf_norm(p.candidate.W, p.candidate.U, p.candidate.b),
          inf_norm(p.candidate.U), inf_norm(p.reset.U), inf_norm(p.update.U)};
}

}  // namespace

GruMargins nu_gru(const GruParams& p) {
  const GruScalars s = gru_scalars(p);
  GruMargins g;
  g.bounds = {sigmoid(s.sf), sigmoid(s.sz), clamped_tanh(s.sr)};
  g.iss = s.nur * g.bounds.sigma_f - 1.0;
  g.delta_iss = s.nur * (0.25 * s.nuf + g.bounds.sigma_f) +
                0.25 * (1.0 + g.bounds.phi_r) * inv_one_minus_sigmoid(s.sz) * s.nuz - 1.0;
  return g;
}

double CertificateReport::max_margin() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& x : margins) m = std::max(m, x.value);
  return m;
}

CertificateReport certify(const ModelParams& m) {
  validate(m);
  require_finite(m);
  CertificateReport r;
  r.architecture = m.architecture();
  bool iss_ok = true;
  std::visit(
      [&](const auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, NnarxParams>) {
          const SpectralNorm n0 = spectral_norm(net.U0), n1 = spectral_norm(net.U1);
          r.margins.push_back({"nnarx", nu_nnarx(net, m.dims.n_regressors), "ISS+dISS"});
          r.auxiliary["norm_U0"] = n0.value;
          r.auxiliary["norm_U1"] = n1.value;
          r.auxiliary["L_psi"] = net.lipschitz;
          r.norm_residual = std::max(n0.residual, n1.residual);
        } else if constexpr (std::is_same_v<T, EsnParams>) {
          const SpectralNorm wx = spectral_norm(net.W_x, 5000, 1e-12);
          const SpectralNorm cl = spectral_norm(Mat(net.W_x + net.W_y * net.W_out1));
          r.margins.push_back({"esn", nu_esn(net), "ISS+dISS"});
          r.auxiliary["norm_Wx"] = wx.value;
          r.auxiliary["norm_Wx_plus_WyWout1"] = cl.value;
          r.norm_residual = std::max(wx.residual, cl.residual);
        } else if constexpr (std::is_same_v<T, LstmParams>) {
          const LstmMargins lm = nu_lstm(net);
          r.margins.push_back({"lstm_iss", lm.iss, "ISS"});
          r.margins.push_back({"lstm_diss_1", lm.delta_iss[0], "dISS"});
          r.margins.push_back({"lstm_diss_2", lm.delta_iss[1], "dISS"});
          r.auxiliary["sigma_f"] = lm.bounds.sigma_f;
          r.auxiliary["sigma_i"] = lm.bounds.sigma_i;
          r.auxiliary["sigma_o"] = lm.bounds.sigma_o;
          r.auxiliary["phi_c"] = lm.bounds.phi_c;
          r.auxiliary["phi_x"] = lm.bounds.phi_x;
          r.auxiliary["alpha"] = lm.bounds.alpha;
          r.norm_residual = lm.norm_residual;
          r.notes.push_back("phi_f and phi_c are both evaluated from the stacked [W_c U_c b_c] block");
          iss_ok = lm.iss < -kMarginTolerance;
        } else {
          const GruMargins gm = nu_gru(net);
          r.margins.push_back({"gru_iss", gm.iss, "ISS"});
          r.margins.push_back({"gru_diss", gm.delta_iss, "dISS"});
          r.auxiliary["sigma_f"] = gm.bounds.sigma_f;
          r.auxiliary["sigma_z"] = gm.bounds.sigma_z;
          r.auxiliary["phi_r"] = gm.bounds.phi_r;
          iss_ok = gm.iss < -kMarginTolerance;
        }
      },
      m.net);
  r.pass = r.max_margin() < -kMarginTolerance;
  r.property = r.pass ? "both" : (iss_ok && r.margins.size() > 1 ? "ISS" : "none");
  return r;
}

Json report_to_json(const CertificateReport& r) {
  Json j;
  j["format"] = "rnnid-certificate";
  j["architecture"] = std::string(to_string(r.architecture));
  Json ms = Json::array();
  for (const auto& m : r.margins)
    ms.push_back({{"name", m.name}, {"value", m.value}, {"certifies", m.certifies}});
  j["margins"] = std::move(ms);
  j["auxiliary"] = r.auxiliary;
  j["property"] = r.property;
  j["pass"] = r.pass;
  j["norm_residual"] = r.norm_residual;
  j["notes"] = r.notes;
  return j;
}

CertificateReport report_from_json(const Json& j) {
  try {
    CertificateReport r;
    r.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    for (const auto& m : j.at("margins"))
      r.margins.push_back({m.at("name").get<std::string>(), m.at("value").get<double>(),
                           m.at("certifies").get<std::string>()});
    r.auxiliary = j.at("auxiliary").get<std::map<std::string, double>>();
    r.property = j.at("property").get<std::string>();
    r.pass = j.at("pass").get<bool>();
    r.norm_residual = j.at("norm_residual").get<double>();
    r.notes = j.value("notes", std::vector<std::string>{});
    return r;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("certificate report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Subgradients

namespace {

void add_stacked_inf_grad(GateBlock& g, const GateBlock& p, double scale) {
  if (scale == 0.0) return;
  const Eigen::Index r = stacked_inf_norm_row(p.W, p.U, p.b);
  g.W.row(r) += scale * sign_of(p.W.row(r));
  g.U.row(r) += scale * sign_of(p.U.row(r));
  g.b[r] += scale * ((p.b[r] > 0) - (p.b[r] < 0));
}

void add_inf_grad(Mat& g, const Mat& a, double scale) {
  if (scale == 0.0 || a.size() == 0) return;
  Eigen::Index r;
  a.cwiseAbs().rowwise().sum().maxCoeff(&r);
  g.row(r) += scale * sign_of(a.row(r));
}

void add_spectral_grad(Mat& g, const SpectralNorm& n, double scale) {
  if (scale == 0.0 || n.value == 0.0) return;
  g.noalias() += scale * n.u * n.v.transpose();
}

}  // namespace

std::vector<MarginGradient> margin_gradients(const ModelParams& m, StabilityProperty target) {
  std::vector<MarginGradient> out;
  if (target == StabilityProperty::none) return out;
  validate(m);
  std::visit(
      [&](const auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, NnarxParams>) {
          const SpectralNorm n0 = spectral_norm(net.U0), n1 = spectral_norm(net.U1);
          MarginGradient g{"nnarx", nu_nnarx(net, m.dims.n_regressors), zeros_like(m)};
          auto& q = std::get<NnarxParams>(g.gradient.net);
          add_spectral_grad(q.U0, n0, n1.value);
          add_spectral_grad(q.U1, n1, n0.value);
          out.push_back(std::move(g));
        } else if constexpr (std::is_same_v<T, EsnParams>) {
          const SpectralNorm n = spectral_norm(Mat(net.W_x + net.W_y * net.W_out1));
          MarginGradient g{"esn", nu_esn(net), zeros_like(m)};
          auto& q = std::get<EsnParams>(g.gradient.net);
          if (n.value > 0) q.W_out1.noalias() += net.W_y.transpose() * (n.u * n.v.transpose());
          out.push_back(std::move(g));
        } else if constexpr (std::is_same_v<T, LstmParams>) {
          const LstmScalars s = lstm_scalars(net);
          const LstmEval e = lstm_eval(s);
          auto make = [&](const char* name, double value, const double* d) {
            MarginGradient g{name, value, zeros_like(m)};
            auto& q = std::get<LstmParams>(g.gradient.net);
            add_stacked_inf_grad(q.forget, net.forget, d[0]);
            add_stacked_inf_grad(q.input, net.input, d[1]);
            add_stacked_inf_grad(q.output, net.output, d[2]);
            add_stacked_inf_grad(q.cell, net.cell, d[3]);
            add_spectral_grad(q.forget.U, s.nf, d[4]);
            add_spectral_grad(q.input.U, s.ni, d[5]);
            add_spectral_grad(q.cell.U, s.nc, d[6]);
            add_spectral_grad(q.output.U, s.no, d[7]);
            out.push_back(std::move(g));
          };
          make("lstm_iss", e.m.iss, e.d_iss);
          if (target == StabilityProperty::delta_iss) {
            make("lstm_diss_1", e.m.delta_iss[0], e.d_d1);
            make("lstm_diss_2", e.m.delta_iss[1], e.d_d2);
          }
        } else {
          const GruScalars s = gru_scalars(net);
          const GruMargins gm = nu_gru(net);
          const double Sf = gm.bounds.sigma_f, Pr = gm.bounds.phi_r;
          const double Ez = inv_one_minus_sigmoid(s.sz);
          {
            MarginGradient g{"gru_iss", gm.iss, zeros_like(m)};
            auto& q = std::get<GruParams>(g.gradient.net);
            add_inf_grad(q.candidate.U, net.candidate.U, Sf);
            add_stacked_inf_grad(q.reset, net.reset, s.nur * dsigmoid_from_value(Sf));
            out.push_back(std::move(g));
          }
          if (target == StabilityProperty::delta_iss) {
            MarginGradient g{"gru_diss", gm.delta_iss, zeros_like(m)};
            auto& q = std::get<GruParams>(g.gradient.net);
            add_inf_grad(q.candidate.U, net.candidate.U, 0.25 * s.nuf + Sf);
            add_inf_grad(q.reset.U, net.reset.U, 0.25 * s.nur);
            add_stacked_inf_grad(q.reset, net.reset, s.nur * dsigmoid_from_value(Sf));
            add_stacked_inf_grad(q.candidate, net.candidate, 0.25 * (1.0 - Pr * Pr) * Ez * s.nuz);
            add_stacked_inf_grad(q.update, net.update,
                                 0.25 * (1.0 + Pr) * std::exp(std::min(s.sz, 700.0)) * s.nuz);
            add_inf_grad(q.update.U, net.update.U, 0.25 * (1.0 + Pr) * Ez);
            out.push_back(std::move(g));
          }
        }
      },
      m.net);
  return out;
}

double penalty_rho(const std::vector<double>& margins, const std::vector<double>& weights,
                   double slack) {
  double rho = 0.0;
  for (std::size_t j = 0; j < margins.size(); ++j) {
    const double w = j < weights.size() ? weights[j] : 1.0;
    if (w < 0) throw PreconditionError("penalty weights must be nonnegative");
    rho += w * std::max(margins[j] + slack, 0.0);
  }
  return rho;
}

std::vector<double> penalty_rho_slopes(const std::vector<double>& margins,
                                       const std::vector<double>& weights, double slack) {
  std::vector<double> d(margins.size(), 0.0);
  for (std::size_t j = 0; j < margins.size(); ++j) {
    const double w = j < weights.size() ? weights[j] : 1.0;
    d[j] = margins[j] + slack > 0.0 ? w : 0.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Probes

Vec random_state(const ModelParams& m, double half_width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-half_width, half_width);
  Vec x(state_size(m));
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = d(rng);
  return x;
}

namespace {

ExcitationSpec probe_inputs(const ModelParams& m, const ExcitationSpec& given) {
  if (!given.channels.empty()) {
    if (static_cast<int>(given.channels.size()) != m.dims.n_u)
      throw DimensionError("probe input class has the wrong number of channels");
    return given;
  }
  return ExcitationSpec::uniform(m.dims.n_u, ChannelExcitation{11, -1.0, 1.0, 1, 20});
}

}  // namespace

double EmpiricalStabilityProbe::max_terminal_distance() const {
  double d = 0.0;
  for (double v : terminal_distances) d = std::max(d, v);
  return d;
}

EmpiricalStabilityProbe probe_delta_iss(const ModelParams& m, const ProbeConfig& cfg,
                                        std::uint64_t seed) {
  if (cfg.horizon < 1) throw PreconditionError("probe horizon K must be at least 1");
  if (cfg.trials < 1) throw PreconditionError("probe needs at least one trial");
  validate(m);
  const ExcitationSpec inputs = probe_inputs(m, cfg.inputs);
  EmpiricalStabilityProbe out;
  out.trials = cfg.trials;
  out.horizon = cfg.horizon;
  out.tolerance = cfg.tolerance;
  out.input_class = inputs.describe();
  for (int t = 0; t < cfg.trials; ++t) {
    auto rng = substream(seed, static_cast<std::uint64_t>(t));
    const Vec xa = random_state(m, cfg.state_half_width, rng);
    const Vec xb = random_state(m, cfg.state_half_width, rng);
    const Mat u = generate_excitation(inputs, cfg.horizon, rng);
    const Trajectory ta = simulate(m, xa, u);
    const Trajectory tb = simulate(m, xb, u);
    out.initial_distances.push_back((xa - xb).norm());
    out.terminal_distances.push_back((ta.x.col(cfg.horizon) - tb.x.col(cfg.horizon)).norm());
  }
  return out;
}

Json probe_to_json(const EmpiricalStabilityProbe& p) {
  return Json{{"format", "rnnid-probe"},
              {"trials", p.trials},
              {"horizon", p.horizon},
              {"tolerance", p.tolerance},
              {"input_class", p.input_class},
              {"max_terminal_distance", p.max_terminal_distance()},
              {"verdict", p.verdict()}};
}

GainEstimate estimate_gain(const ModelParams& m, std::vector<double> levels, int trials,
                           int horizon, std::uint64_t seed, const ProbeConfig& base) {
  if (levels.empty()) throw PreconditionError("gain estimate needs at least one perturbation level");
  if (horizon < 1 || trials < 1) throw PreconditionError("gain estimate needs horizon, trials >= 1");
  for (double l : levels)
    if (!(l >= 0.0)) throw PreconditionError("perturbation levels must be nonnegative");
  std::sort(levels.begin(), levels.end());
  const ExcitationSpec inputs = probe_inputs(m, base.inputs);
  GainEstimate g;
  g.levels = levels;
  g.advisory = !certify(m).pass;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t li = 0; li < levels.size(); ++li) {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      auto rng = substream(seed, static_cast<std::uint64_t>(t));
      const Vec x0 = random_state(m, base.state_half_width, rng);
      const Mat u = generate_excitation(inputs, horizon, rng);
      Mat du(u.rows(), u.cols());
      for (Eigen::Index k = 0; k < du.cols(); ++k) {
        for (Eigen::Index i = 0; i < du.rows(); ++i) du(i, k) = normal(rng);
        const double n = du.col(k).norm();
        du.col(k) *= n > 0 ? levels[li] / n : 0.0;
      }
      const Trajectory a = simulate(m, x0, u);
      const Trajectory b = simulate(m, x0, Mat(u + du));
      for (Eigen::Index k = 0; k < a.x.cols(); ++k) worst = std::max(worst, (a.x.col(k) - b.x.col(k)).norm());
    }
    g.raw.push_back(worst);
    g.staircase.push_back(li == 0 ? worst : std::max(worst, g.staircase.back()));
  }
  return g;
}

}  // namespace rnnid
