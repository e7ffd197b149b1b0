#include "rnnid/verification.hpp"

#include "rnnid/errors.hpp"

#include <cmath>
#include <sstream>

namespace rnnid {

int required_samples(double eps, double beta) {
  if (!(eps > 0 && eps < 1) || !(beta > 0 && beta < 1))
    throw PreconditionError("scenario probabilities must lie in (0, 1)");
  const double bound = 2.0 / eps * (std::log(1.0 / beta) + 1.0);
  return static_cast<int>(std::ceil(bound));
}

void validate(const OutputTemplate& t) {
  if (!t.center.allFinite()) throw PreconditionError("template center must be finite");
  if (t.kind == OutputTemplate::Kind::box) {
    if (t.radii.size() != t.center.size()) throw DimensionError("template radii and center differ in length");
    for (Eigen::Index j = 0; j < t.radii.size(); ++j)
      if (!(t.radii[j] > 0) || !std::isfinite(t.radii[j]))
        throw PreconditionError("template radius " + std::to_string(j) + " is degenerate");
  } else {
    if (t.M.rows() != t.center.size() || t.M.cols() != t.center.size())
      throw DimensionError("ellipsoid matrix must be n_y x n_y");
    if (!t.M.isApprox(t.M.transpose(), 1e-12)) throw PreconditionError("ellipsoid matrix must be symmetric");
    Eigen::LLT<Mat> llt(t.M);
    if (llt.info() != Eigen::Success) throw PreconditionError("ellipsoid matrix must be positive definite");
  }
}

double OutputTemplate::extent(Eigen::Index j, double rho) const {
  if (kind == Kind::box) return rho * radii[j];
  const Mat inv = M.inverse();
  return rho * std::sqrt(inv(j, j));
}

double gauge(const OutputTemplate& t, const Vec& y) {
  if (y.size() != t.center.size()) throw DimensionError("output and template center differ in length");
  if (!y.allFinite()) throw PreconditionError("gauge needs a finite output");
  const Vec d = y - t.center;
  if (t.kind == OutputTemplate::Kind::box) return (d.array().abs() / t.radii.array()).maxCoeff();
  return std::sqrt(std::max(0.0, d.dot(t.M * d)));
}

OutputTemplate default_template(const std::vector<Sequence>& data) {
  if (data.empty()) throw PreconditionError("default template needs data");
  const Eigen::Index ny = data.front().y.rows();
  Vec lo = Vec::Constant(ny, std::numeric_limits<double>::infinity());
  Vec hi = -lo, sum = Vec::Zero(ny);
  long n = 0;
  for (const auto& s : data) {
    lo = lo.cwiseMin(s.y.rowwise().minCoeff());
    hi = hi.cwiseMax(s.y.rowwise().maxCoeff());
    sum += s.y.rowwise().sum();
    n += s.length();
  }
  OutputTemplate t;
  t.center = sum / static_cast<double>(n);
  t.radii = 0.5 * (hi - lo);
  validate(t);
  return t;
}

Box default_initial_box(const ModelParams& m) {
  const int n = state_size(m);
  Box b{Vec::Constant(n, -0.5), Vec::Constant(n, 0.5)};
  if (m.architecture() == Architecture::nnarx) {
    const int ny = m.dims.n_y, nu = m.dims.n_u;
    for (int i = 0; i < m.dims.n_regressors; ++i) {
      b.lo.segment(i * (ny + nu) + ny, nu).setConstant(-1.0);
      b.hi.segment(i * (ny + nu) + ny, nu).setConstant(1.0);
    }
  } else if (m.architecture() == Architecture::esn) {
    b.lo.tail(m.dims.n_u).setConstant(-1.0);
    b.hi.tail(m.dims.n_u).setConstant(1.0);
  }
  return b;
}

std::vector<Vec> nnarx_initial_pool(const ModelParams& m, const std::vector<Sequence>& data) {
  if (m.architecture() != Architecture::nnarx) throw PreconditionError("data windows are an NNARX initial set");
  const int N = m.dims.n_regressors, ny = m.dims.n_y, nu = m.dims.n_u;
  std::vector<Vec> pool;
  for (const auto& s : data) {
    if (s.y.rows() != ny || s.u.rows() != nu) throw DimensionError("data width differs from the model");
    // z_i = [y_{k-N+i}; u_{k-N-1+i}], i = 1..N
    for (Eigen::Index k = N; k < s.length(); ++k) {
      Vec x(N * (ny + nu));
      for (int i = 1; i <= N; ++i) {
        x.segment((i - 1) * (ny + nu), ny) = s.y.col(k - N + i);
        x.segment((i - 1) * (ny + nu) + ny, nu) = s.u.col(k - N - 1 + i);
      }
      pool.push_back(std::move(x));
    }
  }
  return pool;
}

ScenarioResult scenario_reachable(const ModelParams& m, const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.horizon < 1) throw PreconditionError("scenario horizon K must be at least 1");
  validate(m);
  validate(cfg.output_template);
  if (cfg.output_template.center.size() != m.dims.n_y)
    throw DimensionError("template dimension differs from the model output");
  ScenarioResult r;
  r.eps = cfg.eps;
  r.beta = cfg.beta;
  r.horizon = cfg.horizon;
  r.seed = seed;
  r.S = required_samples(cfg.eps, cfg.beta);
  const CertificateReport cert = certify(m);
  r.advisory = cert.property == "none";
  r.certificate_status = cert.pass ? "ISS and dISS certificate passed"
                                   : (cert.property == "ISS" ? "ISS certificate passed only"
                                                             : "certificate failed");
  const int ns = state_size(m);
  const Box box = cfg.x0_box.lo.size() ? cfg.x0_box : default_initial_box(m);
  if (cfg.pool.empty() && (box.lo.size() != ns || box.hi.size() != ns))
    throw DimensionError("initial-state box has the wrong dimension");
  ExcitationSpec inputs = cfg.inputs;
  if (inputs.channels.empty())
    inputs = ExcitationSpec::uniform(m.dims.n_u, ChannelExcitation{11, -1.0, 1.0, 1, 20});
  if (static_cast<int>(inputs.channels.size()) != m.dims.n_u)
    throw DimensionError("scenario input class has the wrong number of channels");
  r.initial_measure = cfg.pool.empty() ? "uniform on box" : "uniform over data windows";
  r.input_measure = inputs.describe();

  r.sample_gauges.reserve(static_cast<std::size_t>(r.S));
  for (int i = 0; i < r.S; ++i) {
    auto rng = substream(seed, static_cast<std::uint64_t>(i));
    Vec x0(ns);
    if (!cfg.pool.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, cfg.pool.size() - 1);
      x0 = cfg.pool[pick(rng)];
      if (x0.size() != ns) throw DimensionError("initial-state pool entry has the wrong dimension");
    } else {
      for (int j = 0; j < ns; ++j) x0[j] = std::uniform_real_distribution<double>(box.lo[j], box.hi[j])(rng);
    }
    const Mat u = generate_excitation(inputs, cfg.horizon + 1, rng);
    Trajectory tr;
    try {
      tr = simulate(m, x0, u);
    } catch (const NumericError& e) {
      throw NumericError(std::string("scenario sample diverged (") + r.certificate_status + "): " + e.what(),
                         e.step());
    }
    if (!tr.y.allFinite())
      throw NumericError("scenario sample produced non-finite outputs (" + r.certificate_status + ")");
    double g = 0.0;
    for (Eigen::Index k = 0; k <= cfg.horizon; ++k) g = std::max(g, gauge(cfg.output_template, tr.y.col(k)));
    r.sample_gauges.push_back(g);
    if (r.argmax_sample < 0 || g > r.rho) {
      r.rho = g;
      r.argmax_sample = i;
    }
  }
  return r;
}

SafetyVerdict safety_verdict(const ScenarioResult& r, const OutputTemplate& t, const Box& safe) {
  validate(t);
  if (safe.lo.size() != t.center.size() || safe.hi.size() != t.center.size())
    throw DimensionError("safe set dimension differs from the template");
  SafetyVerdict v;
  v.margin = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < t.center.size(); ++j) {
    const double e = t.extent(j, r.rho);
    v.margin = std::min({v.margin, safe.hi[j] - (t.center[j] + e), (t.center[j] - e) - safe.lo[j]});
  }
  v.safe = v.margin >= 0.0;
  return v;
}

Json template_to_json(const OutputTemplate& t) {
  Json j{{"kind", t.kind == OutputTemplate::Kind::box ? "box" : "ellipsoid"},
         {"center", vector_to_json(t.center)}};
  if (t.kind == OutputTemplate::Kind::box) j["radii"] = vector_to_json(t.radii);
  else j["M"] = matrix_to_json(t.M);
  return j;
}

OutputTemplate template_from_json(const Json& j) {
  OutputTemplate t;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    t.center = vector_from_json(j.at("center"), "center");
    if (kind == "box") {
      t.kind = OutputTemplate::Kind::box;
      t.radii = vector_from_json(j.at("radii"), "radii");
    } else if (kind == "ellipsoid") {
      t.kind = OutputTemplate::Kind::ellipsoid;
      t.M = matrix_from_json(j.at("M"), "M");
    } else {
      throw ParseError("unknown template kind '" + kind + "'");
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("template: ") + e.what());
  }
  validate(t);
  return t;
}

Json box_to_json(const Box& b) { return Json{{"lo", vector_to_json(b.lo)}, {"hi", vector_to_json(b.hi)}}; }

Box box_from_json(const Json& j) {
  try {
    Box b{vector_from_json(j.at("lo"), "lo"), vector_from_json(j.at("hi"), "hi")};
    if (b.lo.size() != b.hi.size()) throw ParseError("box bounds differ in length");
    if ((b.lo.array() > b.hi.array()).any()) throw ParseError("box has lo > hi");
    return b;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("box: ") + e.what());
  }
}

ScenarioFile scenario_file_from_json(const Json& j) {
  ScenarioFile f;
  try {
    f.config.eps = j.value("eps", f.config.eps);
    f.config.beta = j.value("beta", f.config.beta);
    f.config.horizon = j.value("horizon", f.config.horizon);
    if (j.contains("template")) {
      f.config.output_template = template_from_json(j.at("template"));
      f.has_template = true;
    }
    if (j.contains("x0_box")) f.config.x0_box = box_from_json(j.at("x0_box"));
    if (j.contains("safe_set")) {
      f.safe_set = box_from_json(j.at("safe_set"));
      f.has_safe_set = true;
    }
    if (j.contains("inputs")) {
      const auto& in = j.at("inputs");
      const int n = in.at("channels").get<int>();
      f.config.inputs = ExcitationSpec::uniform(
          n, ChannelExcitation{in.value("levels", 11), in.value("lo", -1.0), in.value("hi", 1.0),
                               in.value("min_hold", 1), in.value("max_hold", 20)});
      validate(f.config.inputs);
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("scenario config: ") + e.what());
  }
  required_samples(f.config.eps, f.config.beta);
  return f;
}

Json scenario_report_to_json(const ScenarioResult& r, const OutputTemplate& t, const Box* safe,
                             const SafetyVerdict* verdict) {
  Json j{{"format", "rnnid-verification"},
         {"eps", r.eps},
         {"beta", r.beta},
         {"S", r.S},
         {"horizon", r.horizon},
         {"rho", r.rho},
         {"argmax_sample", r.argmax_sample},
         {"seed", r.seed},
         {"advisory", r.advisory},
         {"certificate", r.certificate_status},
         {"initial_measure", r.initial_measure},
         {"input_measure", r.input_measure},
         {"template", template_to_json(t)}};
  if (safe) j["safe_set"] = box_to_json(*safe);
  if (verdict) {
    j["safe"] = verdict->safe;
    j["margin"] = verdict->margin;
  }
  return j;
}

}  // namespace rnnid
