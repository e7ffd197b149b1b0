#include "rnnid/plant.hpp"

#include "rnnid/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rnnid {

void validate(const PlantConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw PreconditionError(std::string("plant parameter ") + name + " must be positive");
  };
  positive(c.rho, "rho");
  for (int i = 0; i < 3; ++i) {
    positive(c.area[i], "area");
    positive(c.kv[i], "kv");
    positive(c.volatility[i], "volatility");
  }
  positive(c.F_p, "F_p");
  positive(c.kA0, "kA0");
  positive(c.kB0, "kB0");
  positive(c.EA, "EA");
  positive(c.EB, "EB");
  positive(c.Cp, "Cp");
  positive(c.T0, "T0");
  positive(c.dt, "dt");
  positive(c.H_min, "H_min");
  if (!(c.T_min < c.T_max)) throw PreconditionError("plant temperature band is empty");
  for (int j = 0; j < kPlantInputs; ++j)
    if (!(c.u_lo[j] <= c.u_nominal[j] && c.u_nominal[j] <= c.u_hi[j]))
      throw PreconditionError("nominal input outside actuator bounds");
}

const std::array<std::string, kPlantStates>& plant_output_names() {
  static const std::array<std::string, kPlantStates> names = {
      "H1", "xA1", "xB1", "T1", "H2", "xA2", "xB2", "T2", "H3", "xA3", "xB3", "T3"};
  return names;
}

const std::array<std::string, kPlantInputs>& plant_input_names() {
  static const std::array<std::string, kPlantInputs> names = {"Q1", "Q2", "Q3", "Ff1", "Ff2", "Fr"};
  return names;
}

namespace {

std::string event_message(int vessel, const std::string& variable, double value) {
  std::ostringstream os;
  os << "plant event in vessel " << vessel << ": " << variable << " = " << value
     << " left the admissible region";
  return os.str();
}

}  // namespace

PlantEventError::PlantEventError(int vessel, std::string variable, double value)
    : std::runtime_error(event_message(vessel, variable, value)),
      vessel_(vessel),
      variable_(std::move(variable)) {}

void check_plant_state(const PlantConfig& c, const Vec& x) {
  if (x.size() != kPlantStates) throw DimensionError("plant state must have 12 entries");
  for (int v = 0; v < 3; ++v) {
    const double H = x[4 * v], xa = x[4 * v + 1], xb = x[4 * v + 2], T = x[4 * v + 3];
    if (!(H > c.H_min)) throw PlantEventError(v + 1, "H", H);
    if (!(xa > 0.0 && xa < 1.0)) throw PlantEventError(v + 1, "xA", xa);
    if (!(xb > 0.0 && xb < 1.0)) throw PlantEventError(v + 1, "xB", xb);
    if (!(xa + xb <= 1.0)) throw PlantEventError(v + 1, "xA+xB", xa + xb);
    if (!(T >= c.T_min && T <= c.T_max)) throw PlantEventError(v + 1, "T", T);
  }
}

std::array<double, 3> c_fractions(const Vec& x) {
  return {1.0 - x[1] - x[2], 1.0 - x[5] - x[6], 1.0 - x[9] - x[10]};
}

Vec plant_rhs(const PlantConfig& c, const Vec& x, const Vec& u) {
  if (x.size() != kPlantStates || u.size() != kPlantInputs)
    throw DimensionError("plant expects 12 states and 6 inputs");
  const double H1 = x[0], xA1 = x[1], xB1 = x[2], T1 = x[3];
  const double H2 = x[4], xA2 = x[5], xB2 = x[6], T2 = x[7];
  const double H3 = x[8], xA3 = x[9], xB3 = x[10], T3 = x[11];
  const double Q1 = u[0], Q2 = u[1], Q3 = u[2], Ff1 = u[3], Ff2 = u[4], Fr = u[5];

  const double F1 = c.kv[0] * H1, F2 = c.kv[1] * H2, F3 = c.kv[2] * H3;
  const double M1 = c.rho * c.area[0] * H1, M2 = c.rho * c.area[1] * H2,
               M3 = c.rho * c.area[2] * H3;
  auto kA = [&](double T) { return c.kA0 * std::exp(-c.EA / T); };
  auto kB = [&](double T) { return c.kB0 * std::exp(-c.EB / T); };

  // Overhead composition from constant relative volatilities.
  const double xC3 = 1.0 - xA3 - xB3;
  const double denom = c.volatility[0] * xA3 + c.volatility[1] * xB3 + c.volatility[2] * xC3;
  const double xAR = c.volatility[0] * xA3 / denom, xBR = c.volatility[1] * xB3 / denom;
  const double F_ov = Fr + c.F_p;

  const double kA1 = kA(T1), kB1 = kB(T1), kA2 = kA(T2), kB2 = kB(T2);
  Vec d(kPlantStates);
  d[0] = (Ff1 + Fr - F1) / (c.rho * c.area[0]);
  d[1] = (Ff1 * (1.0 - xA1) + Fr * (xAR - xA1)) / M1 - kA1 * xA1;
  d[2] = (-Ff1 * xB1 + Fr * (xBR - xB1)) / M1 + kA1 * xA1 - kB1 * xB1;
  d[3] = (Ff1 * (c.T0 - T1) + Fr * (T3 - T1)) / M1 +
         (-c.dHA * kA1 * xA1 - c.dHB * kB1 * xB1) / c.Cp + Q1 / (M1 * c.Cp);
  d[4] = (F1 + Ff2 - F2) / (c.rho * c.area[1]);
  d[5] = (F1 * (xA1 - xA2) + Ff2 * (1.0 - xA2)) / M2 - kA2 * xA2;
  d[6] = (F1 * (xB1 - xB2) - Ff2 * xB2) / M2 + kA2 * xA2 - kB2 * xB2;
  d[7] = (F1 * (T1 - T2) + Ff2 * (c.T0 - T2)) / M2 +
         (-c.dHA * kA2 * xA2 - c.dHB * kB2 * xB2) / c.Cp + Q2 / (M2 * c.Cp);
  d[8] = (F2 - F_ov - F3) / (c.rho * c.area[2]);
  d[9] = (F2 * (xA2 - xA3) - F_ov * (xAR - xA3)) / M3;
  d[10] = (F2 * (xB2 - xB3) - F_ov * (xBR - xB3)) / M3;
  d[11] = F2 * (T2 - T3) / M3 + (Q3 - F_ov * c.dHvap) / (M3 * c.Cp);
  return d;
}

Vec plant_step(const PlantConfig& c, const Vec& x, const Vec& u, double dt) {
  const Vec k1 = plant_rhs(c, x, u);
  const Vec k2 = plant_rhs(c, x + 0.5 * dt * k1, u);
  const Vec k3 = plant_rhs(c, x + 0.5 * dt * k2, u);
  const Vec k4 = plant_rhs(c, x + dt * k3, u);
  Vec next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  check_plant_state(c, next);
  return next;
}

Vec steady_state(const PlantConfig& c, const Vec& u, const Vec& guess) {
  Vec x = guess;
  Vec f = plant_rhs(c, x, u);
  for (int it = 0; it < 100 && f.cwiseAbs().maxCoeff() > 1e-13; ++it) {
    Mat J(kPlantStates, kPlantStates);
    for (int j = 0; j < kPlantStates; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(x[j]));
      Vec xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      J.col(j) = (plant_rhs(c, xp, u) - plant_rhs(c, xm, u)) / (2.0 * h);
    }
    const Vec dx = J.partialPivLu().solve(-f);
    double t = 1.0;
    const double f0 = f.norm();
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      const Vec xn = x + t * dx;
      const Vec fn = plant_rhs(c, xn, u);
      if (fn.allFinite() && fn.norm() < f0) {
        x = xn;
        f = fn;
        break;
      }
    }
  }
  if (!f.allFinite() || f.cwiseAbs().maxCoeff() > 1e-8)
    throw NumericError("steady-state iteration did not converge");
  return x;
}

Vec nominal_steady_state(const PlantConfig& c) {
  Vec guess(kPlantStates);
  guess << 1, 0.5, 0.3, 330, 1, 0.4, 0.4, 340, 1, 0.3, 0.5, 340;
  Vec u(kPlantInputs);
  for (int j = 0; j < kPlantInputs; ++j) u[j] = c.u_nominal[j];
  return steady_state(c, u, guess);
}

Mat simulate_plant(const PlantConfig& c, const Vec& x0, const Mat& u, double dt_sample) {
  if (u.rows() != kPlantInputs) throw DimensionError("plant input sequence must have 6 rows");
  const double ratio = dt_sample / c.dt;
  const long sub = std::lround(ratio);
  if (sub < 1 || std::abs(ratio - static_cast<double>(sub)) > 1e-9 * ratio)
    throw PreconditionError("the integration step must divide the sampling time");
  check_plant_state(c, x0);
  Mat y(kPlantStates, u.cols());
  Vec x = x0;
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    y.col(k) = x;
    const Vec uk = u.col(k);
    for (long s = 0; s < sub; ++s) x = plant_step(c, x, uk, c.dt);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Normalizer

ChannelNormalizer ChannelNormalizer::fit(const std::vector<Mat>& data) {
  if (data.empty()) throw PreconditionError("normalizer needs data");
  ChannelNormalizer n;
  n.min = data.front().rowwise().minCoeff();
  n.max = data.front().rowwise().maxCoeff();
  for (const auto& m : data) {
    if (m.rows() != n.min.size()) throw DimensionError("normalizer data have inconsistent widths");
    n.min = n.min.cwiseMin(m.rowwise().minCoeff());
    n.max = n.max.cwiseMax(m.rowwise().maxCoeff());
  }
  return n;
}

Vec ChannelNormalizer::scale() const {
  Vec a = 0.5 * (max - min);
  return a;
}

Vec ChannelNormalizer::offset() const { return 0.5 * (max + min); }

Mat ChannelNormalizer::apply(const Mat& v) const {
  if (v.rows() != min.size()) throw DimensionError("normalizer applied to wrong channel count");
  Mat out(v.rows(), v.cols());
  for (Eigen::Index c = 0; c < v.rows(); ++c) {
    // 2 (v - min) / (max - min) - 1 maps min and max to exactly -1 and 1.
    const double range = max[c] - min[c];
    if (range > 0) out.row(c) = 2.0 * (v.row(c).array() - min[c]) / range - 1.0;
    else out.row(c).setZero();
  }
  return out;
}

Mat ChannelNormalizer::invert(const Mat& v) const {
  if (v.rows() != min.size()) throw DimensionError("normalizer applied to wrong channel count");
  Mat out(v.rows(), v.cols());
  for (Eigen::Index c = 0; c < v.rows(); ++c) {
    const double half = 0.5 * (max[c] - min[c]), mid = 0.5 * (max[c] + min[c]);
    out.row(c) = v.row(c).array() * half + mid;
  }
  return out;
}

Json normalizer_to_json(const Normalizer& n) {
  return Json{{"format", "rnnid-normalizer"},
              {"u_min", vector_to_json(n.u.min)},
              {"u_max", vector_to_json(n.u.max)},
              {"y_min", vector_to_json(n.y.min)},
              {"y_max", vector_to_json(n.y.max)}};
}

Normalizer normalizer_from_json(const Json& j) {
  if (j.value("format", std::string()) != "rnnid-normalizer")
    throw ParseError("not a normalizer file");
  Normalizer n;
  n.u.min = vector_from_json(j.at("u_min"), "u_min");
  n.u.max = vector_from_json(j.at("u_max"), "u_max");
  n.y.min = vector_from_json(j.at("y_min"), "y_min");
  n.y.max = vector_from_json(j.at("y_max"), "y_max");
  if (n.u.min.size() != n.u.max.size() || n.y.min.size() != n.y.max.size())
    throw ParseError("normalizer min/max lengths differ");
  return n;
}

// ---------------------------------------------------------------------------
// Data collection

ExcitationSpec plant_excitation(const PlantConfig& c, std::uint64_t seed) {
  ExcitationSpec s;
  s.seed = seed;
  for (int j = 0; j < kPlantInputs; ++j) s.channels.push_back({5, c.u_lo[j], c.u_hi[j], 20, 200});
  return s;
}

PlantDataset collect_dataset(const PlantConfig& c, const ExcitationSpec& spec, int n_sequences,
                             int T_s, double dt_sample) {
  validate(c);
  validate(spec);
  if (static_cast<int>(spec.channels.size()) != kPlantInputs)
    throw DimensionError("plant excitation must have 6 channels");
  if (n_sequences < 1 || T_s < 1) throw PreconditionError("need at least one nonempty sequence");
  const Vec xs = nominal_steady_state(c);
  PlantDataset d;
  std::uint64_t stream = 0;
  const std::uint64_t max_streams = 10ull * static_cast<std::uint64_t>(n_sequences) + 100;
  while (static_cast<int>(d.raw.size()) < n_sequences) {
    if (stream >= max_streams) throw NumericError("too many plant events while collecting data");
    auto rng = substream(spec.seed, stream++);
    const Mat u = generate_excitation(spec, T_s, rng);
    try {
      const Mat y = simulate_plant(c, xs, u, dt_sample);
      d.raw.push_back({u, y, static_cast<int>(d.raw.size())});
    } catch (const PlantEventError& e) {
      d.log.push_back("stream " + std::to_string(stream - 1) + " discarded: " + e.what());
    }
  }
  std::vector<Mat> us, ys;
  for (const auto& s : d.raw) {
    us.push_back(s.u);
    ys.push_back(s.y);
  }
  d.normalizer.u = ChannelNormalizer::fit(us);
  d.normalizer.y = ChannelNormalizer::fit(ys);
  for (const auto& s : d.raw)
    d.normalized.push_back({d.normalizer.u.apply(s.u), d.normalizer.y.apply(s.y), s.id});
  return d;
}

DatasetSplit make_split(int n_train, int n_val, int n_test, int T_s, int T_w, std::uint64_t seed) {
  if (n_train < 0 || n_val < 0 || n_test < 0) throw PreconditionError("split sizes must be nonnegative");
  std::vector<int> ids(static_cast<std::size_t>(n_train + n_val + n_test));
  std::iota(ids.begin(), ids.end(), 0);
  auto rng = substream(seed, 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  DatasetSplit s;
  s.T_s = T_s;
  s.T_w = T_w;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.validation.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  s.test.assign(ids.begin() + n_train + n_val, ids.end());
  for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end());
  validate_split(s, static_cast<int>(ids.size()));
  return s;
}

Json split_to_json(const DatasetSplit& s) {
  return Json{{"format", "rnnid-split"}, {"train", s.train}, {"validation", s.validation},
              {"test", s.test},          {"T_s", s.T_s},     {"T_w", s.T_w}};
}

DatasetSplit split_from_json(const Json& j) {
  try {
    DatasetSplit s;
    s.train = j.at("train").get<std::vector<int>>();
    s.validation = j.at("validation").get<std::vector<int>>();
    s.test = j.at("test").get<std::vector<int>>();
    s.T_s = j.at("T_s").get<int>();
    s.T_w = j.at("T_w").get<int>();
    return s;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("split file: ") + e.what());
  }
}

}  // namespace rnnid
