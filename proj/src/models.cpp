#include "rnnid/models.hpp"

#include "rnnid/errors.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

namespace rnnid {

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::nnarx: return "nnarx";
    case Architecture::esn: return "esn";
    case Architecture::lstm: return "lstm";
    case Architecture::gru: return "gru";
  }
  return "?";
}

Architecture architecture_from_string(std::string_view tag) {
  if (tag == "nnarx") return Architecture::nnarx;
  if (tag == "esn") return Architecture::esn;
  if (tag == "lstm") return Architecture::lstm;
  if (tag == "gru") return Architecture::gru;
  throw ParseError("unknown architecture tag '" + std::string(tag) + "'");
}

std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ParseError("unknown activation '" + std::string(name) + "'");
}

int state_size(Architecture arch, const Dims& d) {
  switch (arch) {
    case Architecture::nnarx: return d.n_regressors * (d.n_y + d.n_u);
    case Architecture::esn: return d.n_x + d.n_u;
    case Architecture::lstm: return 2 * d.n_x;
    case Architecture::gru: return d.n_x;
  }
  return 0;
}

namespace {

void expect_shape(const Mat& m, Eigen::Index r, Eigen::Index c, const char* name) {
  if (m.rows() != r || m.cols() != c) {
    std::ostringstream os;
    os << "matrix " << name << " is " << m.rows() << "x" << m.cols() << ", expected " << r << "x"
       << c;
    throw DimensionError(os.str());
  }
  if (!m.allFinite()) throw NumericError(std::string("matrix ") + name + " has non-finite entries");
}

void expect_shape(const Vec& v, Eigen::Index r, const char* name) {
  if (v.size() != r) {
    std::ostringstream os;
    os << "vector " << name << " has length " << v.size() << ", expected " << r;
    throw DimensionError(os.str());
  }
  if (!v.allFinite()) throw NumericError(std::string("vector ") + name + " has non-finite entries");
}

void expect_gate(const GateBlock& g, int n_x, int n_u, const char* w, const char* u,
                 const char* b) {
  expect_shape(g.W, n_x, n_u, w);
  expect_shape(g.U, n_x, n_x, u);
  expect_shape(g.b, n_x, b);
}

GateBlock zero_gate(int n_x, int n_u) {
  return {Mat::Zero(n_x, n_u), Mat::Zero(n_x, n_x), Vec::Zero(n_x)};
}

void check_dims(const Dims& d) {
  if (d.n_u < 1 || d.n_y < 1 || d.n_x < 1 || d.n_regressors < 1)
    throw PreconditionError("all model dimensions must be strictly positive");
}

// Calls f(name, data, size) for every trainable array in a fixed order.
template <class M, class F>
void for_each_trainable(M& m, F&& f) {
  auto gate = [&](auto& g, const char* w, const char* u, const char* b) {
    f(w, g.W.data(), g.W.size());
    f(u, g.U.data(), g.U.size());
    f(b, g.b.data(), g.b.size());
  };
  std::visit(
      [&](auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, NnarxParams>) {
          f("U0", net.U0.data(), net.U0.size());
          f("b0", net.b0.data(), net.b0.size());
          f("W1", net.W1.data(), net.W1.size());
          f("U1", net.U1.data(), net.U1.size());
          f("b1", net.b1.data(), net.b1.size());
        } else if constexpr (std::is_same_v<T, EsnParams>) {
          f("W_out1", net.W_out1.data(), net.W_out1.size());
          f("W_out2", net.W_out2.data(), net.W_out2.size());
        } else if constexpr (std::is_same_v<T, LstmParams>) {
          gate(net.forget, "W_f", "U_f", "b_f");
          gate(net.input, "W_i", "U_i", "b_i");
          gate(net.cell, "W_c", "U_c", "b_c");
          gate(net.output, "W_o", "U_o", "b_o");
          f("U_y", net.U_y.data(), net.U_y.size());
          f("b_y", net.b_y.data(), net.b_y.size());
        } else {
          gate(net.candidate, "W_r", "U_r", "b_r");
          gate(net.update, "W_z", "U_z", "b_z");
          gate(net.reset, "W_f", "U_f", "b_f");
          f("U_o", net.U_o.data(), net.U_o.size());
          f("b_o", net.b_o.data(), net.b_o.size());
        }
      },
      m.net);
}

}  // namespace

void validate(const ModelParams& m) {
  const Dims& d = m.dims;
  check_dims(d);
  std::visit(
      [&](const auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, NnarxParams>) {
          const int ns = state_size(Architecture::nnarx, d);
          expect_shape(net.U0, d.n_y, d.n_x, "U0");
          expect_shape(net.b0, d.n_y, "b0");
          expect_shape(net.W1, d.n_x, d.n_u, "W1");
          expect_shape(net.U1, d.n_x, ns, "U1");
          expect_shape(net.b1, d.n_x, "b1");
          if (!(net.lipschitz > 0.0)) throw PreconditionError("L_psi must be positive");
          if (net.lipschitz < 1.0)
            throw PreconditionError("L_psi is below sup|psi'| = 1 of the activation");
        } else if constexpr (std::is_same_v<T, EsnParams>) {
          expect_shape(net.W_x, d.n_x, d.n_x, "W_x");
          expect_shape(net.W_u, d.n_x, d.n_u, "W_u");
          expect_shape(net.W_y, d.n_x, d.n_y, "W_y");
          expect_shape(net.W_out1, d.n_y, d.n_x, "W_out1");
          expect_shape(net.W_out2, d.n_y, d.n_u, "W_out2");
        } else if constexpr (std::is_same_v<T, LstmParams>) {
          expect_gate(net.forget, d.n_x, d.n_u, "W_f", "U_f", "b_f");
          expect_gate(net.input, d.n_x, d.n_u, "W_i", "U_i", "b_i");
          expect_gate(net.cell, d.n_x, d.n_u, "W_c", "U_c", "b_c");
          expect_gate(net.output, d.n_x, d.n_u, "W_o", "U_o", "b_o");
          expect_shape(net.U_y, d.n_y, d.n_x, "U_y");
          expect_shape(net.b_y, d.n_y, "b_y");
        } else {
          expect_gate(net.candidate, d.n_x, d.n_u, "W_r", "U_r", "b_r");
          expect_gate(net.update, d.n_x, d.n_u, "W_z", "U_z", "b_z");
          expect_gate(net.reset, d.n_x, d.n_u, "W_f", "U_f", "b_f");
          expect_shape(net.U_o, d.n_y, d.n_x, "U_o");
          expect_shape(net.b_o, d.n_y, "b_o");
        }
      },
      m.net);
}

ModelParams zero_model(Architecture arch, const Dims& d) {
  check_dims(d);
  ModelParams m;
  m.dims = d;
  switch (arch) {
    case Architecture::nnarx: {
      NnarxParams p;
      p.U0 = Mat::Zero(d.n_y, d.n_x);
      p.b0 = Vec::Zero(d.n_y);
      p.W1 = Mat::Zero(d.n_x, d.n_u);
      p.U1 = Mat::Zero(d.n_x, state_size(arch, d));
      p.b1 = Vec::Zero(d.n_x);
      m.net = std::move(p);
      break;
    }
    case Architecture::esn: {
      EsnParams p;
      p.W_x = Mat::Zero(d.n_x, d.n_x);
      p.W_u = Mat::Zero(d.n_x, d.n_u);
      p.W_y = Mat::Zero(d.n_x, d.n_y);
      p.W_out1 = Mat::Zero(d.n_y, d.n_x);
      p.W_out2 = Mat::Zero(d.n_y, d.n_u);
      m.net = std::move(p);
      break;
    }
    case Architecture::lstm: {
      LstmParams p;
      p.forget = p.input = p.cell = p.output = zero_gate(d.n_x, d.n_u);
      p.U_y = Mat::Zero(d.n_y, d.n_x);
      p.b_y = Vec::Zero(d.n_y);
      m.net = std::move(p);
      break;
    }
    case Architecture::gru: {
      GruParams p;
      p.candidate = p.update = p.reset = zero_gate(d.n_x, d.n_u);
      p.U_o = Mat::Zero(d.n_y, d.n_x);
      p.b_o = Vec::Zero(d.n_y);
      m.net = std::move(p);
      break;
    }
  }
  return m;
}

ModelParams zeros_like(const ModelParams& m) {
  ModelParams g = zero_model(m.architecture(), m.dims);
  if (auto* p = std::get_if<NnarxParams>(&m.net)) {
    auto& q = std::get<NnarxParams>(g.net);
    q.activation = p->activation;
    q.lipschitz = p->lipschitz;
  }
  g.seed = m.seed;
  return g;
}

namespace {

void fill_uniform(Mat& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

void fill_uniform(Vec& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
}

void fill_gate(GateBlock& g, int n_x, int n_u, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(n_x + n_u));
  fill_uniform(g.W, bound, rng);
  fill_uniform(g.U, bound, rng);
  fill_uniform(g.b, bound, rng);
}

}  // namespace

ModelParams random_model(Architecture arch, const Dims& d, std::uint64_t seed) {
  if (arch == Architecture::esn) {
    // Small reservoirs keep at least n_x nonzero entries.
    ReservoirConfig rc;
    rc.sparsity = std::min(rc.sparsity, 1.0 - 1.0 / static_cast<double>(std::max(d.n_x, 1)));
    ModelParams m = generate_reservoir(d, rc, seed);
    std::mt19937_64 rng(seed ^ 0x5eed07ULL);
    auto& p = std::get<EsnParams>(m.net);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d.n_x + d.n_u));
    fill_uniform(p.W_out1, bound, rng);
    fill_uniform(p.W_out2, bound, rng);
    return m;
  }
  ModelParams m = zero_model(arch, d);
  m.seed = seed;
  std::mt19937_64 rng(seed);
  std::visit(
      [&](auto& net) {
        using T = std::decay_t<decltype(net)>;
        if constexpr (std::is_same_v<T, NnarxParams>) {
          const double b1 = 1.0 / std::sqrt(static_cast<double>(d.n_u + net.U1.cols()));
          const double b0 = 1.0 / std::sqrt(static_cast<double>(d.n_x));
          fill_uniform(net.U0, b0, rng);
          fill_uniform(net.b0, b0, rng);
          fill_uniform(net.W1, b1, rng);
          fill_uniform(net.U1, b1, rng);
          fill_uniform(net.b1, b1, rng);
        } else if constexpr (std::is_same_v<T, LstmParams>) {
          fill_gate(net.forget, d.n_x, d.n_u, rng);
          fill_gate(net.input, d.n_x, d.n_u, rng);
          fill_gate(net.cell, d.n_x, d.n_u, rng);
          fill_gate(net.output, d.n_x, d.n_u, rng);
          const double b = 1.0 / std::sqrt(static_cast<double>(d.n_x));
          fill_uniform(net.U_y, b, rng);
          fill_uniform(net.b_y, b, rng);
        } else if constexpr (std::is_same_v<T, GruParams>) {
          fill_gate(net.candidate, d.n_x, d.n_u, rng);
          fill_gate(net.update, d.n_x, d.n_u, rng);
          fill_gate(net.reset, d.n_x, d.n_u, rng);
          const double b = 1.0 / std::sqrt(static_cast<double>(d.n_x));
          fill_uniform(net.U_o, b, rng);
          fill_uniform(net.b_o, b, rng);
        }
      },
      m.net);
  return m;
}

ModelParams generate_reservoir(const Dims& d, const ReservoirConfig& cfg, std::uint64_t seed) {
  if (!(cfg.sparsity >= 0.0) || cfg.sparsity >= 1.0)
    throw PreconditionError("reservoir sparsity must lie in [0, 1)");
  if (!(cfg.target_norm > 0.0 && cfg.target_norm < 1.0))
    throw PreconditionError("reservoir target norm must lie in (0, 1)");
  ModelParams m = zero_model(Architecture::esn, d);
  m.seed = seed;
  auto& p = std::get<EsnParams>(m.net);
  std::mt19937_64 rng(seed);

  const Eigen::Index n = static_cast<Eigen::Index>(d.n_x) * d.n_x;
  const auto zeros = static_cast<Eigen::Index>(std::llround(cfg.sparsity * static_cast<double>(n)));
  if (zeros >= n) throw PreconditionError("sparsity leaves no nonzero reservoir entry");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (Eigen::Index k = zeros; k < n; ++k) {
    double v = 0.0;
    while (v == 0.0) v = unit(rng);
    p.W_x.data()[idx[static_cast<std::size_t>(k)]] = v;
  }
  for (int round = 0; round < 4; ++round) {
    const double s = spectral_norm(p.W_x, 20000, 1e-12).value;
    if (std::abs(s - cfg.target_norm) < 1e-12) break;
    p.W_x *= cfg.target_norm / s;
  }
  p.spectral_norm_Wx = spectral_norm(p.W_x, 20000, 1e-12).value;

  for (Eigen::Index j = 0; j < p.W_u.cols(); ++j)
    for (Eigen::Index i = 0; i < p.W_u.rows(); ++i) p.W_u(i, j) = cfg.input_scale * unit(rng);
  for (Eigen::Index j = 0; j < p.W_y.cols(); ++j)
    for (Eigen::Index i = 0; i < p.W_y.rows(); ++i) p.W_y(i, j) = cfg.feedback_scale * unit(rng);
  return m;
}

Vec trainable_vector(const ModelParams& m) {
  Eigen::Index total = 0;
  for_each_trainable(m, [&](const char*, const double*, Eigen::Index n) { total += n; });
  Vec theta(total);
  Eigen::Index at = 0;
  for_each_trainable(m, [&](const char*, const double* p, Eigen::Index n) {
    std::copy(p, p + n, theta.data() + at);
    at += n;
  });
  return theta;
}

void set_trainable_vector(ModelParams& m, const Vec& theta) {
  Eigen::Index at = 0;
  for_each_trainable(m, [&](const char*, double* p, Eigen::Index n) {
    if (at + n > theta.size()) throw DimensionError("trainable vector is too short");
    std::copy(theta.data() + at, theta.data() + at + n, p);
    at += n;
  });
  if (at != theta.size()) throw DimensionError("trainable vector is too long");
}

std::vector<std::string> trainable_names(const ModelParams& m) {
  std::vector<std::string> names;
  for_each_trainable(m, [&](const char* name, const double*, Eigen::Index) { names.emplace_back(name); });
  return names;
}

// ---------------------------------------------------------------------------
// LSTM cell

namespace lstm {

void forward(const LstmParams& p, Vec& chi, Vec& xi, const Vec& u, StepCache& c) {
  c.u = u;
  c.chi = chi;
  c.xi = xi;
  c.f.noalias() = p.forget.W * u;
  c.f.noalias() += p.forget.U * xi;
  c.f += p.forget.b;
  sigmoid_inplace(c.f);
  c.i.noalias() = p.input.W * u;
  c.i.noalias() += p.input.U * xi;
  c.i += p.input.b;
  sigmoid_inplace(c.i);
  c.o.noalias() = p.output.W * u;
  c.o.noalias() += p.output.U * xi;
  c.o += p.output.b;
  sigmoid_inplace(c.o);
  c.c.noalias() = p.cell.W * u;
  c.c.noalias() += p.cell.U * xi;
  c.c += p.cell.b;
  tanh_inplace(c.c);
  c.chi_next = c.f.cwiseProduct(chi) + c.i.cwiseProduct(c.c);
  c.tanh_chi_next = c.chi_next;
  tanh_inplace(c.tanh_chi_next);
  chi = c.chi_next;
  xi = c.o.cwiseProduct(c.tanh_chi_next);
}

void backward(const LstmParams& p, const StepCache& c, Vec& d_chi, Vec& d_xi, LstmParams& g,
              Vec* d_u) {
  const auto ones = Vec::Ones(c.f.size()).array();
  Vec dchi = d_chi.array() + d_xi.array() * c.o.array() * (ones - c.tanh_chi_next.array().square());
  Vec da_o = (d_xi.array() * c.tanh_chi_next.array() * c.o.array() * (ones - c.o.array())).matrix();
  Vec da_f = (dchi.array() * c.chi.array() * c.f.array() * (ones - c.f.array())).matrix();
  Vec da_i = (dchi.array() * c.c.array() * c.i.array() * (ones - c.i.array())).matrix();
  Vec da_c = (dchi.array() * c.i.array() * (ones - c.c.array().square())).matrix();

  auto acc = [&](GateBlock& gb, const Vec& da) {
    gb.W.noalias() += da * c.u.transpose();
    gb.U.noalias() += da * c.xi.transpose();
    gb.b += da;
  };
  acc(g.forget, da_f);
  acc(g.input, da_i);
  acc(g.cell, da_c);
  acc(g.output, da_o);

  d_chi = dchi.cwiseProduct(c.f);
  d_xi.noalias() = p.forget.U.transpose() * da_f;
  d_xi.noalias() += p.input.U.transpose() * da_i;
  d_xi.noalias() += p.cell.U.transpose() * da_c;
  d_xi.noalias() += p.output.U.transpose() * da_o;
  if (d_u) {
    d_u->noalias() = p.forget.W.transpose() * da_f;
    d_u->noalias() += p.input.W.transpose() * da_i;
    d_u->noalias() += p.cell.W.transpose() * da_c;
    d_u->noalias() += p.output.W.transpose() * da_o;
  }
}

}  // namespace lstm

// ---------------------------------------------------------------------------
// Per-architecture forward with tape, and backward.

namespace {

void check_io(const ModelParams& m, const Vec& x, const Vec& u) {
  if (x.size() != state_size(m)) {
    std::ostringstream os;
    os << "state vector has length " << x.size() << ", expected " << state_size(m);
    throw DimensionError(os.str());
  }
  if (u.size() != m.dims.n_u) {
    std::ostringstream os;
    os << "input vector has length " << u.size() << ", expected " << m.dims.n_u;
    throw DimensionError(os.str());
  }
  if (!u.allFinite()) throw NumericError("input vector has non-finite entries");
}

struct NnarxTape {
  Mat x;  // n_s x (T+1)
  Mat a;  // n_h x T, pre-activations
  Mat h;  // n_h x T
  Mat y;  // n_y x T
};

double psi(Activation a, double v) {
  return a == Activation::tanh ? clamped_tanh(v) : std::max(v, 0.0);
}

double psi_prime(Activation a, double pre, double post) {
  return a == Activation::tanh ? 1.0 - post * post : (pre > 0.0 ? 1.0 : 0.0);
}

NnarxTape nnarx_forward(const ModelParams& m, const Vec& x0, const Mat& u) {
  const auto& p = std::get<NnarxParams>(m.net);
  const Dims& d = m.dims;
  const int blk = d.n_y + d.n_u;
  const int ns = state_size(m);
  const Eigen::Index T = u.cols();
  NnarxTape t;
  t.x.resize(ns, T + 1);
  t.a.resize(d.n_x, T);
  t.h.resize(d.n_x, T);
  t.y.resize(d.n_y, T);
  t.x.col(0) = x0;
  Vec a(d.n_x), f(d.n_y);
  for (Eigen::Index k = 0; k < T; ++k) {
    auto xk = t.x.col(k);
    t.y.col(k) = xk.segment((d.n_regressors - 1) * blk, d.n_y);
    a.noalias() = p.W1 * u.col(k);
    a.noalias() += p.U1 * xk;
    a += p.b1;
    t.a.col(k) = a;
    for (int j = 0; j < d.n_x; ++j) t.h(j, k) = psi(p.activation, a[j]);
    f.noalias() = p.U0 * t.h.col(k);
    f += p.b0;
    auto xn = t.x.col(k + 1);
    if (d.n_regressors > 1) xn.head((d.n_regressors - 1) * blk) = xk.segment(blk, (d.n_regressors - 1) * blk);
    xn.segment((d.n_regressors - 1) * blk, d.n_y) = f;
    xn.segment((d.n_regressors - 1) * blk + d.n_y, d.n_u) = u.col(k);
    if (!xn.allFinite()) throw NumericError("NNARX state became non-finite", static_cast<long>(k));
  }
  return t;
}

void nnarx_backward(const ModelParams& m, const NnarxTape& t, const Mat& u, const Mat& dy,
                    ModelParams& grad) {
  const auto& p = std::get<NnarxParams>(m.net);
  auto& g = std::get<NnarxParams>(grad.net);
  const Dims& d = m.dims;
  const int blk = d.n_y + d.n_u;
  const int tail = (d.n_regressors - 1) * blk;
  const Eigen::Index T = u.cols();
  Vec lam = Vec::Zero(t.x.rows());
  Vec lam_prev(t.x.rows());
  Vec da(d.n_x);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    lam_prev.setZero();
    if (d.n_regressors > 1) lam_prev.segment(blk, tail) = lam.head(tail);
    const auto df = lam.segment(tail, d.n_y);
    g.U0.noalias() += df * t.h.col(k).transpose();
    g.b0 += df;
    da.noalias() = p.U0.transpose() * df;
    for (int j = 0; j < d.n_x; ++j) da[j] *= psi_prime(p.activation, t.a(j, k), t.h(j, k));
    g.W1.noalias() += da * u.col(k).transpose();
    g.U1.noalias() += da * t.x.col(k).transpose();
    g.b1 += da;
    lam_prev.noalias() += p.U1.transpose() * da;
    lam_prev.segment(tail, d.n_y) += dy.col(k);
    lam.swap(lam_prev);
    if (!lam.allFinite()) throw NumericError("NNARX adjoint became non-finite", static_cast<long>(k));
  }
}

struct EsnTape {
  Mat x;  // n_x x (T+1) reservoir part
  Mat p;  // n_u x (T+1) input memory
  Mat y;  // n_y x T
};

// Free run when `teacher` is null, otherwise the state update consumes teacher.col(k).
EsnTape esn_forward(const ModelParams& m, const Vec& x0, const Mat& u, const Mat* teacher) {
  const auto& p = std::get<EsnParams>(m.net);
  const Dims& d = m.dims;
  const Eigen::Index T = u.cols();
  EsnTape t;
  t.x.resize(d.n_x, T + 1);
  t.p.resize(d.n_u, T + 1);
  t.y.resize(d.n_y, T);
  t.x.col(0) = x0.head(d.n_x);
  t.p.col(0) = x0.tail(d.n_u);
  Vec pre(d.n_x), y(d.n_y);
  for (Eigen::Index k = 0; k < T; ++k) {
    y.noalias() = p.W_out1 * t.x.col(k);
    y.noalias() += p.W_out2 * t.p.col(k);
    t.y.col(k) = y;
    pre.noalias() = p.W_x * t.x.col(k);
    pre.noalias() += p.W_u * u.col(k);
    if (teacher)
      pre.noalias() += p.W_y * teacher->col(k);
    else
      pre.noalias() += p.W_y * y;
    tanh_inplace(pre);
    t.x.col(k + 1) = pre;
    t.p.col(k + 1) = u.col(k);
    if (!pre.allFinite()) throw NumericError("ESN state became non-finite", static_cast<long>(k));
  }
  return t;
}

void esn_backward(const ModelParams& m, const EsnTape& t, const Mat& dy, ModelParams& grad) {
  const auto& p = std::get<EsnParams>(m.net);
  auto& g = std::get<EsnParams>(grad.net);
  const Eigen::Index T = dy.cols();
  Vec lam = Vec::Zero(m.dims.n_x);
  Vec delta(m.dims.n_x), gamma(m.dims.n_y);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    delta = lam.array() * (1.0 - t.x.col(k + 1).array().square());
    gamma = dy.col(k);
    gamma.noalias() += p.W_y.transpose() * delta;
    g.W_out1.noalias() += gamma * t.x.col(k).transpose();
    g.W_out2.noalias() += gamma * t.p.col(k).transpose();
    lam.noalias() = p.W_out1.transpose() * gamma;
    lam.noalias() += p.W_x.transpose() * delta;
    if (!lam.allFinite()) throw NumericError("ESN adjoint became non-finite", static_cast<long>(k));
  }
}

struct LstmTape {
  std::vector<lstm::StepCache> steps;
  Mat x;  // 2n_x x (T+1)
  Mat y;
};

LstmTape lstm_forward(const ModelParams& m, const Vec& x0, const Mat& u) {
  const auto& p = std::get<LstmParams>(m.net);
  const int n = m.dims.n_x;
  const Eigen::Index T = u.cols();
  LstmTape t;
  t.steps.resize(static_cast<std::size_t>(T));
  t.x.resize(2 * n, T + 1);
  t.y.resize(m.dims.n_y, T);
  t.x.col(0) = x0;
  Vec chi = x0.head(n), xi = x0.tail(n);
  for (Eigen::Index k = 0; k < T; ++k) {
    t.y.col(k).noalias() = p.U_y * xi;
    t.y.col(k) += p.b_y;
    lstm::forward(p, chi, xi, u.col(k), t.steps[static_cast<std::size_t>(k)]);
    t.x.col(k + 1).head(n) = chi;
    t.x.col(k + 1).tail(n) = xi;
    if (!chi.allFinite()) throw NumericError("LSTM state became non-finite", static_cast<long>(k));
  }
  return t;
}

void lstm_backward(const ModelParams& m, const LstmTape& t, const Mat& dy, ModelParams& grad) {
  const auto& p = std::get<LstmParams>(m.net);
  auto& g = std::get<LstmParams>(grad.net);
  const int n = m.dims.n_x;
  const Eigen::Index T = dy.cols();
  Vec d_chi = Vec::Zero(n), d_xi = Vec::Zero(n);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    lstm::backward(p, t.steps[static_cast<std::size_t>(k)], d_chi, d_xi, g, nullptr);
    const auto xi_k = t.x.col(k).tail(n);
    g.U_y.noalias() += dy.col(k) * xi_k.transpose();
    g.b_y += dy.col(k);
    d_xi.noalias() += p.U_y.transpose() * dy.col(k);
    if (!d_chi.allFinite() || !d_xi.allFinite())
      throw NumericError("LSTM adjoint became non-finite", static_cast<long>(k));
  }
}

struct GruTape {
  Mat x;  // n_x x (T+1)
  Mat z, f, r;
  Mat y;
};

GruTape gru_forward(const ModelParams& m, const Vec& x0, const Mat& u) {
  const auto& p = std::get<GruParams>(m.net);
  const int n = m.dims.n_x;
  const Eigen::Index T = u.cols();
  GruTape t;
  t.x.resize(n, T + 1);
  t.z.resize(n, T);
  t.f.resize(n, T);
  t.r.resize(n, T);
  t.y.resize(m.dims.n_y, T);
  t.x.col(0) = x0;
  Vec z(n), f(n), r(n), fx(n);
  for (Eigen::Index k = 0; k < T; ++k) {
    const auto x = t.x.col(k);
    const auto uk = u.col(k);
    t.y.col(k).noalias() = p.U_o * x;
    t.y.col(k) += p.b_o;
    z.noalias() = p.update.W * uk;
    z.noalias() += p.update.U * x;
    z += p.update.b;
    sigmoid_inplace(z);
    f.noalias() = p.reset.W * uk;
    f.noalias() += p.reset.U * x;
    f += p.reset.b;
    sigmoid_inplace(f);
    fx = f.cwiseProduct(x);
    r.noalias() = p.candidate.W * uk;
    r.noalias() += p.candidate.U * fx;
    r += p.candidate.b;
    tanh_inplace(r);
    t.z.col(k) = z;
    t.f.col(k) = f;
    t.r.col(k) = r;
    t.x.col(k + 1) = z.cwiseProduct(x) + (Vec::Ones(n) - z).cwiseProduct(r);
    if (!t.x.col(k + 1).allFinite())
      throw NumericError("GRU state became non-finite", static_cast<long>(k));
  }
  return t;
}

void gru_backward(const ModelParams& m, const GruTape& t, const Mat& u, const Mat& dy,
                  ModelParams& grad) {
  const auto& p = std::get<GruParams>(m.net);
  auto& g = std::get<GruParams>(grad.net);
  const int n = m.dims.n_x;
  const Eigen::Index T = u.cols();
  Vec lam = Vec::Zero(n), next(n), da_z(n), da_r(n), dfx(n), da_f(n), fx(n);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    const auto x = t.x.col(k);
    const auto z = t.z.col(k);
    const auto f = t.f.col(k);
    const auto r = t.r.col(k);
    const auto uk = u.col(k);
    da_z = (lam.array() * (x - r).array() * z.array() * (1.0 - z.array())).matrix();
    da_r = (lam.array() * (1.0 - z.array()) * (1.0 - r.array().square())).matrix();
    dfx.noalias() = p.candidate.U.transpose() * da_r;
    da_f = (dfx.array() * x.array() * f.array() * (1.0 - f.array())).matrix();
    fx = f.cwiseProduct(x);

    g.candidate.W.noalias() += da_r * uk.transpose();
    g.candidate.U.noalias() += da_r * fx.transpose();
    g.candidate.b += da_r;
    g.update.W.noalias() += da_z * uk.transpose();
    g.update.U.noalias() += da_z * x.transpose();
    g.update.b += da_z;
    g.reset.W.noalias() += da_f * uk.transpose();
    g.reset.U.noalias() += da_f * x.transpose();
    g.reset.b += da_f;
    g.U_o.noalias() += dy.col(k) * x.transpose();
    g.b_o += dy.col(k);

    next = lam.cwiseProduct(z) + dfx.cwiseProduct(f);
    next.noalias() += p.update.U.transpose() * da_z;
    next.noalias() += p.reset.U.transpose() * da_f;
    next.noalias() += p.U_o.transpose() * dy.col(k);
    lam.swap(next);
    if (!lam.allFinite()) throw NumericError("GRU adjoint became non-finite", static_cast<long>(k));
  }
}

void check_sequence(const ModelParams& m, const Vec& x0, const Mat& u) {
  if (u.cols() < 1) throw PreconditionError("input sequence must be nonempty");
  if (u.rows() != m.dims.n_u) {
    std::ostringstream os;
    os << "input sequence has " << u.rows() << " channels, expected " << m.dims.n_u;
    throw DimensionError(os.str());
  }
  if (x0.size() != state_size(m)) {
    std::ostringstream os;
    os << "initial state has length " << x0.size() << ", expected " << state_size(m);
    throw DimensionError(os.str());
  }
  if (!u.allFinite()) throw NumericError("input sequence has non-finite entries");
}

// Runs the tape-building forward pass and returns (y, x) plus a backward closure.
template <class F>
decltype(auto) dispatch(const ModelParams& m, F&& f) {
  switch (m.architecture()) {
    case Architecture::nnarx: return f(std::integral_constant<Architecture, Architecture::nnarx>{});
    case Architecture::esn: return f(std::integral_constant<Architecture, Architecture::esn>{});
    case Architecture::lstm: return f(std::integral_constant<Architecture, Architecture::lstm>{});
    case Architecture::gru: break;
  }
  return f(std::integral_constant<Architecture, Architecture::gru>{});
}

}  // namespace

StepResult step(const ModelParams& m, const Vec& x, const Vec& u) {
  check_io(m, x, u);
  Mat uk = u;
  Trajectory tr = simulate(m, x, uk);
  return {tr.x.col(1), tr.y.col(0)};
}

Trajectory simulate(const ModelParams& m, const Vec& x0, const Mat& u) {
  check_sequence(m, x0, u);
  return dispatch(m, [&](auto tag) -> Trajectory {
    constexpr Architecture a = decltype(tag)::value;
    if constexpr (a == Architecture::nnarx) {
      auto t = nnarx_forward(m, x0, u);
      return {std::move(t.y), std::move(t.x)};
    } else if constexpr (a == Architecture::esn) {
      auto t = esn_forward(m, x0, u, nullptr);
      Trajectory tr{std::move(t.y), Mat(t.x.rows() + t.p.rows(), t.x.cols())};
      tr.x.topRows(t.x.rows()) = t.x;
      tr.x.bottomRows(t.p.rows()) = t.p;
      return tr;
    } else if constexpr (a == Architecture::lstm) {
      auto t = lstm_forward(m, x0, u);
      return {std::move(t.y), std::move(t.x)};
    } else {
      auto t = gru_forward(m, x0, u);
      return {std::move(t.y), std::move(t.x)};
    }
  });
}

namespace {

// Shared by bptt_gradient and squared_error_and_gradient: forward, then
// `make_dy(y)` produces dl/dy, then backward.
template <class MakeDy>
void forward_backward(const ModelParams& m, const Vec& x0, const Mat& u, MakeDy&& make_dy,
                      ModelParams* grad) {
  dispatch(m, [&](auto tag) {
    constexpr Architecture a = decltype(tag)::value;
    if constexpr (a == Architecture::nnarx) {
      auto t = nnarx_forward(m, x0, u);
      Mat dy = make_dy(t.y);
      if (grad) nnarx_backward(m, t, u, dy, *grad);
    } else if constexpr (a == Architecture::esn) {
      auto t = esn_forward(m, x0, u, nullptr);
      Mat dy = make_dy(t.y);
      if (grad) esn_backward(m, t, dy, *grad);
    } else if constexpr (a == Architecture::lstm) {
      auto t = lstm_forward(m, x0, u);
      Mat dy = make_dy(t.y);
      if (grad) lstm_backward(m, t, dy, *grad);
    } else {
      auto t = gru_forward(m, x0, u);
      Mat dy = make_dy(t.y);
      if (grad) gru_backward(m, t, u, dy, *grad);
    }
  });
}

}  // namespace

ModelParams bptt_gradient(const ModelParams& m, const Vec& x0, const Mat& u, const Mat& dl_dy) {
  check_sequence(m, x0, u);
  if (dl_dy.rows() != m.dims.n_y || dl_dy.cols() != u.cols())
    throw DimensionError("output-gradient sequence must be n_y x T, matching the input length");
  ModelParams g = zeros_like(m);
  forward_backward(m, x0, u, [&](const Mat&) { return dl_dy; }, &g);
  return g;
}

double squared_error_and_gradient(const ModelParams& m, const Vec& x0, const Mat& u,
                                  const Mat& y_target, int washout, ModelParams* grad) {
  check_sequence(m, x0, u);
  if (y_target.rows() != m.dims.n_y || y_target.cols() != u.cols())
    throw DimensionError("target sequence must be n_y x T, matching the input length");
  if (grad) *grad = zeros_like(m);
  double loss = 0.0;
  forward_backward(
      m, x0, u,
      [&](const Mat& y) {
        Mat dy = Mat::Zero(y.rows(), y.cols());
        for (Eigen::Index k = std::max<Eigen::Index>(washout, 0); k < y.cols(); ++k) {
          dy.col(k) = y.col(k) - y_target.col(k);
          loss += dy.col(k).squaredNorm();
        }
        dy *= 2.0;
        return dy;
      },
      grad);
  return loss;
}

// Exposed to training for teacher-forced ESN regressors.
Mat esn_teacher_forced_states(const ModelParams& m, const Vec& x0, const Mat& u, const Mat& y) {
  auto t = esn_forward(m, x0, u, &y);
  Mat out(t.x.rows() + t.p.rows(), t.x.cols());
  out.topRows(t.x.rows()) = t.x;
  out.bottomRows(t.p.rows()) = t.p;
  return out;
}

}  // namespace rnnid
