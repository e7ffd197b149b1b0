#include "rnnid/physics.hpp"

#include "rnnid/errors.hpp"
#include "rnnid/excitation.hpp"

#include <numeric>
#include <sstream>

namespace rnnid {

std::vector<BlockWiring> default_wiring() {
  return {{{0, 3}, {2}}, {{1, 4}, {0}}, {{2, 5}, {1}}};
}

int CompositeModel::state_size() const {
  int n = 0;
  for (const auto& b : blocks) n += 2 * b.dims.n_x;
  return n;
}

int CompositeModel::hidden_units() const {
  int n = 0;
  for (const auto& b : blocks) n += b.dims.n_x;
  return n;
}

void validate(const CompositeModel& cm) {
  const std::size_t nb = cm.blocks.size();
  if (nb == 0) throw DimensionError("composite has no blocks");
  if (cm.wiring.size() != nb) throw DimensionError("composite wiring must list every block");
  if (cm.frozen.size() != nb) throw DimensionError("composite frozen mask must list every block");
  const auto ny = static_cast<std::size_t>(cm.n_y());
  if (cm.sigmoid.size() != ny || static_cast<std::size_t>(cm.out_scale.size()) != ny ||
      static_cast<std::size_t>(cm.out_offset.size()) != ny)
    throw DimensionError("composite output maps must cover all output channels");
  for (std::size_t i = 0; i < nb; ++i) {
    const auto& b = cm.blocks[i];
    std::ostringstream where;
    where << "block " << i + 1;
    if (b.architecture() != Architecture::lstm) throw DimensionError(where.str() + " is not an LSTM");
    validate(b);
    if (b.dims.n_y != cm.block_outputs())
      throw DimensionError(where.str() + " output port must have width 4");
    int width = 0;
    for (int ch : cm.wiring[i].inputs) {
      if (ch < 0 || ch >= cm.n_u)
        throw DimensionError(where.str() + " input port references plant input " + std::to_string(ch));
      ++width;
    }
    for (int up : cm.wiring[i].upstream) {
      if (up < 0 || up >= static_cast<int>(nb))
        throw DimensionError(where.str() + " upstream port references block " + std::to_string(up + 1));
      width += cm.block_outputs();
    }
    if (width != b.dims.n_u) {
      std::ostringstream os;
      os << where.str() << " input port has width " << b.dims.n_u << " but the wiring supplies " << width;
      throw DimensionError(os.str());
    }
  }
}

CompositeModel build_composite(int n_x, const std::vector<BlockWiring>& wiring,
                               const Normalizer* normalizer, std::uint64_t seed) {
  CompositeModel cm;
  cm.wiring = wiring;
  const int nb = static_cast<int>(wiring.size());
  for (int i = 0; i < nb; ++i) {
    const int n_u = static_cast<int>(wiring[static_cast<std::size_t>(i)].inputs.size() +
                                     4 * wiring[static_cast<std::size_t>(i)].upstream.size());
    ModelParams b = random_model(Architecture::lstm, Dims{n_u, 4, n_x, 1},
                                 seed * 1000003ull + static_cast<std::uint64_t>(i) + 1);
    cm.blocks.push_back(std::move(b));
  }
  cm.frozen.assign(static_cast<std::size_t>(nb), false);
  const int ny = cm.n_y();
  cm.sigmoid.assign(static_cast<std::size_t>(ny), false);
  cm.out_scale = Vec::Ones(ny);
  cm.out_offset = Vec::Zero(ny);
  for (int v = 0; v < nb; ++v)
    for (int c : {1, 2}) {
      const int ch = 4 * v + c;
      cm.sigmoid[static_cast<std::size_t>(ch)] = true;
      if (normalizer) {
        if (normalizer->y.min.size() != ny) throw DimensionError("normalizer width differs from composite outputs");
        const double half = 0.5 * (normalizer->y.max[ch] - normalizer->y.min[ch]);
        const double mid = 0.5 * (normalizer->y.max[ch] + normalizer->y.min[ch]);
        if (half > 0) {
          cm.out_scale[ch] = 1.0 / half;
          cm.out_offset[ch] = -mid / half;
        }
      }
    }
  validate(cm);
  return cm;
}

CompositeModel zero_composite(const CompositeModel& like) {
  CompositeModel cm = like;
  for (auto& b : cm.blocks) b = zero_model(Architecture::lstm, b.dims);
  return cm;
}

namespace {

const LstmParams& lstm_of(const ModelParams& m) { return std::get<LstmParams>(m.net); }

// Block outputs from the current hidden states. g: head pre-activations,
// s: sigma(g) on fraction channels.
void composite_outputs(const CompositeModel& cm, const std::vector<Vec>& xi, Vec& y, Vec& s) {
  const int no = cm.block_outputs();
  y.resize(cm.n_y());
  s.setZero(cm.n_y());
  for (std::size_t i = 0; i < cm.blocks.size(); ++i) {
    const auto& p = lstm_of(cm.blocks[i]);
    Vec g = p.b_y;
    g.noalias() += p.U_y * xi[i];
    for (int c = 0; c < no; ++c) {
      const int ch = static_cast<int>(i) * no + c;
      if (cm.sigmoid[static_cast<std::size_t>(ch)]) {
        s[ch] = sigmoid(g[c]);
        y[ch] = cm.out_scale[ch] * s[ch] + cm.out_offset[ch];
      } else {
        y[ch] = g[c];
      }
    }
  }
}

Vec block_input(const CompositeModel& cm, std::size_t i, const Vec& u, const Vec& y) {
  const auto& w = cm.wiring[i];
  const int no = cm.block_outputs();
  Vec in(static_cast<Eigen::Index>(w.inputs.size() + no * w.upstream.size()));
  Eigen::Index r = 0;
  for (int ch : w.inputs) in[r++] = u[ch];
  for (int up : w.upstream) {
    in.segment(r, no) = y.segment(up * no, no);
    r += no;
  }
  return in;
}

void split_state(const CompositeModel& cm, const Vec& x, std::vector<Vec>& chi, std::vector<Vec>& xi) {
  if (x.size() != cm.state_size()) throw DimensionError("composite state has the wrong length");
  chi.resize(cm.blocks.size());
  xi.resize(cm.blocks.size());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < cm.blocks.size(); ++i) {
    const int n = cm.blocks[i].dims.n_x;
    chi[i] = x.segment(r, n);
    xi[i] = x.segment(r + n, n);
    r += 2 * n;
  }
}

Vec join_state(const CompositeModel& cm, const std::vector<Vec>& chi, const std::vector<Vec>& xi) {
  Vec x(cm.state_size());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < cm.blocks.size(); ++i) {
    const int n = cm.blocks[i].dims.n_x;
    x.segment(r, n) = chi[i];
    x.segment(r + n, n) = xi[i];
    r += 2 * n;
  }
  return x;
}

struct CompositeTape {
  std::vector<std::vector<lstm::StepCache>> steps;  // [k][block]
  Mat y, s;                                         // n_y x T
};

CompositeTape composite_forward(const CompositeModel& cm, const Vec& x0, const Mat& u) {
  if (u.rows() != cm.n_u) throw DimensionError("composite input must have one row per plant input");
  std::vector<Vec> chi, xi;
  split_state(cm, x0, chi, xi);
  CompositeTape t;
  const Eigen::Index T = u.cols();
  t.steps.assign(static_cast<std::size_t>(T), std::vector<lstm::StepCache>(cm.blocks.size()));
  t.y.resize(cm.n_y(), T);
  t.s.resize(cm.n_y(), T);
  Vec y, s;
  for (Eigen::Index k = 0; k < T; ++k) {
    composite_outputs(cm, xi, y, s);
    t.y.col(k) = y;
    t.s.col(k) = s;
    const Vec uk = u.col(k);
    for (std::size_t i = 0; i < cm.blocks.size(); ++i)
      lstm::forward(lstm_of(cm.blocks[i]), chi[i], xi[i], block_input(cm, i, uk, y),
                    t.steps[static_cast<std::size_t>(k)][i]);
    for (std::size_t i = 0; i < cm.blocks.size(); ++i)
      if (!chi[i].allFinite()) throw NumericError("composite state became non-finite", static_cast<long>(k));
  }
  return t;
}

}  // namespace

CompositeStep composite_step(const CompositeModel& cm, const Vec& state, const Vec& u) {
  validate(cm);
  if (u.size() != cm.n_u) throw DimensionError("composite step expects one value per plant input");
  std::vector<Vec> chi, xi;
  split_state(cm, state, chi, xi);
  CompositeStep out;
  Vec s;
  composite_outputs(cm, xi, out.y, s);
  lstm::StepCache cache;
  for (std::size_t i = 0; i < cm.blocks.size(); ++i)
    lstm::forward(lstm_of(cm.blocks[i]), chi[i], xi[i], block_input(cm, i, u, out.y), cache);
  out.state = join_state(cm, chi, xi);
  return out;
}

Mat composite_simulate(const CompositeModel& cm, const Vec& x0, const Mat& u) {
  validate(cm);
  return composite_forward(cm, x0, u).y;
}

double composite_sequence_loss(const CompositeModel& cm, const Vec& x0, const Sequence& seq, int washout,
                               const ConsistencyPenaltyConfig& pen, std::vector<ModelParams>* grad) {
  if (pen.weight < 0) throw PreconditionError("consistency penalty weight must be nonnegative");
  if (seq.y.rows() != cm.n_y() || seq.y.cols() != seq.u.cols())
    throw DimensionError("sequence outputs do not match the composite output width");
  const CompositeTape t = composite_forward(cm, x0, seq.u);
  const Eigen::Index T = seq.u.cols();
  const std::size_t nb = cm.blocks.size();
  const int no = cm.block_outputs();

  auto hinge_active = [&](std::size_t v, Eigen::Index k) {
    return t.s(static_cast<Eigen::Index>(v) * no + 1, k) + t.s(static_cast<Eigen::Index>(v) * no + 2, k) - 1.0;
  };
  double loss = 0.0;
  for (Eigen::Index k = std::max<Eigen::Index>(washout, 0); k < T; ++k) {
    loss += (t.y.col(k) - seq.y.col(k)).squaredNorm();
    for (std::size_t v = 0; v < nb; ++v) loss += pen.weight * std::max(hinge_active(v, k), 0.0);
  }
  if (!grad) return loss;

  grad->clear();
  for (const auto& b : cm.blocks) grad->push_back(zeros_like(b));
  std::vector<Vec> d_chi, d_xi;
  for (const auto& b : cm.blocks) {
    d_chi.push_back(Vec::Zero(b.dims.n_x));
    d_xi.push_back(Vec::Zero(b.dims.n_x));
  }
  Vec dy(cm.n_y()), d_in;
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    const auto& caches = t.steps[static_cast<std::size_t>(k)];
    const bool counted = k >= washout;
    if (counted) dy = 2.0 * (t.y.col(k) - seq.y.col(k));
    else dy.setZero();
    for (std::size_t i = 0; i < nb; ++i) {
      auto& g = std::get<LstmParams>((*grad)[i].net);
      lstm::backward(lstm_of(cm.blocks[i]), caches[i], d_chi[i], d_xi[i], g, &d_in);
      Eigen::Index r = static_cast<Eigen::Index>(cm.wiring[i].inputs.size());
      for (int up : cm.wiring[i].upstream) {
        dy.segment(up * no, no) += d_in.segment(r, no);
        r += no;
      }
    }
    for (std::size_t i = 0; i < nb; ++i) {
      const auto& p = lstm_of(cm.blocks[i]);
      auto& g = std::get<LstmParams>((*grad)[i].net);
      const bool hinge = counted && pen.weight > 0 && hinge_active(i, k) > 0.0;
      Vec dg(no);
      for (int c = 0; c < no; ++c) {
        const Eigen::Index ch = static_cast<Eigen::Index>(i) * no + c;
        if (cm.sigmoid[static_cast<std::size_t>(ch)]) {
          const double sv = t.s(ch, k), ds = sv * (1.0 - sv);
          dg[c] = dy[ch] * cm.out_scale[ch] * ds;
          if (hinge && (c == 1 || c == 2)) dg[c] += pen.weight * ds;
        } else {
          dg[c] = dy[ch];
        }
      }
      const Vec& xi_k = caches[i].xi;
      g.U_y.noalias() += dg * xi_k.transpose();
      g.b_y += dg;
      d_xi[i].noalias() += p.U_y.transpose() * dg;
    }
  }
  for (std::size_t i = 0; i < nb; ++i)
    if (cm.frozen[i]) (*grad)[i] = zeros_like(cm.blocks[i]);
  return loss;
}

double composite_loss(const CompositeModel& cm, const std::vector<Sequence>& batch, int washout,
                      const ConsistencyPenaltyConfig& pen) {
  if (batch.empty()) throw PreconditionError("composite loss needs a nonempty minibatch");
  validate(cm);
  double sum = 0.0;
  long steps = 0;
  for (const auto& s : batch) {
    sum += composite_sequence_loss(cm, Vec::Zero(cm.state_size()), s, washout, pen, nullptr);
    steps += std::max<long>(0, static_cast<long>(s.length()) - washout);
  }
  return sum / static_cast<double>(steps);
}

Vec CompositeTrainable::parameters() const {
  std::vector<Vec> parts;
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < cm_.blocks.size(); ++i)
    if (!cm_.frozen[i]) {
      parts.push_back(trainable_vector(cm_.blocks[i]));
      n += parts.back().size();
    }
  Vec theta(n);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    theta.segment(r, p.size()) = p;
    r += p.size();
  }
  return theta;
}

void CompositeTrainable::set_parameters(const Vec& theta) {
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < cm_.blocks.size(); ++i)
    if (!cm_.frozen[i]) {
      const Eigen::Index n = trainable_vector(cm_.blocks[i]).size();
      if (r + n > theta.size()) throw DimensionError("composite parameter vector too short");
      set_trainable_vector(cm_.blocks[i], theta.segment(r, n));
      r += n;
    }
  if (r != theta.size()) throw DimensionError("composite parameter vector too long");
}

double CompositeTrainable::sequence_loss(const Sequence& s, const Vec& x0, int washout, Vec* grad) const {
  if (!grad) return composite_sequence_loss(cm_, x0, s, washout, pen_, nullptr);
  std::vector<ModelParams> g;
  const double loss = composite_sequence_loss(cm_, x0, s, washout, pen_, &g);
  std::vector<Vec> parts;
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!cm_.frozen[i]) {
      parts.push_back(trainable_vector(g[i]));
      n += parts.back().size();
    }
  grad->resize(n);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    grad->segment(r, p.size()) = p;
    r += p.size();
  }
  return loss;
}

Mat CompositeTrainable::predict(const Sequence& s, const Vec& x0) const {
  return composite_forward(cm_, x0, s.u).y;
}

TrainConfig composite_default_config() {
  TrainConfig c;
  c.optimizer = OptimizerKind::rmsprop;
  c.learning_rate = 1e-3;
  return c;
}

CompositeTrainResult train_composite(const CompositeModel& cm0, const Dataset& data,
                                     const TrainConfig& cfg, const ConsistencyPenaltyConfig& pen) {
  validate(cm0);
  TrainConfig c = cfg;
  c.target = StabilityProperty::none;
  CompositeTrainable t(cm0, pen);
  TrainOutcome o = train(t, data, c);
  return {t.model(), std::move(o)};
}

// ---------------------------------------------------------------------------
// Black-box stack

void validate(const BlackBoxModel& bb) {
  if (bb.layers.empty()) throw DimensionError("black-box model has no layers");
  for (std::size_t l = 0; l < bb.layers.size(); ++l) {
    ModelParams m;
    m.dims = {l == 0 ? bb.n_u : bb.n_x, bb.n_y(), bb.n_x, 1};
    LstmParams p = bb.layers[l];
    p.U_y = bb.U_y;
    p.b_y = bb.b_y;
    m.net = std::move(p);
    try {
      validate(m);
    } catch (const DimensionError& e) {
      throw DimensionError("black-box layer " + std::to_string(l + 1) + ": " + e.what());
    }
  }
}

BlackBoxModel build_blackbox(int n_u, int n_y, int n_x, int n_layers, std::uint64_t seed) {
  if (n_layers < 1 || n_x < 1 || n_u < 1 || n_y < 1) throw PreconditionError("invalid black-box dimensions");
  BlackBoxModel bb;
  bb.n_u = n_u;
  bb.n_x = n_x;
  for (int l = 0; l < n_layers; ++l) {
    const ModelParams m = random_model(Architecture::lstm, Dims{l == 0 ? n_u : n_x, n_y, n_x, 1},
                                       seed * 1000003ull + static_cast<std::uint64_t>(l) + 1);
    LstmParams p = std::get<LstmParams>(m.net);
    if (l == n_layers - 1) {
      bb.U_y = p.U_y;
      bb.b_y = p.b_y;
    }
    p.U_y.resize(0, 0);
    p.b_y.resize(0);
    bb.layers.push_back(std::move(p));
  }
  return bb;
}

namespace {

template <class BB, class F>
void for_each_blackbox_block(BB& bb, F&& f) {
  for (auto& p : bb.layers)
    for (auto* g : {&p.forget, &p.input, &p.cell, &p.output}) {
      f(g->W);
      f(g->U);
      f(g->b);
    }
  f(bb.U_y);
  f(bb.b_y);
}

}  // namespace

Vec blackbox_parameters(const BlackBoxModel& bb) {
  Eigen::Index n = 0;
  for_each_blackbox_block(bb, [&](const auto& m) { n += m.size(); });
  Vec theta(n);
  Eigen::Index r = 0;
  for_each_blackbox_block(bb, [&](const auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) theta[r++] = m(i, j);
  });
  return theta;
}

void set_blackbox_parameters(BlackBoxModel& bb, const Vec& theta) {
  if (theta.size() != parameter_count(bb)) throw DimensionError("black-box parameter vector has the wrong length");
  Eigen::Index r = 0;
  for_each_blackbox_block(bb, [&](auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = theta[r++];
  });
}

long parameter_count(const BlackBoxModel& bb) {
  long n = 0;
  for_each_blackbox_block(bb, [&](const auto& m) { n += static_cast<long>(m.size()); });
  return n;
}

long parameter_count(const CompositeModel& cm) {
  long n = 0;
  for (const auto& b : cm.blocks) n += static_cast<long>(trainable_vector(b).size());
  return n;
}

namespace {

struct BlackBoxTape {
  std::vector<std::vector<lstm::StepCache>> steps;  // [k][layer]
  std::vector<Vec> xi_top;                          // top-layer hidden state at k
  Mat y;
};

BlackBoxTape blackbox_forward(const BlackBoxModel& bb, const Vec& x0, const Mat& u) {
  if (u.rows() != bb.n_u) throw DimensionError("black-box input has the wrong number of channels");
  if (x0.size() != bb.state_size()) throw DimensionError("black-box state has the wrong length");
  const std::size_t L = bb.layers.size();
  const int n = bb.n_x;
  std::vector<Vec> chi(L), xi(L);
  for (std::size_t l = 0; l < L; ++l) {
    chi[l] = x0.segment(static_cast<Eigen::Index>(2 * n * l), n);
    xi[l] = x0.segment(static_cast<Eigen::Index>(2 * n * l + n), n);
  }
  const Eigen::Index T = u.cols();
  BlackBoxTape t;
  t.steps.assign(static_cast<std::size_t>(T), std::vector<lstm::StepCache>(L));
  t.xi_top.resize(static_cast<std::size_t>(T));
  t.y.resize(bb.n_y(), T);
  for (Eigen::Index k = 0; k < T; ++k) {
    t.xi_top[static_cast<std::size_t>(k)] = xi[L - 1];
    t.y.col(k).noalias() = bb.U_y * xi[L - 1];
    t.y.col(k) += bb.b_y;
    auto& c = t.steps[static_cast<std::size_t>(k)];
    lstm::forward(bb.layers[0], chi[0], xi[0], u.col(k), c[0]);
    for (std::size_t l = 1; l < L; ++l) lstm::forward(bb.layers[l], chi[l], xi[l], xi[l - 1], c[l]);
    if (!chi[L - 1].allFinite()) throw NumericError("black-box state became non-finite", static_cast<long>(k));
  }
  return t;
}

Vec blackbox_backward(const BlackBoxModel& bb, const BlackBoxTape& t, const Mat& dy) {
  const std::size_t L = bb.layers.size();
  BlackBoxModel g = bb;
  for (auto& p : g.layers)
    for (auto* gb : {&p.forget, &p.input, &p.cell, &p.output}) {
      gb->W.setZero();
      gb->U.setZero();
      gb->b.setZero();
    }
  g.U_y.setZero();
  g.b_y.setZero();
  std::vector<Vec> d_chi(L, Vec::Zero(bb.n_x)), d_xi(L, Vec::Zero(bb.n_x));
  Vec d_in;
  for (Eigen::Index k = dy.cols() - 1; k >= 0; --k) {
    const auto& c = t.steps[static_cast<std::size_t>(k)];
    for (std::size_t l = L; l-- > 0;) {
      lstm::backward(bb.layers[l], c[l], d_chi[l], d_xi[l], g.layers[l], l > 0 ? &d_in : nullptr);
      if (l > 0) d_xi[l - 1] += d_in;
    }
    g.U_y.noalias() += dy.col(k) * t.xi_top[static_cast<std::size_t>(k)].transpose();
    g.b_y += dy.col(k);
    d_xi[L - 1].noalias() += bb.U_y.transpose() * dy.col(k);
  }
  return blackbox_parameters(g);
}

}  // namespace

Mat blackbox_simulate(const BlackBoxModel& bb, const Vec& x0, const Mat& u) {
  return blackbox_forward(bb, x0, u).y;
}

Vec blackbox_gradient(const BlackBoxModel& bb, const Vec& x0, const Mat& u, const Mat& dl_dy) {
  const BlackBoxTape t = blackbox_forward(bb, x0, u);
  if (dl_dy.rows() != bb.n_y() || dl_dy.cols() != u.cols())
    throw DimensionError("output-gradient sequence must be n_y x T");
  return blackbox_backward(bb, t, dl_dy);
}

double blackbox_sequence_loss(const BlackBoxModel& bb, const Vec& x0, const Sequence& s, int washout,
                              Vec* grad) {
  if (s.y.rows() != bb.n_y()) throw DimensionError("sequence outputs do not match the black-box head");
  const BlackBoxTape t = blackbox_forward(bb, x0, s.u);
  Mat dy = Mat::Zero(t.y.rows(), t.y.cols());
  double loss = 0.0;
  for (Eigen::Index k = std::max(washout, 0); k < t.y.cols(); ++k) {
    dy.col(k) = t.y.col(k) - s.y.col(k);
    loss += dy.col(k).squaredNorm();
  }
  if (grad) *grad = blackbox_backward(bb, t, 2.0 * dy);
  return loss;
}

// ---------------------------------------------------------------------------
// Files

Json composite_to_json(const CompositeModel& cm) {
  validate(cm);
  Json j;
  j["format"] = "rnnid-model";
  j["version"] = 1;
  j["architecture"] = "composite";
  Json blocks = Json::array();
  for (const auto& b : cm.blocks) blocks.push_back(model_to_json(b));
  j["blocks"] = std::move(blocks);
  Json wiring = Json::array();
  for (std::size_t i = 0; i < cm.wiring.size(); ++i)
    wiring.push_back({{"block", i + 1},
                      {"input_ports", cm.wiring[i].inputs},
                      {"upstream_blocks", cm.wiring[i].upstream},
                      {"frozen", static_cast<bool>(cm.frozen[i])}});
  j["wiring"] = std::move(wiring);
  std::vector<int> sig;
  for (std::size_t c = 0; c < cm.sigmoid.size(); ++c)
    if (cm.sigmoid[c]) sig.push_back(static_cast<int>(c));
  j["sigmoid_channels"] = sig;
  j["out_scale"] = vector_to_json(cm.out_scale);
  j["out_offset"] = vector_to_json(cm.out_offset);
  j["n_u"] = cm.n_u;
  return j;
}

CompositeModel composite_from_json(const Json& j) {
  CompositeModel cm;
  try {
    if (j.value("architecture", std::string()) != "composite") throw ParseError("not a composite model file");
    for (const auto& b : j.at("blocks")) cm.blocks.push_back(model_from_json(b));
    for (const auto& w : j.at("wiring")) {
      cm.wiring.push_back({w.at("input_ports").get<std::vector<int>>(),
                           w.at("upstream_blocks").get<std::vector<int>>()});
      cm.frozen.push_back(w.value("frozen", false));
    }
    cm.n_u = j.value("n_u", kPlantInputs);
    cm.sigmoid.assign(static_cast<std::size_t>(cm.n_y()), false);
    for (int c : j.at("sigmoid_channels").get<std::vector<int>>()) {
      if (c < 0 || c >= cm.n_y()) throw ParseError("sigmoid channel out of range");
      cm.sigmoid[static_cast<std::size_t>(c)] = true;
    }
    cm.out_scale = vector_from_json(j.at("out_scale"), "out_scale");
    cm.out_offset = vector_from_json(j.at("out_offset"), "out_offset");
  } catch (const Json::exception& e) {
    throw ParseError(std::string("composite model file: ") + e.what());
  }
  validate(cm);
  return cm;
}

Json blackbox_to_json(const BlackBoxModel& bb) {
  validate(bb);
  Json j;
  j["format"] = "rnnid-model";
  j["version"] = 1;
  j["architecture"] = "blackbox";
  j["dims"] = {{"n_u", bb.n_u}, {"n_y", bb.n_y()}, {"n_x", bb.n_x},
               {"layers", static_cast<int>(bb.layers.size())}};
  Json layers = Json::array();
  for (const auto& p : bb.layers) {
    Json mats = Json::object();
    put_gate(mats, p.forget, "W_f", "U_f", "b_f");
    put_gate(mats, p.input, "W_i", "U_i", "b_i");
    put_gate(mats, p.cell, "W_c", "U_c", "b_c");
    put_gate(mats, p.output, "W_o", "U_o", "b_o");
    layers.push_back(std::move(mats));
  }
  j["layers"] = std::move(layers);
  j["U_y"] = matrix_to_json(bb.U_y);
  j["b_y"] = vector_to_json(bb.b_y);
  return j;
}

BlackBoxModel blackbox_from_json(const Json& j) {
  BlackBoxModel bb;
  try {
    if (j.value("architecture", std::string()) != "blackbox") throw ParseError("not a black-box model file");
    bb.n_u = j.at("dims").at("n_u").get<int>();
    bb.n_x = j.at("dims").at("n_x").get<int>();
    for (const auto& mats : j.at("layers")) {
      LstmParams p;
      p.forget = get_gate(mats, "W_f", "U_f", "b_f");
      p.input = get_gate(mats, "W_i", "U_i", "b_i");
      p.cell = get_gate(mats, "W_c", "U_c", "b_c");
      p.output = get_gate(mats, "W_o", "U_o", "b_o");
      bb.layers.push_back(std::move(p));
    }
    bb.U_y = matrix_from_json(j.at("U_y"), "U_y");
    bb.b_y = vector_from_json(j.at("b_y"), "b_y");
  } catch (const Json::exception& e) {
    throw ParseError(std::string("black-box model file: ") + e.what());
  }
  validate(bb);
  return bb;
}

AnyModel any_model_from_json(const Json& j) {
  if (!j.is_object() || j.value("format", std::string()) != "rnnid-model")
    throw ParseError("not an rnnid model file (missing format tag)");
  AnyModel a;
  a.document = j;
  a.kind = j.value("architecture", std::string());
  if (a.kind == "composite") {
    a.model = std::make_unique<CompositeTrainable>(composite_from_json(j), ConsistencyPenaltyConfig{});
  } else if (a.kind == "blackbox") {
    a.model = std::make_unique<BlackBoxTrainable>(blackbox_from_json(j));
  } else {
    a.model = std::make_unique<NetworkTrainable>(model_from_json(j), StabilityProperty::none);
  }
  return a;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows,
                           const std::vector<std::string>& channel_names) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::ostringstream os;
  os.precision(10);
  os << "model";
  for (const auto& n : channel_names) os << "," << quote(n);
  os << ",overall\n";
  for (const auto& r : rows) {
    if (r.fit.per_channel.size() != channel_names.size())
      throw DimensionError("FIT row width differs from the channel list");
    os << quote(r.model);
    for (double v : r.fit.per_channel) os << "," << v;
    os << "," << r.fit.overall << "\n";
  }
  return os.str();
}

}  // namespace rnnid
