#include "rnnid/training.hpp"

#include "rnnid/errors.hpp"
#include "rnnid/excitation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace rnnid {

void validate_split(const DatasetSplit& s, int n_sequences) {
  if (s.T_w < 0 || s.T_w >= s.T_s) throw PreconditionError("washout T_w must satisfy 0 <= T_w < T_s");
  std::set<int> seen;
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (int id : *part) {
      if (id < 0 || id >= n_sequences) throw PreconditionError("split references unknown sequence id");
      if (!seen.insert(id).second) throw PreconditionError("split sets overlap at id " + std::to_string(id));
    }
  if (static_cast<int>(seen.size()) != n_sequences)
    throw PreconditionError("split does not cover every sequence");
}

std::vector<Sequence> Dataset::subset(const std::vector<int>& ids) const {
  std::vector<Sequence> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(sequences.size()))
      throw PreconditionError("unknown sequence id " + std::to_string(id));
    out.push_back(sequences[static_cast<std::size_t>(id)]);
  }
  return out;
}

std::vector<Sequence> make_subsequences(const Sequence& raw, int T_s, int T_w, int stride) {
  if (stride < 1) throw PreconditionError("stride must be at least 1");
  if (T_w < 0 || T_w >= T_s) throw PreconditionError("washout T_w must satisfy 0 <= T_w < T_s");
  if (T_s > raw.length()) throw PreconditionError("subsequence length exceeds the raw sequence");
  std::vector<Sequence> out;
  for (Eigen::Index start = 0; start + T_s <= raw.length(); start += stride)
    out.push_back({raw.u.middleCols(start, T_s), raw.y.middleCols(start, T_s),
                   static_cast<int>(out.size())});
  return out;
}

namespace {

Vec initial_state(const InitialStatePolicy& p, int n, int id) {
  if (!p.random) return Vec::Zero(n);
  auto rng = substream(p.seed, static_cast<std::uint64_t>(id));
  std::uniform_real_distribution<double> d(-p.half_width, p.half_width);
  Vec x(n);
  for (int i = 0; i < n; ++i) x[i] = d(rng);
  return x;
}

long counted_steps(const Sequence& s, int washout) {
  return std::max<long>(0, static_cast<long>(s.length()) - washout);
}

}  // namespace

double NetworkTrainable::sequence_loss(const Sequence& s, const Vec& x0, int washout, Vec* grad) const {
  if (!grad) return squared_error_and_gradient(model_, x0, s.u, s.y, washout, nullptr);
  ModelParams g = zeros_like(model_);
  const double loss = squared_error_and_gradient(model_, x0, s.u, s.y, washout, &g);
  *grad = trainable_vector(g);
  return loss;
}

Mat NetworkTrainable::predict(const Sequence& s, const Vec& x0) const {
  return simulate(model_, x0, s.u).y;
}

std::vector<double> NetworkTrainable::margins(std::vector<Vec>* gradients) const {
  std::vector<double> v;
  if (gradients) gradients->clear();
  for (auto& mg : margin_gradients(model_, target_)) {
    v.push_back(mg.value);
    if (gradients) gradients->push_back(trainable_vector(mg.gradient));
  }
  return v;
}

std::vector<double> NetworkTrainable::report_margins() const {
  std::vector<double> v;
  for (const auto& m : certify(model_).margins) v.push_back(m.value);
  return v;
}

double mse(const Trainable& model, const std::vector<Sequence>& data, int washout,
           const InitialStatePolicy& x0) {
  if (data.empty()) throw PreconditionError("MSE needs a nonempty subset");
  double sum = 0.0;
  long steps = 0;
  for (const auto& s : data) {
    if (washout >= s.length()) throw PreconditionError("washout T_w must be below T_s");
    sum += model.sequence_loss(s, initial_state(x0, model.state_size(), s.id), washout, nullptr);
    steps += counted_steps(s, washout);
  }
  return sum / static_cast<double>(steps);
}

double mse(const ModelParams& model, const std::vector<Sequence>& data, int washout,
           const InitialStatePolicy& x0) {
  return mse(NetworkTrainable(model, StabilityProperty::none), data, washout, x0);
}

// ---------------------------------------------------------------------------
// Config

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0)) throw PreconditionError("learning rate must be positive");
  if (c.epochs < 0) throw PreconditionError("epochs must be nonnegative");
  if (c.batch_size < 1) throw PreconditionError("batch size must be at least 1");
  if (c.patience < 1) throw PreconditionError("patience must be at least 1");
  if (c.penalty_weight < 0 || c.penalty_slack < 0 || c.penalty_ramp < 1 || c.penalty_ramp_every < 1)
    throw PreconditionError("invalid penalty schedule");
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1 && c.rms_alpha >= 0 && c.rms_alpha < 1))
    throw PreconditionError("optimizer decay parameters must lie in [0, 1)");
}

Json config_to_json(const TrainConfig& c) {
  return Json{{"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "rmsprop"},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"rms_alpha", c.rms_alpha},
              {"epsilon", c.epsilon},
              {"grad_clip", c.grad_clip},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"patience", c.patience},
              {"penalty_weight", c.penalty_weight},
              {"penalty_slack", c.penalty_slack},
              {"penalty_ramp", c.penalty_ramp},
              {"penalty_ramp_every", c.penalty_ramp_every},
              {"x0_random", c.x0.random},
              {"x0_half_width", c.x0.half_width},
              {"x0_seed", c.x0.seed},
              {"seed", c.seed},
              {"target", std::string(to_string(c.target))}};
}

TrainConfig config_from_json(const Json& j) {
  TrainConfig c;
  try {
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") c.optimizer = OptimizerKind::adam;
    else if (opt == "rmsprop") c.optimizer = OptimizerKind::rmsprop;
    else throw ParseError("unknown optimizer '" + opt + "'");
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.rms_alpha = j.value("rms_alpha", c.rms_alpha);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.patience = j.value("patience", c.patience);
    c.penalty_weight = j.value("penalty_weight", c.penalty_weight);
    c.penalty_slack = j.value("penalty_slack", c.penalty_slack);
    c.penalty_ramp = j.value("penalty_ramp", c.penalty_ramp);
    c.penalty_ramp_every = j.value("penalty_ramp_every", c.penalty_ramp_every);
    c.x0.random = j.value("x0_random", c.x0.random);
    c.x0.half_width = j.value("x0_half_width", c.x0.half_width);
    c.x0.seed = j.value("x0_seed", c.x0.seed);
    c.seed = j.value("seed", c.seed);
    const std::string t = j.value("target", std::string("none"));
    if (t == "none") c.target = StabilityProperty::none;
    else if (t == "ISS") c.target = StabilityProperty::iss;
    else if (t == "dISS") c.target = StabilityProperty::delta_iss;
    else throw ParseError("unknown target property '" + t + "'");
  } catch (const Json::exception& e) {
    throw ParseError(std::string("training config: ") + e.what());
  }
  validate(c);
  return c;
}

std::string TrainTrace::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  std::size_t m = epochs.empty() ? 0 : epochs.front().margins.size();
  os << "epoch,train_mse,val_mse";
  for (std::size_t j = 1; j <= m; ++j) os << ",margin_" << j;
  os << "\n";
  for (const auto& e : epochs) {
    os << e.epoch << "," << e.train_mse << "," << e.val_mse;
    for (double v : e.margins) os << "," << v;
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Optimizers (PyTorch conventions)

Optimizer::Optimizer(const TrainConfig& cfg, Eigen::Index n)
    : cfg_(cfg), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

void Optimizer::step(Vec& theta, const Vec& grad) {
  ++t_;
  if (cfg_.optimizer == OptimizerKind::adam) {
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    theta.array() -= cfg_.learning_rate / bc1 * m_.array() /
                     ((v_.array() / bc2).sqrt() + cfg_.epsilon);
  } else {
    v_ = cfg_.rms_alpha * v_ + (1.0 - cfg_.rms_alpha) * grad.cwiseAbs2();
    theta.array() -= cfg_.learning_rate * grad.array() / (v_.array().sqrt() + cfg_.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Training loop

TrainOutcome train(Trainable& model, const Dataset& data, const TrainConfig& cfg) {
  validate(cfg);
  validate_split(data.split, static_cast<int>(data.sequences.size()));
  const int Tw = data.split.T_w;
  const std::vector<Sequence> train_set = data.subset(data.split.train);
  const std::vector<Sequence> val_set =
      data.split.validation.empty() ? train_set : data.subset(data.split.validation);
  if (train_set.empty()) throw PreconditionError("training set is empty");

  const bool constrained = cfg.target != StabilityProperty::none;
  auto is_certified = [&](const std::vector<double>& nu) {
    return std::all_of(nu.begin(), nu.end(), [](double v) { return v < -kMarginTolerance; });
  };

  TrainOutcome out;
  Vec theta = model.parameters();
  out.certified = !constrained || is_certified(model.margins(nullptr));
  if (cfg.epochs == 0) return out;

  const int n_state = model.state_size();
  std::vector<Vec> x0s;
  for (const auto& s : train_set) x0s.push_back(initial_state(cfg.x0, n_state, s.id));

  Optimizer opt(cfg, theta.size());
  auto shuffle_rng = substream(cfg.seed, 0x5bu);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> weights;
  double best_cert = std::numeric_limits<double>::infinity();
  double best_any = std::numeric_limits<double>::infinity();
  Vec best_cert_theta, best_any_theta;
  int best_cert_epoch = -1, best_any_epoch = -1;
  int since_improved = 0;
  const auto t_start = std::chrono::steady_clock::now();

  Vec grad(theta.size()), g(theta.size());
  std::vector<Vec> nu_grads;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    long epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                         order.size(), b0 + cfg.batch_size)));
      std::sort(batch.begin(), batch.end(),
                [&](std::size_t a, std::size_t b) { return train_set[a].id < train_set[b].id; });
      grad.setZero();
      double loss = 0.0;
      long steps = 0;
      for (std::size_t idx : batch) {
        loss += model.sequence_loss(train_set[idx], x0s[idx], Tw, &g);
        grad += g;
        steps += counted_steps(train_set[idx], Tw);
      }
      epoch_loss += loss;
      epoch_steps += steps;
      grad /= static_cast<double>(std::max<long>(steps, 1));
      if (constrained) {
        const std::vector<double> nu = model.margins(&nu_grads);
        if (weights.empty()) weights.assign(nu.size(), cfg.penalty_weight);
        const std::vector<double> slopes = penalty_rho_slopes(nu, weights, cfg.penalty_slack);
        for (std::size_t j = 0; j < nu.size(); ++j)
          if (slopes[j] != 0.0) grad += slopes[j] * nu_grads[j];
      }
      if (cfg.grad_clip > 0) {
        const double n = grad.norm();
        if (n > cfg.grad_clip) grad *= cfg.grad_clip / n;
      }
      opt.step(theta, grad);
      model.set_parameters(theta);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = epoch_loss / static_cast<double>(std::max<long>(epoch_steps, 1));
    rec.val_mse = mse(model, val_set, Tw, cfg.x0);
    rec.margins = model.report_margins();
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    out.trace.epochs.push_back(rec);

    const bool cert_now = !constrained || is_certified(model.margins(nullptr));
    if (rec.val_mse < best_any) {
      best_any = rec.val_mse;
      best_any_theta = theta;
      best_any_epoch = epoch;
    }
    if (cert_now && rec.val_mse < best_cert) {
      best_cert = rec.val_mse;
      best_cert_theta = theta;
      best_cert_epoch = epoch;
      since_improved = 0;
    } else {
      ++since_improved;
    }
    if (constrained && !cert_now && epoch % cfg.penalty_ramp_every == 0)
      for (double& w : weights) w *= cfg.penalty_ramp;
    if (since_improved >= cfg.patience && cert_now) break;
  }

  if (best_cert_epoch > 0) {
    model.set_parameters(best_cert_theta);
    out.certified = true;
    out.best_epoch = best_cert_epoch;
    out.best_val_mse = best_cert;
  } else {
    model.set_parameters(best_any_theta);
    out.certified = false;
    out.best_epoch = best_any_epoch;
    out.best_val_mse = best_any;
  }
  return out;
}

TrainResult train(const ModelParams& model0, const Dataset& data, const TrainConfig& cfg) {
  if (model0.architecture() == Architecture::esn)
    throw PreconditionError("ESN models are trained by least squares (train_esn)");
  NetworkTrainable t(model0, cfg.target);
  TrainOutcome o = train(t, data, cfg);
  return {t.model(), std::move(o)};
}

// ---------------------------------------------------------------------------
// ESN least squares

namespace {

struct RidgeSolution {
  Mat theta;  // n_y x n_r
  double orthogonality = 0;
};

RidgeSolution solve_ridge(const Mat& R, const Mat& Y, double lambda) {
  const Eigen::Index nr = R.rows(), M = R.cols();
  Mat A(M + (lambda > 0 ? nr : 0), nr);
  Mat B = Mat::Zero(A.rows(), Y.rows());
  A.topRows(M) = R.transpose();
  B.topRows(M) = Y.transpose();
  if (lambda > 0) A.bottomRows(nr) = std::sqrt(lambda) * Mat::Identity(nr, nr);
  Eigen::ColPivHouseholderQR<Mat> qr(A);
  if (lambda == 0.0 && qr.rank() < nr)
    throw PreconditionError("ESN regressors are rank deficient; use a ridge parameter lambda > 0");
  RidgeSolution s;
  s.theta = qr.solve(B).transpose();
  const Mat normal = R * (Y - s.theta * R).transpose() - lambda * s.theta.transpose();
  const double scale = R.norm() * Y.norm();
  s.orthogonality = scale > 0 ? normal.cwiseAbs().maxCoeff() / scale : 0.0;
  return s;
}

}  // namespace

EsnFit train_esn(const ModelParams& esn, const std::vector<Sequence>& train, int washout,
                 double lambda, StabilityProperty target) {
  if (esn.architecture() != Architecture::esn) throw PreconditionError("train_esn needs an ESN model");
  if (train.empty()) throw PreconditionError("ESN training set is empty");
  if (!(lambda >= 0)) throw PreconditionError("ridge parameter must be nonnegative");
  validate(esn);
  const int ns = state_size(esn);
  long M = 0;
  for (const auto& s : train) M += counted_steps(s, washout);
  if (M == 0) throw PreconditionError("no counted steps after washout");

  Mat R(ns, M), Y(esn.dims.n_y, M);
  long col = 0;
  for (const auto& s : train) {
    const Mat X = esn_teacher_forced_states(esn, Vec::Zero(ns), s.u, s.y);
    for (Eigen::Index k = washout; k < s.length(); ++k, ++col) {
      R.col(col) = X.col(k);
      Y.col(col) = s.y.col(k);
    }
  }

  EsnFit fit;
  fit.lambda = lambda;
  for (;;) {
    const RidgeSolution sol = solve_ridge(R, Y, fit.lambda);
    fit.model = esn;
    auto& p = std::get<EsnParams>(fit.model.net);
    p.W_out1 = sol.theta.leftCols(esn.dims.n_x);
    p.W_out2 = sol.theta.rightCols(esn.dims.n_u);
    fit.orthogonality = sol.orthogonality;
    fit.certified = certify(fit.model).pass;
    if (target == StabilityProperty::none || fit.certified || fit.lambda_increases >= 30) break;
    fit.lambda = fit.lambda > 0 ? 10.0 * fit.lambda : 1e-8;
    ++fit.lambda_increases;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// FIT

FitResult fit_from_predictions(const std::vector<Mat>& predictions,
                               const std::vector<Sequence>& data, int washout) {
  if (data.empty()) throw PreconditionError("FIT needs a nonempty test subset");
  if (predictions.size() != data.size()) throw DimensionError("one prediction per sequence expected");
  const Eigen::Index ny = data.front().y.rows();
  Vec avg = Vec::Zero(ny);
  long steps = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predictions[i].rows() != ny || predictions[i].cols() != data[i].length())
      throw DimensionError("prediction shape does not match the measured sequence");
    for (Eigen::Index k = washout; k < data[i].length(); ++k, ++steps) avg += data[i].y.col(k);
  }
  if (steps == 0) throw PreconditionError("no counted steps after washout");
  avg /= static_cast<double>(steps);

  FitResult r;
  r.per_channel.assign(static_cast<std::size_t>(ny), 0.0);
  for (Eigen::Index c = 0; c < ny; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
      for (Eigen::Index k = washout; k < data[i].length(); ++k) {
        double den = std::abs(data[i].y(c, k) - avg[c]);
        if (den < 1e-9) {
          den = 1e-9;
          ++r.floored_terms;
        }
        acc += std::abs(predictions[i](c, k) - data[i].y(c, k)) / den;
      }
    r.per_channel[static_cast<std::size_t>(c)] = 100.0 * (1.0 - acc / static_cast<double>(steps));
  }
  r.overall = std::accumulate(r.per_channel.begin(), r.per_channel.end(), 0.0) /
              static_cast<double>(ny);
  return r;
}

FitResult fit_metric(const Trainable& model, const std::vector<Sequence>& data, int washout) {
  std::vector<Mat> preds;
  for (const auto& s : data) preds.push_back(model.predict(s, Vec::Zero(model.state_size())));
  return fit_from_predictions(preds, data, washout);
}

}  // namespace rnnid
