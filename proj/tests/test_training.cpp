#include "rnnid/errors.hpp"
#include "rnnid/training.hpp"
#include "support.hpp"

#include <doctest.h>

#include <sstream>

using namespace rnnid;
using rnnid::testing::random_matrix;

namespace {

Sequence make_sequence(int n_u, int n_y, int T, int id, std::mt19937_64& rng) {
  Sequence s;
  s.u = random_matrix(n_u, T, -1, 1, rng);
  s.y = random_matrix(n_y, T, -1, 1, rng);
  s.id = id;
  return s;
}

// Teacher data: inputs from a multilevel signal, outputs simulated by `teacher` from rest.
Dataset teacher_dataset(const ModelParams& teacher, int n_train, int n_val, int T, int T_w, std::uint64_t seed) {
  Dataset d;
  const ExcitationSpec spec = ExcitationSpec::uniform(teacher.dims.n_u, ChannelExcitation{5, -1, 1, 2, 10});
  for (int i = 0; i < n_train + n_val; ++i) {
    auto rng = substream(seed, static_cast<std::uint64_t>(i));
    Sequence s;
    s.u = generate_excitation(spec, T, rng);
    s.y = simulate(teacher, Vec::Zero(state_size(teacher)), s.u).y;
    s.id = i;
    d.sequences.push_back(std::move(s));
    (i < n_train ? d.split.train : d.split.validation).push_back(i);
  }
  d.split.T_s = T;
  d.split.T_w = T_w;
  return d;
}

double naive_mse(const ModelParams& m, const std::vector<Sequence>& data, int washout) {
  double sum = 0.0;
  long n = 0;
  for (const auto& s : data) {
    Vec x = Vec::Zero(state_size(m));
    for (Eigen::Index k = 0; k < s.length(); ++k) {
      const StepResult r = step(m, x, s.u.col(k));
      if (k >= washout) {
        for (Eigen::Index c = 0; c < r.y.size(); ++c) sum += (r.y[c] - s.y(c, k)) * (r.y[c] - s.y(c, k));
      }
      x = r.x_next;
    }
    n += s.length() - washout;
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("subsequence windows") {
  std::mt19937_64 rng(1);
  const Sequence raw10 = make_sequence(1, 1, 10, 0, rng);
  CHECK(make_subsequences(raw10, 10, 2, 1).size() == 1);
  const Sequence raw12 = make_sequence(1, 1, 12, 0, rng);
  const auto w = make_subsequences(raw12, 10, 2, 2);
  REQUIRE(w.size() == 2);
  CHECK(w[0].u(0, 0) == raw12.u(0, 0));
  CHECK(w[1].u(0, 0) == raw12.u(0, 2));
  CHECK(w[1].id == 1);
  const Sequence raw = make_sequence(1, 1, 47, 0, rng);
  for (int stride : {5, 6, 9, 13})
    CHECK(make_subsequences(raw, 5, 1, stride).size() == static_cast<std::size_t>((47 - 5) / stride + 1));
  CHECK_THROWS_AS(make_subsequences(raw10, 11, 2, 1), PreconditionError);
}

TEST_CASE("split validation") {
  DatasetSplit s{{0, 1}, {2}, {3}, 10, 2};
  CHECK_NOTHROW(validate_split(s, 4));
  s.test = {1};
  CHECK_THROWS_AS(validate_split(s, 4), PreconditionError);
  s.test = {3};
  s.T_w = 10;
  CHECK_THROWS_AS(validate_split(s, 4), PreconditionError);
}

TEST_CASE("MSE") {
  const ModelParams m = random_model(Architecture::gru, Dims{2, 2, 3, 1}, 4);
  std::mt19937_64 rng(2);
  std::vector<Sequence> data;
  for (int i = 0; i < 3; ++i) {
    Sequence s = make_sequence(2, 2, 40, i, rng);
    s.y = simulate(m, Vec::Zero(3), s.u).y;
    data.push_back(s);
  }
  CHECK(mse(m, data, 5) == 0.0);

  const ModelParams zero = zero_model(Architecture::gru, Dims{2, 2, 3, 1});
  std::vector<Sequence> constant = data;
  for (auto& s : constant) {
    s.y.row(0).setConstant(0.5);
    s.y.row(1).setConstant(-2.0);
  }
  CHECK(std::abs(mse(zero, constant, 5) - 4.25) < 1e-15);

  for (auto& s : data) s.y += random_matrix(2, 40, -0.1, 0.1, rng);
  const double a = mse(m, data, 5), b = mse(m, data, 10);
  CHECK(std::abs(a - naive_mse(m, data, 5)) < 1e-12);
  CHECK(std::abs(b - naive_mse(m, data, 10)) < 1e-12);
  CHECK(a != b);
  CHECK_THROWS_AS(mse(m, data, 40), PreconditionError);
}

TEST_CASE("training loss gradient equals the summed BPTT gradient") {
  const ModelParams m = random_model(Architecture::lstm, Dims{2, 2, 3, 1}, 6);
  std::mt19937_64 rng(3);
  const Sequence s = make_sequence(2, 2, 25, 0, rng);
  NetworkTrainable t(m, StabilityProperty::none);
  Vec g;
  const double loss = t.sequence_loss(s, Vec::Zero(6), 5, &g);
  Mat dy = Mat::Zero(2, 25);
  const Trajectory tr = simulate(m, Vec::Zero(6), s.u);
  double oracle = 0.0;
  for (int k = 5; k < 25; ++k) {
    dy.col(k) = 2.0 * (tr.y.col(k) - s.y.col(k));
    oracle += (tr.y.col(k) - s.y.col(k)).squaredNorm();
  }
  CHECK(std::abs(loss - oracle) < 1e-12);
  CHECK((g - trainable_vector(bptt_gradient(m, Vec::Zero(6), s.u, dy))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("washout steps never reach the loss or its gradient") {
  const ModelParams m = random_model(Architecture::gru, Dims{2, 1, 3, 1}, 7);
  std::mt19937_64 rng(4);
  Sequence s = make_sequence(2, 1, 30, 0, rng);
  NetworkTrainable t(m, StabilityProperty::none);
  Vec g1, g2;
  const double l1 = t.sequence_loss(s, Vec::Zero(3), 10, &g1);
  s.y.leftCols(10) = random_matrix(1, 10, -5, 5, rng);
  const double l2 = t.sequence_loss(s, Vec::Zero(3), 10, &g2);
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("training config") {
  TrainConfig c;
  c.optimizer = OptimizerKind::rmsprop;
  c.learning_rate = 0.0123;
  c.target = StabilityProperty::delta_iss;
  c.seed = 99;
  const TrainConfig r = config_from_json(Json::parse(config_to_json(c).dump()));
  CHECK(config_to_json(r) == config_to_json(c));
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(c), PreconditionError);
}

TEST_CASE("zero epochs return the initial model") {
  const ModelParams m = random_model(Architecture::gru, Dims{1, 1, 2, 1}, 1);
  const Dataset d = teacher_dataset(m, 2, 1, 20, 2, 1);
  TrainConfig c;
  c.epochs = 0;
  const TrainResult r = train(m, d, c);
  CHECK(r.outcome.trace.epochs.empty());
  CHECK(trainable_vector(r.model) == trainable_vector(m));
}

TEST_CASE("training is deterministic and an inactive penalty changes nothing") {
  ModelParams teacher = random_model(Architecture::gru, Dims{1, 1, 2, 1}, 17);
  const Dataset d = teacher_dataset(teacher, 8, 2, 40, 5, 2);
  ModelParams student = random_model(Architecture::gru, Dims{1, 1, 2, 1}, 18);
  set_trainable_vector(student, 0.05 * trainable_vector(student));
  REQUIRE(certify(student).max_margin() < -0.5);
  TrainConfig c;
  c.epochs = 15;
  c.batch_size = 4;
  c.seed = 5;
  const TrainResult a = train(student, d, c);
  const TrainResult b = train(student, d, c);
  REQUIRE(a.outcome.trace.epochs.size() == 15);
  for (std::size_t e = 0; e < 15; ++e) {
    CHECK(a.outcome.trace.epochs[e].train_mse == b.outcome.trace.epochs[e].train_mse);
    CHECK(a.outcome.trace.epochs[e].val_mse == b.outcome.trace.epochs[e].val_mse);
  }
  c.target = StabilityProperty::delta_iss;
  const TrainResult p = train(student, d, c);
  for (std::size_t e = 0; e < 15; ++e) CHECK(p.outcome.trace.epochs[e].train_mse == a.outcome.trace.epochs[e].train_mse);
  CHECK(trainable_vector(p.model) == trainable_vector(a.model));

  const std::string csv = a.outcome.trace.to_csv();
  CHECK(csv.rfind("epoch,train_mse,val_mse,margin_1,margin_2", 0) == 0);
}

TEST_CASE("GRU student learns a certified teacher under the incremental certificate") {
  ModelParams teacher;
  for (std::uint64_t s = 100;; ++s) {
    teacher = random_model(Architecture::gru, Dims{1, 1, 2, 1}, s);
    if (certify(teacher).pass) break;
  }
  const Dataset d = teacher_dataset(teacher, 16, 4, 80, 10, 3);
  TrainConfig c;
  c.epochs = 500;
  c.batch_size = 8;
  c.learning_rate = 1e-2;
  c.patience = 500;
  c.seed = 11;
  c.target = StabilityProperty::delta_iss;
  const TrainResult r = train(random_model(Architecture::gru, Dims{1, 1, 2, 1}, 12), d, c);
  CHECK(r.outcome.certified);
  CHECK(r.outcome.best_val_mse < 1e-3);
  const CertificateReport rep = certify(r.model);
  for (const auto& m : rep.margins) CHECK(m.value < 0.0);
}

TEST_CASE("ESN least squares") {
  const Dims dims{2, 1, 30, 1};
  ReservoirConfig rc;
  rc.feedback_scale = 0.0;
  ModelParams esn = generate_reservoir(dims, rc, 3);
  std::mt19937_64 rng(4);
  // Targets exactly linear in the teacher-forced regressors.
  const Mat theta = random_matrix(1, 32, -1, 1, rng);
  std::vector<Sequence> train_set;
  for (int i = 0; i < 4; ++i) {
    Sequence s = make_sequence(2, 1, 100, i, rng);
    const Mat R = esn_teacher_forced_states(esn, Vec::Zero(32), s.u, s.y);
    s.y = theta * R.leftCols(100);
    train_set.push_back(s);
  }
  const EsnFit exact = train_esn(esn, train_set, 10, 0.0);
  const auto& p = std::get<EsnParams>(exact.model.net);
  Mat got(1, 32);
  got << p.W_out1, p.W_out2;
  CHECK((got - theta).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(exact.orthogonality < 1e-8);

  std::vector<Sequence> noisy = train_set;
  for (auto& s : noisy) s.y += random_matrix(1, 100, -0.2, 0.2, rng);
  const EsnFit ridge = train_esn(esn, noisy, 10, 1e-3);
  CHECK(ridge.orthogonality < 1e-8);
  const EsnFit huge = train_esn(esn, noisy, 10, 1e12);
  CHECK(std::get<EsnParams>(huge.model.net).W_out1.cwiseAbs().maxCoeff() < 1e-6);

  std::vector<Sequence> degenerate = train_set;
  for (auto& s : degenerate) s.u.row(1) = s.u.row(0);
  CHECK_THROWS_AS(train_esn(esn, degenerate, 10, 0.0), PreconditionError);
}

TEST_CASE("FIT") {
  std::mt19937_64 rng(8);
  std::vector<Sequence> data;
  std::vector<Mat> preds;
  for (int i = 0; i < 3; ++i) {
    data.push_back(make_sequence(1, 3, 50, i, rng));
    preds.push_back(data.back().y);
  }
  const FitResult perfect = fit_from_predictions(preds, data, 5);
  for (double f : perfect.per_channel) CHECK(f == 100.0);
  CHECK(perfect.overall == 100.0);

  Vec avg = Vec::Zero(3);
  long n = 0;
  for (const auto& s : data)
    for (int k = 5; k < 50; ++k, ++n) avg += s.y.col(k);
  avg /= static_cast<double>(n);
  for (auto& p : preds) p = avg.replicate(1, 50);
  const FitResult mean = fit_from_predictions(preds, data, 5);
  CHECK(std::abs(mean.overall) < 1e-9);

  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].y.row(2).setConstant(0.3);
    preds[i] = data[i].y;
  }
  const FitResult flat = fit_from_predictions(preds, data, 5);
  CHECK(flat.floored_terms == 3 * 45);
  CHECK(flat.per_channel[2] == 100.0);
}
