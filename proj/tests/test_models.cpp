#include "rnnid/errors.hpp"
#include "rnnid/model_io.hpp"
#include "rnnid/models.hpp"
#include "support.hpp"

#include <doctest.h>

#include <deque>

using namespace rnnid;
using rnnid::testing::central_difference;
using rnnid::testing::max_relative_error;
using rnnid::testing::random_matrix;
using rnnid::testing::random_vector;

namespace {

Mat unit_inputs(int n_u, int T, std::mt19937_64& rng) { return random_matrix(n_u, T, -1.0, 1.0, rng); }

double linear_loss(const ModelParams& m, const Vec& x0, const Mat& u, const Mat& w) {
  return (simulate(m, x0, u).y.array() * w.array()).sum();
}

}  // namespace

TEST_CASE("zero-weight GRU stays at the origin and emits its output bias") {
  ModelParams m = zero_model(Architecture::gru, Dims{3, 2, 4, 1});
  std::get<GruParams>(m.net).b_o << 0.25, -0.75;
  const StepResult r = step(m, Vec::Zero(4), Vec::Constant(3, 0.9));
  CHECK(r.x_next.cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.y[0] == 0.25);
  CHECK(r.y[1] == -0.75);
}

TEST_CASE("NNARX step shifts the delay line like a ring buffer") {
  const Dims d{2, 2, 5, 3};
  const ModelParams m = random_model(Architecture::nnarx, d, 11);
  const auto& p = std::get<NnarxParams>(m.net);
  std::mt19937_64 rng(3);
  Vec x = random_vector(state_size(m), -0.5, 0.5, rng);
  std::deque<Vec> ring;
  for (int i = 0; i < d.n_regressors; ++i) ring.push_back(x.segment(i * 4, 4));
  for (int k = 0; k < 50; ++k) {
    const Vec u = random_vector(2, -1, 1, rng);
    const StepResult r = step(m, x, u);
    Vec a = p.W1 * u + p.U1 * x + p.b1;
    a = a.array().tanh();
    Vec z(4);
    z << p.U0 * a + p.b0, u;
    CHECK(r.y == ring.back().head(2));
    ring.pop_front();
    ring.push_back(z);
    for (int i = 0; i < d.n_regressors; ++i)
      CHECK((r.x_next.segment(i * 4, 4) - ring[static_cast<std::size_t>(i)]).cwiseAbs().maxCoeff() < 1e-15);
    for (int i = 0; i + 1 < d.n_regressors; ++i) CHECK(r.x_next.segment(i * 4, 4) == x.segment((i + 1) * 4, 4));
    x = r.x_next;
  }
}

TEST_CASE("LSTM with strongly negative forget and input biases clears the cell state") {
  ModelParams m = random_model(Architecture::lstm, Dims{2, 1, 3, 1}, 5);
  auto& p = std::get<LstmParams>(m.net);
  p.forget.W.setZero();
  p.forget.U.setZero();
  p.input.W.setZero();
  p.input.U.setZero();
  p.forget.b.setConstant(-30.0);
  p.input.b.setConstant(-30.0);
  Vec x(6);
  x << 0.9, -0.8, 0.7, 0.1, 0.2, -0.3;
  const StepResult r = step(m, x, Vec::Constant(2, 0.5));
  CHECK(r.x_next.head(3).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("simulate is the composition of step") {
  std::mt19937_64 rng(7);
  for (Architecture a : {Architecture::nnarx, Architecture::esn, Architecture::lstm, Architecture::gru}) {
    CAPTURE(to_string(a));
    const Dims d{2, 2, 4, 2};
    const ModelParams m = random_model(a, d, 21);
    const Vec x0 = random_vector(state_size(m), -0.3, 0.3, rng);
    const Mat u = unit_inputs(2, 30, rng);

    const Trajectory one = simulate(m, x0, u.leftCols(1));
    const StepResult s = step(m, x0, u.col(0));
    CHECK(one.y.col(0) == s.y);
    CHECK(one.x.col(1) == s.x_next);

    const Trajectory full = simulate(m, x0, u);
    const Trajectory head = simulate(m, x0, u.leftCols(12));
    const Trajectory tail = simulate(m, head.x.col(12), u.rightCols(18));
    CHECK(full.y.leftCols(12) == head.y);
    CHECK(full.y.rightCols(18) == tail.y);
    CHECK(full.x.rightCols(19) == tail.x);
  }
}

TEST_CASE("NNARX simulate matches a sliding-window recursion") {
  const Dims d{1, 1, 6, 3};
  const ModelParams m = random_model(Architecture::nnarx, d, 8);
  const auto& p = std::get<NnarxParams>(m.net);
  std::mt19937_64 rng(9);
  const int T = 60;
  const Mat u = unit_inputs(1, T, rng);
  // Window history: y_{-N+1..0} and u_{-N..-1}.
  std::vector<double> ys{0.1, -0.2, 0.3}, us{0.5, -0.5, 0.25};
  Vec x0(6);
  for (int i = 0; i < 3; ++i) x0.segment(2 * i, 2) << ys[static_cast<std::size_t>(i)], us[static_cast<std::size_t>(i)];
  const Trajectory tr = simulate(m, x0, u);
  double worst = 0.0;
  for (int k = 0; k < T; ++k) {
    worst = std::max(worst, std::abs(tr.y(0, k) - ys.back()));
    Vec reg(6);
    // z_i = [y_{k-N+i}; u_{k-N-1+i}]
    for (int i = 0; i < 3; ++i) {
      reg[2 * i] = ys[ys.size() - 3 + static_cast<std::size_t>(i)];
      reg[2 * i + 1] = us[us.size() - 3 + static_cast<std::size_t>(i)];
    }
    Vec h = (p.W1 * u.col(k) + p.U1 * reg + p.b1).array().tanh();
    ys.push_back((p.U0 * h + p.b0)[0]);
    us.push_back(u(0, k));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("bptt gradient of a zero loss tail is zero") {
  std::mt19937_64 rng(1);
  for (Architecture a : {Architecture::nnarx, Architecture::esn, Architecture::lstm, Architecture::gru}) {
    const ModelParams m = random_model(a, Dims{2, 2, 3, 2}, 4);
    const ModelParams g = bptt_gradient(m, Vec::Zero(state_size(m)), unit_inputs(2, 10, rng), Mat::Zero(2, 10));
    CHECK(trainable_vector(g).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("bptt gradients agree with central differences") {
  std::mt19937_64 rng(2024);
  for (Architecture a : {Architecture::nnarx, Architecture::esn, Architecture::lstm, Architecture::gru}) {
    CAPTURE(to_string(a));
    for (int trial = 0; trial < 5; ++trial) {
      const Dims d{2, 2, 2 + trial % 3, 2};
      const ModelParams m = random_model(a, d, 100 + static_cast<std::uint64_t>(trial));
      const Vec x0 = random_vector(state_size(m), -0.5, 0.5, rng);
      const Mat u = unit_inputs(2, 10, rng);
      const Mat w = random_matrix(2, 10, -1, 1, rng);
      const Vec g = trainable_vector(bptt_gradient(m, x0, u, w));
      ModelParams probe = m;
      const Vec fd = central_difference(
          [&](const Vec& th) {
            set_trainable_vector(probe, th);
            return linear_loss(probe, x0, u, w);
          },
          trainable_vector(m), 1e-5);
      CHECK(max_relative_error(g, fd) < 1e-4);
    }
  }
}

TEST_CASE("ESN gradient leaves the reservoir untouched") {
  std::mt19937_64 rng(6);
  const ModelParams m = random_model(Architecture::esn, Dims{2, 2, 8, 1}, 3);
  const ModelParams g = bptt_gradient(m, Vec::Zero(state_size(m)), unit_inputs(2, 20, rng),
                                      random_matrix(2, 20, -1, 1, rng));
  const auto& e = std::get<EsnParams>(g.net);
  CHECK(e.W_x.cwiseAbs().maxCoeff() == 0.0);
  CHECK(e.W_u.cwiseAbs().maxCoeff() == 0.0);
  CHECK(e.W_y.cwiseAbs().maxCoeff() == 0.0);
  CHECK(e.W_out1.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("LSTM output-bias gradient sums the output-gradient columns") {
  std::mt19937_64 rng(12);
  const ModelParams m = random_model(Architecture::lstm, Dims{2, 3, 4, 1}, 2);
  const Mat w = random_matrix(3, 7, -1, 1, rng);
  const ModelParams g = bptt_gradient(m, Vec::Zero(8), unit_inputs(2, 7, rng), w);
  CHECK((std::get<LstmParams>(g.net).b_y - w.rowwise().sum()).cwiseAbs().maxCoeff() < 1e-14);
  const Mat w1 = random_matrix(3, 1, -1, 1, rng);
  const ModelParams g1 = bptt_gradient(m, Vec::Zero(8), unit_inputs(2, 1, rng), w1);
  CHECK(std::get<LstmParams>(g1.net).b_y == w1.col(0));
}

TEST_CASE("non-finite intermediates report the first offending step") {
  ModelParams m = zero_model(Architecture::nnarx, Dims{1, 1, 2, 1});
  auto& p = std::get<NnarxParams>(m.net);
  p.activation = Activation::relu;
  p.W1.setConstant(1e200);
  p.U0.setConstant(1e200);
  Mat u = Mat::Zero(1, 5);
  u(0, 3) = 1.0;
  try {
    simulate(m, Vec::Zero(2), u);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(e.step() == 3);
  }
}

TEST_CASE("dimension mismatches name the offending quantity") {
  ModelParams m = zero_model(Architecture::lstm, Dims{2, 1, 3, 1});
  CHECK_THROWS_AS(step(m, Vec::Zero(5), Vec::Zero(2)), DimensionError);
  std::get<LstmParams>(m.net).cell.U = Mat::Zero(3, 2);
  try {
    validate(m);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("U_c") != std::string::npos);
  }
}

TEST_CASE("gated states stay inside the unit box") {
  std::mt19937_64 rng(13);
  for (int seed = 0; seed < 10; ++seed) {
    ModelParams g = random_model(Architecture::gru, Dims{3, 1, 5, 1}, static_cast<std::uint64_t>(seed));
    set_trainable_vector(g, 4.0 * trainable_vector(g));
    const Trajectory tg = simulate(g, Vec::Zero(5), unit_inputs(3, 300, rng));
    CHECK(tg.x.cwiseAbs().maxCoeff() < 1.0);
    ModelParams l = random_model(Architecture::lstm, Dims{3, 1, 5, 1}, static_cast<std::uint64_t>(seed));
    set_trainable_vector(l, 4.0 * trainable_vector(l));
    const Trajectory tl = simulate(l, Vec::Zero(10), unit_inputs(3, 300, rng));
    CHECK(tl.x.bottomRows(5).cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("reservoir generation") {
  const Dims d{2, 2, 60, 1};
  ReservoirConfig cfg;
  const ModelParams a = generate_reservoir(d, cfg, 42);
  const auto& p = std::get<EsnParams>(a.net);
  const Eigen::JacobiSVD<Mat> svd(p.W_x);
  CHECK(std::abs(svd.singularValues()[0] - 0.9) < 1e-6);
  CHECK(std::abs(p.spectral_norm_Wx - 0.9) < 1e-8);
  CHECK((p.W_x.array() == 0.0).count() == std::llround(0.9 * 3600));

  cfg.sparsity = 0.0;
  CHECK((std::get<EsnParams>(generate_reservoir(d, cfg, 42).net).W_x.array() == 0.0).count() == 0);

  const ModelParams b = generate_reservoir(d, ReservoirConfig{}, 42);
  CHECK(std::get<EsnParams>(b.net).W_x == p.W_x);
  CHECK(std::get<EsnParams>(b.net).W_u == p.W_u);

  cfg.sparsity = 1.0;
  CHECK_THROWS_AS(generate_reservoir(d, cfg, 1), PreconditionError);
  cfg.sparsity = 0.5;
  cfg.target_norm = 1.0;
  CHECK_THROWS_AS(generate_reservoir(d, cfg, 1), PreconditionError);
}

TEST_CASE("model files round-trip exactly") {
  for (Architecture a : {Architecture::nnarx, Architecture::esn, Architecture::lstm, Architecture::gru}) {
    const ModelParams m = random_model(a, Dims{3, 2, 4, 2}, 77);
    const ModelParams r = model_from_json(Json::parse(model_to_json(m).dump()));
    CHECK(r.architecture() == a);
    CHECK(trainable_vector(r) == trainable_vector(m));
    CHECK(model_to_json(r) == model_to_json(m));
  }
  Json bad = model_to_json(zero_model(Architecture::gru, Dims{}));
  bad["architecture"] = "transformer";
  CHECK_THROWS_AS(model_from_json(bad), ParseError);
}
