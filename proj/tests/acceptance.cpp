// Acceptance checks, one PASS/FAIL line per criterion.
//
// Usage: acceptance [N ...]   runs the listed criteria (default: all ten).

#include "rnnid/certificates.hpp"
#include "rnnid/cli.hpp"
#include "rnnid/dataset_io.hpp"
#include "rnnid/errors.hpp"
#include "rnnid/physics.hpp"
#include "rnnid/plant.hpp"
#include "rnnid/training.hpp"
#include "rnnid/verification.hpp"
#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace rnnid;
using rnnid::testing::central_difference;
using rnnid::testing::max_relative_error;
using rnnid::testing::random_matrix;
using rnnid::testing::random_vector;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kFdStep = 1e-5;
// The composite loss sums 12 channels; a larger step keeps roundoff below the floor.
constexpr double kFdStepComposite = 1e-4;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kArithmeticTolerance = 1e-12;
constexpr double kProbeTolerance = 1e-3;
constexpr double kProbeBudgetSeconds = 120.0;
constexpr double kMseRatio = 2.0;
constexpr double kOrthogonality = 1e-8;
constexpr double kEsnBudgetSeconds = 5.0;
constexpr int kFitSeeds = 5;
constexpr int kFitWinsRequired = 4;
constexpr double kFitSeedBudgetSeconds = 1800.0;
constexpr double kMeanPredictorFit = 0.5;
constexpr double kRk4RatioLo = 12.0, kRk4RatioHi = 20.0;

// Desk-scale benchmark: 20 / 10 / 10 sequences of 1000 samples, washout 100.
constexpr int kDeskTrain = 20, kDeskVal = 10, kDeskTest = 10;
constexpr int kDeskLength = 1000, kDeskWashout = 100;
constexpr int kDeskEpochs = 200;
constexpr std::uint64_t kDeskSeed = 2024;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Desk {
  PlantDataset plant;
  Dataset data;
};

const Desk& desk() {
  static const Desk d = [] {
    Desk out;
    const PlantConfig c;
    out.plant = collect_dataset(c, plant_excitation(c, kDeskSeed), kDeskTrain + kDeskVal + kDeskTest,
                                kDeskLength, 0.1);
    out.data.sequences = out.plant.normalized;
    out.data.split = make_split(kDeskTrain, kDeskVal, kDeskTest, kDeskLength, kDeskWashout, kDeskSeed);
    return out;
  }();
  return d;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> units(2, 4);
  for (Architecture a : {Architecture::nnarx, Architecture::lstm, Architecture::gru}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Dims d{2, 2, units(rng), a == Architecture::nnarx ? 3 : 1};
      const ModelParams m = random_model(a, d, 100 + static_cast<std::uint64_t>(trial));
      const Vec x0 = random_vector(state_size(m), -0.5, 0.5, rng);
      const Mat u = random_matrix(2, 10, -1, 1, rng), y = random_matrix(2, 10, -1, 1, rng);
      ModelParams g = m;
      squared_error_and_gradient(m, x0, u, y, 0, &g);
      ModelParams probe = m;
      const Vec fd = central_difference(
          [&](const Vec& th) {
            set_trainable_vector(probe, th);
            return squared_error_and_gradient(probe, x0, u, y, 0, nullptr);
          },
          trainable_vector(m), kFdStep);
      worst = std::max(worst, max_relative_error(trainable_vector(g), fd));
    }
  }
  for (int trial = 0; trial < 20; ++trial) {
    const CompositeModel cm = build_composite(units(rng), default_wiring(), nullptr, 200 + static_cast<std::uint64_t>(trial));
    const Sequence s{random_matrix(kPlantInputs, 10, -1, 1, rng), random_matrix(12, 10, -1, 1, rng), 0};
    const Vec x0 = random_vector(cm.state_size(), -0.5, 0.5, rng);
    const ConsistencyPenaltyConfig pen{0.05};
    const CompositeTrainable t(cm, pen);
    Vec grad;
    t.sequence_loss(s, x0, 0, &grad);
    CompositeTrainable probe(cm, pen);
    const Vec fd = central_difference(
        [&](const Vec& th) {
          probe.set_parameters(th);
          return probe.sequence_loss(s, x0, 0, nullptr);
        },
        t.parameters(), kFdStepComposite);
    worst = std::max(worst, max_relative_error(grad, fd));
  }
  const double secs = seconds_since(t0);
  return {worst < kGradTolerance && secs < kGradBudgetSeconds,
          "max relative error " + fmt("%.3g", worst) + " over 80 trials, " + fmt("%.1f", secs) + " s"};
}

Outcome certificate_arithmetic() {
  double worst = 0.0;
  const GruMargins g = nu_gru(std::get<GruParams>(zero_model(Architecture::gru, Dims{3, 2, 4, 1}).net));
  worst = std::max({worst, std::abs(g.iss + 1.0), std::abs(g.delta_iss + 1.0)});
  const LstmMargins l = nu_lstm(std::get<LstmParams>(zero_model(Architecture::lstm, Dims{3, 2, 4, 1}).net));
  worst = std::max({worst, std::abs(l.iss + 0.5), std::abs(l.delta_iss[0] + 0.5), std::abs(l.delta_iss[1] + 1.0)});
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const int N = 1 + trial % 4;
    const ModelParams m = random_model(Architecture::nnarx, Dims{2, 3, 5, N}, 300 + static_cast<std::uint64_t>(trial));
    const auto& p = std::get<NnarxParams>(m.net);
    const double s0 = Eigen::JacobiSVD<Mat>(p.U0).singularValues()[0];
    const double s1 = Eigen::JacobiSVD<Mat>(p.U1).singularValues()[0];
    const double hand = s0 * s1 - 1.0 / (p.lipschitz * std::sqrt(static_cast<double>(N)));
    worst = std::max(worst, std::abs(nu_nnarx(p, N) - hand));
  }
  return {worst < kArithmeticTolerance, "max deviation " + fmt("%.3g", worst)};
}

ModelParams random_certified(Architecture a, std::mt19937_64& rng, std::uint64_t seed) {
  std::uniform_int_distribution<int> units(2, 4);
  std::uniform_real_distribution<double> scale(0.2, 2.0);
  for (;;) {
    const Dims d{2, 2, units(rng), a == Architecture::nnarx ? 2 : 1};
    ModelParams m;
    if (a == Architecture::esn) {
      m = generate_reservoir(d, ReservoirConfig{0.5, 0.9, 0.5, 0.5}, seed++);
      set_trainable_vector(m, random_vector(trainable_vector(m).size(), -1, 1, rng));
    } else {
      m = random_model(a, d, seed++);
    }
    set_trainable_vector(m, scale(rng) * trainable_vector(m));
    if (certify(m).pass) return m;
  }
}

Outcome sufficiency_probe() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::mt19937_64 rng(3);
  ProbeConfig cfg;
  cfg.trials = 100;
  cfg.horizon = 200;
  cfg.tolerance = kProbeTolerance;
  int models = 0;
  for (Architecture a : {Architecture::nnarx, Architecture::esn, Architecture::lstm, Architecture::gru}) {
    std::uint64_t seed = 1000 * (static_cast<std::uint64_t>(a) + 1);
    for (int i = 0; i < 50; ++i) {
      const ModelParams m = random_certified(a, rng, seed);
      seed += 7919;
      worst = std::max(worst, probe_delta_iss(m, cfg, static_cast<std::uint64_t>(i)).max_terminal_distance());
      ++models;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kProbeTolerance && secs < kProbeBudgetSeconds,
          std::to_string(models) + " certified models, max terminal distance " + fmt("%.3g", worst) + ", " +
              fmt("%.1f", secs) + " s"};
}

Outcome constrained_training() {
  const Desk& d = desk();
  const ModelParams m0 = random_model(Architecture::gru, Dims{kPlantInputs, 12, 10, 1}, kDeskSeed);
  TrainConfig cfg;
  cfg.epochs = kDeskEpochs;
  cfg.seed = kDeskSeed;
  const auto t0 = Clock::now();
  const TrainResult free = train(m0, d.data, cfg);
  cfg.target = StabilityProperty::delta_iss;
  const TrainResult held = train(m0, d.data, cfg);
  const CertificateReport rep = certify(held.model);
  bool all_negative = !rep.margins.empty();
  for (const auto& mg : rep.margins) all_negative = all_negative && mg.value < 0.0;
  const double ratio = held.outcome.best_val_mse / free.outcome.best_val_mse;
  std::string detail = "certified " + std::string(held.outcome.certified ? "yes" : "no") + ", max margin " +
                       fmt("%.3g", rep.max_margin()) + ", val MSE " + fmt("%.4g", held.outcome.best_val_mse) +
                       " vs unconstrained " + fmt("%.4g", free.outcome.best_val_mse) + " (ratio " +
                       fmt("%.3f", ratio) + "), " + fmt("%.0f", seconds_since(t0)) + " s";
  return {held.outcome.certified && all_negative && ratio <= kMseRatio, detail};
}

Outcome esn_least_squares() {
  const Desk& d = desk();
  const ModelParams esn = generate_reservoir(Dims{kPlantInputs, 12, 200, 1}, ReservoirConfig{}, kDeskSeed);
  const auto train_set = d.data.subset(d.data.split.train);
  const auto t0 = Clock::now();
  const EsnFit fit = train_esn(esn, train_set, kDeskWashout, 1e-6);
  const double secs = seconds_since(t0);
  return {fit.orthogonality < kOrthogonality && secs < kEsnBudgetSeconds,
          "orthogonality " + fmt("%.3g", fit.orthogonality) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome scenario_bound() {
  const bool counts = required_samples(0.05, 1e-6) == 593 && required_samples(0.025, 1e-6) == 1186;
  const Desk& d = desk();
  const OutputTemplate t = default_template(d.data.subset(d.data.split.train));
  int tight = 0, runs = 0;
  std::mt19937_64 rng(6);
  for (Architecture a : {Architecture::nnarx, Architecture::esn, Architecture::lstm, Architecture::gru}) {
    for (std::uint64_t s = 0; s < 2; ++s) {
      ModelParams m;
      if (a == Architecture::esn) {
        m = generate_reservoir(Dims{kPlantInputs, 12, 20, 1}, ReservoirConfig{}, s);
        set_trainable_vector(m, random_vector(trainable_vector(m).size(), -0.2, 0.2, rng));
      } else {
        m = random_model(a, Dims{kPlantInputs, 12, 5, 2}, 600 + s);
      }
      ScenarioConfig cfg;
      cfg.output_template = t;
      cfg.horizon = 50;
      const ScenarioResult r = scenario_reachable(m, cfg, s);
      ++runs;
      bool attained = false;
      for (double g : r.sample_gauges) attained = attained || g == r.rho;
      tight += attained;
    }
  }
  return {counts && tight == runs,
          "S(0.05, 1e-6) = " + std::to_string(required_samples(0.05, 1e-6)) + ", S(0.025, 1e-6) = " +
              std::to_string(required_samples(0.025, 1e-6)) + ", rho attained on " + std::to_string(tight) + "/" +
              std::to_string(runs) + " runs"};
}

Outcome benchmark_comparison() {
  const Desk& d = desk();
  const auto test_set = d.data.subset(d.data.split.test);
  int wins = 0;
  bool in_budget = true;
  std::ostringstream rows;
  for (int s = 1; s <= kFitSeeds; ++s) {
    const auto t0 = Clock::now();
    TrainConfig cfg = composite_default_config();
    cfg.epochs = kDeskEpochs;
    cfg.seed = static_cast<std::uint64_t>(s);
    const CompositeModel cm0 = build_composite(10, default_wiring(), &d.plant.normalizer, static_cast<std::uint64_t>(s));
    const CompositeTrainResult comp = train_composite(cm0, d.data, cfg);
    BlackBoxTrainable bb(build_blackbox(kPlantInputs, 12, 10, 3, static_cast<std::uint64_t>(s)));
    train(bb, d.data, cfg);
    const double fc = fit_metric(CompositeTrainable(comp.model, {}), test_set, kDeskWashout).overall;
    const double fb = fit_metric(bb, test_set, kDeskWashout).overall;
    const double secs = seconds_since(t0);
    in_budget = in_budget && secs <= kFitSeedBudgetSeconds;
    wins += fc > fb;
    rows << " [seed " << s << ": " << fmt("%.2f", fc) << " vs " << fmt("%.2f", fb) << ", " << fmt("%.0f", secs)
         << " s]";
  }
  return {wins >= kFitWinsRequired && in_budget,
          "composite beats black box on " + std::to_string(wins) + "/" + std::to_string(kFitSeeds) +
              " seeds; overall FIT" + rows.str()};
}

Outcome fit_metric_check() {
  const Desk& d = desk();
  const auto test_set = d.data.subset(d.data.split.test);
  std::vector<Mat> perfect, mean;
  for (const auto& s : test_set) perfect.push_back(s.y);
  Vec avg = Vec::Zero(12);
  long n = 0;
  for (const auto& s : test_set) {
    avg += s.y.rightCols(s.length() - kDeskWashout).rowwise().sum();
    n += s.length() - kDeskWashout;
  }
  avg /= static_cast<double>(n);
  for (const auto& s : test_set) mean.push_back(avg.replicate(1, s.length()));
  const FitResult fp = fit_from_predictions(perfect, test_set, kDeskWashout);
  const FitResult fm = fit_from_predictions(mean, test_set, kDeskWashout);
  bool exact = true;
  for (double v : fp.per_channel) exact = exact && v == 100.0;
  return {exact && fm.overall <= kMeanPredictorFit,
          "perfect prediction " + std::string(exact ? "100 on every channel" : "not exactly 100") +
              ", mean predictor overall " + fmt("%.3g", fm.overall)};
}

Outcome plant_simulator() {
  const PlantConfig c;
  // Closure along a long excited run.
  auto rng = substream(9, 0);
  const Mat u = generate_excitation(plant_excitation(c, 9), 2000, rng);
  const Mat y = simulate_plant(c, nominal_steady_state(c), u, 0.1);
  bool closure = true;
  for (Eigen::Index k = 0; k < y.cols(); ++k) {
    const auto xc = c_fractions(y.col(k));
    for (int v = 0; v < 3; ++v) {
      const double xa = y(4 * v + 1, k), xb = y(4 * v + 2, k), x3 = xc[static_cast<std::size_t>(v)];
      closure = closure && x3 == 1.0 - xa - xb && x3 >= 0.0 &&
                std::abs(xa + xb + x3 - 1.0) <= std::numeric_limits<double>::epsilon();
    }
  }
  // Step halving on a smooth segment away from equilibrium under constant input.
  Vec x0 = nominal_steady_state(c);
  x0[0] *= 0.8;
  x0[3] += 8.0;
  x0[9] -= 0.05;
  Vec uc(kPlantInputs);
  for (int j = 0; j < kPlantInputs; ++j) uc[j] = c.u_lo[static_cast<std::size_t>(j)] + 0.7 * (c.u_hi[static_cast<std::size_t>(j)] - c.u_lo[static_cast<std::size_t>(j)]);
  const double h = 1.0;
  auto run = [&](double step, int n) {
    Vec x = x0;
    for (int k = 0; k < n; ++k) x = plant_step(c, x, uc, step);
    return x;
  };
  const Vec a = run(h, 100), b = run(h / 2, 200), q = run(h / 4, 400);
  const double ratio = (a - b).norm() / (b - q).norm();
  // Regeneration.
  const PlantDataset d1 = collect_dataset(c, plant_excitation(c, 5), 4, 300, 0.1);
  const PlantDataset d2 = collect_dataset(c, plant_excitation(c, 5), 4, 300, 0.1);
  bool same = true;
  for (std::size_t i = 0; i < d1.raw.size(); ++i)
    same = same && sequence_to_csv(d1.raw[i], 0.1) == sequence_to_csv(d2.raw[i], 0.1);
  return {closure && ratio >= kRk4RatioLo && ratio <= kRk4RatioHi && same,
          "closure " + std::string(closure ? "exact" : "violated") + ", RK4 halving ratio " + fmt("%.2f", ratio) +
              ", regeneration " + (same ? "bit-identical" : "differs")};
}

std::map<std::string, std::string> artifact_hashes(const fs::path& dir) {
  std::map<std::string, std::string> h;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename().string().rfind("manifest.", 0) != 0)
      h[fs::relative(e.path(), dir).string()] = sha256_file(e.path().string());
  return h;
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "rnnid_acceptance_pipeline";
  fs::remove_all(root);
  const fs::path first = root / "first", second = root / "second";
  fs::create_directories(first);
  fs::create_directories(second);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 60;
  for (const fs::path& d : {first, second}) write_json_file(d / "config.json", config_to_json(cfg));
  const fs::path cwd = fs::current_path();
  const std::vector<std::vector<std::string>> pipeline = {
      {"rnnid", "generate", "--seed", "11", "--out", "data", "--train", "4", "--validation", "2", "--test", "2",
       "--length", "200", "--washout", "20"},
      {"rnnid", "train", "gru", "--seed", "11", "--data", "data", "--out", "models", "--config", "config.json",
       "--units", "4", "--delta-iss"},
      {"rnnid", "certify", "models/gru.json", "--report", "models/gru.report.json"},
      {"rnnid", "verify", "models/gru.json", "--seed", "11", "--data", "data", "--out", "verify", "--eps", "0.2"},
      {"rnnid", "compare", "models/gru.json", "--data", "data", "--out", "compare"}};
  const std::vector<std::pair<std::string, std::string>> manifests = {{"data", "generate"},
                                                                      {"models", "train"},
                                                                      {"models", "certify"},
                                                                      {"verify", "verify"},
                                                                      {"compare", "compare"}};
  std::string detail;
  bool ok = true;
  fs::current_path(first);
  for (const auto& args : pipeline) {
    const int rc = run_cli(args);
    if (rc != 0) {
      ok = false;
      detail = "first run: '" + args[1] + "' exited " + std::to_string(rc);
      break;
    }
  }
  if (ok) {
    // Replay every command from the argv recorded in its manifest.
    fs::current_path(second);
    for (const auto& [dir, cmd] : manifests) {
      const Json man = read_json_file(first / dir / ("manifest." + cmd + ".json"));
      const int rc = run_cli(man.at("argv").get<std::vector<std::string>>());
      if (rc != 0) {
        ok = false;
        detail = "replay: '" + cmd + "' exited " + std::to_string(rc);
        break;
      }
    }
  }
  fs::current_path(cwd);
  if (!ok) return {false, detail};
  const auto ha = artifact_hashes(first), hb = artifact_hashes(second);
  std::size_t mismatched = 0;
  for (const auto& [path, hash] : ha) {
    const auto it = hb.find(path);
    mismatched += it == hb.end() || it->second != hash;
  }
  mismatched += hb.size() > ha.size() ? hb.size() - ha.size() : 0;
  return {mismatched == 0 && ha.size() >= 10,
          std::to_string(ha.size()) + " artifacts, " + std::to_string(mismatched) + " hash mismatches"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"certificate arithmetic", certificate_arithmetic},
      {"certificate sufficiency probe", sufficiency_probe},
      {"stability-constrained training", constrained_training},
      {"ESN least-squares optimality", esn_least_squares},
      {"scenario bound", scenario_bound},
      {"benchmark comparison", benchmark_comparison},
      {"FIT metric", fit_metric_check},
      {"plant simulator", plant_simulator},
      {"end-to-end reproducibility", reproducibility}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
