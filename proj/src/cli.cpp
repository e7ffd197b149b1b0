#include "rnnid/cli.hpp"

#include "rnnid/certificates.hpp"
#include "rnnid/dataset_io.hpp"
#include "rnnid/errors.hpp"
#include "rnnid/model_io.hpp"
#include "rnnid/physics.hpp"
#include "rnnid/plant.hpp"
#include "rnnid/training.hpp"
#include "rnnid/verification.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace rnnid {

namespace fs = std::filesystem;

std::uint64_t named_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

namespace {

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Everything needed to rerun a command; the only non-reproducible fields are the timestamps.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv, std::uint64_t seed)
      : command_(std::move(command)), argv_(argv), seed_(seed), started_(utc_now()) {}

  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void config(const std::string& path) { configs_.push_back(path); }
  void input(const fs::path& p) { inputs_.push_back(p.string()); }
  void artifact(const fs::path& p) { artifacts_.push_back(p.string()); }

  fs::path write(const fs::path& dir) const {
    Json j;
    j["format"] = "rnnid-manifest";
    j["tool"] = std::string(kToolVersion);
    j["command"] = command_;
    j["argv"] = argv_;
    j["seed"] = seed_;
    j["seeds"] = seeds_;
    j["configs"] = configs_;
    Json in = Json::array(), out = Json::array();
    for (const auto& p : inputs_) in.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    for (const auto& p : artifacts_) out.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    j["inputs"] = std::move(in);
    j["artifacts"] = std::move(out);
    j["started_at"] = started_;
    j["finished_at"] = utc_now();
    const fs::path path = dir / ("manifest." + command_ + ".json");
    write_json_file(path, j);
    return path;
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::uint64_t seed_;
  std::string started_;
  std::map<std::string, std::uint64_t> seeds_;
  std::vector<std::string> configs_, inputs_, artifacts_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".rnnid-write-test";
  std::ofstream out(probe);
  if (!out) throw IoError("output directory " + dir.string() + " is not writable");
  out.close();
  fs::remove(probe, ec);
}

void write_text_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

void add_dataset_inputs(Manifest& m, const fs::path& dir, const Dataset& d) {
  m.input(dir / "split.json");
  m.input(dir / "normalizer.json");
  for (std::size_t i = 0; i < d.sequences.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%03zu.csv", i);
    m.input(dir / buf);
  }
}

std::vector<std::string> channel_names(int n_y) {
  std::vector<std::string> names;
  if (n_y == kPlantStates) {
    for (const auto& n : plant_output_names()) names.push_back(n);
  } else {
    for (int j = 1; j <= n_y; ++j) names.push_back("y" + std::to_string(j));
  }
  return names;
}

std::string format_margin(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void print_report(std::ostream& os, const std::string& title, const CertificateReport& r) {
  os << title << " (" << to_string(r.architecture) << ")\n";
  for (const auto& m : r.margins)
    os << "  " << m.name << " = " << format_margin(m.value) << "  [" << m.certifies << "]\n";
  for (const auto& [k, v] : r.auxiliary) os << "  " << k << " = " << format_margin(v) << "\n";
  for (const auto& n : r.notes) os << "  note: " << n << "\n";
  os << "  property: " << r.property << "  verdict: " << (r.pass ? "PASS" : "FAIL") << "\n";
}

ModelParams as_lstm_layer(const LstmParams& layer, int n_in, int n_x) {
  ModelParams m;
  m.dims = {n_in, 1, n_x, 1};
  LstmParams p = layer;
  p.U_y = Mat::Zero(1, n_x);
  p.b_y = Vec::Zero(1);
  m.net = std::move(p);
  return m;
}

// ---------------------------------------------------------------------------

struct Common {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::vector<std::string> argv;

  fs::path out() const {
    if (!out_dir.empty()) return out_dir;
    if (const char* env = std::getenv("RNNID_OUT_DIR"); env && *env) return env;
    return ".";
  }
};

struct GenerateOpts {
  int n_train = 100, n_val = 36, n_test = 1;
  int length = 1000, washout = 100;
  double dt_sample = 0.1;
  std::string plant_config;
};

int cmd_generate(const Common& c, const GenerateOpts& o) {
  const fs::path dir = c.out();
  ensure_dir(dir);
  Manifest man("generate", c.argv, c.seed);
  PlantConfig pc;
  if (!o.plant_config.empty()) {
    const Json j = read_json_file(o.plant_config);
    man.config(o.plant_config);
    man.input(o.plant_config);
    pc.kA0 = j.value("kA0", pc.kA0);
    pc.kB0 = j.value("kB0", pc.kB0);
    pc.EA = j.value("EA", pc.EA);
    pc.EB = j.value("EB", pc.EB);
    pc.F_p = j.value("F_p", pc.F_p);
    pc.dt = j.value("dt", pc.dt);
  }
  const std::uint64_t ds = named_seed(c.seed, "dataset");
  man.seed("dataset", ds);
  pc.seed = ds;
  const int n = o.n_train + o.n_val + o.n_test;
  const PlantDataset d = collect_dataset(pc, plant_excitation(pc, ds), n, o.length, o.dt_sample);
  for (const auto& l : d.log) std::cerr << "generate: " << l << "\n";
  const DatasetSplit split = make_split(o.n_train, o.n_val, o.n_test, o.length, o.washout,
                                        named_seed(c.seed, "split"));
  man.seed("split", named_seed(c.seed, "split"));
  for (const auto& p : write_dataset(dir, d.raw, d.normalizer, split, o.dt_sample)) man.artifact(p);
  man.write(dir);
  std::cout << "wrote " << n << " sequences (T_s = " << o.length << ", dt = " << o.dt_sample << " s) to "
            << dir.string() << "\n";
  return kExitOk;
}

struct TrainOpts {
  std::string arch;
  std::string data;
  std::string config;
  bool iss = false, delta_iss = false, full_scale = false;
  int epochs = -1;
  int train_limit = 0, val_limit = 0;
  int units = -1;
  int regressors = 2;
  double lambda = 1e-6;
  std::string name;
};

Dataset limit_dataset(const Dataset& d, int train_limit, int val_limit) {
  Dataset out = d;
  if (train_limit > 0 && static_cast<std::size_t>(train_limit) < out.split.train.size())
    out.split.train.resize(static_cast<std::size_t>(train_limit));
  if (val_limit > 0 && static_cast<std::size_t>(val_limit) < out.split.validation.size())
    out.split.validation.resize(static_cast<std::size_t>(val_limit));
  // Sequences left out of both sets join the test set so the split stays a partition.
  std::vector<bool> used(out.sequences.size(), false);
  for (const auto* v : {&out.split.train, &out.split.validation, &out.split.test})
    for (int id : *v) used[static_cast<std::size_t>(id)] = true;
  for (std::size_t i = 0; i < used.size(); ++i)
    if (!used[i]) out.split.test.push_back(static_cast<int>(i));
  std::sort(out.split.test.begin(), out.split.test.end());
  return out;
}

int cmd_train(const Common& c, const TrainOpts& o) {
  const fs::path dir = c.out();
  ensure_dir(dir);
  Manifest man("train", c.argv, c.seed);
  const LoadedDataset loaded = read_dataset(o.data);
  add_dataset_inputs(man, o.data, loaded.normalized);
  const Dataset data = limit_dataset(loaded.normalized, o.train_limit, o.val_limit);
  const int n_u = static_cast<int>(loaded.normalizer.u.min.size());
  const int n_y = static_cast<int>(loaded.normalizer.y.min.size());

  TrainConfig cfg = (o.arch == "composite" || o.arch == "blackbox") ? composite_default_config() : TrainConfig{};
  if (!o.config.empty()) {
    cfg = config_from_json(read_json_file(o.config));
    man.config(o.config);
    man.input(o.config);
  }
  if (o.full_scale) cfg.epochs = 1000;
  if (o.epochs >= 0) cfg.epochs = o.epochs;
  if (o.delta_iss) cfg.target = StabilityProperty::delta_iss;
  else if (o.iss) cfg.target = StabilityProperty::iss;
  cfg.seed = named_seed(c.seed, "minibatch");
  cfg.x0.seed = named_seed(c.seed, "x0");
  const std::uint64_t init_seed = named_seed(c.seed, "init");
  man.seed("minibatch", cfg.seed);
  man.seed("init", init_seed);
  man.seed("x0", cfg.x0.seed);

  const std::string name = o.name.empty() ? o.arch : o.name;
  const int units = o.units > 0 ? o.units : 10;
  bool certified = true;
  fs::path model_path;
  std::string trace_csv;
  Json cert_json;

  if (o.arch == "composite" || o.arch == "blackbox") {
    if (cfg.target != StabilityProperty::none)
      throw PreconditionError("stability targets apply to single-network models only");
    Json doc;
    if (o.arch == "composite") {
      const CompositeModel cm0 = build_composite(units, default_wiring(), &loaded.normalizer, init_seed);
      CompositeTrainResult r = train_composite(cm0, data, cfg);
      trace_csv = r.outcome.trace.to_csv();
      doc = composite_to_json(r.model);
    } else {
      BlackBoxTrainable t(build_blackbox(n_u, n_y, units, 3, init_seed));
      TrainOutcome out = train(t, data, cfg);
      trace_csv = out.trace.to_csv();
      doc = blackbox_to_json(t.model());
    }
    model_path = dir / (name + ".json");
    write_json_file(model_path, doc);
  } else {
    const Architecture arch = architecture_from_string(o.arch);
    if (arch == Architecture::esn) {
      const Dims dims{n_u, n_y, o.units > 0 ? o.units : 200, 1};
      const ModelParams res = generate_reservoir(dims, ReservoirConfig{}, init_seed);
      const auto t0 = std::chrono::steady_clock::now();
      EsnFit fit = train_esn(res, data.subset(data.split.train), data.split.T_w, o.lambda, cfg.target);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream os;
      os << std::setprecision(17) << "lambda,orthogonality,lambda_increases,val_mse\n"
         << fit.lambda << "," << fit.orthogonality << "," << fit.lambda_increases << ","
         << mse(fit.model, data.subset(data.split.validation.empty() ? data.split.train : data.split.validation),
                data.split.T_w)
         << "\n";
      trace_csv = os.str();
      std::cerr << "train: least squares took " << secs << " s\n";
      certified = cfg.target == StabilityProperty::none || fit.certified;
      const CertificateReport rep = certify(fit.model);
      cert_json = report_to_json(rep);
      model_path = dir / (name + (certified ? ".json" : ".uncertified.json"));
      save_model(model_path, fit.model);
    } else {
      const Dims dims{n_u, n_y, arch == Architecture::nnarx ? (o.units > 0 ? o.units : 20) : units,
                      arch == Architecture::nnarx ? o.regressors : 1};
      TrainResult r = train(random_model(arch, dims, init_seed), data, cfg);
      certified = r.outcome.certified;
      trace_csv = r.outcome.trace.to_csv();
      cert_json = report_to_json(certify(r.model));
      model_path = dir / (name + (certified ? ".json" : ".uncertified.json"));
      save_model(model_path, r.model);
      std::cout << "best epoch " << r.outcome.best_epoch << ", validation MSE "
                << format_margin(r.outcome.best_val_mse) << "\n";
    }
  }
  man.artifact(model_path);
  const fs::path trace_path = dir / (name + ".trace.csv");
  write_text_file(trace_path, trace_csv);
  man.artifact(trace_path);
  if (!cert_json.is_null()) {
    const fs::path cp = dir / (name + ".certificate.json");
    write_json_file(cp, cert_json);
    man.artifact(cp);
  }
  man.write(dir);
  std::cout << "wrote " << model_path.string() << "\n";
  if (!certified) {
    std::cerr << "train: no snapshot satisfied the " << to_string(cfg.target)
              << " certificate; best uncertified model kept under a flagged name\n";
    return kExitNotCertified;
  }
  return kExitOk;
}

int cmd_certify(const Common& c, const std::string& model_file, const std::string& report_out) {
  const AnyModel any = any_model_from_json(read_json_file(model_file));
  std::vector<std::pair<std::string, CertificateReport>> reports;
  if (any.kind == "composite") {
    const CompositeModel cm = composite_from_json(any.document);
    for (std::size_t i = 0; i < cm.blocks.size(); ++i)
      reports.emplace_back("block " + std::to_string(i + 1), certify(cm.blocks[i]));
  } else if (any.kind == "blackbox") {
    const BlackBoxModel bb = blackbox_from_json(any.document);
    for (std::size_t l = 0; l < bb.layers.size(); ++l)
      reports.emplace_back("layer " + std::to_string(l + 1),
                           certify(as_lstm_layer(bb.layers[l], l == 0 ? bb.n_u : bb.n_x, bb.n_x)));
  } else {
    reports.emplace_back("model", certify(model_from_json(any.document)));
  }
  bool pass = true;
  Json out;
  if (reports.size() == 1) {
    out = report_to_json(reports.front().second);
  } else {
    out = {{"format", "rnnid-certificate-set"}, {"architecture", any.kind},
           {"note", "certificates hold per block; the interconnection itself is not certified"}};
    for (const auto& [title, r] : reports) out["blocks"].push_back(report_to_json(r));
  }
  for (const auto& [title, r] : reports) {
    print_report(std::cout, title, r);
    pass = pass && r.pass;
  }
  if (!report_out.empty()) {
    write_json_file(report_out, out);
    Manifest man("certify", c.argv, c.seed);
    man.input(model_file);
    man.artifact(report_out);
    man.write(fs::path(report_out).parent_path().empty() ? fs::path(".") : fs::path(report_out).parent_path());
  }
  return pass ? kExitOk : kExitCertificateFail;
}

struct VerifyOpts {
  std::string model;
  std::string scenario;
  std::string data;
  bool advisory = false;
  double eps = -1, beta = -1;
  int horizon = -1;
  std::string report;
};

int cmd_verify(const Common& c, const VerifyOpts& o) {
  const Json doc = read_json_file(o.model);
  const std::string kind = doc.is_object() ? doc.value("architecture", std::string()) : std::string();
  if (kind == "composite" || kind == "blackbox")
    throw PreconditionError("verify supports the single-network architectures only");
  const ModelParams m = model_from_json(doc);
  const CertificateReport cert = certify(m);
  if (cert.property == "none" && !o.advisory) {
    std::cerr << "verify: model fails its ISS/dISS certificate; rerun with --advisory to proceed\n";
    return kExitVerifyRefused;
  }
  const fs::path dir = c.out();
  ensure_dir(dir);
  Manifest man("verify", c.argv, c.seed);
  man.input(o.model);
  ScenarioFile sf;
  if (!o.scenario.empty()) {
    sf = scenario_file_from_json(read_json_file(o.scenario));
    man.config(o.scenario);
    man.input(o.scenario);
  }
  if (o.eps > 0) sf.config.eps = o.eps;
  if (o.beta > 0) sf.config.beta = o.beta;
  if (o.horizon > 0) sf.config.horizon = o.horizon;
  if (!o.data.empty()) {
    const LoadedDataset d = read_dataset(o.data);
    add_dataset_inputs(man, o.data, d.normalized);
    const auto train = d.normalized.subset(d.normalized.split.train);
    if (!sf.has_template) {
      sf.config.output_template = default_template(train);
      sf.has_template = true;
    }
    if (m.architecture() == Architecture::nnarx) sf.config.pool = nnarx_initial_pool(m, train);
  }
  if (!sf.has_template) {
    sf.config.output_template.kind = OutputTemplate::Kind::box;
    sf.config.output_template.center = Vec::Zero(m.dims.n_y);
    sf.config.output_template.radii = Vec::Ones(m.dims.n_y);
  }
  const std::uint64_t ss = named_seed(c.seed, "scenario");
  man.seed("scenario", ss);
  const ScenarioResult r = scenario_reachable(m, sf.config, ss);
  SafetyVerdict v;
  if (sf.has_safe_set) v = safety_verdict(r, sf.config.output_template, sf.safe_set);
  const Json rep = scenario_report_to_json(r, sf.config.output_template, sf.has_safe_set ? &sf.safe_set : nullptr,
                                           sf.has_safe_set ? &v : nullptr);
  const fs::path rp = o.report.empty() ? dir / "verification.json" : fs::path(o.report);
  write_json_file(rp, rep);
  man.artifact(rp);
  man.write(dir);
  std::cout << "S = " << r.S << "  rho* = " << format_margin(r.rho) << "  (" << r.certificate_status
            << (r.advisory ? ", advisory" : "") << ")\n";
  if (sf.has_safe_set) {
    std::cout << "verdict: " << (v.safe ? "SAFE" : "UNSAFE") << "  margin = " << format_margin(v.margin) << "\n";
    return v.safe ? kExitOk : kExitUnsafe;
  }
  return kExitOk;
}

struct CompareOpts {
  std::vector<std::string> models;
  std::string data;
  std::string subset = "test";
  std::string out;
};

class CompareMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int cmd_compare(const Common& c, const CompareOpts& o) {
  const LoadedDataset d = read_dataset(o.data);
  const DatasetSplit& sp = d.normalized.split;
  const std::vector<int>& ids = o.subset == "test" ? sp.test : o.subset == "validation" ? sp.validation : sp.train;
  const auto seqs = d.normalized.subset(ids);
  if (seqs.empty()) throw PreconditionError("compare: the " + o.subset + " subset is empty");
  const int n_y = static_cast<int>(seqs.front().y.rows());
  std::vector<ComparisonRow> rows;
  Manifest man("compare", c.argv, c.seed);
  add_dataset_inputs(man, o.data, d.normalized);
  for (const auto& path : o.models) {
    const AnyModel any = any_model_from_json(read_json_file(path));
    man.input(path);
    std::vector<Mat> preds;
    for (const auto& s : seqs) {
      Mat p;
      try {
        p = any.model->predict(s, Vec::Zero(any.model->state_size()));
      } catch (const DimensionError& e) {
        throw CompareMismatch(path + ": " + e.what());
      }
      if (p.rows() != n_y) throw CompareMismatch(path + ": model emits " + std::to_string(p.rows()) +
                                                 " outputs, data have " + std::to_string(n_y));
      preds.push_back(std::move(p));
    }
    rows.push_back({fs::path(path).stem().string(), fit_from_predictions(preds, seqs, sp.T_w)});
  }
  const std::string csv = comparison_csv(rows, channel_names(n_y));
  std::cout << csv;
  const fs::path dir = c.out();
  ensure_dir(dir);
  const fs::path outp = o.out.empty() ? dir / "fit.csv" : fs::path(o.out);
  write_text_file(outp, csv);
  man.artifact(outp);
  man.write(dir);
  return kExitOk;
}

struct ProbeOpts {
  std::string model;
  int trials = 100;
  int horizon = kDefaultProbeHorizon;
  double tolerance = 1e-3;
  std::string out;
};

int cmd_probe(const Common& c, const ProbeOpts& o) {
  const ModelParams m = load_model(o.model);
  ProbeConfig pc;
  pc.trials = o.trials;
  pc.horizon = o.horizon;
  pc.tolerance = o.tolerance;
  const std::uint64_t ps = named_seed(c.seed, "probe");
  const EmpiricalStabilityProbe p = probe_delta_iss(m, pc, ps);
  const Json j = probe_to_json(p);
  std::cout << "max terminal distance " << format_margin(p.max_terminal_distance()) << " over " << p.trials
            << " trials, K = " << p.horizon << ": " << (p.verdict() ? "PASS" : "FAIL") << "\n";
  if (!o.out.empty()) {
    write_json_file(o.out, j);
    Manifest man("probe", c.argv, c.seed);
    man.seed("probe", ps);
    man.input(o.model);
    man.artifact(o.out);
    man.write(fs::path(o.out).parent_path().empty() ? fs::path(".") : fs::path(o.out).parent_path());
  }
  return p.verdict() ? kExitOk : kExitCertificateFail;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Identification of stable recurrent models and their verification"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  common.argv = args;
  app.add_option("--seed", common.seed, "Root seed for every random stream")->default_val(0);
  app.add_option("--out", common.out_dir, "Output directory (default: $RNNID_OUT_DIR or .)");

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "Simulate the benchmark plant and write a dataset");
  g->add_option("--train", gen.n_train, "Training sequences")->default_val(100);
  g->add_option("--validation", gen.n_val, "Validation sequences")->default_val(36);
  g->add_option("--test", gen.n_test, "Test sequences")->default_val(1);
  g->add_option("--length", gen.length, "Samples per sequence T_s")->default_val(1000);
  g->add_option("--washout", gen.washout, "Washout T_w recorded in the split")->default_val(100);
  g->add_option("--dt-sample", gen.dt_sample, "Sampling time [s]")->default_val(0.1);
  g->add_option("--plant-config", gen.plant_config, "JSON overrides of plant constants");

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset");
  t->add_option("architecture", tr.arch, "nnarx | esn | lstm | gru | composite | blackbox")->required();
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--config", tr.config, "Training config JSON");
  auto* f_iss = t->add_flag("--iss", tr.iss, "Enforce the ISS certificate");
  t->add_flag("--delta-iss", tr.delta_iss, "Enforce the incremental ISS certificate")->excludes(f_iss);
  t->add_option("--epochs", tr.epochs, "Epochs (default 200)");
  t->add_flag("--full-scale", tr.full_scale, "Full 1000-epoch protocol");
  t->add_option("--train-limit", tr.train_limit, "Use only the first N training sequences");
  t->add_option("--val-limit", tr.val_limit, "Use only the first N validation sequences");
  t->add_option("--units", tr.units, "Units per layer/block (NNARX: hidden width, ESN: reservoir size)");
  t->add_option("--regressors", tr.regressors, "NNARX regressor count N")->default_val(2);
  t->add_option("--lambda", tr.lambda, "ESN ridge parameter")->default_val(1e-6);
  t->add_option("--name", tr.name, "Base name of the written files");

  std::string cert_model, cert_out;
  auto* ce = app.add_subcommand("certify", "Evaluate the stability certificate of a model file");
  ce->add_option("model", cert_model, "Model file")->required();
  ce->add_option("--report", cert_out, "Write the report to this file");

  VerifyOpts ver;
  auto* v = app.add_subcommand("verify", "Scenario-based bound of the output reachable set");
  v->add_option("model", ver.model, "Model file")->required();
  v->add_option("--scenario", ver.scenario, "Scenario config JSON");
  v->add_option("--data", ver.data, "Dataset for the default template (and NNARX initial windows)");
  v->add_flag("--advisory", ver.advisory, "Proceed on an uncertified model");
  v->add_option("--eps", ver.eps, "Violation probability");
  v->add_option("--beta", ver.beta, "Confidence complement");
  v->add_option("--horizon", ver.horizon, "Horizon K");
  v->add_option("--report", ver.report, "Report path (default <out>/verification.json)");

  CompareOpts cmp;
  auto* co = app.add_subcommand("compare", "FIT table of several models on one dataset subset");
  co->add_option("models", cmp.models, "Model files")->required();
  co->add_option("--data", cmp.data, "Dataset directory")->required();
  co->add_option("--subset", cmp.subset, "test | validation | train")
      ->check(CLI::IsMember({"test", "validation", "train"}));
  co->add_option("--csv", cmp.out, "CSV path (default <out>/fit.csv)");

  ProbeOpts pr;
  auto* p = app.add_subcommand("probe", "Empirical incremental-stability probe");
  p->add_option("model", pr.model, "Model file")->required();
  p->add_option("--trials", pr.trials, "Initial-state pairs")->default_val(100);
  p->add_option("--horizon", pr.horizon, "Horizon K")->default_val(kDefaultProbeHorizon);
  p->add_option("--tolerance", pr.tolerance, "Terminal distance tolerance")->default_val(1e-3);
  p->add_option("--report", pr.out, "Write the probe result to this file");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_generate(common, gen);
    if (*t) return cmd_train(common, tr);
    if (*ce) return cmd_certify(common, cert_model, cert_out);
    if (*v) return cmd_verify(common, ver);
    if (*co) return cmd_compare(common, cmp);
    if (*p) return cmd_probe(common, pr);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const CompareMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDimensionMismatch;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const PlantEventError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }

}  // namespace rnnid
