#include "rnnid/cli.hpp"
#include "rnnid/model_io.hpp"
#include "rnnid/physics.hpp"
#include "rnnid/training.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rnnid;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rnnid_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rnnid");
  return run_cli(args);
}

// Small plant dataset shared by the tests below.
const fs::path& small_dataset() {
  static const fs::path dir = [] {
    const fs::path d = scratch_dir("data");
    REQUIRE(cli({"generate", "--out", d.string(), "--seed", "3", "--train", "3", "--validation", "2", "--test",
                 "1", "--length", "150", "--washout", "20"}) == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("seeds and hashes") {
  CHECK(named_seed(1, "dataset") == named_seed(1, "dataset"));
  CHECK(named_seed(1, "dataset") != named_seed(1, "split"));
  CHECK(named_seed(1, "dataset") != named_seed(2, "dataset"));
  const fs::path d = scratch_dir("hash");
  std::ofstream(d / "abc.txt", std::ios::binary) << "abc";
  CHECK(sha256_file((d / "abc.txt").string()) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("generate is reproducible and records its artifacts") {
  const fs::path& a = small_dataset();
  const fs::path b = scratch_dir("data_again");
  REQUIRE(cli({"generate", "--out", b.string(), "--seed", "3", "--train", "3", "--validation", "2", "--test", "1",
               "--length", "150", "--washout", "20"}) == 0);
  const Json ma = read_json_file(a / "manifest.generate.json");
  const Json mb = read_json_file(b / "manifest.generate.json");
  CHECK(ma.at("artifacts").size() == 8);
  for (std::size_t i = 0; i < ma.at("artifacts").size(); ++i)
    CHECK(ma["artifacts"][i]["sha256"] == mb["artifacts"][i]["sha256"]);
  CHECK(ma.at("seeds") == mb.at("seeds"));
  CHECK(slurp(a / "seq_000.csv") == slurp(b / "seq_000.csv"));

  const fs::path blocker = scratch_dir("blocked") / "file";
  std::ofstream(blocker) << "x";
  CHECK(cli({"generate", "--out", (blocker / "sub").string(), "--train", "1", "--validation", "1", "--test", "1",
             "--length", "50", "--washout", "5"}) == kExitIo);
  CHECK(cli({"generate", "--no-such-flag"}) == kExitUsage);
}

TEST_CASE("certify") {
  const fs::path d = scratch_dir("certify");
  save_model(d / "zero.json", zero_model(Architecture::gru, Dims{6, 12, 3, 1}));
  CHECK(cli({"certify", (d / "zero.json").string()}) == kExitOk);
  CHECK(cli({"certify", (d / "zero.json").string(), "--report", (d / "r1.json").string()}) == kExitOk);
  CHECK(cli({"certify", (d / "zero.json").string(), "--report", (d / "r2.json").string()}) == kExitOk);
  CHECK(slurp(d / "r1.json") == slurp(d / "r2.json"));

  ModelParams bad = zero_model(Architecture::gru, Dims{1, 1, 2, 1});
  std::get<GruParams>(bad.net).candidate.U.setConstant(3.0);
  save_model(d / "bad.json", bad);
  CHECK(cli({"certify", (d / "bad.json").string()}) == kExitCertificateFail);

  std::ofstream(d / "broken.json") << "{\"format\": \"rnnid-model\", ";
  CHECK(cli({"certify", (d / "broken.json").string()}) == kExitParse);
  Json j = model_to_json(zero_model(Architecture::gru, Dims{1, 1, 2, 1}));
  j["architecture"] = "transformer";
  write_json_file(d / "unknown.json", j);
  CHECK(cli({"certify", (d / "unknown.json").string()}) == kExitParse);
  CHECK(cli({"certify", (d / "missing.json").string()}) == kExitIo);

  write_json_file(d / "composite.json", composite_to_json(build_composite(2, default_wiring(), nullptr, 1)));
  const int rc = cli({"certify", (d / "composite.json").string(), "--report", (d / "set.json").string()});
  CHECK((rc == kExitOk || rc == kExitCertificateFail));
  CHECK(read_json_file(d / "set.json").at("format") == "rnnid-certificate-set");
}

TEST_CASE("verify") {
  const fs::path d = scratch_dir("verify");
  save_model(d / "zero.json", zero_model(Architecture::gru, Dims{6, 12, 3, 1}));
  write_json_file(d / "scenario.json",
                  Json::parse(R"({"safe_set": {"lo": [-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1,-1],
                                               "hi": [1,1,1,1,1,1,1,1,1,1,1,1]}})"));
  CHECK(cli({"verify", (d / "zero.json").string(), "--out", d.string(), "--scenario",
             (d / "scenario.json").string()}) == kExitOk);
  const Json rep = read_json_file(d / "verification.json");
  CHECK(rep.at("S") == 593);
  CHECK(rep.at("rho") == 0.0);
  CHECK(rep.at("safe") == true);

  ModelParams bad = zero_model(Architecture::gru, Dims{6, 12, 3, 1});
  std::get<GruParams>(bad.net).candidate.U.setConstant(3.0);
  std::get<GruParams>(bad.net).candidate.W.setConstant(1.0);
  std::get<GruParams>(bad.net).U_o.setConstant(1.0);
  save_model(d / "bad.json", bad);
  CHECK(cli({"verify", (d / "bad.json").string(), "--out", d.string()}) == kExitVerifyRefused);
  REQUIRE(cli({"verify", (d / "bad.json").string(), "--out", d.string(), "--advisory", "--eps", "0.2", "--seed",
               "1", "--report", (d / "s1.json").string()}) == kExitOk);
  REQUIRE(cli({"verify", (d / "bad.json").string(), "--out", d.string(), "--advisory", "--eps", "0.2", "--seed",
               "2", "--report", (d / "s2.json").string()}) == kExitOk);
  const Json s1 = read_json_file(d / "s1.json"), s2 = read_json_file(d / "s2.json");
  CHECK(s1.at("advisory") == true);
  CHECK(s1.at("S") == s2.at("S"));
  CHECK(s1.at("rho") != s2.at("rho"));

  write_json_file(d / "tight.json", Json::parse(R"({"safe_set": {"lo": [0,0,0,0,0,0,0,0,0,0,0,0],
                                                                  "hi": [0,0,0,0,0,0,0,0,0,0,0,0]}})"));
  CHECK(cli({"verify", (d / "bad.json").string(), "--out", d.string(), "--advisory", "--eps", "0.5", "--scenario",
             (d / "tight.json").string()}) == kExitUnsafe);

  write_json_file(d / "composite.json", composite_to_json(build_composite(2, default_wiring(), nullptr, 1)));
  CHECK(cli({"verify", (d / "composite.json").string(), "--out", d.string()}) != kExitOk);
}

TEST_CASE("compare") {
  const fs::path& data = small_dataset();
  const fs::path d = scratch_dir("compare");
  const ModelParams m = random_model(Architecture::gru, Dims{6, 12, 3, 1}, 2);
  save_model(d / "first.json", m);
  save_model(d / "second.json", m);
  REQUIRE(cli({"compare", (d / "first.json").string(), (d / "second.json").string(), "--data", data.string(),
               "--out", d.string()}) == kExitOk);
  const std::string csv = slurp(d / "fit.csv");
  std::istringstream lines(csv);
  std::string header, a, b;
  std::getline(lines, header);
  std::getline(lines, a);
  std::getline(lines, b);
  CHECK(header == "model,H1,xA1,xB1,T1,H2,xA2,xB2,T2,H3,xA3,xB3,T3,overall");
  CHECK(a.rfind("first,", 0) == 0);
  CHECK(b.rfind("second,", 0) == 0);
  CHECK(a.substr(5) == b.substr(6));

  save_model(d / "narrow.json", random_model(Architecture::gru, Dims{2, 12, 3, 1}, 2));
  CHECK(cli({"compare", (d / "first.json").string(), (d / "narrow.json").string(), "--data", data.string(),
             "--out", d.string()}) == kExitDimensionMismatch);
}

TEST_CASE("train dispatches every architecture") {
  const fs::path& data = small_dataset();
  const fs::path d = scratch_dir("train");
  const std::string out = d.string();

  int rc = cli({"train", "esn", "--data", data.string(), "--out", out, "--units", "20", "--delta-iss"});
  CHECK((rc == kExitOk || rc == kExitNotCertified));
  CHECK(fs::exists(d / (rc == kExitOk ? "esn.json" : "esn.uncertified.json")));
  CHECK(fs::exists(d / "esn.trace.csv"));
  CHECK(slurp(d / "esn.trace.csv").rfind("lambda,orthogonality,lambda_increases,val_mse", 0) == 0);

  CHECK(cli({"train", "composite", "--data", data.string(), "--out", out, "--epochs", "1", "--units", "2"}) ==
        kExitOk);
  CHECK(read_json_file(d / "composite.json").at("architecture") == "composite");
  CHECK(cli({"train", "blackbox", "--data", data.string(), "--out", out, "--epochs", "1", "--units", "2"}) ==
        kExitOk);
  CHECK(read_json_file(d / "blackbox.json").at("architecture") == "blackbox");
  CHECK(cli({"train", "composite", "--data", data.string(), "--out", out, "--epochs", "1", "--iss"}) ==
        kExitUsage);
  CHECK(cli({"train", "gru", "--data", data.string(), "--out", out, "--iss", "--delta-iss"}) == kExitUsage);

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 60;
  write_json_file(d / "config.json", config_to_json(cfg));
  CHECK(cli({"train", "gru", "--data", data.string(), "--out", out, "--config", (d / "config.json").string(),
             "--units", "3", "--delta-iss", "--name", "g"}) == kExitOk);
  CHECK(fs::exists(d / "g.json"));
  CHECK(fs::exists(d / "g.certificate.json"));
  CHECK(fs::exists(d / "manifest.train.json"));
  CHECK(cli({"certify", (d / "g.json").string()}) == kExitOk);
  CHECK(cli({"probe", (d / "g.json").string(), "--trials", "5", "--out", out}) == kExitOk);
  CHECK(cli({"verify", (d / "g.json").string(), "--data", data.string(), "--out", out, "--eps", "0.5"}) ==
        kExitOk);
  CHECK(cli({"train", "gru", "--data", (d / "nowhere").string(), "--out", out}) == kExitIo);
}
