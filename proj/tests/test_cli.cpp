#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrfaccel/cli.hpp"
#include "mrfaccel/mrf_data.hpp"

namespace fs = std::filesystem;
using mrfaccel::cli::run;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("mrfaccel-cli-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<double> loss_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<double> v;
  while (std::getline(in, line)) v.push_back(std::stod(line.substr(line.find(',') + 1)));
  return v;
}

}  // namespace

TEST_CASE("usage") {
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({}).code == 1);
  CHECK(cli({"bogus"}).code == 1);
  CHECK(cli({"generate", "--n", "nope", "--out", "x"}).code == 1);
}

TEST_SUITE("generate") {
  TEST_CASE("writes the requested samples reproducibly") {
    TempDir dir;
    const auto a = dir / "a.qmrf";
    const auto b = dir / "b.qmrf";
    REQUIRE(cli({"generate", "--n", "300", "--seed", "7", "--out", a}).code == 0);
    REQUIRE(cli({"--seed", "7", "generate", "--n", "300", "--out", b}).code == 0);
    CHECK(mrfaccel::read_dataset(a).size() == 300);
    CHECK(slurp(a) == slurp(b));
    CHECK(fs::exists(dir / "a.manifest.json"));
    const auto manifest = nlohmann::json::parse(slurp(dir / "a.manifest.json"));
    CHECK(manifest["command"] == "generate");
    CHECK(manifest["seed"] == 7);
    CHECK(manifest.contains("tool_version"));
    CHECK(manifest.contains("timestamp"));
  }

  TEST_CASE("config file with flag override") {
    TempDir dir;
    std::ofstream(dir / "spec.json") << R"({"n": 50, "length": 20, "seed": 3})";
    REQUIRE(cli({"--config", dir / "spec.json", "generate", "--n", "10", "--out", dir / "d.qmrf"}).code == 0);
    const auto ds = mrfaccel::read_dataset(dir / "d.qmrf");
    CHECK(ds.size() == 10);
    CHECK(ds.spec.signal_length == 20);
    CHECK(ds.spec.seed == 3);
  }

  TEST_CASE("invalid range fails without writing") {
    TempDir dir;
    const auto r = cli({"generate", "--t1-min", "500", "--t1-max", "100", "--out", dir / "bad.qmrf"});
    CHECK(r.code != 0);
    CHECK_FALSE(r.err.empty());
    CHECK_FALSE(fs::exists(dir / "bad.qmrf"));
    CHECK(cli({"generate", "--n", "5"}).code == 1);
  }
}

TEST_SUITE("train and eval") {
  TEST_CASE("float, qat and integer models") {
    TempDir dir;
    const auto data = dir / "train.qmrf";
    const auto test = dir / "test.qmrf";
    REQUIRE(cli({"generate", "--n", "2000", "--seed", "1", "--out", data}).code == 0);
    REQUIRE(cli({"generate", "--n", "200", "--seed", "2", "--out", test}).code == 0);

    const auto fl = cli({"train", "--data", data, "--epochs", "4", "--steps", "200", "--lr", "0.01", "--seed", "3",
                         "--out", dir / "float.qnet"});
    REQUIRE(fl.code == 0);
    const auto loss = loss_column(slurp(dir / "float.loss.csv"));
    REQUIRE(loss.size() == 4);
    CHECK(loss.back() < loss.front());
    CHECK(fs::exists(dir / "float.manifest.json"));
    CHECK_FALSE(fs::exists(dir / "float.int.qnet"));

    const auto qat = cli({"train", "--data", data, "--mode", "qat", "--epochs", "2", "--steps", "100", "--lr", "0.01",
                          "--out", dir / "qat.qnet"});
    REQUIRE(qat.code == 0);
    CHECK(fs::exists(dir / "qat.int.qnet"));

    for (const char* model : {"float.qnet", "qat.qnet", "qat.int.qnet"}) {
      const auto ev = cli({"eval", "--model", dir / model, "--data", test});
      CHECK(ev.code == 0);
      CHECK(ev.out.find("MAPE") != std::string::npos);
    }
    const auto ev = cli({"--json", "eval", "--model", dir / "qat.int.qnet", "--data", test, "--out", dir / "m.json"});
    REQUIRE(ev.code == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "m.json"));
    CHECK(j["model_kind"] == "integer");
    CHECK(j["count"] == 200);
    CHECK(fs::exists(dir / "m.manifest.json"));
  }

  TEST_CASE("zero learning rate leaves the initial model untouched") {
    TempDir dir;
    REQUIRE(cli({"generate", "--n", "100", "--out", dir / "d.qmrf"}).code == 0);
    REQUIRE(cli({"train", "--data", dir / "d.qmrf", "--epochs", "1", "--steps", "10", "--lr", "0", "--out",
                 dir / "a.qnet"})
                .code == 0);
    REQUIRE(cli({"train", "--data", dir / "d.qmrf", "--epochs", "3", "--steps", "100", "--lr", "0", "--out",
                 dir / "b.qnet"})
                .code == 0);
    CHECK(slurp(dir / "a.qnet") == slurp(dir / "b.qnet"));
    CHECK(loss_column(slurp(dir / "b.loss.csv")).size() == 3);
  }

  TEST_CASE("errors") {
    TempDir dir;
    CHECK(cli({"train", "--data", dir / "missing.qmrf", "--out", dir / "m.qnet"}).code == 2);
    CHECK(cli({"train", "--out", dir / "m.qnet"}).code == 1);
    CHECK(cli({"eval", "--model", dir / "missing.qnet", "--data", dir / "missing.qmrf"}).code == 2);
    REQUIRE(cli({"generate", "--n", "50", "--out", dir / "d.qmrf"}).code == 0);
    const auto r = cli({"train", "--data", dir / "d.qmrf", "--epochs", "2", "--steps", "50", "--lr", "1e200",
                        "--out", dir / "m.qnet"});
    CHECK(r.code == 2);
    CHECK(r.err.find("diverged") != std::string::npos);
  }
}

TEST_SUITE("verify") {
  TEST_CASE("random networks pass") {
    const auto r = cli({"verify", "--trials", "50"});
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
  }

  TEST_CASE("exported model passes and an injected fault is located") {
    TempDir dir;
    REQUIRE(cli({"generate", "--n", "300", "--out", dir / "d.qmrf"}).code == 0);
    REQUIRE(cli({"train", "--data", dir / "d.qmrf", "--mode", "qat", "--epochs", "1", "--steps", "50", "--out",
                 dir / "q.qnet"})
                .code == 0);
    CHECK(cli({"verify", "--model", dir / "q.int.qnet", "--trials", "20"}).code == 0);
    const auto bad = cli({"verify", "--model", dir / "q.int.qnet", "--trials", "20", "--inject-fault", "2"});
    CHECK(bad.code == 3);
    CHECK(bad.out.find("layer 2") != std::string::npos);
  }

  TEST_CASE("zero trials warns") {
    const auto r = cli({"verify", "--trials", "0"});
    CHECK(r.code == 0);
    CHECK(r.err.find("warning") != std::string::npos);
  }
}

TEST_SUITE("estimate") {
  TEST_CASE("defaults") {
    const auto r = cli({"--json", "estimate"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["training_time"]["seconds_exact"] == "200");
    CHECK(j["cycles"]["forward_cycles"] == 56);
    CHECK(j["cycles"]["backward_cycles"] == 104);
    CHECK(j["resources"]["total"]["luts"] == 145000);
  }

  TEST_CASE("pcie and clock override") {
    const auto p = nlohmann::json::parse(cli({"--json", "estimate", "--pcie"}).out);
    CHECK(p["resources"]["total"]["luts"] == 228000);
    const auto c = nlohmann::json::parse(cli({"--json", "estimate", "--clock", "250"}).out);
    CHECK(c["training_time"]["seconds_exact"] == "160");
    CHECK(cli({"estimate"}).out.find("200 s") != std::string::npos);
  }

  TEST_CASE("profile files") {
    TempDir dir;
    std::ofstream(dir / "ok.json") << R"({"clock_mhz": 400})";
    std::ofstream(dir / "typo.json") << R"({"clock_mhx": 400})";
    std::ofstream(dir / "broken.json") << "{";
    const auto ok = nlohmann::json::parse(cli({"--json", "estimate", "--profile", dir / "ok.json"}).out);
    CHECK(ok["training_time"]["seconds_exact"] == "100");
    CHECK(cli({"estimate", "--profile", dir / "typo.json"}).code != 0);
    CHECK(cli({"estimate", "--profile", dir / "broken.json"}).code != 0);
    CHECK(cli({"estimate", "--profile", dir / "missing.json"}).code != 0);
    REQUIRE(cli({"estimate", "--out", dir / "est.json"}).code == 0);
    CHECK(fs::exists(dir / "est.manifest.json"));
  }
}
