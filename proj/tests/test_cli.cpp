#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "ctssm/discretization.hpp"
#include "ctssm/io.hpp"
#include "test_support.hpp"

using namespace ctssm;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path &path) { return path.string(); }

} // namespace

TEST_CASE("simulate writes deterministic datasets") {
  const auto dir = test_support::scratch_dir("cli_sim");
  const Run a = run({"simulate", "--setting", "2", "--T", "2000", "--seed", "7", "--out", p(dir / "a")});
  REQUIRE(a.code == 0);
  const Run b = run({"simulate", "--setting", "2", "--T", "2000", "--seed", "7", "--out", p(dir / "b")});
  REQUIRE(b.code == 0);
  const PanelDataset data = io::read_dataset(p(dir / "a" / "data.csv"));
  REQUIRE(data.size() == 1);
  CHECK(data[0].sequence.size() == 2000);
  const io::json ma = io::read_json(p(dir / "a" / "manifest.json"));
  const io::json mb = io::read_json(p(dir / "b" / "manifest.json"));
  CHECK(ma["files"] == mb["files"]);
  CHECK(ma["config_hash"] == mb["config_hash"]);
  CHECK(ma["time_unit"] == "days");
  CHECK(ma["files"]["data.csv"] == cli::file_sha256(p(dir / "a" / "data.csv")));

  const Run bad = run({"simulate", "--setting", "4", "--seed", "1", "--out", p(dir / "c")});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("1, 2, 3") != std::string::npos);
  CHECK(run({"simulate", "--setting", "2", "--out", p(dir / "d")}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"simulate", "--help"}).code == 0);
}

TEST_CASE("config files feed flags and flags override them") {
  const auto dir = test_support::scratch_dir("cli_config");
  std::ofstream(dir / "sim.cfg") << "# desk scale\nsetting = 2\nT = 120\nseed = 3\n";
  REQUIRE(run({"simulate", "--config", p(dir / "sim.cfg"), "--out", p(dir / "a")}).code == 0);
  CHECK(io::read_dataset(p(dir / "a" / "data.csv"))[0].sequence.size() == 120);
  REQUIRE(run({"simulate", "--config", p(dir / "sim.cfg"), "--T", "80", "--out", p(dir / "b")}).code == 0);
  CHECK(io::read_dataset(p(dir / "b" / "data.csv"))[0].sequence.size() == 80);
  const io::json m = io::read_json(p(dir / "b" / "manifest.json"));
  CHECK(m["config"]["T"] == "80");
  std::ofstream(dir / "bad.cfg") << "colour = blue\n";
  CHECK(run({"simulate", "--config", p(dir / "bad.cfg"), "--out", p(dir / "c")}).code == 2);
}

TEST_CASE("simulate, fit and decode round trip on the three settings") {
  const auto dir = test_support::scratch_dir("cli_pipeline");
  for (const std::string s : {"1", "2", "3"}) {
    const auto d = dir / ("setting" + s);
    REQUIRE(run({"simulate", "--setting", s, "--T", "500", "--seed", "11", "--out", p(d / "sim")}).code == 0);
    const Run f = run({"fit", "--data", p(d / "sim" / "data.csv"), "--m", "50", "--range", "-2.5", "2.5",
                       "--out", p(d / "fit")});
    REQUIRE(f.code == 0);
    const io::json report = io::read_json(p(d / "fit" / "fit.json"));
    for (const char *key : {"model", "estimates", "se", "ci95", "loglik", "aic", "convergence", "grid", "seed"})
      CHECK(report.contains(key));
    CHECK(report["grid"]["m"] == 50);
    const Run dec = run({"decode", "--fit", p(d / "fit" / "fit.json"), "--data", p(d / "sim" / "data.csv"),
                         "--truth", p(d / "sim" / "states.csv"), "--out", p(d / "dec")});
    REQUIRE(dec.code == 0);
    const io::CsvTable t = io::read_csv(p(d / "dec" / "decoded.csv"));
    CHECK(t.rows.size() == 500);
    const io::json m = io::read_json(p(d / "dec" / "manifest.json"));
    CHECK(m["correlation_decoded_true"].get<double>() > 0.5);

    const Run mismatch = run({"decode", "--fit", p(d / "fit" / "fit.json"), "--data",
                              p(d / "sim" / "data.csv"), "--m", "40", "--out", p(d / "dec2")});
    CHECK(mismatch.code == 2);
  }
}

TEST_CASE("panel fits: auto grid, benchmark and curves") {
  const auto dir = test_support::scratch_dir("cli_panel");
  REQUIRE(run({"simulate", "--setting", "panel", "--individuals", "120", "--seed", "5", "--out",
               p(dir / "sim")}).code == 0);
  const std::string data = p(dir / "sim" / "data.csv");

  const Run b = run({"fit", "--data", data, "--family", "benchmark", "--no-ci", "--out", p(dir / "bench")});
  REQUIRE(b.code == 0);
  const io::json br = io::read_json(p(dir / "bench" / "fit.json"));
  CHECK(!br["estimates"].contains("theta"));
  CHECK(!br["estimates"].contains("sigma"));
  CHECK(br["k"] == 17);
  CHECK(br["grid"].is_null());
  CHECK(run({"decode", "--fit", p(dir / "bench" / "fit.json"), "--data", data, "--out", p(dir / "x")}).code == 2);

  const Run f = run({"fit", "--data", data, "--family", "negbin-spline", "--grid", "auto", "--m", "30",
                     "--start", "theta=0.3", "--start", "sigma=1.2", "--no-ci", "--out", p(dir / "ssm")});
  REQUIRE(f.code != 2);
  const io::json sr = io::read_json(p(dir / "ssm" / "fit.json"));
  const auto [lo, hi] = default_range(OUParams(0.3, 0.0, 1.2));
  CHECK(sr["grid"]["b0"].get<double>() == doctest::Approx(lo));
  CHECK(sr["grid"]["bm"].get<double>() == doctest::Approx(hi));
  CHECK(sr["k"] == 19);

  REQUIRE(run({"curve", "--fit", p(dir / "bench" / "fit.json"), "--out", p(dir / "curve")}).code == 0);
  const io::CsvTable c = io::read_csv(p(dir / "curve" / "curve.csv"));
  CHECK(c.header == std::vector<std::string>{"age", "male", "female", "full_support"});
  CHECK(c.rows.size() == 281);

  CHECK(run({"fit", "--data", data, "--grid", "auto", "--range", "-1", "1", "--out", p(dir / "y")}).code == 2);
  CHECK(run({"fit", "--data", data, "--starts", "3", "--out", p(dir / "z")}).code == 2);
}

TEST_CASE("ingestion failures exit with code 3") {
  const auto dir = test_support::scratch_dir("cli_ingest");
  std::ofstream(dir / "bad.csv") << "id,time,y\n1,0,3\n1,1,-4\n";
  const Run r = run({"fit", "--data", p(dir / "bad.csv"), "--out", p(dir / "o")});
  CHECK(r.code == 3);
  CHECK(r.err.find("row 3") != std::string::npos);
  CHECK(r.err.find("'y'") != std::string::npos);
  CHECK(run({"fit", "--data", p(dir / "missing.csv"), "--out", p(dir / "o")}).code == 2);
}

TEST_CASE("sweep, consistency, path and matrix commands") {
  const auto dir = test_support::scratch_dir("cli_misc");
  const Run s = run({"sweep", "--setting", "2", "--T", "200", "--seed", "4", "--m", "20,30", "--out", p(dir / "sweep")});
  REQUIRE(s.code == 0);
  const io::CsvTable t = io::read_csv(p(dir / "sweep" / "sweep.csv"));
  CHECK(t.header == std::vector<std::string>{"m", "theta", "sigma", "alpha", "seconds", "neg_llk"});
  CHECK(t.rows.size() == 2);
  CHECK(run({"sweep", "--setting", "2", "--data", p(dir / "x.csv"), "--out", p(dir / "s2")}).code == 2);

  const Run c = run({"consistency", "--T", "300", "--replicates", "3", "--m", "20", "--seed", "2",
                     "--evaluate-only", "--out", p(dir / "cons")});
  REQUIRE(c.code == 0);
  CHECK(io::read_csv(p(dir / "cons" / "consistency.csv")).rows.size() == 3);

  REQUIRE(run({"path", "--theta", "2", "--sigma", "1", "--horizon", "5", "--step", "0.01", "--method", "euler",
               "--seed", "1", "--out", p(dir / "path")}).code == 0);
  CHECK(io::read_csv(p(dir / "path" / "path.csv")).rows.size() == 501);

  REQUIRE(run({"matrix", "--theta", "0.5", "--sigma", "0.5", "--b0", "-3", "--bm", "3", "--m", "6", "--delta", "1",
               "--out", p(dir / "matrix")}).code == 0);
  const io::CsvTable m = io::read_csv(p(dir / "matrix" / "matrix.csv"));
  CHECK(m.rows.size() == 6);
  CHECK(m.header.size() == 7);
  CHECK(run({"matrix", "--theta", "0.5", "--sigma", "0.5", "--b0", "-0.1", "--bm", "0.1", "--m", "6",
             "--delta", "5", "--out", p(dir / "m2")}).code == 2);
}
