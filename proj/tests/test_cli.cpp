#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "physattn/cli.hpp"
#include "physattn/error.hpp"

using namespace physattn;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "physattn");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("physattn_cli_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("config files and overrides") {
  RunConfig c;
  std::istringstream is("# comment\nlayers = 3\n\nlr = 0.005  # trailing\nprojector = stencil3x3\ngrad_clip = on\n");
  apply_config_stream(c, is, "mem");
  CHECK(c.model.layers == 3);
  CHECK(c.train.lr == 0.005);
  CHECK(c.model.projector == ProjectorKind::stencil3x3);
  CHECK(c.train.grad_clip);

  std::istringstream unknown("layers = 2\nwidth = 9\n");
  CHECK_THROWS_WITH_AS(apply_config_stream(c, unknown, "mem"), doctest::Contains("mem:2"), ConfigError);
  std::istringstream malformed("layers 2\n");
  CHECK_THROWS_AS(apply_config_stream(c, malformed, "mem"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "layers", "-1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "lr", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "slice_mode", "voronoi"), ConfigError);

  std::ostringstream echo;
  write_run_config(echo, c);
  RunConfig back;
  std::istringstream again(echo.str());
  apply_config_stream(back, again, "echo");
  CHECK(back == c);
  CHECK(run_config_keys().size() == 21);
}

TEST_CASE("end-to-end commands and exit codes") {
  const fs::path root = scratch_dir("e2e");
  const std::string data = (root / "data").string(), run = (root / "run").string();

  CHECK(cli({"gen-data", "--res", "10", "--n-train", "4", "--n-test", "2", "--seed", "5", "--out", data}).code == 0);
  CHECK(fs::exists(root / "data" / "train.pded"));
  CHECK(fs::exists(root / "data" / "test.pded"));
  CHECK(fs::exists(root / "data" / "manifest.txt"));
  CHECK(cli({"gen-data", "--res", "10", "--n-train", "4", "--n-test", "2", "--out", data}).code == 2);

  const std::vector<std::string> train_args{"train",      "--data",  data, "--out", run, "--layers", "1",
                                            "--channels", "8",       "--heads", "2", "--slices", "4",
                                            "--epochs",   "3",       "--batch-size", "2"};
  const Run t = cli(train_args);
  INFO(t.err);
  REQUIRE(t.code == 0);
  CHECK(fs::exists(root / "run" / "checkpoint.tslv"));
  CHECK(slurp(root / "run" / "config.txt").find("layers = 1\n") != std::string::npos);
  const std::string history = slurp(root / "run" / "history.csv");
  CHECK(history.starts_with("epoch,train_loss,test_rel_l2,lr,seconds\n"));
  CHECK(cli(train_args).code == 2);
  std::vector<std::string> forced = train_args;
  forced.push_back("--force");
  CHECK(cli(forced).code == 0);

  const std::string ckpt = (root / "run" / "checkpoint.tslv").string();
  const Run e = cli({"eval", "--checkpoint", ckpt, "--data", data, "--kl"});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("kl.layer0=") != std::string::npos);
  CHECK(fs::exists(root / "run" / "eval.csv"));
  const Run plain = cli({"eval", "--checkpoint", ckpt, "--data", data, "--csv", (root / "a.csv").string()});
  const Run full = cli({"eval", "--checkpoint", ckpt, "--data", data, "--resample", "1", "--seed", "9", "--csv",
                        (root / "b.csv").string()});
  CHECK(plain.out == full.out);
  CHECK(slurp(root / "a.csv") == slurp(root / "b.csv"));

  const std::string slices = (root / "slices.csv").string();
  CHECK(cli({"export-slices", "--checkpoint", ckpt, "--data", data, "--out", slices}).code == 0);
  CHECK(slurp(slices).starts_with("point_index,x,y,w_1,w_2,w_3,w_4\n"));
  CHECK(fs::exists(root / "slices_slice1.pgm"));
  CHECK(cli({"export-slices", "--checkpoint", ckpt, "--data", data, "--head", "5", "--out", slices}).code == 2);

  const Run bench = cli({"bench", "--sizes", "64,128", "--repeats", "1", "--layers", "1", "--channels", "8",
                         "--heads", "2", "--slices", "4"});
  CHECK(bench.code == 0);
  CHECK(bench.out.find("N,forward_backward_seconds,peak_bytes\n64,") != std::string::npos);

  const Run ablate = cli({"ablate", "--slices", "1,2", "--data", data, "--layers", "1", "--channels", "4",
                          "--heads", "1", "--epochs", "1", "--seeds", "0,1"});
  CHECK(ablate.code == 0);
  CHECK(ablate.out.find("mode,M,params,s_per_epoch,rel_l2\n") != std::string::npos);

  CHECK(cli({"train", "--data", (root / "nowhere").string(), "--out", (root / "r2").string()}).code == 3);
  CHECK(cli({"train", "--data", data, "--out", (root / "r3").string(), "--lr", "0"}).code == 2);
  CHECK(cli({"train", "--data", data, "--out", (root / "r4").string(), "--config", (root / "missing.cfg").string()})
            .code == 2);
  CHECK(cli({"eval", "--checkpoint", (root / "data" / "train.pded").string(), "--data", data}).code == 3);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  fs::remove_all(root);
}
