#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "support/test_util.hpp"
#include "tmaseg/annotation.hpp"
#include "tmaseg/checkpoint.hpp"
#include "tmaseg/error.hpp"
#include "tmaseg/evaluation.hpp"
#include "tmaseg/synthetic.hpp"
#include "cli.hpp"

using namespace tmaseg;
using tmaseg::test::read_bytes;
using tmaseg::test::TempDir;
using tmaseg::test::write_text;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& text, const std::string& what) { return text.find(what) != std::string::npos; }

// Sets an environment variable for the lifetime of the guard.
class EnvGuard {
 public:
  EnvGuard(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value, 1);
  }
  ~EnvGuard() {
    if (old_.empty()) {
      ::unsetenv(name_);
    } else {
      ::setenv(name_, old_.c_str(), 1);
    }
  }

 private:
  const char* name_;
  std::string old_;
};

// Three small synthetic cores, a manifest and an untrained checkpoint.
struct Workspace {
  TempDir dir{"tmaseg-cli"};
  std::string cores, manifest, ckpt;
  Workspace() {
    cores = (dir / "cores").string();
    manifest = (dir / "split.tsv").string();
    ckpt = (dir / "model.ckpt").string();
    write_synthetic_dataset(cores, 3, 4, 96);
    REQUIRE(run({"split", "--cores", cores, "--seed", "2", "--out", manifest}).code == 0);
    save_checkpoint(make_checkpoint(build_model(preset("123s-compact", 1)), 0, 1.0), ckpt);
  }
};

}  // namespace

TEST_CASE("help documents every flag") {
  const Outcome top = run({"--help"});
  CHECK(top.code == 0);
  for (const char* s : {"convert", "split", "train", "predict", "evaluate", "--threads", "--config"}) {
    CHECK(contains(top.out, s));
  }
  const std::map<std::string, std::vector<std::string>> flags = {
      {"convert", {"--mask", "--out"}},
      {"split", {"--cores", "--fractions", "--seed", "--out"}},
      {"train",
       {"--arch", "--manifest", "--cores", "--steps", "--seed", "--out", "--patch", "--batch", "--lr", "--beta1",
        "--beta2", "--eps", "--val-interval", "--augment", "--log", "--resume"}},
      {"predict", {"--ckpt", "--image", "--out", "--patch", "--stride"}},
      {"evaluate",
       {"--ckpt", "--manifest", "--cores", "--split", "--sweep", "--threshold", "--report", "--curve", "--patch",
        "--stride"}},
  };
  for (const auto& [sub, names] : flags) {
    const Outcome help = run({sub, "--help"});
    CHECK(help.code == 0);
    for (const auto& f : names) {
      INFO(sub << " " << f);
      CHECK(contains(help.out, f));
    }
  }
}

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"split", "--cores", "x"}).code == 1);
  CHECK(run({"predict", "--ckpt", "a", "--image", "b", "--out", "c", "--bogus", "1"}).code == 1);

  TempDir dir;
  write_synthetic_dataset(dir / "cores", 3, 1, 64);
  const Outcome bad = run({"split", "--cores", (dir / "cores").string(), "--fractions", "0.5,0.25,0.15", "--out",
                           (dir / "m.tsv").string()});
  CHECK(bad.code == 1);
  CHECK(contains(bad.err, "fractions"));
  CHECK_FALSE(std::filesystem::exists(dir / "m.tsv"));
  CHECK(run({"split", "--cores", (dir / "cores").string(), "--fractions", "0.5,0.5", "--out",
             (dir / "m.tsv").string()})
            .code == 1);
  CHECK(run({"train", "--arch", "vgg", "--manifest", "m", "--cores", "c", "--out", "o"}).code == 1);
}

TEST_CASE("runtime errors exit 2") {
  TempDir dir;
  const Outcome missing = run({"predict", "--ckpt", (dir / "none.ckpt").string(), "--image",
                               (dir / "none.png").string(), "--out", (dir / "h.png").string()});
  CHECK(missing.code == 2);
  CHECK(contains(missing.err, "error:"));
  CHECK(contains(missing.err, "none.ckpt"));
  CHECK(run({"convert", "--mask", (dir / "nope.png").string(), "--out", (dir / "o.png").string()}).code == 2);
  CHECK(run({"split", "--cores", (dir / "absent").string(), "--out", (dir / "m.tsv").string()}).code == 2);
}

TEST_CASE("convert writes palette-exact labels") {
  TempDir dir;
  const SyntheticCore core = make_synthetic_core("c", 3, 64);
  ImageRGB noisy = core.annotation;
  for (std::size_t i = 0; i < noisy.data().size(); i += 7) {
    noisy.data()[i] = static_cast<std::uint8_t>(noisy.data()[i] > 128 ? noisy.data()[i] - 5 : noisy.data()[i] + 5);
  }
  save_rgb(noisy, dir / "mask.png");
  const Outcome r = run({"convert", "--mask", (dir / "mask.png").string(), "--out", (dir / "labels.png").string()});
  REQUIRE(r.code == 0);
  CHECK(load_rgb(dir / "labels.png") == encode_labels(decode_annotation(noisy)));
  CHECK(load_rgb(dir / "labels.png") == core.annotation);
  CHECK(contains(r.out, "size\t64x64"));
  CHECK_FALSE(contains(r.out, "off_palette\t0\n"));
}

TEST_CASE("predict with a zero-logit checkpoint gives uniform mid-gray") {
  TempDir dir;
  Network net = build_model(preset("unet-compact", 3));
  net.zero_head();
  save_checkpoint(make_checkpoint(net, 0, 1.0), dir / "zero.ckpt");
  save_rgb(make_synthetic_core("c", 5, 100).image, dir / "core.png");
  const Outcome r = run({"predict", "--ckpt", (dir / "zero.ckpt").string(), "--image", (dir / "core.png").string(),
                         "--out", (dir / "heat.png").string(), "--patch", "64", "--stride", "32"});
  REQUIRE(r.code == 0);
  const Heatmap h = load_heatmap(dir / "heat.png");
  CHECK(h.height() == 100);
  CHECK(h.width() == 100);
  for (float v : h.data()) CHECK(v == 128.0f / 255.0f);

  CHECK(run({"predict", "--ckpt", (dir / "zero.ckpt").string(), "--image", (dir / "core.png").string(), "--out",
             (dir / "bad.png").string(), "--patch", "60"})
            .code == 1);
}

TEST_CASE("config file supplies defaults and flags override it") {
  Workspace ws;
  const std::string report = (ws.dir / "report.txt").string();
  const std::string cfg = (ws.dir / "eval.cfg").string();
  write_text(cfg,
             "# evaluation defaults\n"
             "split = val   # chosen for the test\n"
             "patch = 32\n"
             "stride=32\n"
             "threshold = 0.3\n");
  const std::vector<std::string> base{"evaluate", "--config", cfg, "--ckpt", ws.ckpt, "--manifest", ws.manifest,
                                      "--cores", ws.cores, "--report", report};
  const Outcome from_file = run(base);
  REQUIRE(from_file.code == 0);
  CHECK(contains(from_file.out, "split\tval\tthreshold\t0.30"));

  auto with_flag = base;
  with_flag.insert(with_flag.end(), {"--split", "test", "--threshold", "0.6"});
  const Outcome overridden = run(with_flag);
  REQUIRE(overridden.code == 0);
  CHECK(contains(overridden.out, "split\ttest\tthreshold\t0.60"));

  write_text(cfg, "patch = 32\ncolour = blue\n");
  const Outcome unknown = run(base);
  CHECK(unknown.code == 1);
  CHECK(contains(unknown.err, "colour"));

  write_text(cfg, "patch 32\n");
  CHECK(run(base).code == 1);
  CHECK(run({"evaluate", "--config", (ws.dir / "missing.cfg").string()}).code == 1);
}

TEST_CASE("config text parsing") {
  const auto m = cli::parse_config_text("# header\n\n val_interval = 50 # inline\nlr=0.001\n", "x.cfg");
  CHECK(m.size() == 2);
  CHECK(m.at("val-interval") == "50");
  CHECK(m.at("lr") == "0.001");
  CHECK_THROWS_AS(cli::parse_config_text("a = 1\na = 2\n", "x.cfg"), Error);
  CHECK_THROWS_AS(cli::parse_config_text("a\n", "x.cfg"), Error);
  CHECK_THROWS_AS(cli::parse_config_text("= 1\n", "x.cfg"), Error);
  try {
    (void)cli::parse_config_text("ok = 1\nbroken\n", "x.cfg");
  } catch (const Error& e) {
    CHECK(contains(e.what(), "x.cfg:2"));
  }
}

TEST_CASE("thread count from flag or environment") {
  Workspace ws;
  save_rgb(make_synthetic_core("c", 6, 80).image, ws.dir / "core.png");
  auto predict = [&](const std::string& out, std::vector<std::string> extra) {
    std::vector<std::string> args{"predict", "--ckpt", ws.ckpt, "--image", (ws.dir / "core.png").string(), "--out",
                                  (ws.dir / out).string(), "--patch", "32", "--stride", "16"};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args).code;
  };
  CHECK(predict("one.png", {"--threads", "1"}) == 0);
  CHECK(predict("three.png", {"--threads", "3"}) == 0);
  {
    EnvGuard env("TMASEG_THREADS", "2");
    CHECK(predict("env.png", {}) == 0);
  }
  {
    EnvGuard env("TMASEG_THREADS", "lots");
    CHECK(predict("bad.png", {}) == 1);
    CHECK(predict("flag.png", {"--threads", "2"}) == 0);
  }
  CHECK(read_bytes(ws.dir / "one.png") == read_bytes(ws.dir / "three.png"));
  CHECK(read_bytes(ws.dir / "one.png") == read_bytes(ws.dir / "env.png"));
  CHECK(read_bytes(ws.dir / "one.png") == read_bytes(ws.dir / "flag.png"));
}

TEST_CASE("seeded subcommands are byte-reproducible") {
  Workspace ws;
  const std::string again = (ws.dir / "split2.tsv").string();
  REQUIRE(run({"split", "--cores", ws.cores, "--seed", "2", "--out", again}).code == 0);
  CHECK(read_bytes(ws.manifest) == read_bytes(again));

  auto train = [&](const std::string& name) {
    return run({"train", "--arch", "123s-compact", "--manifest", ws.manifest, "--cores", ws.cores, "--steps", "3",
                "--patch", "32", "--batch", "2", "--val-interval", "2", "--seed", "9", "--augment", "--out",
                (ws.dir / name).string(), "--log", (ws.dir / (name + ".log")).string()});
  };
  const Outcome first = train("a.ckpt");
  REQUIRE(first.code == 0);
  REQUIRE(train("b.ckpt").code == 0);
  CHECK(read_bytes(ws.dir / "a.ckpt") == read_bytes(ws.dir / "b.ckpt"));
  CHECK(read_bytes(ws.dir / "a.best.ckpt") == read_bytes(ws.dir / "b.best.ckpt"));
  CHECK(read_bytes(ws.dir / "a.ckpt.log") == read_bytes(ws.dir / "b.ckpt.log"));

  auto evaluate = [&](const std::string& name) {
    return run({"evaluate", "--ckpt", (ws.dir / "a.ckpt").string(), "--manifest", ws.manifest, "--cores", ws.cores,
                "--split", "test", "--sweep", "--patch", "32", "--stride", "16", "--report",
                (ws.dir / name).string(), "--curve", (ws.dir / (name + ".curve")).string()});
  };
  REQUIRE(evaluate("r1.txt").code == 0);
  REQUIRE(evaluate("r2.txt").code == 0);
  CHECK(read_bytes(ws.dir / "r1.txt") == read_bytes(ws.dir / "r2.txt"));
  CHECK(read_bytes(ws.dir / "r1.txt.curve") == read_bytes(ws.dir / "r2.txt.curve"));
  CHECK(read_report(ws.dir / "r1.txt").model == "123s-compact");

  CHECK(run({"evaluate", "--ckpt", ws.ckpt, "--manifest", ws.manifest, "--cores", ws.cores, "--report",
             (ws.dir / "r3.txt").string(), "--curve", (ws.dir / "c3").string()})
            .code == 1);
}
