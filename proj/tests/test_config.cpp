#include <doctest.h>

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <string>

#include "sqd/config.hpp"

#include "helpers.hpp"

using namespace sqd;
using test::scratch_dir;

namespace {

std::string config_field(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.field;
  }
  return "<no ConfigError>";
}

struct EnvGuard {
  std::string name;
  std::string saved;
  bool had = false;
  explicit EnvGuard(const char* n) : name(n) {
    if (const char* v = std::getenv(n)) {
      saved = v;
      had = true;
    }
    unsetenv(n);
  }
  ~EnvGuard() {
    if (had)
      setenv(name.c_str(), saved.c_str(), 1);
    else
      unsetenv(name.c_str());
  }
};

}  // namespace

TEST_SUITE("config") {

TEST_CASE("an empty path resolves to the documented defaults") {
  EnvGuard env("SQD_OUT_ROOT");
  RunConfig cfg = resolve_config("", {});
  CHECK(cfg.seed == 1);
  CHECK(cfg.out == "runs/out");
  CHECK(cfg.data.kind == DataKind::Blobs);
  CHECK(cfg.data.classes == 3);
  CHECK(cfg.data.dim == 16);
  CHECK(cfg.data.spread == 0.3);
  CHECK(cfg.data.per_class == 1000);
  CHECK(cfg.arch.kind == ArchKind::Mlp);
  CHECK(cfg.arch.hidden == std::vector<Index>{64});
  CHECK(cfg.arch.activation == Activation::Tanh);
  CHECK(cfg.teacher.steps == 40);
  CHECK(cfg.teacher.stride == 1);
  CHECK(cfg.teacher.pool == 8);
  CHECK(cfg.distill.ipc == 10);
  CHECK(cfg.distill.backbone.mode == MatchMode::StudentPath);
  CHECK(cfg.distill.backbone.pixel_lr == 0.1);
  CHECK(cfg.distill.backbone.pixel_momentum == 0.5);
  CHECK(cfg.distill.iterations == 300);
  CHECK(cfg.distill.restarts == 4);
  CHECK_FALSE(cfg.distill.static_backbone);
  CHECK(cfg.seqmatch.K == 2);
  CHECK(cfg.seqmatch.segments.empty());
  CHECK(cfg.eval.seeds == 5);
  CHECK(cfg.eval.iterations == 1000);
  CHECK(cfg.eval.lr == 0.05);
  CHECK(cfg.eval.batch == 0);
  CHECK(cfg.diagnose.epochs == 15);
  CHECK(cfg.diagnose.fractions == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
  CHECK(cfg.diagnose.draws == 4);
}

TEST_CASE("a full file binds every section") {
  EnvGuard env("SQD_OUT_ROOT");
  std::string dir = scratch_dir("config-full");
  std::string path = dir + "/run.json";
  {
    std::ofstream out(path);
    out << R"({
      "seed": 99,
      "out": "/tmp/sqd-test-out",
      "data": {"kind": "glyphs", "per_class": 50, "side": 16, "downsample": false},
      "arch": {"kind": "convnet-mini", "channels": 6, "blocks": 2, "activation": "relu"},
      "teacher": {"steps": 12, "stride": 2, "pool": 3, "lr": 0.02, "momentum": 0.8, "batch": 32},
      "distill": {"ipc": 4, "mode": "teacher", "pixel_lr": 0.2, "pixel_momentum": 0.4,
                  "target_batch": 128, "iterations": 25, "restarts": 2,
                  "inner_steps": 3, "inner_batch": 16, "inner_lr": 0.03,
                  "static": true, "snapshot_eval": true},
      "seqmatch": {"K": 2, "segments": [[0, 5], [5, 12]]},
      "eval": {"seeds": 3, "iterations": 77, "lr": 0.07, "momentum": 0.1, "batch": 9},
      "diagnose": {"epochs": 4, "fractions": [0.25, 0.5], "draws": 2}
    })";
  }
  RunConfig cfg = resolve_config(path, {});
  CHECK(cfg.seed == 99);
  CHECK(cfg.out == "/tmp/sqd-test-out");
  CHECK(cfg.data.kind == DataKind::Glyphs);
  CHECK(cfg.data.per_class == 50);
  CHECK(cfg.data.side == 16);
  CHECK_FALSE(cfg.data.downsample);
  CHECK(cfg.arch.kind == ArchKind::ConvNetMini);
  CHECK(cfg.arch.channels == 6);
  CHECK(cfg.arch.blocks == 2);
  CHECK(cfg.arch.activation == Activation::Relu);
  CHECK(cfg.teacher.steps == 12);
  CHECK(cfg.teacher.stride == 2);
  CHECK(cfg.teacher.pool == 3);
  CHECK(cfg.teacher.momentum == 0.8);
  CHECK(cfg.distill.ipc == 4);
  CHECK(cfg.distill.backbone.mode == MatchMode::TeacherPath);
  CHECK(cfg.distill.backbone.pixel_lr == 0.2);
  CHECK(cfg.distill.backbone.target_batch == 128);
  CHECK(cfg.distill.backbone.inner_steps == 3);
  CHECK(cfg.distill.static_backbone);
  CHECK(cfg.distill.snapshot_eval);
  CHECK(cfg.seqmatch.K == 2);
  REQUIRE(cfg.seqmatch.segments.size() == 2);
  CHECK(cfg.seqmatch.segments[1] == std::pair<Index, Index>{5, 12});
  CHECK(cfg.eval.iterations == 77);
  CHECK(cfg.diagnose.fractions == std::vector<double>{0.25, 0.5});
}

TEST_CASE("overrides beat the file and parse json values") {
  EnvGuard env("SQD_OUT_ROOT");
  std::string dir = scratch_dir("config-override");
  std::string path = dir + "/run.json";
  {
    std::ofstream out(path);
    out << R"({"seed": 7, "distill": {"ipc": 10}})";
  }
  RunConfig cfg = resolve_config(
      path, {"seed=9", "seqmatch.K=3", "distill.ipc=12", "eval.lr=0.125",
             "data.kind=glyphs", "data.side=16", "data.downsample=false", "arch.hidden=[32,16]",
             "out=elsewhere"});
  CHECK(cfg.seed == 9);
  CHECK(cfg.seqmatch.K == 3);
  CHECK(cfg.distill.ipc == 12);
  CHECK(cfg.eval.lr == 0.125);
  CHECK(cfg.data.kind == DataKind::Glyphs);
  CHECK_FALSE(cfg.data.downsample);
  CHECK(cfg.arch.hidden == std::vector<Index>{32, 16});
  CHECK(cfg.out == "elsewhere");
}

TEST_CASE("bad values report the offending field path") {
  EnvGuard env("SQD_OUT_ROOT");
  auto field_of = [](std::vector<std::string> overrides) {
    return config_field([overrides] { resolve_config("", overrides); });
  };
  CHECK(field_of({"seqmatch.K=0"}) == "seqmatch.K");
  CHECK(field_of({"seqmatch.K=11"}) == "seqmatch.K");  // default ipc is 10
  CHECK(field_of({"bogus=1"}) == "bogus");
  CHECK(field_of({"teacher.bogus=1"}) == "teacher.bogus");
  CHECK(field_of({"seed=abc"}) == "seed");
  CHECK(field_of({"seqmatch.segments=[[0,5]]"}) == "seqmatch.segments");  // K = 2 wants 2
  CHECK(field_of({"seqmatch.segments=[[0,5,9],[9,12]]"}) == "seqmatch.segments");
  CHECK(field_of({"diagnose.fractions=[0.6]"}) == "diagnose.fractions");
  CHECK(field_of({"diagnose.fractions=[]"}) == "diagnose.fractions");
  CHECK(field_of({"arch.hidden=[]"}) == "arch.hidden");
  CHECK(field_of({"arch.kind=lstm"}) == "arch.kind");
  CHECK(field_of({"arch.activation=gelu"}) == "arch.activation");
  CHECK(field_of({"data.kind=cifar"}) == "data.kind");
  CHECK(field_of({"data.kind=glyphs", "data.side=15"}) == "data.side");  // odd + downsample
  CHECK(field_of({"distill.mode=warp"}) == "distill.mode");
  CHECK(field_of({"distill.pixel_lr=0"}) == "distill.pixel_lr");
  CHECK(field_of({"distill.pixel_momentum=1.0"}) == "distill.pixel_momentum");
  CHECK(field_of({"eval.momentum=1.0"}) == "eval.momentum");
  CHECK(field_of({"eval.batch=-1"}) == "eval.batch");
  CHECK(field_of({"teacher.lr=0"}) == "teacher.lr");
  CHECK(field_of({"noequals"}) == "--set");
  CHECK(field_of({"=3"}) == "--set");
  CHECK(field_of({"data.kind=idx"}) == "data.train_images");  // paths required

  CHECK_THROWS_AS(resolve_config("/nonexistent/sqd.json", {}), MissingInputError);

  std::string dir = scratch_dir("config-bad");
  {
    std::ofstream out(dir + "/broken.json");
    out << "{ nope";
  }
  CHECK(config_field([&] { resolve_config(dir + "/broken.json", {}); }) == "config");
}

TEST_CASE("a relative output directory honors the environment root") {
  EnvGuard env("SQD_OUT_ROOT");
  setenv("SQD_OUT_ROOT", "/tmp/sqd-root", 1);
  CHECK(resolve_config("", {}).out == "/tmp/sqd-root/runs/out");
  CHECK(resolve_config("", {"out=/abs/path"}).out == "/abs/path");
  setenv("SQD_OUT_ROOT", "", 1);
  CHECK(resolve_config("", {}).out == "runs/out");
}

TEST_CASE("the config hash tracks content, not provenance") {
  EnvGuard env("SQD_OUT_ROOT");
  RunConfig a = resolve_config("", {});
  RunConfig b = resolve_config("", {"seed=1"});  // explicit default
  RunConfig c = resolve_config("", {"seed=2"});
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(c));
  CHECK(config_hash(a).size() == 16);
  for (char ch : config_hash(a)) CHECK(std::isxdigit(static_cast<unsigned char>(ch)));
}

TEST_CASE("serialized configs parse back to the same json") {
  EnvGuard env("SQD_OUT_ROOT");
  RunConfig cfg = resolve_config(
      "", {"seed=41", "data.kind=glyphs", "data.side=16", "arch.kind=convnet-mini",
           "distill.mode=teacher", "seqmatch.K=4", "seqmatch.segments=[[0,2],[2,4],[4,9],[9,12]]",
           "diagnose.fractions=[0.2,0.4]"});
  nlohmann::json j = cfg.to_json();
  RunConfig round = config_from_json(j);
  CHECK(round.to_json() == j);
  CHECK(round.seqmatch.segments == cfg.seqmatch.segments);
  CHECK(round.arch.kind == ArchKind::ConvNetMini);
}

TEST_CASE("names for kinds and modes are stable") {
  CHECK(std::string(data_kind_name(DataKind::Blobs)) == "blobs");
  CHECK(std::string(data_kind_name(DataKind::Glyphs)) == "glyphs");
  CHECK(std::string(data_kind_name(DataKind::Idx)) == "idx");
  CHECK(std::string(match_mode_name(MatchMode::TeacherPath)) == "teacher");
  CHECK(std::string(match_mode_name(MatchMode::StudentPath)) == "student");
  CHECK(sizeof(kKGrid) / sizeof(kKGrid[0]) == 5);
  CHECK(kKGrid[0] == 2);
  CHECK(kKGrid[4] == 6);
}

}  // TEST_SUITE
