#include "sqd/config.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sqd {

namespace {

using nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(join(path, it.key()), "unknown key");
  }
}

template <class T>
T get_or(const json& obj, const std::string& path, const char* key, T def) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(join(path, key), "wrong value type");
  }
}

json section(const json& j, const char* key) {
  if (!j.contains(key)) return json::object();
  if (!j.at(key).is_object()) throw ConfigError(key, "must be an object");
  return j.at(key);
}

DataConfig data_from_json(const json& j) {
  check_keys(j, "data",
             {"kind", "classes", "dim", "spread", "per_class", "side", "downsample",
              "train_images", "train_labels", "test_images", "test_labels"});
  DataConfig d;
  std::string kind = get_or<std::string>(j, "data", "kind", "blobs");
  if (kind == "blobs")
    d.kind = DataKind::Blobs;
  else if (kind == "glyphs")
    d.kind = DataKind::Glyphs;
  else if (kind == "idx")
    d.kind = DataKind::Idx;
  else
    throw ConfigError("data.kind", "unknown dataset kind '" + kind + "'");
  d.classes = get_or(j, "data", "classes", d.classes);
  d.dim = get_or(j, "data", "dim", d.dim);
  d.spread = get_or(j, "data", "spread", d.spread);
  d.per_class = get_or(j, "data", "per_class", d.per_class);
  d.side = get_or(j, "data", "side", d.side);
  d.downsample = get_or(j, "data", "downsample", d.downsample);
  d.train_images = get_or<std::string>(j, "data", "train_images", "");
  d.train_labels = get_or<std::string>(j, "data", "train_labels", "");
  d.test_images = get_or<std::string>(j, "data", "test_images", "");
  d.test_labels = get_or<std::string>(j, "data", "test_labels", "");
  return d;
}

Architecture arch_from_config(const json& j) {
  check_keys(j, "arch", {"kind", "hidden", "channels", "blocks", "activation"});
  Architecture a;
  a.hidden = {64};
  std::string kind = get_or<std::string>(j, "arch", "kind", "mlp");
  if (kind == "mlp")
    a.kind = ArchKind::Mlp;
  else if (kind == "convnet-mini")
    a.kind = ArchKind::ConvNetMini;
  else
    throw ConfigError("arch.kind", "unknown architecture '" + kind + "'");
  a.hidden = get_or(j, "arch", "hidden", a.hidden);
  a.channels = get_or(j, "arch", "channels", a.channels);
  a.blocks = get_or(j, "arch", "blocks", a.blocks);
  std::string act = get_or<std::string>(j, "arch", "activation", "tanh");
  if (act == "tanh")
    a.activation = Activation::Tanh;
  else if (act == "relu")
    a.activation = Activation::Relu;
  else if (act == "softplus")
    a.activation = Activation::Softplus;
  else
    throw ConfigError("arch.activation", "unknown activation '" + act + "'");
  return a;
}

TeacherConfig teacher_from_json(const json& j) {
  check_keys(j, "teacher", {"steps", "stride", "pool", "lr", "momentum", "batch"});
  TeacherConfig t;
  t.steps = get_or(j, "teacher", "steps", t.steps);
  t.stride = get_or(j, "teacher", "stride", t.stride);
  t.pool = get_or(j, "teacher", "pool", t.pool);
  t.lr = get_or(j, "teacher", "lr", t.lr);
  t.momentum = get_or(j, "teacher", "momentum", t.momentum);
  t.batch = get_or(j, "teacher", "batch", t.batch);
  return t;
}

DistillConfig distill_from_json(const json& j) {
  check_keys(j, "distill",
             {"ipc", "mode", "pixel_lr", "pixel_momentum", "target_batch", "iterations",
              "restarts", "inner_steps", "inner_batch", "inner_lr", "static",
              "snapshot_eval"});
  DistillConfig d;
  std::string mode = get_or<std::string>(j, "distill", "mode", "student");
  if (mode == "teacher")
    d.backbone.mode = MatchMode::TeacherPath;
  else if (mode == "student")
    d.backbone.mode = MatchMode::StudentPath;
  else
    throw ConfigError("distill.mode", "unknown mode '" + mode + "'");
  d.ipc = get_or(j, "distill", "ipc", d.ipc);
  d.backbone.pixel_lr = get_or(j, "distill", "pixel_lr", d.backbone.pixel_lr);
  d.backbone.pixel_momentum = get_or(j, "distill", "pixel_momentum", d.backbone.pixel_momentum);
  d.backbone.target_batch = get_or(j, "distill", "target_batch", d.backbone.target_batch);
  d.backbone.inner_steps = get_or(j, "distill", "inner_steps", d.backbone.inner_steps);
  d.backbone.inner_batch = get_or(j, "distill", "inner_batch", d.backbone.inner_batch);
  d.backbone.inner_lr = get_or(j, "distill", "inner_lr", d.backbone.inner_lr);
  d.iterations = get_or(j, "distill", "iterations", d.iterations);
  d.restarts = get_or(j, "distill", "restarts", d.restarts);
  d.static_backbone = get_or(j, "distill", "static", d.static_backbone);
  d.snapshot_eval = get_or(j, "distill", "snapshot_eval", d.snapshot_eval);
  return d;
}

SeqmatchConfig seqmatch_from_json(const json& j) {
  check_keys(j, "seqmatch", {"K", "segments"});
  SeqmatchConfig s;
  s.K = get_or(j, "seqmatch", "K", s.K);
  if (j.contains("segments")) {
    try {
      for (const json& seg : j.at("segments")) {
        if (!seg.is_array() || seg.size() != 2) throw json::type_error::create(302, "pair", &j);
        s.segments.emplace_back(seg.at(0).get<Index>(), seg.at(1).get<Index>());
      }
    } catch (const json::exception&) {
      throw ConfigError("seqmatch.segments", "expected an array of [lo, hi) pairs");
    }
  }
  return s;
}

EvalConfig eval_from_json(const json& j) {
  check_keys(j, "eval", {"seeds", "iterations", "lr", "momentum", "batch"});
  EvalConfig e;
  e.seeds = get_or(j, "eval", "seeds", e.seeds);
  e.iterations = get_or(j, "eval", "iterations", e.iterations);
  e.lr = get_or(j, "eval", "lr", e.lr);
  e.momentum = get_or(j, "eval", "momentum", e.momentum);
  e.batch = get_or(j, "eval", "batch", e.batch);
  return e;
}

DiagnoseConfig diagnose_from_json(const json& j) {
  check_keys(j, "diagnose", {"epochs", "fractions", "draws"});
  DiagnoseConfig d;
  d.epochs = get_or(j, "diagnose", "epochs", d.epochs);
  d.fractions = get_or(j, "diagnose", "fractions", d.fractions);
  d.draws = get_or(j, "diagnose", "draws", d.draws);
  return d;
}

void apply_override(json& j, const std::string& kv) {
  size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set", "expected key.path=value, got '" + kv + "'");
  std::string path = kv.substr(0, eq), value = kv.substr(eq + 1);
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;  // bare words become strings

  json* cur = &j;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    std::string seg =
        dot == std::string::npos ? path.substr(start) : path.substr(start, dot - start);
    if (seg.empty()) throw ConfigError("--set", "empty path segment in '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[seg] = parsed;
      return;
    }
    json& next = (*cur)[seg];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError(path, "cannot descend into a non-object value");
    cur = &next;
    start = dot + 1;
  }
}

}  // namespace

void RunConfig::validate() const {
  if (out.empty()) throw ConfigError("out", "output directory must be nonempty");
  switch (data.kind) {
    case DataKind::Blobs:
      if (data.classes < 2) throw ConfigError("data.classes", "needs >= 2");
      if (data.dim < 2) throw ConfigError("data.dim", "needs >= 2");
      if (data.per_class < 2) throw ConfigError("data.per_class", "needs >= 2");
      if (data.spread < 0.0) throw ConfigError("data.spread", "must be >= 0");
      break;
    case DataKind::Glyphs:
      if (data.per_class < 2) throw ConfigError("data.per_class", "needs >= 2");
      if (data.side < 4) throw ConfigError("data.side", "needs >= 4");
      if (data.downsample && data.side % 2 != 0)
        throw ConfigError("data.side", "downsampling needs an even raster size");
      break;
    case DataKind::Idx:
      if (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
          data.test_labels.empty())
        throw ConfigError("data.train_images", "idx datasets need all four file paths");
      break;
  }
  if (arch.kind == ArchKind::Mlp && arch.hidden.empty())
    throw ConfigError("arch.hidden", "mlp needs at least one hidden width");
  for (Index h : arch.hidden)
    if (h < 1) throw ConfigError("arch.hidden", "widths must be >= 1");
  if (arch.channels < 1) throw ConfigError("arch.channels", "needs >= 1");
  if (arch.blocks < 1) throw ConfigError("arch.blocks", "needs >= 1");
  if (teacher.steps < 1) throw ConfigError("teacher.steps", "needs >= 1");
  if (teacher.stride < 1) throw ConfigError("teacher.stride", "needs >= 1");
  if (teacher.pool < 1) throw ConfigError("teacher.pool", "needs >= 1");
  if (teacher.lr <= 0.0) throw ConfigError("teacher.lr", "must be > 0");
  if (teacher.momentum < 0.0 || teacher.momentum >= 1.0)
    throw ConfigError("teacher.momentum", "must lie in [0, 1)");
  if (distill.ipc < 1) throw ConfigError("distill.ipc", "needs >= 1");
  if (distill.backbone.pixel_lr <= 0.0) throw ConfigError("distill.pixel_lr", "must be > 0");
  if (distill.backbone.pixel_momentum < 0.0 || distill.backbone.pixel_momentum >= 1.0)
    throw ConfigError("distill.pixel_momentum", "must lie in [0, 1)");
  if (distill.backbone.target_batch < 0)
    throw ConfigError("distill.target_batch", "must be >= 0");
  if (distill.iterations < 1) throw ConfigError("distill.iterations", "needs >= 1");
  if (distill.restarts < 1) throw ConfigError("distill.restarts", "needs >= 1");
  if (distill.backbone.inner_steps < 1) throw ConfigError("distill.inner_steps", "needs >= 1");
  if (distill.backbone.inner_batch < 0) throw ConfigError("distill.inner_batch", "must be >= 0");
  if (distill.backbone.inner_lr <= 0.0) throw ConfigError("distill.inner_lr", "must be > 0");
  if (seqmatch.K < 1) throw ConfigError("seqmatch.K", "needs >= 1");
  if (seqmatch.K > distill.ipc)
    throw ConfigError("seqmatch.K", "K cannot exceed ipc; every stage needs one instance "
                                    "per class");
  if (!seqmatch.segments.empty() && Index(seqmatch.segments.size()) != seqmatch.K)
    throw ConfigError("seqmatch.segments", "needs exactly K pairs");
  if (eval.seeds < 1) throw ConfigError("eval.seeds", "needs >= 1");
  if (eval.iterations < 1) throw ConfigError("eval.iterations", "needs >= 1");
  if (eval.lr <= 0.0) throw ConfigError("eval.lr", "must be > 0");
  if (eval.momentum < 0.0 || eval.momentum >= 1.0)
    throw ConfigError("eval.momentum", "must lie in [0, 1)");
  if (eval.batch < 0) throw ConfigError("eval.batch", "must be >= 0");
  if (diagnose.epochs < 1) throw ConfigError("diagnose.epochs", "needs >= 1");
  if (diagnose.fractions.empty())
    throw ConfigError("diagnose.fractions", "needs at least one split");
  for (double f : diagnose.fractions)
    if (!(f > 0.0) || f > 0.5)
      throw ConfigError("diagnose.fractions", "fractions must lie in (0, 0.5]");
  if (diagnose.draws < 1) throw ConfigError("diagnose.draws", "needs >= 1");
}

nlohmann::json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out"] = out;
  j["data"] = {{"kind", data_kind_name(data.kind)},
               {"classes", data.classes},
               {"dim", data.dim},
               {"spread", data.spread},
               {"per_class", data.per_class},
               {"side", data.side},
               {"downsample", data.downsample},
               {"train_images", data.train_images},
               {"train_labels", data.train_labels},
               {"test_images", data.test_images},
               {"test_labels", data.test_labels}};
  json a;
  a["kind"] = arch.kind == ArchKind::Mlp ? "mlp" : "convnet-mini";
  a["hidden"] = arch.hidden;
  a["channels"] = arch.channels;
  a["blocks"] = arch.blocks;
  a["activation"] = arch.activation == Activation::Tanh      ? "tanh"
                    : arch.activation == Activation::Relu    ? "relu"
                                                             : "softplus";
  j["arch"] = a;
  j["teacher"] = {{"steps", teacher.steps}, {"stride", teacher.stride},
                  {"pool", teacher.pool},   {"lr", teacher.lr},
                  {"momentum", teacher.momentum}, {"batch", teacher.batch}};
  j["distill"] = {{"ipc", distill.ipc},
                  {"mode", match_mode_name(distill.backbone.mode)},
                  {"pixel_lr", distill.backbone.pixel_lr},
                  {"pixel_momentum", distill.backbone.pixel_momentum},
                  {"target_batch", distill.backbone.target_batch},
                  {"iterations", distill.iterations},
                  {"restarts", distill.restarts},
                  {"inner_steps", distill.backbone.inner_steps},
                  {"inner_batch", distill.backbone.inner_batch},
                  {"inner_lr", distill.backbone.inner_lr},
                  {"static", distill.static_backbone},
                  {"snapshot_eval", distill.snapshot_eval}};
  json segs = json::array();
  for (auto [lo, hi] : seqmatch.segments) segs.push_back(json::array({lo, hi}));
  j["seqmatch"] = {{"K", seqmatch.K}, {"segments", segs}};
  j["eval"] = {{"seeds", eval.seeds},
               {"iterations", eval.iterations},
               {"lr", eval.lr},
               {"momentum", eval.momentum},
               {"batch", eval.batch}};
  j["diagnose"] = {{"epochs", diagnose.epochs},
                   {"fractions", diagnose.fractions},
                   {"draws", diagnose.draws}};
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config", "top level must be an object");
  check_keys(j, "",
             {"seed", "out", "data", "arch", "teacher", "distill", "seqmatch", "eval",
              "diagnose"});
  RunConfig cfg;
  cfg.seed = get_or(j, "", "seed", cfg.seed);
  cfg.out = get_or<std::string>(j, "", "out", cfg.out);
  cfg.data = data_from_json(section(j, "data"));
  cfg.arch = arch_from_config(section(j, "arch"));
  cfg.teacher = teacher_from_json(section(j, "teacher"));
  cfg.distill = distill_from_json(section(j, "distill"));
  cfg.seqmatch = seqmatch_from_json(section(j, "seqmatch"));
  cfg.eval = eval_from_json(section(j, "eval"));
  cfg.diagnose = diagnose_from_json(section(j, "diagnose"));
  return cfg;
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw MissingInputError("config not found: " + path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config", std::string("parse failure: ") + e.what());
    }
  }
  for (const std::string& kv : overrides) apply_override(j, kv);
  RunConfig cfg = config_from_json(j);
  const char* root = std::getenv("SQD_OUT_ROOT");
  if (root && *root && !cfg.out.empty() && cfg.out.front() != '/')
    cfg.out = std::string(root) + "/" + cfg.out;
  cfg.validate();
  return cfg;
}

std::string config_hash(const RunConfig& cfg) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(cfg.to_json().dump());
  return os.str();
}

const char* data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::Blobs: return "blobs";
    case DataKind::Glyphs: return "glyphs";
    case DataKind::Idx: return "idx";
  }
  return "?";
}

const char* match_mode_name(MatchMode m) {
  return m == MatchMode::TeacherPath ? "teacher" : "student";
}

}  // namespace sqd
