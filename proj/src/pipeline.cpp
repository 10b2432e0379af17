#include "sqd/pipeline.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

#include "sqd/store.hpp"

namespace sqd {

namespace {

using nlohmann::json;

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw StoreError("cannot create output directory " + path + ": " + ec.message());
}

void write_resolved_config(const RunConfig& cfg, const RunPaths& paths) {
  write_text_atomic(paths.config(), cfg.to_json().dump(2) + "\n");
}

void write_manifest(const RunConfig& cfg, const RunPaths& paths, const std::string& command,
                    const std::vector<std::string>& artifacts) {
  json j;
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["artifacts"] = artifacts;
  write_text_atomic(paths.manifest(command), j.dump(2) + "\n");
}

DatasetSplit finish_images(const RunConfig& cfg, DatasetSplit s) {
  if (cfg.data.downsample) {
    s.train = downsample2x(s.train);
    s.test = downsample2x(s.test);
  }
  Index classes = std::max(s.train.classes, s.test.classes);
  s.train.classes = classes;
  s.test.classes = classes;
  Normalization norm = fit_normalization(s.train.X);
  s.train.X = norm.apply(s.train.X);
  s.train.norm = norm;
  s.test.X = norm.apply(s.test.X);
  s.test.norm = norm;
  s.train.validate();
  s.test.validate();
  return s;
}

json segments_json(const std::vector<std::pair<Index, Index>>& segments) {
  json out = json::array();
  for (auto [lo, hi] : segments) out.push_back(json::array({lo, hi}));
  return out;
}

}  // namespace

DatasetSplit load_data(const RunConfig& cfg) {
  RunPaths paths(cfg.out);
  switch (cfg.data.kind) {
    case DataKind::Blobs:
      return gen_blobs(cfg.data.classes, cfg.data.dim, cfg.data.per_class, cfg.data.spread,
                       seed_derive(cfg.seed, "data"));
    case DataKind::Glyphs: {
      DatasetSplit s;
      s.train = load_idx(paths.glyphs_train_images(), paths.glyphs_train_labels());
      s.test = load_idx(paths.glyphs_test_images(), paths.glyphs_test_labels());
      return finish_images(cfg, std::move(s));
    }
    case DataKind::Idx: {
      DatasetSplit s;
      s.train = load_idx(cfg.data.train_images, cfg.data.train_labels);
      s.test = load_idx(cfg.data.test_images, cfg.data.test_labels);
      return finish_images(cfg, std::move(s));
    }
  }
  throw ConfigError("data.kind", "unhandled dataset kind");
}

Architecture bind_arch(const RunConfig& cfg, const DatasetSplit& data) {
  Architecture arch = cfg.arch;
  arch.input_shape = data.train.instance_shape();
  arch.classes = data.train.classes;
  if (arch.kind == ArchKind::ConvNetMini && arch.input_shape.size() != 3)
    throw ConfigError("arch.kind", "convnet-mini needs [c,h,w] instances");
  arch.validate();
  return arch;
}

void parallel_for(Index jobs, Index n, const std::function<void(Index)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  for (Index w = 0; w < std::min(jobs, n); ++w)
    pool.emplace_back([&] {
      for (Index i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (std::thread& t : pool) t.join();
}

void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  RunPaths paths(cfg.out);
  ensure_dir(cfg.out);
  write_resolved_config(cfg, paths);
  std::vector<std::string> artifacts{paths.config()};

  if (cfg.data.kind == DataKind::Glyphs) {
    Index test_per_class = std::max<Index>(2, cfg.data.per_class / 5);
    gen_glyphs(paths.glyphs_train_images(), paths.glyphs_train_labels(), cfg.data.per_class,
               cfg.data.side, seed_derive(cfg.seed, "glyph-train"));
    gen_glyphs(paths.glyphs_test_images(), paths.glyphs_test_labels(), test_per_class,
               cfg.data.side, seed_derive(cfg.seed, "glyph-test"));
    artifacts.insert(artifacts.end(),
                     {paths.glyphs_train_images(), paths.glyphs_train_labels(),
                      paths.glyphs_test_images(), paths.glyphs_test_labels()});
  }

  DatasetSplit split = load_data(cfg);
  split.train.validate();
  split.test.validate();
  json summary;
  summary["kind"] = data_kind_name(cfg.data.kind);
  summary["train_count"] = split.train.count();
  summary["test_count"] = split.test.count();
  summary["classes"] = split.train.classes;
  summary["instance_shape"] = split.train.instance_shape();
  write_text_atomic(paths.data_summary(), summary.dump(2) + "\n");
  artifacts.push_back(paths.data_summary());
  write_manifest(cfg, paths, "gen-data", artifacts);
  log << "data ready: train " << split.train.count() << ", test " << split.test.count()
      << ", classes " << split.train.classes << "\n";
}

void cmd_train_teacher(const RunConfig& cfg, Index jobs, std::ostream& log) {
  RunPaths paths(cfg.out);
  ensure_dir(cfg.out);
  write_resolved_config(cfg, paths);
  DatasetSplit split = load_data(cfg);
  Architecture arch = bind_arch(cfg, split);

  std::vector<TeacherTrajectory> done(size_t(cfg.teacher.pool));
  std::vector<std::exception_ptr> errors(size_t(cfg.teacher.pool));
  parallel_for(jobs, cfg.teacher.pool, [&](Index i) {
    try {
      TrainConfig tc;
      tc.lr = cfg.teacher.lr;
      tc.momentum = cfg.teacher.momentum;
      tc.batch = cfg.teacher.batch;
      tc.seed = seed_derive(cfg.seed, "teacher", uint64_t(i));
      done[size_t(i)] = train_teacher(split, arch, tc, cfg.teacher.steps, cfg.teacher.stride);
    } catch (...) {
      errors[size_t(i)] = std::current_exception();
    }
  });
  for (std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<std::string> artifacts{paths.config()};
  for (Index i = 0; i < cfg.teacher.pool; ++i) {
    save_trajectory(paths.trajectory(i), done[size_t(i)]);
    artifacts.push_back(paths.trajectory(i));
    log << "teacher " << i << ": test accuracy "
        << done[size_t(i)].final_test_accuracy * 100.0 << "%\n";
  }
  write_manifest(cfg, paths, "train-teacher", artifacts);
}

void cmd_distill(const RunConfig& cfg, std::ostream& log) {
  RunPaths paths(cfg.out);
  ensure_dir(cfg.out);
  write_resolved_config(cfg, paths);
  DatasetSplit split = load_data(cfg);
  Architecture arch = bind_arch(cfg, split);

  TrajectoryPool pool;
  Index M = cfg.teacher.steps;
  if (cfg.distill.backbone.mode == MatchMode::TeacherPath) {
    for (Index i = 0; i < cfg.teacher.pool; ++i)
      pool.trajectories.push_back(load_trajectory(paths.trajectory(i)));
    pool.validate();
    M = pool.steps();
  }

  SyntheticDataset S =
      init_synthetic(split.train, cfg.distill.ipc, seed_derive(cfg.seed, "init-synth"));

  std::ofstream progress(paths.progress_log());
  if (!progress) throw StoreError("cannot open " + paths.progress_log());
  DistillOptions opts;
  opts.backbone = cfg.distill.backbone;
  opts.seed = seed_derive(cfg.seed, "distill");
  opts.progress = &progress;
  if (cfg.distill.snapshot_eval) {
    opts.after_stage = [&](Index k0, const SyntheticDataset& cur) {
      EvalConfig ec = cfg.eval;
      ec.seed = seed_derive(cfg.seed, "snapshot", uint64_t(k0));
      EvalResult snap = eval_staged(cur, arch, split.test, ec);
      json line = {{"stage", k0 + 1},
                   {"event", "eval_snapshot"},
                   {"accuracy_mean", snap.mean},
                   {"accuracy_std", snap.stddev}};
      progress << line.dump() << "\n";
    };
  }

  json extra;
  extra["config_hash"] = config_hash(cfg);
  extra["arch"] = arch_to_json(arch);
  extra["init"] = "real-instance";
  if (cfg.distill.static_backbone) {
    S = backbone_distill(split, arch, pool, std::move(S), M, cfg.distill.iterations,
                         cfg.distill.restarts, opts);
    extra["schedule"] = {{"K", 1}, {"segments", segments_json({{0, M}})}};
  } else {
    SeqSchedule schedule =
        build_schedule(M, cfg.seqmatch.K, cfg.distill.iterations, cfg.distill.restarts);
    if (!cfg.seqmatch.segments.empty()) {
      schedule.segments = cfg.seqmatch.segments;
      schedule.validate();
    }
    partition(S, cfg.seqmatch.K, seed_derive(cfg.seed, "partition"));
    S = seqmatch_distill(split, arch, pool, std::move(S), schedule, opts);
    extra["schedule"] = {{"K", schedule.K}, {"segments", segments_json(schedule.segments)}};
  }
  save_synthetic(paths.synthetic(), S, extra);
  write_manifest(cfg, paths, "distill",
                 {paths.config(), paths.progress_log(), paths.synthetic()});
  log << "synthetic set written: " << paths.synthetic() << "\n";
}

EvalResult cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  RunPaths paths(cfg.out);
  ensure_dir(cfg.out);
  write_resolved_config(cfg, paths);
  DatasetSplit split = load_data(cfg);
  Architecture arch = bind_arch(cfg, split);
  SyntheticDataset S = load_synthetic(paths.synthetic());

  EvalConfig ec = cfg.eval;
  ec.seed = seed_derive(cfg.seed, "eval");
  EvalResult res = eval_staged(S, arch, split.test, ec);
  out << res.format() << "\n";

  json rep;
  rep["mean"] = res.mean;
  rep["stddev"] = res.stddev;
  rep["per_seed"] = res.per_seed;
  rep["budgets"] = stage_budgets(S, ec.iterations);
  rep["config_hash"] = config_hash(cfg);
  write_text_atomic(paths.eval_report(), rep.dump(2) + "\n");
  write_manifest(cfg, paths, "eval", {paths.config(), paths.eval_report()});
  log << "eval report: " << paths.eval_report() << "\n";
  return res;
}

void cmd_diagnose(const RunConfig& cfg, std::ostream& log) {
  RunPaths paths(cfg.out);
  ensure_dir(cfg.out);
  write_resolved_config(cfg, paths);
  DatasetSplit split = load_data(cfg);
  Architecture arch = bind_arch(cfg, split);
  SyntheticDataset S = load_synthetic(paths.synthetic());

  uint64_t dseed = seed_derive(cfg.seed, "diagnose");
  Tensor matrix =
      track_instance_losses(S, split.train, arch, cfg.diagnose.epochs, dseed, cfg.eval.lr);
  save_store(paths.loss_matrix_store(), StoreKind::Metrics, matrix,
             {{"epochs", cfg.diagnose.epochs}, {"config_hash", config_hash(cfg)}});
  export_loss_matrix_csv(paths.loss_matrix_csv(), matrix);

  EasyHardClusters clusters = cluster_easy_hard(matrix);
  GroupCurves curves = loss_drop_summary(matrix, clusters.easy, clusters.hard);
  export_group_curves_csv(paths.curves_csv(), curves);

  CouplingReport coupling =
      coupling_experiment(S, arch, split.train, split.test, cfg.eval, cfg.diagnose.fractions,
                          seed_derive(cfg.seed, "couple"), cfg.diagnose.draws);
  export_coupling_csv(paths.coupling_csv(), coupling);

  json rep;
  rep["easy_fraction"] = clusters.easy_fraction;
  rep["hard_fraction"] = clusters.hard_fraction;
  rep["degenerate_clusters"] = clusters.degenerate;
  rep["spearman"] = coupling.spearman;
  json splits = json::array();
  for (const CouplingSplit& sp : coupling.splits)
    splits.push_back({{"fraction", sp.fraction},
                      {"norm_diff", sp.norm_diff},
                      {"discrepancy_mean", sp.disc_mean},
                      {"discrepancy_std", sp.disc_std},
                      {"eps_norm", sp.eps_norm}});
  rep["splits"] = splits;
  rep["amplification_norms"] = coupling.norms;
  rep["config_hash"] = config_hash(cfg);
  write_text_atomic(paths.diagnostics_report(), rep.dump(2) + "\n");

  write_manifest(cfg, paths, "diagnose",
                 {paths.config(), paths.loss_matrix_store(), paths.loss_matrix_csv(),
                  paths.curves_csv(), paths.coupling_csv(), paths.diagnostics_report()});
  log << "diagnostics written under " << cfg.out << "\n";
}

}  // namespace sqd
