#include "sqd/teacher.hpp"

#include "sqd/store.hpp"

namespace sqd {

void TeacherTrajectory::validate() const {
  if (checkpoints.size() < 2) throw ShapeError("trajectory: needs M >= 1 checkpointed steps");
  if (train_losses.size() != checkpoints.size())
    throw ShapeError("trajectory: loss count does not match checkpoints");
  for (const ParamSet& p : checkpoints)
    if (!p.same_layout(checkpoints.front()))
      throw ShapeError("trajectory: checkpoint layout drift");
  if (stride < 1) throw ShapeError("trajectory: stride must be >= 1");
}

void TrajectoryPool::validate() const {
  if (trajectories.empty()) throw ShapeError("trajectory pool: empty");
  Index m = trajectories.front().steps();
  for (const TeacherTrajectory& t : trajectories) {
    t.validate();
    if (t.steps() != m) throw ShapeError("trajectory pool: mixed M");
    if (!t.checkpoints.front().same_layout(trajectories.front().checkpoints.front()))
      throw ShapeError("trajectory pool: mixed architectures");
  }
}

TeacherTrajectory train_teacher(const DatasetSplit& split, const Architecture& arch,
                                const TrainConfig& cfg, Index M, Index stride) {
  if (M < 1) throw ConfigError("teacher.steps", "needs M >= 1");
  if (stride < 1) throw ConfigError("teacher.stride", "needs stride >= 1");
  Index need = M * stride;
  if (cfg.iters != 0 && cfg.iters < need)
    throw ConfigError("teacher.iters",
                      "budget " + std::to_string(cfg.iters) + " below M*stride = " +
                          std::to_string(need));

  TeacherTrajectory traj;
  traj.arch = arch;
  traj.seed = cfg.seed;
  traj.stride = stride;
  traj.replay_cfg = cfg;
  traj.replay_cfg.iters = need;

  ParamSet theta0 = init_params(arch, InitSpec{cfg.seed});
  traj.checkpoints.push_back(theta0);
  traj.train_losses.push_back(loss_value(arch, theta0, split.train));

  TrainConfig run = traj.replay_cfg;
  alg(split.train, arch, theta0, run,
      [&](Index it, const ParamSet& p, double) {
        if ((it + 1) % stride == 0) {
          traj.checkpoints.push_back(p);
          traj.train_losses.push_back(loss_value(arch, p, split.train));
        }
      });

  traj.final_test_accuracy = accuracy(arch, traj.checkpoints.back(), split.test);
  traj.validate();
  return traj;
}

ParamSet teacher_gradient(const TeacherTrajectory& traj, Index m, const LabeledDataset& train,
                          const BatchSpec& spec) {
  if (m < 0 || m >= traj.steps())
    throw ShapeError("teacher_gradient: step " + std::to_string(m) + " outside [0," +
                     std::to_string(traj.steps()) + ")");
  LabeledDataset batch =
      spec.size == 0 ? train
                     : train.subset(batch_rows(train.count(), spec.size, spec.seed, spec.counter));
  return loss_gradient(traj.arch, traj.checkpoints[size_t(m)], batch, Reduction::Mean);
}

SegmentView sample_segment(const TrajectoryPool& pool, Index lo, Index hi, CounterRng& rng) {
  pool.validate();
  if (lo < 0 || lo >= hi || hi > pool.steps())
    throw ShapeError("sample_segment: bad range [" + std::to_string(lo) + "," +
                     std::to_string(hi) + "] for M = " + std::to_string(pool.steps()));
  SegmentView v;
  v.traj = size_t(rng.uniform_index(pool.trajectories.size()));
  v.lo = lo;
  v.hi = hi;
  return v;
}

void save_trajectory(const std::string& path, const TeacherTrajectory& traj) {
  traj.validate();
  Index P = traj.checkpoints.front().total_size();
  Index rows = Index(traj.checkpoints.size());
  std::vector<double> flat;
  flat.reserve(size_t(rows * P));
  for (const ParamSet& p : traj.checkpoints) {
    Tensor f = p.flatten();
    flat.insert(flat.end(), f.storage().begin(), f.storage().end());
  }
  nlohmann::json manifest;
  manifest["arch"] = arch_to_json(traj.arch);
  manifest["seed"] = traj.seed;
  manifest["stride"] = traj.stride;
  manifest["steps"] = traj.steps();
  manifest["train_losses"] = traj.train_losses;
  manifest["final_test_accuracy"] = traj.final_test_accuracy;
  manifest["train"] = {{"lr", traj.replay_cfg.lr},
                       {"momentum", traj.replay_cfg.momentum},
                       {"batch", traj.replay_cfg.batch},
                       {"iters", traj.replay_cfg.iters}};
  save_store(path, StoreKind::Trajectory, Tensor::wrap({rows, P}, std::move(flat)), manifest);
}

TeacherTrajectory load_trajectory(const std::string& path) {
  StoreData store = load_store(path, StoreKind::Trajectory);
  nlohmann::json manifest = load_manifest(path);

  TeacherTrajectory traj;
  try {
    traj.arch = arch_from_json(manifest.at("arch"));
    traj.seed = manifest.at("seed").get<uint64_t>();
    traj.stride = manifest.at("stride").get<Index>();
    traj.train_losses = manifest.at("train_losses").get<std::vector<double>>();
    traj.final_test_accuracy = manifest.value("final_test_accuracy", 0.0);
    const auto& tr = manifest.at("train");
    traj.replay_cfg.lr = tr.at("lr").get<double>();
    traj.replay_cfg.momentum = tr.at("momentum").get<double>();
    traj.replay_cfg.batch = tr.at("batch").get<Index>();
    traj.replay_cfg.iters = tr.at("iters").get<Index>();
    traj.replay_cfg.seed = traj.seed;
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(path + ".json: " + e.what());
  }

  ParamSet layout = init_params(traj.arch, InitSpec{0});
  if (store.payload.rank() != 2 || store.payload.dim(1) != layout.total_size())
    throw StoreError(path + ": payload shape " + shape_str(store.payload.shape()) +
                     " does not fit " + traj.arch.describe());
  Index rows = store.payload.dim(0);
  Index P = store.payload.dim(1);
  Index expected = manifest.at("steps").get<Index>() + 1;
  if (rows != expected)
    throw StoreError(path + ": " + std::to_string(rows) + " checkpoints, manifest says " +
                     std::to_string(expected));
  for (Index r = 0; r < rows; ++r) {
    std::vector<double> row(store.payload.data() + r * P, store.payload.data() + (r + 1) * P);
    traj.checkpoints.push_back(layout.unflatten(Tensor::wrap({P}, std::move(row))));
  }
  traj.validate();
  return traj;
}

}  // namespace sqd
