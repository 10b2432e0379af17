#include <doctest.h>

#include <set>
#include <vector>

#include "sqd/teacher.hpp"

#include "helpers.hpp"

using namespace sqd;

namespace {

Architecture small_arch() {
  Architecture a;
  a.kind = ArchKind::Mlp;
  a.input_shape = {6};
  a.hidden = {8};
  a.classes = 3;
  return a;
}

TrainConfig teach_cfg(uint64_t seed) {
  TrainConfig tc;
  tc.lr = 0.05;
  tc.batch = 16;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_SUITE("teacher") {

TEST_CASE("trajectory records M+1 checkpoints starting at the init") {
  DatasetSplit data = gen_blobs(3, 6, 30, 0.3, 300);
  Architecture arch = small_arch();
  TeacherTrajectory traj = train_teacher(data, arch, teach_cfg(9), 5, 2);

  CHECK(traj.steps() == 5);
  REQUIRE(traj.checkpoints.size() == 6);
  CHECK(traj.train_losses.size() == 6);
  CHECK(traj.stride == 2);
  CHECK(traj.checkpoints[0].equals(init_params(arch, InitSpec{9})));
  CHECK(traj.final_test_accuracy >= 0.0);
  CHECK(traj.final_test_accuracy <= 1.0);
  for (double l : traj.train_losses) CHECK(l >= 0.0);
  CHECK_NOTHROW(traj.validate());
}

TEST_CASE("each checkpoint replays bitwise from the init") {
  DatasetSplit data = gen_blobs(3, 6, 30, 0.3, 301);
  Architecture arch = small_arch();
  Index M = 4, stride = 3;
  TrainConfig cfg = teach_cfg(21);
  TeacherTrajectory traj = train_teacher(data, arch, cfg, M, stride);

  ParamSet theta0 = init_params(arch, InitSpec{21});
  for (Index i = 0; i <= M; ++i) {
    TrainConfig run = cfg;
    run.iters = i * stride;
    ParamSet replay = alg(data.train, arch, theta0, run).params;
    CHECK(traj.checkpoints[size_t(i)].equals(replay));
  }
}

TEST_CASE("budget below the checkpoint plan is rejected") {
  DatasetSplit data = gen_blobs(3, 6, 20, 0.3, 302);
  TrainConfig cfg = teach_cfg(1);
  cfg.iters = 5;
  CHECK_THROWS_AS(train_teacher(data, small_arch(), cfg, 4, 2), ConfigError);
  CHECK_THROWS_AS(train_teacher(data, small_arch(), teach_cfg(1), 0, 1), ConfigError);
  CHECK_THROWS_AS(train_teacher(data, small_arch(), teach_cfg(1), 3, 0), ConfigError);
}

TEST_CASE("teacher gradient is the mean batch gradient at the checkpoint") {
  DatasetSplit data = gen_blobs(3, 6, 30, 0.3, 303);
  Architecture arch = small_arch();
  TeacherTrajectory traj = train_teacher(data, arch, teach_cfg(2), 3, 1);

  BatchSpec spec{8, 555, 7};
  ParamSet g = teacher_gradient(traj, 1, data.train, spec);
  LabeledDataset batch = data.train.subset(batch_rows(data.train.count(), 8, 555, 7));
  ParamSet want = loss_gradient(arch, traj.checkpoints[1], batch, Reduction::Mean);
  CHECK(g.equals(want));

  // Full-data gradient when size is zero.
  ParamSet gf = teacher_gradient(traj, 0, data.train, BatchSpec{0, 1, 0});
  CHECK(gf.equals(loss_gradient(arch, traj.checkpoints[0], data.train, Reduction::Mean)));

  CHECK_THROWS_AS(teacher_gradient(traj, 3, data.train, spec), ShapeError);
  CHECK_THROWS_AS(teacher_gradient(traj, -1, data.train, spec), ShapeError);
}

TEST_CASE("trajectory store round-trips bitwise") {
  std::string dir = test::scratch_dir("teacher-store");
  DatasetSplit data = gen_blobs(3, 6, 25, 0.3, 304);
  TeacherTrajectory traj = train_teacher(data, small_arch(), teach_cfg(5), 3, 2);

  save_trajectory(dir + "/t.sqds", traj);
  TeacherTrajectory back = load_trajectory(dir + "/t.sqds");
  CHECK(back.seed == traj.seed);
  CHECK(back.stride == traj.stride);
  CHECK(back.steps() == traj.steps());
  CHECK(back.final_test_accuracy == traj.final_test_accuracy);
  CHECK(back.train_losses == traj.train_losses);
  CHECK(back.replay_cfg.lr == traj.replay_cfg.lr);
  CHECK(back.replay_cfg.batch == traj.replay_cfg.batch);
  CHECK(back.replay_cfg.seed == traj.replay_cfg.seed);
  for (size_t i = 0; i < traj.checkpoints.size(); ++i)
    CHECK(back.checkpoints[i].equals(traj.checkpoints[i]));
  CHECK(back.arch.describe() == traj.arch.describe());
}

TEST_CASE("pool validation wants matching shapes") {
  DatasetSplit data = gen_blobs(3, 6, 25, 0.3, 305);
  TrajectoryPool pool;
  CHECK_THROWS(pool.validate());

  pool.trajectories.push_back(train_teacher(data, small_arch(), teach_cfg(1), 3, 1));
  pool.trajectories.push_back(train_teacher(data, small_arch(), teach_cfg(2), 3, 1));
  CHECK_NOTHROW(pool.validate());
  CHECK(pool.steps() == 3);

  pool.trajectories.push_back(train_teacher(data, small_arch(), teach_cfg(3), 2, 1));
  CHECK_THROWS(pool.validate());
}

TEST_CASE("segment sampling covers the pool and keeps bounds") {
  DatasetSplit data = gen_blobs(3, 6, 25, 0.3, 306);
  TrajectoryPool pool;
  for (uint64_t s = 0; s < 3; ++s)
    pool.trajectories.push_back(train_teacher(data, small_arch(), teach_cfg(s), 3, 1));

  CounterRng rng(42, "seg");
  std::set<size_t> seen;
  for (int i = 0; i < 60; ++i) {
    SegmentView v = sample_segment(pool, 1, 3, rng);
    CHECK(v.lo == 1);
    CHECK(v.hi == 3);
    CHECK(v.traj < 3);
    seen.insert(v.traj);
  }
  CHECK(seen.size() == 3);
}

}  // TEST_SUITE
