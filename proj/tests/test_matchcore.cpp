#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "sqd/matchcore.hpp"
#include "sqd/store.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

using namespace sqd;
using test::random_tensor;

namespace {

Architecture mlp463() {
  Architecture a;
  a.kind = ArchKind::Mlp;
  a.input_shape = {4};
  a.hidden = {6};
  a.classes = 3;
  return a;
}

// Column-wise cosine distance of two parameter sets laid out like the
// matcher sees them, using only the naive reference pieces.
double naive_matching_value(const ParamSet& grads, const ParamSet& targets) {
  double total = 0.0;
  for (size_t i = 0; i < grads.count(); ++i) {
    const Tensor& g = grads.tensor(i);
    const Tensor& t = targets.tensor(i);
    if (g.rank() == 2) {
      total += test::naive_cosine_distance(g.rows(), g.cols(), g.data(), t.data());
    } else {
      total += test::naive_cosine_distance(g.size(), 1, g.data(), t.data());
    }
  }
  return total;
}

}  // namespace

TEST_SUITE("matchcore") {

TEST_CASE("init_synthetic samples class-major real rows without replacement") {
  DatasetSplit data = gen_blobs(3, 5, 20, 0.4, 400);
  SyntheticDataset S = init_synthetic(data.train, 4, 77);

  CHECK(S.count() == 12);
  CHECK(S.classes == 3);
  CHECK(S.ipc == 4);
  CHECK(S.K == 1);
  CHECK_NOTHROW(S.validate());
  for (Index i = 0; i < 12; ++i) {
    CHECK(S.labels[size_t(i)] == int32_t(i / 4));  // class-major blocks
    CHECK(S.subset_of[size_t(i)] == 0);
    CHECK_FALSE(S.frozen[size_t(i)]);
  }

  // Every synthetic row is bitwise one of the train rows of its class, and
  // no row is used twice within a class.
  Index d = 5;
  for (int32_t c = 0; c < 3; ++c) {
    std::set<Index> used;
    for (Index i = c * 4; i < (c + 1) * 4; ++i) {
      bool found = false;
      for (Index r : data.train.rows_of_class(c)) {
        bool same = true;
        for (Index j = 0; j < d; ++j)
          if (S.instances.at(i * d + j) != data.train.X.at(r * d + j)) {
            same = false;
            break;
          }
        if (same && !used.count(r)) {
          used.insert(r);
          found = true;
          break;
        }
      }
      CHECK(found);
    }
  }

  CHECK(S.instances.equals(init_synthetic(data.train, 4, 77).instances));
  CHECK_FALSE(S.instances.equals(init_synthetic(data.train, 4, 78).instances));
  CHECK_THROWS_AS(init_synthetic(data.train, 100, 1), ConfigError);
}

TEST_CASE("cosine distance is zero on identical matrices") {
  // Column norms of order one keep the 1e-12 denominator guard invisible.
  Tensor X = random_tensor({8, 5}, 401, -2.0, 2.0);
  CHECK(std::abs(cosine_distance(X, X)) <= 1e-12);
}

TEST_CASE("cosine distance is nonnegative and bounded by two per column") {
  for (uint64_t s = 0; s < 50; ++s) {
    Tensor X = random_tensor({4, 3}, 500 + s, -2.0, 2.0);
    Tensor Y = random_tensor({4, 3}, 600 + s, -2.0, 2.0);
    double d = cosine_distance(X, Y);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0 * 3 + 1e-9);
  }
  Tensor X = random_tensor({5, 2}, 402);
  CHECK(cosine_distance(X, scale(X, -1.0)) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("cosine distance ignores positive column scaling") {
  Tensor X = random_tensor({6, 4}, 403);
  Tensor Y = random_tensor({6, 4}, 404);
  double base = cosine_distance(X, Y);
  CHECK(std::abs(cosine_distance(scale(X, 3.7), Y) - base) <= 1e-12);
  // The 1e-12 norm guard sits outside the scale product, so shrinking a
  // column's norm by 50x lets the guard shift the quotient at ~5e-11.
  CHECK(std::abs(cosine_distance(X, scale(Y, 0.02)) - base) <= 1e-9);
  CHECK(std::abs(cosine_distance(scale(X, 250.0), scale(Y, 1e-3)) - base) <= 1e-9);
}

TEST_CASE("cosine distance agrees with the direct formula") {
  double worst = 0.0;
  for (uint64_t s = 0; s < 200; ++s) {
    Index rows = 2 + Index(s % 7), cols = 1 + Index(s % 5);
    Tensor X = random_tensor({rows, cols}, 700 + s, -3.0, 3.0);
    Tensor Y = random_tensor({rows, cols}, 900 + s, -3.0, 3.0);
    double got = cosine_distance(X, Y);
    double want = test::naive_cosine_distance(rows, cols, X.data(), Y.data());
    worst = std::max(worst, std::abs(got - want));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("cosine distance recorded form matches values and finite differences") {
  Tensor X = random_tensor({5, 3}, 405);
  Tensor Y = random_tensor({5, 3}, 406);
  Var d = cosine_distance(Var::leaf(X), Var::constant(Y));
  CHECK(d.value().scalar_value() == doctest::Approx(cosine_distance(X, Y)).epsilon(1e-13));

  double err = grad_check_many(
      [&](const std::vector<Var>& in) {
        return cosine_distance(in[0], in[1]);
      },
      {X, Y});
  CHECK(err < 5e-6);
}

TEST_CASE("grad_matrix lays every rank out for column matching") {
  Tensor m = random_tensor({4, 3}, 407);
  CHECK(grad_matrix(m).equals(m));

  Tensor v = random_tensor({5}, 408);
  Tensor vm = grad_matrix(v);
  REQUIRE(vm.shape() == Shape{5, 1});
  for (Index i = 0; i < 5; ++i) CHECK(vm.at(i) == v.at(i));

  Index oc = 3, ic = 2;
  Tensor k = random_tensor({oc, ic, 3, 3}, 409);
  Tensor km = grad_matrix(k);
  REQUIRE(km.shape() == Shape{ic * 9, oc});
  for (Index o = 0; o < oc; ++o)
    for (Index r = 0; r < ic * 9; ++r) CHECK(km.at(r * oc + o) == k.at(o * ic * 9 + r));
}

TEST_CASE("matching loss vanishes when the target is the own gradient") {
  DatasetSplit data = gen_blobs(3, 4, 10, 0.4, 410);
  Architecture arch = mlp463();
  ParamSet theta = init_params(arch, InitSpec{3});
  SyntheticDataset S = init_synthetic(data.train, 2, 5);

  ParamSet own = loss_gradient(arch, theta, S.as_dataset(), Reduction::Sum);
  Var L = matching_loss(arch, Var::constant(S.instances), S.labels, theta, own);
  // Only the 1e-12 norm guard keeps this off exact zero.
  CHECK(std::abs(L.value().scalar_value()) <= 1e-8);
}

TEST_CASE("matching loss equals an independent two-pass computation") {
  Index n = 3, d = 4, h = 6, C = 3;
  Architecture arch = mlp463();
  ParamSet theta = init_params(arch, InitSpec{8});

  Tensor X = random_tensor({n, d}, 411);
  std::vector<int32_t> y = {0, 1, 2};
  Tensor Xt = random_tensor({5, d}, 412);
  std::vector<int32_t> yt = {2, 1, 0, 1, 2};

  // Synthetic side: sum-reduced gradients; target side: mean over a real batch.
  test::NaiveMlpResult gs = test::naive_mlp_ce(n, d, h, C, X.data(), y.data(),
                                               theta.tensor(0).data(), theta.tensor(1).data(),
                                               theta.tensor(2).data(), theta.tensor(3).data(),
                                               true);
  test::NaiveMlpResult gt = test::naive_mlp_ce(5, d, h, C, Xt.data(), yt.data(),
                                               theta.tensor(0).data(), theta.tensor(1).data(),
                                               theta.tensor(2).data(), theta.tensor(3).data(),
                                               false);
  ParamSet synth = theta.with_values({Tensor::wrap({d, h}, gs.w1), Tensor::wrap({h}, gs.b1),
                                      Tensor::wrap({h, C}, gs.w2), Tensor::wrap({C}, gs.b2)});
  ParamSet target = theta.with_values({Tensor::wrap({d, h}, gt.w1), Tensor::wrap({h}, gt.b1),
                                       Tensor::wrap({h, C}, gt.w2), Tensor::wrap({C}, gt.b2)});

  double want = naive_matching_value(synth, target);
  Var L = matching_loss(arch, Var::constant(X), y, theta, target);
  CHECK(std::abs(L.value().scalar_value() - want) <= 1e-10);
}

TEST_CASE("synthetic gradient matches finite differences of the matching loss") {
  DatasetSplit data = gen_blobs(3, 4, 10, 0.4, 413);
  Architecture arch = mlp463();
  ParamSet theta = init_params(arch, InitSpec{12});
  SyntheticDataset S = init_synthetic(data.train, 2, 9);
  ParamSet target = loss_gradient(arch, theta, data.train, Reduction::Mean);

  std::vector<bool> frozen(size_t(S.count()), false);
  Tensor g = synthetic_grad(arch, S.instances, S.labels, frozen, theta, target);
  REQUIRE(g.shape() == S.instances.shape());

  std::vector<double> v = S.instances.storage();
  double eps = 1e-5;
  for (size_t i = 0; i < v.size(); ++i) {
    double keep = v[i];
    v[i] = keep + eps;
    double fp = matching_loss(arch, Var::constant(Tensor::wrap(S.instances.shape(), v)),
                              S.labels, theta, target)
                    .value()
                    .scalar_value();
    v[i] = keep - eps;
    double fm = matching_loss(arch, Var::constant(Tensor::wrap(S.instances.shape(), v)),
                              S.labels, theta, target)
                    .value()
                    .scalar_value();
    v[i] = keep;
    CHECK(test::rel_err(g.at(Index(i)), (fp - fm) / (2 * eps)) < 1e-6);
  }
}

TEST_CASE("frozen rows get exact zero gradients, others are untouched") {
  DatasetSplit data = gen_blobs(3, 4, 10, 0.4, 414);
  Architecture arch = mlp463();
  ParamSet theta = init_params(arch, InitSpec{13});
  SyntheticDataset S = init_synthetic(data.train, 2, 10);
  ParamSet target = loss_gradient(arch, theta, data.train, Reduction::Mean);

  std::vector<bool> open(size_t(S.count()), false);
  std::vector<bool> half = open;
  half[0] = half[2] = half[5] = true;
  Tensor g_open = synthetic_grad(arch, S.instances, S.labels, open, theta, target);
  Tensor g_half = synthetic_grad(arch, S.instances, S.labels, half, theta, target);

  Index dsz = S.instances.size() / S.count();
  for (Index r = 0; r < S.count(); ++r)
    for (Index j = 0; j < dsz; ++j) {
      double got = g_half.at(r * dsz + j);
      if (half[size_t(r)]) {
        CHECK(got == 0.0);
      } else {
        CHECK(got == g_open.at(r * dsz + j));
      }
    }
}

TEST_CASE("pixel step with zero learning rate is a no-op") {
  DatasetSplit data = gen_blobs(3, 4, 12, 0.4, 415);
  Architecture arch = mlp463();
  SyntheticDataset S = init_synthetic(data.train, 2, 11);
  Tensor before = S.instances;

  BackboneConfig cfg;
  cfg.mode = MatchMode::StudentPath;
  cfg.pixel_lr = 0.0;
  cfg.target_batch = 8;
  MatchState state;
  state.theta = init_params(arch, InitSpec{14});
  state.stream_seed = 99;

  std::vector<Index> rows = S.rows_in_subset(0);
  TrajectoryPool empty_pool;
  double loss = backbone_step(arch, S, rows, rows, state, empty_pool, data.train, 0, cfg);
  CHECK(S.instances.equals(before));
  CHECK(std::isfinite(loss));
  CHECK(state.iteration == 1);
}

TEST_CASE("a gradient-matched set does not move") {
  // Synthetic set = the whole train split, target = full-data mean gradient:
  // sum and mean gradients are parallel, so the matching loss sits at its
  // minimum and the pixel gradient vanishes.
  DatasetSplit data = gen_blobs(3, 4, 10, 0.3, 416);
  Architecture arch = mlp463();
  Index per_class_train = Index(data.train.rows_of_class(0).size());
  SyntheticDataset S = init_synthetic(data.train, per_class_train, 1);

  TrainConfig tc;
  tc.lr = 0.05;
  tc.batch = 0;
  tc.seed = 4;
  TrajectoryPool pool;
  pool.trajectories.push_back(train_teacher(data, arch, tc, 2, 1));

  BackboneConfig cfg;
  cfg.mode = MatchMode::TeacherPath;
  cfg.pixel_lr = 0.1;
  cfg.target_batch = 0;  // full train
  MatchState state;
  state.stream_seed = 7;

  Tensor before = S.instances;
  std::vector<Index> rows = S.rows_in_subset(0);
  double loss = backbone_step(arch, S, rows, rows, state, pool, data.train, 1, cfg);
  CHECK(std::abs(loss) <= 1e-8);
  for (Index i = 0; i < S.instances.size(); ++i)
    CHECK(std::abs(S.instances.at(i) - before.at(i)) <= 1e-8);
}

TEST_CASE("teacher-path step pins theta to the checkpoint and follows momentum") {
  DatasetSplit data = gen_blobs(3, 4, 10, 0.4, 417);
  Architecture arch = mlp463();
  SyntheticDataset S = init_synthetic(data.train, 2, 12);

  TrainConfig tc;
  tc.lr = 0.05;
  tc.batch = 8;
  tc.seed = 21;
  TrajectoryPool pool;
  pool.trajectories.push_back(train_teacher(data, arch, tc, 3, 1));

  BackboneConfig cfg;
  cfg.mode = MatchMode::TeacherPath;
  cfg.pixel_lr = 0.2;
  cfg.pixel_momentum = 0.5;
  cfg.target_batch = 8;
  MatchState state;
  state.stream_seed = 31;

  std::vector<Index> rows = S.rows_in_subset(0);
  SyntheticDataset manual = S;

  // Manual replay of two steps: velocity v <- mu v + g, pixels -= lr v.
  auto grad_at = [&](const SyntheticDataset& cur, Index m, Index iter) {
    const TeacherTrajectory& tr = pool.trajectories[0];
    ParamSet tgt = teacher_gradient(
        tr, m, data.train, BatchSpec{8, seed_derive(31, "target"), uint64_t(iter)});
    std::vector<bool> open(size_t(cur.count()), false);
    return synthetic_grad(arch, cur.instances, cur.labels, open, tr.checkpoints[size_t(m)],
                          tgt);
  };

  Tensor g1 = grad_at(manual, 1, 0);
  backbone_step(arch, S, rows, rows, state, pool, data.train, 1, cfg);
  CHECK(state.theta.equals(pool.trajectories[0].checkpoints[1]));
  Tensor after1 = sub(manual.instances, scale(g1, 0.2));
  CHECK(S.instances.equals(after1));

  manual.instances = after1;
  Tensor g2 = grad_at(manual, 2, 1);
  Tensor v2 = add(scale(g1, 0.5), g2);
  backbone_step(arch, S, rows, rows, state, pool, data.train, 2, cfg);
  Tensor after2 = sub(manual.instances, scale(v2, 0.2));
  CHECK(S.instances.equals(after2));
  CHECK(state.iteration == 2);
}

TEST_CASE("frozen update rows are refused") {
  DatasetSplit data = gen_blobs(3, 4, 10, 0.4, 418);
  SyntheticDataset S = init_synthetic(data.train, 2, 13);
  S.frozen[1] = true;
  BackboneConfig cfg;
  MatchState state;
  state.theta = init_params(mlp463(), InitSpec{1});
  TrajectoryPool pool;
  std::vector<Index> rows = S.rows_in_subset(0);
  CHECK_THROWS_AS(
      backbone_step(mlp463(), S, rows, rows, state, pool, data.train, 0, cfg), ShapeError);
}

TEST_CASE("synthetic store round-trips every field") {
  std::string dir = test::scratch_dir("synth-store");
  DatasetSplit data = gen_blobs(3, 4, 10, 0.4, 419);
  SyntheticDataset S = init_synthetic(data.train, 4, 14);
  S.K = 2;
  for (Index i = 0; i < S.count(); ++i) S.subset_of[size_t(i)] = (i / 2) % 2;
  S.frozen[3] = true;

  save_synthetic(dir + "/s.sqds", S, {{"note", "fixture"}});
  SyntheticDataset back = load_synthetic(dir + "/s.sqds");
  CHECK(back.instances.equals(S.instances));
  CHECK(back.labels == S.labels);
  CHECK(back.classes == S.classes);
  CHECK(back.ipc == S.ipc);
  CHECK(back.K == S.K);
  CHECK(back.subset_of == S.subset_of);
  CHECK(back.frozen == S.frozen);
  CHECK(load_manifest(dir + "/s.sqds").at("note") == "fixture");
}

TEST_CASE("subset views pick the tagged rows in order") {
  DatasetSplit data = gen_blobs(2, 4, 10, 0.4, 420);
  SyntheticDataset S = init_synthetic(data.train, 3, 15);
  S.K = 2;
  S.subset_of = {0, 1, 0, 1, 0, 1};

  CHECK(S.rows_in_subset(0) == std::vector<Index>{0, 2, 4});
  CHECK(S.rows_in_subset(1) == std::vector<Index>{1, 3, 5});
  CHECK(S.rows_in_subsets_upto(0) == std::vector<Index>{0, 2, 4});
  CHECK(S.rows_in_subsets_upto(1) == std::vector<Index>{0, 1, 2, 3, 4, 5});

  LabeledDataset v = S.view({1, 3});
  CHECK(v.count() == 2);
  CHECK(v.y[0] == S.labels[1]);
  Index dsz = 4;
  for (Index j = 0; j < dsz; ++j) CHECK(v.X.at(j) == S.instances.at(1 * dsz + j));

  SyntheticDataset bad = S;
  bad.subset_of[0] = 5;  // outside [0, K)
  CHECK_THROWS(bad.validate());
}

}  // TEST_SUITE
