#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "physattn/darcy.hpp"
#include "physattn/dataset.hpp"
#include "physattn/error.hpp"

using namespace physattn;

namespace {

double max_restricted_diff(const Tensor& coarse, const Tensor& fine) {
  const std::size_t rc = coarse.rows(), stride = (fine.rows() - 1) / (rc - 1);
  double worst = 0.0;
  for (std::size_t r = 0; r < rc; ++r)
    for (std::size_t c = 0; c < rc; ++c) worst = std::max(worst, std::abs(coarse(r, c) - fine(r * stride, c * stride)));
  return worst;
}

Tensor smooth_permeability(std::size_t res) {
  Tensor a({res, res});
  for (std::size_t r = 0; r < res; ++r)
    for (std::size_t c = 0; c < res; ++c) {
      const double x = static_cast<double>(c) / (res - 1), y = static_cast<double>(r) / (res - 1);
      a(r, c) = 1.0 + 0.5 * std::sin(M_PI * x) * std::cos(M_PI * y);
    }
  return a;
}

}  // namespace

TEST_CASE("permeability generator") {
  const Tensor a = generate_permeability(7, 32);
  CHECK(a == generate_permeability(7, 32));
  CHECK_FALSE(a == generate_permeability(8, 32));
  std::set<double> values(a.data().begin(), a.data().end());
  CHECK(values == std::set<double>{3.0, 12.0});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor b = generate_permeability(seed, 32);
    double hi = 0.0;
    for (double v : b.data()) hi += v == 12.0;
    const double fraction = hi / b.size();
    CHECK(fraction >= 0.45);
    CHECK(fraction <= 0.55);
  }
  CHECK_THROWS_AS(generate_permeability(0, 7), ConfigError);
}

TEST_CASE("solver examples") {
  const DarcySolution one = solve_darcy(Tensor({3, 3}, 1.0), 1.0);
  CHECK(std::abs(one.pressure(1, 1) - 0.0625) < 1e-12);
  CHECK(one.pressure(0, 0) == 0.0);

  const DarcySolution none = solve_darcy(generate_permeability(3, 16), 0.0);
  CHECK(none.pressure == Tensor({16, 16}));

  // Left-right mirror symmetric medium.
  Tensor a = generate_permeability(4, 24);
  for (std::size_t r = 0; r < 24; ++r)
    for (std::size_t c = 0; c < 12; ++c) a(r, 23 - c) = a(r, c);
  const Tensor p = solve_darcy(a).pressure;
  double asym = 0.0;
  for (std::size_t r = 0; r < 24; ++r)
    for (std::size_t c = 0; c < 24; ++c) asym = std::max(asym, std::abs(p(r, c) - p(r, 23 - c)));
  CHECK(asym < 1e-9);

  CHECK_THROWS_AS(solve_darcy(Tensor({3, 4}, 1.0)), ShapeError);
  CHECK_THROWS_AS(solve_darcy(Tensor({2, 2}, 1.0)), ShapeError);
  Tensor negative({5, 5}, 1.0);
  negative(2, 2) = -1.0;
  CHECK_THROWS_AS(solve_darcy(negative), DataError);
}

TEST_CASE("solver residual on generated media") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor a = generate_permeability(seed, 32);
    const DarcySolution s = solve_darcy(a);
    CHECK(s.relative_residual <= 1e-10);
    CHECK(darcy_residual(a, s.pressure) <= 1e-10);
    for (double v : s.pressure.data()) CHECK(v >= 0.0);
  }
}

TEST_CASE("refinement consistency on a smooth medium") {
  const Tensor coarse = solve_darcy(smooth_permeability(9)).pressure;
  const Tensor fine = solve_darcy(smooth_permeability(17)).pressure;
  const Tensor finest = solve_darcy(smooth_permeability(33)).pressure;
  const double coarse_vs_fine = max_restricted_diff(coarse, fine);
  const double fine_vs_finest = max_restricted_diff(fine, finest);
  INFO(coarse_vs_fine << " vs " << fine_vs_finest);
  CHECK(coarse_vs_fine > 0.0);
  CHECK(coarse_vs_fine <= 4.0 * fine_vs_finest * 1.05);
  CHECK(coarse_vs_fine >= 2.0 * fine_vs_finest);
}

TEST_CASE("darcy sample layout") {
  const MeshSample s = make_darcy_sample(5, 10);
  REQUIRE(s.grid);
  CHECK(*s.grid == GridShape{10, 10});
  CHECK(s.points() == 100);
  CHECK(s.coords(13, 0) == doctest::Approx(3.0 / 9.0));
  CHECK(s.coords(13, 1) == doctest::Approx(1.0 / 9.0));
  CHECK(s.observed->reshaped({10, 10}) == generate_permeability(5, 10));
  CHECK(s.target.reshaped({10, 10}) == solve_darcy(generate_permeability(5, 10)).pressure);
  for (double v : s.coords.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("resample_mesh examples") {
  const MeshSample s = make_darcy_sample(1, 32);
  const MeshSample all = resample_mesh(s, 1.0, 3);
  CHECK(all.coords == s.coords);
  CHECK(all.target == s.target);
  CHECK_FALSE(all.grid);

  const MeshSample half = resample_mesh(s, 0.5, 3);
  CHECK(half.points() == 512);
  CHECK(half.observed->rows() == 512);
  CHECK(half.coords == resample_mesh(s, 0.5, 3).coords);
  CHECK_FALSE(half.coords == resample_mesh(s, 0.5, 4).coords);

  // Rows stay consistent: each kept point carries its original fields.
  for (std::size_t i = 0; i < half.points(); ++i) {
    const std::size_t col = std::lround(half.coords(i, 0) * 31), row = std::lround(half.coords(i, 1) * 31);
    CHECK(half.target(i, 0) == s.target(row * 32 + col, 0));
    CHECK(half.observed->operator()(i, 0) == s.observed->operator()(row * 32 + col, 0));
  }
  CHECK_THROWS_AS(resample_mesh(s, 0.003, 1), DataError);
  CHECK_THROWS_AS(resample_mesh(s, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(resample_mesh(s, 1.5, 1), ConfigError);
}

TEST_CASE("channel statistics round trip") {
  const MeshSample a = make_darcy_sample(1, 12), b = make_darcy_sample(2, 12);
  const ChannelStats stats = ChannelStats::fit({&a.target, &b.target});
  const Tensor z = stats.standardize(a.target);
  const Tensor back = stats.destandardize(z);
  CHECK(max_abs_diff(back, a.target) <= 1e-12);

  const ChannelStats flat = ChannelStats::fit({&a.coords});
  CHECK(flat.std.size() == 2);
  Tensor constant({4, 1}, 3.0);
  const ChannelStats c = ChannelStats::fit({&constant});
  CHECK(c.std[0] == 1.0);
  CHECK(c.standardize(constant) == Tensor({4, 1}));
}

TEST_CASE("build_dataset splits and statistics") {
  const DatasetSplit split = build_dataset(Task::darcy, 6, 3, 10, 100);
  CHECK(split.train.size() == 6);
  CHECK(split.test.size() == 3);
  CHECK(split.train.samples[2].target == make_darcy_sample(102, 10).target);
  CHECK(split.test.samples[0].target == make_darcy_sample(106, 10).target);
  CHECK(split.test.normalizer == split.train.normalizer);

  double mean = 0.0, sq = 0.0, n = 0.0;
  for (const MeshSample& s : split.train.samples) {
    const Tensor z = split.train.normalizer.target.standardize(s.target);
    for (double v : z.data()) {
      mean += v;
      sq += v * v;
      n += 1;
    }
  }
  CHECK(std::abs(mean / n) < 1e-12);
  CHECK(std::abs(sq / n - 1.0) < 1e-9);

  const MeshSample std0 = split.train.normalizer.standardize(split.train.samples[0]);
  CHECK(max_abs_diff(split.train.normalizer.target.destandardize(std0.target), split.train.samples[0].target) <= 1e-12);

  CHECK_THROWS_AS(build_dataset(Task::darcy, 0, 3, 10, 0), ConfigError);
  CHECK_THROWS_AS(build_dataset(Task::darcy, 2, 2, 10, ~std::uint64_t{0} - 1), ConfigError);
  CHECK(parse_task("darcy") == Task::darcy);
  CHECK_THROWS_AS(parse_task("navier"), ConfigError);
}

TEST_CASE("dataset generation does not depend on the thread count") {
  ::setenv("PHYSATTN_THREADS", "1", 1);
  const DatasetSplit one = build_dataset(Task::darcy, 5, 2, 12, 7);
  ::setenv("PHYSATTN_THREADS", "3", 1);
  const DatasetSplit three = build_dataset(Task::darcy, 5, 2, 12, 7);
  ::unsetenv("PHYSATTN_THREADS");
  std::stringstream a, b;
  write_dataset(a, one.train);
  write_dataset(b, three.train);
  CHECK(a.str() == b.str());
}

TEST_CASE("dataset file round trip") {
  const DatasetSplit split = build_dataset(Task::darcy, 3, 1, 9, 0);
  std::stringstream ss;
  write_dataset(ss, split.train);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "PDED");
  const Dataset back = read_dataset(ss);
  CHECK(back.normalizer == split.train.normalizer);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.samples[i].coords == split.train.samples[i].coords);
    CHECK(*back.samples[i].observed == *split.train.samples[i].observed);
    CHECK(back.samples[i].target == split.train.samples[i].target);
    CHECK(back.samples[i].grid == split.train.samples[i].grid);
  }
  std::stringstream again;
  write_dataset(again, back);
  CHECK(again.str() == bytes);

  Dataset loose = split.train;
  for (MeshSample& s : loose.samples) s = resample_mesh(s, 0.5, 1);
  std::stringstream ls;
  write_dataset(ls, loose);
  const Dataset loose_back = read_dataset(ls);
  CHECK_FALSE(loose_back.samples[0].grid);
  CHECK(loose_back.samples[1].coords == loose.samples[1].coords);

  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_dataset(cut), DataError);
  std::stringstream junk("PDEDxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx");
  CHECK_THROWS_AS(read_dataset(junk), DataError);
  CHECK_THROWS_AS(write_dataset(ss, Dataset{}), DataError);
}
