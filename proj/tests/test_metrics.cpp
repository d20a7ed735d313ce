#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "physattn/error.hpp"
#include "physattn/metrics.hpp"
#include "physattn/training.hpp"

using namespace physattn;

namespace {

SurfacePatchSet aligned(double pressure, double speed, double area) {
  SurfacePatchSet s;
  s.inflow_direction = {1.0, 0.0};
  s.inflow_speed = speed;
  s.reference_area = area;
  s.patches.push_back({pressure, {1.0, 0.0}, 0.25 * area});
  s.patches.push_back({pressure, {1.0, 0.0}, 0.75 * area});
  return s;
}

}  // namespace

TEST_CASE("relative_l2 examples") {
  const Tensor t = Tensor::from_rows({{3, 4}});
  CHECK(relative_l2(t, t) == 0.0);
  CHECK(std::abs(relative_l2(Tensor({1, 2}), t) - 1.0) < 1e-12);
  const Tensor p = Tensor::from_rows({{1, 1}}), q = Tensor::from_rows({{1, 2}});
  CHECK(std::abs(relative_l2(p, q) - 1.0 / std::sqrt(5.0)) < 1e-12);
  const Tensor p2 = Tensor::from_rows({{7, 7}}), q2 = Tensor::from_rows({{7, 14}});
  CHECK(std::abs(relative_l2(p2, q2) - relative_l2(p, q)) < 1e-12);
}

TEST_CASE("spearman_rho examples") {
  const std::vector<double> a{1, 2, 3, 4}, rev{4, 3, 2, 1};
  CHECK(std::abs(spearman_rho(a, a) - 1.0) < 1e-12);
  CHECK(std::abs(spearman_rho(a, rev) + 1.0) < 1e-12);
  CHECK(std::abs(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}) - 0.5) < 1e-12);

  const std::vector<double> x{0.3, -1.2, 5.0, 2.2, 0.9}, y{1.0, 0.1, 2.0, 0.5, 3.0};
  std::vector<double> ex, cube;
  for (double v : x) ex.push_back(std::exp(v));
  for (double v : y) cube.push_back(v * v * v + 4);
  CHECK(std::abs(spearman_rho(ex, cube) - spearman_rho(x, y)) < 1e-12);

  // Ties share the average rank: (1, 2.5, 2.5, 4) vs (1, 2, 3, 4).
  const double tied = spearman_rho(std::vector<double>{1, 2, 2, 3}, a);
  CHECK(std::abs(tied - 4.5 / std::sqrt(4.5 * 5.0)) < 1e-12);

  CHECK_THROWS_AS(spearman_rho(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), NumericError);
  CHECK_THROWS_AS(spearman_rho(std::vector<double>{1}, std::vector<double>{1}), ContractError);
  CHECK_THROWS_AS(spearman_rho(a, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("force_coefficient examples") {
  CHECK(std::abs(force_coefficient(aligned(2.0, 2.0, 3.0)) - 1.0) < 1e-12);
  CHECK(force_coefficient(aligned(0.0, 2.0, 3.0)) == 0.0);

  SurfacePatchSet opposing;
  opposing.inflow_direction = {0.0, 1.0};
  opposing.inflow_speed = 1.5;
  opposing.reference_area = 1.0;
  opposing.patches.push_back({1.7, {0.0, 1.0}, 0.4});
  opposing.patches.push_back({1.7, {0.0, -1.0}, 0.4});
  CHECK(std::abs(force_coefficient(opposing)) < 1e-12);

  // Linear in pressure, homogeneous of degree -2 in speed.
  const double base = force_coefficient(aligned(1.3, 2.0, 3.0));
  CHECK(std::abs(force_coefficient(aligned(2.6, 2.0, 3.0)) - 2.0 * base) < 1e-12);
  CHECK(std::abs(force_coefficient(aligned(1.3, 6.0, 3.0)) - base / 9.0) < 1e-12);

  SurfacePatchSet tilted = aligned(2.0, 1.0, 1.0);
  tilted.patches[0].normal = {std::sqrt(0.5), std::sqrt(0.5)};
  CHECK(std::abs(force_coefficient(tilted) - 2.0 * (2.0 * std::sqrt(0.5) * 0.25 + 2.0 * 0.75)) < 1e-12);
}

TEST_CASE("surface validation") {
  SurfacePatchSet s = aligned(1.0, 1.0, 1.0);
  s.patches[1].normal = {1.0, 0.1};
  CHECK_THROWS_AS(force_coefficient(s), ContractError);
  s = aligned(1.0, 0.0, 1.0);
  CHECK_THROWS_AS(force_coefficient(s), ContractError);
  s = aligned(1.0, 1.0, -1.0);
  CHECK_THROWS_AS(force_coefficient(s), ContractError);
  s = aligned(1.0, 1.0, 1.0);
  s.patches[0].area = 0.0;
  CHECK_THROWS_AS(force_coefficient(s), ContractError);
  s = aligned(1.0, 1.0, 1.0);
  s.inflow_direction = {2.0, 0.0};
  CHECK_THROWS_AS(force_coefficient(s), ContractError);
  s = aligned(1.0, 1.0, 1.0);
  s.patches[0].normal = {1.0, 0.0, 0.0};
  CHECK_THROWS_AS(force_coefficient(s), ContractError);
}

TEST_CASE("evaluate reports every quantity") {
  const DatasetSplit data = build_dataset(Task::darcy, 4, 3, 10, 21);
  ModelConfig m;
  m.layers = 2;
  m.channels = 8;
  m.heads = 2;
  m.slices = 4;
  const ParamStore p = init_params(m, 1);
  EvalOptions opts;
  opts.attention_kl = true;
  const EvalReport r = evaluate(p, m, data.test, opts);
  CHECK(r.samples == 3);
  CHECK(r.points == 100);
  CHECK(r.rel_l2 == doctest::Approx(mean_relative_l2(p, m, data.test)).epsilon(1e-12));
  REQUIRE(r.field_rel_l2.size() == 1);
  CHECK(r.field_rel_l2[0] == doctest::Approx(r.rel_l2).epsilon(1e-12));
  REQUIRE(r.layer_kl.size() == 2);
  for (double kl : r.layer_kl) CHECK(kl > 0.0);
  CHECK(r.spearman.has_value());
  CHECK(*r.spearman >= -1.0);
  CHECK(*r.spearman <= 1.0);
  CHECK_FALSE(r.shear_term_included);

  EvalOptions full;
  full.resample_fraction = 1.0;
  const EvalReport same = evaluate(p, m, data.test, full);
  CHECK(same.rel_l2 == evaluate(p, m, data.test).rel_l2);
  EvalOptions half;
  half.resample_fraction = 0.5;
  CHECK(evaluate(p, m, data.test, half).points == 50);

  std::ostringstream text, csv;
  write_report_text(text, r);
  write_report_csv(csv, r);
  CHECK(text.str().starts_with("samples=3\npoints=100\nrel_l2="));
  CHECK(text.str().find("kl.layer1=") != std::string::npos);
  CHECK(text.str().ends_with("shear_term=excluded\n"));
  CHECK(csv.str().starts_with("key,value\nsamples,3\n"));

  ModelConfig wrong = m;
  wrong.observed_dim = 2;
  CHECK_THROWS_AS(evaluate(init_params(wrong, 0), wrong, data.test), ShapeError);
}
