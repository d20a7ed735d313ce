#include <doctest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "physattn/error.hpp"
#include "physattn/grad_check.hpp"
#include "physattn/model.hpp"
#include "physattn/ops.hpp"
#include "physattn/training.hpp"
#include "support.hpp"

using namespace physattn;
using namespace physattn::testing;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.channels = 8;
  c.heads = 2;
  c.slices = 4;
  return c;
}

MeshSample random_sample(std::size_t n, std::mt19937_64& rng) {
  MeshSample s;
  s.coords = random_tensor({n, 2}, rng);
  for (double& v : s.coords.data()) v = 0.5 + 0.5 * v;
  s.observed = random_tensor({n, 1}, rng);
  s.target = random_tensor({n, 1}, rng);
  return s;
}

}  // namespace

TEST_CASE("parameter count matches a hand count") {
  // embed 3*8+8 = 32; per layer: norms 2*16, slice projectors 2*(4*4+4) = 40,
  // q/k/v 3*(4*4+4) = 60, output 8*8+8 = 72, ffn 8*16+16+16*8+8 = 280 -> 484;
  // head 8+1 = 9. Total 32 + 2*484 + 9.
  const ModelConfig c = tiny_config();
  CHECK(expected_parameter_count(c) == 1009);
  CHECK(init_params(c, 0).scalar_count() == 1009);

  ModelConfig more_slices = c;
  more_slices.slices = 6;
  CHECK(expected_parameter_count(more_slices) - expected_parameter_count(c) == 2 * 2 * (4 * 2 + 2));

  ModelConfig squares = c;
  squares.slice_mode = SliceMode::regular_squares;
  CHECK(expected_parameter_count(c) - expected_parameter_count(squares) == 2 * 40);
  CHECK(init_params(squares, 0).scalar_count() == expected_parameter_count(squares));

  ModelConfig stencil = c;
  stencil.projector = ProjectorKind::stencil3x3;
  CHECK(init_params(stencil, 0).scalar_count() == expected_parameter_count(stencil));
}

TEST_CASE("init_params is seeded and follows the documented scheme") {
  const ModelConfig c = tiny_config();
  const ParamStore a = init_params(c, 3), b = init_params(c, 3), d = init_params(c, 4);
  CHECK(a.same_values(b));
  CHECK_FALSE(a.same_values(d));
  CHECK(a[0].name == "embed.weight");
  CHECK(a[a.size() - 1].name == "head.bias");
  CHECK(a.contains("layers.1.attn.slice.1.weight"));
  for (const Parameter& p : a) {
    if (p.name.ends_with(".gain")) {
      for (double v : p.value.data()) CHECK(v == 1.0);
    } else if (p.name.ends_with(".bias")) {
      for (double v : p.value.data()) CHECK(v == 0.0);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.dim(0)));
      for (double v : p.value.data()) CHECK(std::abs(v) <= bound);
    }
  }
  ModelConfig bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(init_params(bad, 0), ConfigError);
}

TEST_CASE("embed_inputs examples") {
  Graph g;
  std::mt19937_64 rng(1);
  const Tensor coords = random_tensor({5, 2}, rng), observed = random_tensor({5, 1}, rng);
  const Tensor bias = random_tensor({4}, rng);
  const Tensor zero = embed_inputs(g.constant(coords), g.constant(observed),
                                   {g.constant(Tensor({3, 4})), g.constant(bias)}).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(zero(i, k) == bias[k]);

  const Tensor w2 = random_tensor({2, 4}, rng);
  const Tensor geo = embed_inputs(g.constant(coords), std::nullopt, {g.constant(w2), g.constant(bias)}).value();
  const Tensor want = naive_matmul(coords, w2);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(geo(i, k) == doctest::Approx(want(i, k) + bias[k]).epsilon(1e-14));

  const Tensor w3 = random_tensor({3, 4}, rng);
  const Tensor full = embed_inputs(g.constant(coords), g.constant(observed), {g.constant(w3), g.constant(bias)}).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      const double s = coords(i, 0) * w3(0, k) + coords(i, 1) * w3(1, k) + observed(i, 0) * w3(2, k) + bias[k];
      CHECK(full(i, k) == doctest::Approx(s).epsilon(1e-14));
    }
  CHECK_THROWS_AS(embed_inputs(g.constant(coords), g.constant(Tensor({4, 1})), {g.constant(w3), g.constant(bias)}),
                  ShapeError);
}

TEST_CASE("a layer with zero weights is the identity") {
  const ModelConfig c = tiny_config();
  ParamStore p = init_params(c, 0);
  for (Parameter& param : p) param.value.fill(0.0);
  Graph g;
  const ModelWeights w = bind_frozen_weights(g, p, c);
  std::mt19937_64 rng(2);
  for (std::size_t n : {3u, 11u}) {
    const Tensor x = random_tensor({n, 8}, rng);
    const Tensor y = transolver_layer(g.constant(x), w.layers[0], {2, {}}).value();
    CHECK(y == x);
  }
}

TEST_CASE("forward with zero weights returns the head bias") {
  const ModelConfig c = tiny_config();
  ParamStore p = init_params(c, 0);
  for (Parameter& param : p) param.value.fill(0.0);
  p.at("head.bias").value[0] = 0.375;
  std::mt19937_64 rng(3);
  const Tensor y = predict(random_sample(13, rng), p, c);
  CHECK(y == Tensor({13, 1}, 0.375));
}

TEST_CASE("forward equals the hand-composed stack") {
  const ModelConfig c = tiny_config();
  const ParamStore p = init_params(c, 5);
  std::mt19937_64 rng(4);
  const MeshSample s = random_sample(10, rng);
  Graph g;
  const ModelWeights w = bind_frozen_weights(g, p, c);
  const Tensor whole = forward(g, s, w, c).value();
  Var x = embed_inputs(g.constant(s.coords), g.constant(*s.observed), w.embed);
  for (const LayerWeights& lw : w.layers) x = transolver_layer(x, lw, {c.heads, {}});
  CHECK(whole == apply(w.head, x).value());

  MeshSample wrong = s;
  wrong.observed.reset();
  CHECK_THROWS_AS(forward(g, wrong, w, c), ShapeError);
}

TEST_CASE("forward is permutation equivariant on unstructured inputs") {
  const ModelConfig c = tiny_config();
  const ParamStore p = init_params(c, 6);
  std::mt19937_64 rng(5);
  const MeshSample s = random_sample(24, rng);
  std::vector<std::size_t> perm(24);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  MeshSample ps = s;
  ps.coords = permute_rows(s.coords, perm);
  ps.observed = permute_rows(*s.observed, perm);
  CHECK(max_abs_diff(predict(ps, p, c), permute_rows(predict(s, p, c), perm)) < 1e-10);
}

TEST_CASE("gradient check over every parameter of the tiny model") {
  const ModelConfig c = tiny_config();
  ParamStore p = init_params(c, 7);
  std::mt19937_64 rng(6);
  const MeshSample s = random_sample(16, rng);
  auto loss = [&](Graph& g, ParamStore& params) {
    return relative_l2_loss(forward(g, s, bind_weights(g, params, c), c), s.target);
  };
  const GradCheckReport r = grad_check(loss, p, 1e-5, 1e-4);
  INFO("worst " << r.worst_parameter << "[" << r.worst_index << "] rel " << r.max_rel_error);
  CHECK(r.passed);
  CHECK(r.entries_checked == 1009);
}

TEST_CASE("stencil and regular-square variants run on grids") {
  std::mt19937_64 rng(8);
  MeshSample s;
  s.grid = GridShape{6, 5};
  s.coords = random_tensor({30, 2}, rng);
  s.observed = random_tensor({30, 1}, rng);
  s.target = random_tensor({30, 1}, rng);

  ModelConfig stencil = tiny_config();
  stencil.projector = ProjectorKind::stencil3x3;
  CHECK(predict(s, init_params(stencil, 0), stencil).shape() == Shape{30, 1});

  ModelConfig squares = tiny_config();
  squares.slice_mode = SliceMode::regular_squares;
  squares.square_side = 2;
  ForwardTrace trace;
  predict(s, init_params(squares, 0), squares, &trace);
  CHECK(trace.layers[0].heads[0].slice_weights == regular_square_slices(s.grid, 2));

  MeshSample loose = s;
  loose.grid.reset();
  CHECK_THROWS_AS(predict(loose, init_params(stencil, 0), stencil), GeometryError);
  CHECK_THROWS_AS(predict(loose, init_params(squares, 0), squares), GeometryError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig c = tiny_config();
  c.projector = ProjectorKind::stencil3x3;
  c.ffn_multiplier = 3;
  const ParamStore p = init_params(c, 9);
  std::stringstream ss;
  write_checkpoint(ss, c, p);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "TSLV");
  const Checkpoint back = read_checkpoint(ss);
  CHECK(back.config == c);
  CHECK(back.params.same_values(p));
  std::stringstream again;
  write_checkpoint(again, back.config, back.params);
  CHECK(again.str() == bytes);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(read_checkpoint(truncated), DataError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream bm(bad_magic);
  CHECK_THROWS_AS(read_checkpoint(bm), DataError);
}
