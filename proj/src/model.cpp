#include "physattn/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "physattn/binary_io.hpp"
#include "physattn/error.hpp"
#include "physattn/ops.hpp"

namespace physattn {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(layers >= 1, "layers must be >= 1");
  require(channels >= 1, "channels must be >= 1");
  require(heads >= 1, "heads must be >= 1");
  require(channels % heads == 0,
          "channels (" + std::to_string(channels) + ") must be divisible by heads (" + std::to_string(heads) + ")");
  require(slices >= 1, "slices must be >= 1");
  require(geometry_dim >= 1, "geometry_dim must be >= 1");
  require(output_dim >= 1, "output_dim must be >= 1");
  require(ffn_multiplier >= 1, "ffn_multiplier must be >= 1");
  require(square_side >= 1, "square_side must be >= 1");
}

namespace {

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  void affine(ParamStore& store, const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w({fan_in, fan_out});
    for (double& v : w.data()) v = dist(rng_);
    store.add(name + ".weight", std::move(w));
    store.add(name + ".bias", Tensor({fan_out}));
  }

  static void norm(ParamStore& store, const std::string& name, std::size_t width) {
    store.add(name + ".gain", Tensor({width}, 1.0));
    store.add(name + ".bias", Tensor({width}));
  }

 private:
  std::mt19937_64 rng_;
};

std::size_t projector_fan_in(const ModelConfig& config) {
  return config.projector == ProjectorKind::stencil3x3 ? 9 * config.head_channels() : config.head_channels();
}

// Resolves parameters to graph handles, either as trainable leaves or as
// constants.
template <typename Bind>
ModelWeights bind_all(const ModelConfig& config, Bind&& bind) {
  config.validate();
  auto affine = [&](const std::string& name) { return AffineMap{bind(name + ".weight"), bind(name + ".bias")}; };
  ModelWeights w;
  w.embed = affine("embed");
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = layer_prefix(l);
    LayerWeights lw;
    lw.norm1_gain = bind(p + "norm1.gain");
    lw.norm1_bias = bind(p + "norm1.bias");
    if (config.slice_mode == SliceMode::learned) {
      for (std::size_t h = 0; h < config.heads; ++h) {
        lw.attention.slice_projectors.push_back(
            SliceProjector{affine(p + "attn.slice." + std::to_string(h)), config.projector});
      }
    }
    lw.attention.tokens.query = affine(p + "attn.q");
    lw.attention.tokens.key = affine(p + "attn.k");
    lw.attention.tokens.value = affine(p + "attn.v");
    lw.attention.output = affine(p + "attn.out");
    lw.norm2_gain = bind(p + "norm2.gain");
    lw.norm2_bias = bind(p + "norm2.bias");
    lw.ffn_in = affine(p + "ffn.in");
    lw.ffn_out = affine(p + "ffn.out");
    w.layers.push_back(std::move(lw));
  }
  w.head = affine("head");
  return w;
}

}  // namespace

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t C = config.channels, Ch = config.head_channels(), hidden = config.ffn_multiplier * C;
  Initializer init(seed);
  ParamStore store;
  init.affine(store, "embed", config.geometry_dim + config.observed_dim, C);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = layer_prefix(l);
    Initializer::norm(store, p + "norm1", C);
    if (config.slice_mode == SliceMode::learned) {
      for (std::size_t h = 0; h < config.heads; ++h) {
        init.affine(store, p + "attn.slice." + std::to_string(h), projector_fan_in(config), config.slices);
      }
    }
    init.affine(store, p + "attn.q", Ch, Ch);
    init.affine(store, p + "attn.k", Ch, Ch);
    init.affine(store, p + "attn.v", Ch, Ch);
    init.affine(store, p + "attn.out", C, C);
    Initializer::norm(store, p + "norm2", C);
    init.affine(store, p + "ffn.in", C, hidden);
    init.affine(store, p + "ffn.out", hidden, C);
  }
  init.affine(store, "head", C, config.output_dim);
  return store;
}

ModelWeights bind_weights(Graph& graph, ParamStore& params, const ModelConfig& config) {
  return bind_all(config, [&](const std::string& name) { return graph.parameter(params.at(name)); });
}

ModelWeights bind_frozen_weights(Graph& graph, const ParamStore& params, const ModelConfig& config) {
  return bind_all(config, [&](const std::string& name) { return graph.constant(params.at(name).value); });
}

Var embed_inputs(Var coords, const std::optional<Var>& observed, const AffineMap& embed) {
  if (!observed) return apply(embed, coords);
  if (observed->dim(0) != coords.dim(0)) {
    throw ShapeError("embed_inputs: " + std::to_string(coords.dim(0)) + " coordinate rows vs " +
                     std::to_string(observed->dim(0)) + " observed rows");
  }
  return apply(embed, concat_columns({coords, *observed}));
}

Var transolver_layer(Var x, const LayerWeights& weights, const LayerContext& context, AttentionTrace* trace) {
  Var attended = physics_attention(layer_norm(x, weights.norm1_gain, weights.norm1_bias), weights.attention,
                                   context.heads, context.slices, trace);
  Var mid = add(attended, x);
  Var hidden = gelu(apply(weights.ffn_in, layer_norm(mid, weights.norm2_gain, weights.norm2_bias)));
  return add(apply(weights.ffn_out, hidden), mid);
}

Var forward(Graph& graph, const MeshSample& sample, const ModelWeights& weights, const ModelConfig& config,
            ForwardTrace* trace) {
  config.validate();
  if (sample.coords.rank() != 2 || sample.coords.cols() != config.geometry_dim) {
    throw ShapeError("forward: coords " + shape_string(sample.coords.shape()) + " but geometry_dim is " +
                     std::to_string(config.geometry_dim));
  }
  if (sample.observed_dim() != config.observed_dim) {
    throw ShapeError("forward: observed has " + std::to_string(sample.observed_dim()) +
                     " channels but observed_dim is " + std::to_string(config.observed_dim));
  }
  if (sample.observed && sample.observed->rows() != sample.points()) {
    throw ShapeError("forward: observed " + shape_string(sample.observed->shape()) + " vs coords " +
                     shape_string(sample.coords.shape()));
  }
  if (sample.grid && sample.grid->points() != sample.points()) {
    throw ShapeError("forward: grid " + std::to_string(sample.grid->height) + "x" + std::to_string(sample.grid->width) +
                     " does not match " + std::to_string(sample.points()) + " points");
  }

  LayerContext context;
  context.heads = config.heads;
  context.slices.grid = sample.grid;
  if (config.slice_mode == SliceMode::regular_squares) {
    context.slices.fixed_weights = regular_square_slices(sample.grid, config.square_side);
  }

  std::optional<Var> observed;
  if (sample.observed) observed = graph.constant(*sample.observed);
  Var x = embed_inputs(graph.constant(sample.coords), observed, weights.embed);
  if (trace) trace->layers.assign(weights.layers.size(), AttentionTrace{});
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    x = transolver_layer(x, weights.layers[l], context, trace ? &trace->layers[l] : nullptr);
  }
  return apply(weights.head, x);
}

Tensor predict(const MeshSample& sample, const ParamStore& params, const ModelConfig& config, ForwardTrace* trace) {
  Graph graph;
  const ModelWeights weights = bind_frozen_weights(graph, params, config);
  return forward(graph, sample, weights, config, trace).value();
}

std::size_t expected_parameter_count(const ModelConfig& config) {
  const std::size_t C = config.channels, Ch = config.head_channels(), M = config.slices, H = config.heads;
  const std::size_t hidden = config.ffn_multiplier * C;
  std::size_t per_layer = 2 * C;                                   // norm1
  if (config.slice_mode == SliceMode::learned) per_layer += H * (projector_fan_in(config) * M + M);
  per_layer += 3 * (Ch * Ch + Ch);                                  // q, k, v
  per_layer += C * C + C;                                           // output map
  per_layer += 2 * C;                                               // norm2
  per_layer += C * hidden + hidden + hidden * C + C;               // feed-forward
  return (config.geometry_dim + config.observed_dim) * C + C + config.layers * per_layer +
         C * config.output_dim + config.output_dim;
}

namespace {

enum ConfigTag : std::uint32_t {
  kLayers = 1,
  kChannels = 2,
  kHeads = 3,
  kSlices = 4,
  kGeometryDim = 5,
  kObservedDim = 6,
  kOutputDim = 7,
  kProjector = 8,
  kFfnMultiplier = 9,
  kSliceMode = 10,
  kSquareSide = 11,
};

}  // namespace

void write_checkpoint(std::ostream& os, const ModelConfig& config, const ParamStore& params) {
  binary::Writer out(os);
  out.bytes("TSLV");
  out.u32(kCheckpointVersion);
  const std::pair<ConfigTag, std::uint64_t> fields[] = {
      {kLayers, config.layers},
      {kChannels, config.channels},
      {kHeads, config.heads},
      {kSlices, config.slices},
      {kGeometryDim, config.geometry_dim},
      {kObservedDim, config.observed_dim},
      {kOutputDim, config.output_dim},
      {kProjector, config.projector == ProjectorKind::stencil3x3 ? 1u : 0u},
      {kFfnMultiplier, config.ffn_multiplier},
      {kSliceMode, config.slice_mode == SliceMode::regular_squares ? 1u : 0u},
      {kSquareSide, config.square_side},
  };
  out.u32(static_cast<std::uint32_t>(std::size(fields)));
  for (const auto& [tag, value] : fields) {
    out.u32(tag);
    out.u64(value);
  }
  out.u64(params.size());
  for (const Parameter& p : params) {
    out.u32(static_cast<std::uint32_t>(p.name.size()));
    out.bytes(p.name);
    out.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) out.u64(e);
    out.f64s(p.value.data());
  }
  if (!os) throw DataError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
  binary::Reader in(is, "checkpoint");
  in.expect_magic("TSLV");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  const std::uint32_t n_fields = in.u32();
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    const std::uint32_t tag = in.u32();
    const std::uint64_t v = in.u64();
    switch (tag) {
      case kLayers: c.layers = v; break;
      case kChannels: c.channels = v; break;
      case kHeads: c.heads = v; break;
      case kSlices: c.slices = v; break;
      case kGeometryDim: c.geometry_dim = v; break;
      case kObservedDim: c.observed_dim = v; break;
      case kOutputDim: c.output_dim = v; break;
      case kProjector: c.projector = v ? ProjectorKind::stencil3x3 : ProjectorKind::pointwise; break;
      case kFfnMultiplier: c.ffn_multiplier = v; break;
      case kSliceMode: c.slice_mode = v ? SliceMode::regular_squares : SliceMode::learned; break;
      case kSquareSide: c.square_side = v; break;
      default: throw DataError("checkpoint: unknown config field tag " + std::to_string(tag));
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  const std::uint64_t count = in.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = in.bytes(in.u32());
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& e : shape) e = in.u64();
    Tensor value(shape);
    in.f64s(value.data());
    ckpt.params.add(std::move(name), std::move(value));
  }
  in.expect_end();
  if (ckpt.params.scalar_count() != expected_parameter_count(c)) {
    throw DataError("checkpoint: parameter count does not match its model config");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(os, config, params);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  return read_checkpoint(is);
}

}  // namespace physattn
