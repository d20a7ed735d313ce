#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "physattn/graph.hpp"
#include "physattn/mesh.hpp"
#include "physattn/param_store.hpp"
#include "physattn/physics_attention.hpp"

namespace physattn {

enum class SliceMode { learned, regular_squares };

/// Architecture hyperparameters. Defaults are the desk-scale configuration.
struct ModelConfig {
  std::size_t layers = 4;
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t slices = 16;
  std::size_t geometry_dim = 2;
  std::size_t observed_dim = 1;
  std::size_t output_dim = 1;
  ProjectorKind projector = ProjectorKind::pointwise;
  std::size_t ffn_multiplier = 2;
  SliceMode slice_mode = SliceMode::learned;
  /// Square side for SliceMode::regular_squares.
  std::size_t square_side = 4;

  std::size_t head_channels() const { return channels / heads; }
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Var norm1_gain, norm1_bias;
  AttentionParams attention;
  Var norm2_gain, norm2_bias;
  AffineMap ffn_in, ffn_out;
};

/// Graph handles for every parameter of the model.
struct ModelWeights {
  AffineMap embed;
  std::vector<LayerWeights> layers;
  AffineMap head;
};

/// Everything a layer needs besides its weights.
struct LayerContext {
  std::size_t heads = 1;
  SliceContext slices;
};

struct ForwardTrace {
  std::vector<AttentionTrace> layers;
};

/// Parameter store in its fixed order:
///   embed.{weight,bias}
///   layers.<l>.norm1.{gain,bias}
///   layers.<l>.attn.slice.<h>.{weight,bias}   (learned slices only)
///   layers.<l>.attn.{q,k,v}.{weight,bias}
///   layers.<l>.attn.out.{weight,bias}
///   layers.<l>.norm2.{gain,bias}
///   layers.<l>.ffn.{in,out}.{weight,bias}
///   head.{weight,bias}
/// Weights are uniform in ±1/sqrt(fan_in), biases zero, gains one.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

/// Binds parameters as trainable graph leaves.
ModelWeights bind_weights(Graph& graph, ParamStore& params, const ModelConfig& config);
/// Binds parameters as constants (inference only).
ModelWeights bind_frozen_weights(Graph& graph, const ParamStore& params, const ModelConfig& config);

/// x⁰ = affine(concat(g, u)); `observed` may be absent.
Var embed_inputs(Var coords, const std::optional<Var>& observed, const AffineMap& embed);

/// Pre-norm residual block: x̂ = PA(LN(x)) + x; out = FFN(LN(x̂)) + x̂ with
/// FFN = affine → GELU → affine.
Var transolver_layer(Var x, const LayerWeights& weights, const LayerContext& context, AttentionTrace* trace = nullptr);

/// embed → layers → affine head; returns N×C_out predictions.
Var forward(Graph& graph, const MeshSample& sample, const ModelWeights& weights, const ModelConfig& config,
            ForwardTrace* trace = nullptr);

/// Inference convenience wrapper over a private graph.
Tensor predict(const MeshSample& sample, const ParamStore& params, const ModelConfig& config,
               ForwardTrace* trace = nullptr);

/// Number of scalar parameters implied by `config`, from the layout above.
std::size_t expected_parameter_count(const ModelConfig& config);

// Checkpoint: "TSLV", u32 version, field-tagged ModelConfig, u64 parameter
// count, then per parameter (u32 name length, name, u32 rank, u64 extents,
// f64 values), all little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

void write_checkpoint(std::ostream& os, const ModelConfig& config, const ParamStore& params);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamStore& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace physattn
