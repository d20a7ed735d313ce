#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "physattn/mesh.hpp"
#include "physattn/tensor.hpp"

namespace physattn {

enum class Task { darcy };

/// Parses a task name ("darcy"); anything else is a ConfigError.
Task parse_task(const std::string& name);

/// Per-channel z-score statistics.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;

  /// Population statistics over every row of every tensor; a zero spread is
  /// stored as 1 so the transform stays invertible.
  static ChannelStats fit(const std::vector<const Tensor*>& fields);
  Tensor standardize(const Tensor& field) const;
  Tensor destandardize(const Tensor& field) const;

  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

struct Normalizer {
  ChannelStats observed;
  ChannelStats target;

  /// Copy of `raw` with observed and target fields z-scored.
  MeshSample standardize(const MeshSample& raw) const;

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

/// Samples keep their raw physical fields; `normalizer` carries the training
/// split's statistics and is applied when a sample is fed to a model.
struct Dataset {
  std::vector<MeshSample> samples;
  Normalizer normalizer;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
  /// Throws DataError unless all samples share dimensions and structure.
  void validate() const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Train sample i uses seed base_seed + i, test sample j uses
/// base_seed + n_train + j. Stats are fitted on the train split and shared
/// with the test split. Generation runs on worker_threads() threads; the
/// result does not depend on the thread count.
DatasetSplit build_dataset(Task task, std::size_t n_train, std::size_t n_test, std::size_t resolution,
                           std::uint64_t base_seed);

// Dataset file: "PDED", u32 version, u32 structure (0 grid, 1 unstructured),
// u64 samples, u64 N, u64 H, u64 W (zero when unstructured), u64 C_g, C_u,
// C_out, normalization stats (observed mean, std, target mean, std), then per
// sample the raw coords, observed and target arrays. Little-endian.
inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(std::ostream& os, const Dataset& dataset);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace physattn
