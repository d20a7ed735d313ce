#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "physattn/dataset.hpp"
#include "physattn/graph.hpp"
#include "physattn/model.hpp"
#include "physattn/param_store.hpp"

namespace physattn {

/// Added to the target norm of every relative L2.
inline constexpr double kRelativeL2Guard = 1e-12;

/// ‖pred − target‖_F / (‖target‖_F + 1e-12), differentiable in `pred`.
Var relative_l2_loss(Var pred, const Tensor& target);

/// Relative L2 between the central-difference gradients of `pred` and of
/// `target` on interior grid points, both components stacked. Throws
/// GeometryError without a grid.
Var gradient_reg_loss(Var pred, const Tensor& target, const std::optional<GridShape>& grid);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

struct AdamWState {
  std::vector<Tensor> m, v;
  std::uint64_t step = 0;
};

/// θ ← θ(1 − lr·wd), then the bias-corrected Adam update from the first and
/// second moments. Every parameter must carry a gradient (ContractError
/// naming the first that does not).
void adamw_step(ParamStore& params, AdamWState& state, double lr, const AdamWOptions& options);

/// Rescales all gradients so their global norm is at most `max_norm`;
/// returns the norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

enum class LrSchedule { cosine, constant };

struct TrainConfig {
  std::size_t epochs = 100;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::size_t batch_size = 8;
  LrSchedule schedule = LrSchedule::cosine;
  double grad_reg_weight = 0.1;
  std::uint64_t seed = 0;
  /// Test evaluation period in epochs; the last epoch is always evaluated.
  std::size_t eval_every = 1;
  bool grad_clip = false;
  double clip_threshold = 1.0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Learning rate for optimizer step `step` of `total_steps`.
double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total_steps);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  /// Mean test relative L2; empty on epochs without evaluation.
  std::optional<double> test_rel_l2;
  double lr = 0.0;  // at the epoch's first step
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Columns epoch, train_loss, test_rel_l2, lr, seconds. Without timing the
/// seconds column is omitted, which makes reruns byte-comparable.
void write_history_csv(std::ostream& os, const TrainHistory& history, bool include_timing = true);

/// Model prediction in physical units for a raw sample: inputs are
/// standardized with `normalizer` and outputs mapped back.
Tensor predict_fields(const MeshSample& raw, const ParamStore& params, const ModelConfig& config,
                      const Normalizer& normalizer, ForwardTrace* trace = nullptr);

/// Mean relative L2 over a dataset, in physical units.
double mean_relative_l2(const ParamStore& params, const ModelConfig& config, const Dataset& dataset);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Written after the last epoch when set.
  std::optional<std::filesystem::path> checkpoint;
};

struct TrainResult {
  ParamStore params;
  TrainHistory history;
};

/// Minibatch AdamW on loss = relative L2 + grad_reg_weight · gradient
/// regularizer (the latter only for grid samples), both measured in physical
/// units. Batches are drawn from a seeded shuffle and their gradients
/// averaged. Parameters are initialized from config.seed. A non-finite loss
/// raises NumericError with the epoch and batch.
TrainResult train(const ModelConfig& model, const TrainConfig& config, const Dataset& train_set,
                  const Dataset* test_set = nullptr, const TrainHooks& hooks = {});

}  // namespace physattn
