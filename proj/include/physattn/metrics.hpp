#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "physattn/dataset.hpp"
#include "physattn/model.hpp"
#include "physattn/param_store.hpp"
#include "physattn/tensor.hpp"

namespace physattn {

/// ‖pred − target‖_F / (‖target‖_F + 1e-12). Same computation as
/// relative_l2_loss, without a caller-visible graph.
double relative_l2(const Tensor& pred, const Tensor& target);

/// Pearson correlation of the rank vectors; ties share their average rank.
/// Needs K ≥ 2 equal-length lists and throws NumericError when either list
/// is constant.
double spearman_rho(std::span<const double> predicted, std::span<const double> truth);

struct SurfacePatch {
  double pressure = 0.0;
  std::vector<double> normal;  // outward, unit length
  double area = 0.0;
};

struct SurfacePatchSet {
  std::vector<SurfacePatch> patches;
  std::vector<double> inflow_direction;  // unit length
  double inflow_speed = 0.0;
  double reference_area = 0.0;

  /// ContractError on non-unit normals or direction (tolerance 1e-9),
  /// non-positive areas, speed or reference area, or dimension mismatch.
  void validate() const;
};

/// C = 2/(v²A) Σ p (n̂·î) area. Pressure term only; the wall-shear term is
/// not modelled.
double force_coefficient(const SurfacePatchSet& surface);

struct EvalOptions {
  bool attention_kl = false;
  /// Evaluate on a random subset of each sample's points.
  std::optional<double> resample_fraction;
  /// Sample i is resampled with seed resample_seed + i.
  std::uint64_t resample_seed = 0;
};

struct EvalReport {
  std::size_t samples = 0;
  std::size_t points = 0;  // per sample, after resampling
  /// Mean relative L2 over samples, all output channels together.
  double rel_l2 = 0.0;
  /// Mean relative L2 per output channel.
  std::vector<double> field_rel_l2;
  /// Per-sample coefficient is the field mean of output channel 0; this is
  /// the mean of |c_pred − c_true| / |c_true|.
  double coefficient_error = 0.0;
  /// Rank correlation of predicted and true coefficients across samples;
  /// empty with fewer than two samples or constant coefficients.
  std::optional<double> spearman;
  /// Mean attention KL from uniform per layer, averaged over heads and
  /// samples; empty unless requested.
  std::vector<double> layer_kl;
  bool shear_term_included = false;
};

/// Deterministic evaluation of `params` on raw `dataset` samples.
EvalReport evaluate(const ParamStore& params, const ModelConfig& config, const Dataset& dataset,
                    const EvalOptions& options = {});

/// One `key=value` line per quantity.
void write_report_text(std::ostream& os, const EvalReport& report);
/// Same quantities as `key,value` rows under a header.
void write_report_csv(std::ostream& os, const EvalReport& report);

}  // namespace physattn
