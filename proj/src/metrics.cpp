#include "physattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>

#include "physattn/darcy.hpp"
#include "physattn/error.hpp"
#include "physattn/graph.hpp"
#include "physattn/training.hpp"

namespace physattn {

double relative_l2(const Tensor& pred, const Tensor& target) {
  Graph g;
  return relative_l2_loss(g.constant(pred), target).value().item();
}

namespace {

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rho(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("spearman_rho: " + std::to_string(predicted.size()) + " vs " + std::to_string(truth.size()) +
                     " values");
  }
  if (predicted.size() < 2) throw ContractError("spearman_rho needs at least two values");
  const std::vector<double> a = average_ranks(predicted), b = average_ranks(truth);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) throw NumericError("spearman_rho: correlation undefined for a constant list");
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

constexpr double kUnitTolerance = 1e-9;

}  // namespace

void SurfacePatchSet::validate() const {
  if (inflow_direction.empty()) throw ContractError("surface: inflow direction is empty");
  if (std::abs(norm(inflow_direction) - 1.0) > kUnitTolerance) {
    throw ContractError("surface: inflow direction must be a unit vector");
  }
  if (!(inflow_speed > 0.0)) throw ContractError("surface: inflow speed must be positive");
  if (!(reference_area > 0.0)) throw ContractError("surface: reference area must be positive");
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const SurfacePatch& p = patches[i];
    if (p.normal.size() != inflow_direction.size()) {
      throw ContractError("surface: patch " + std::to_string(i) + " normal has the wrong dimension");
    }
    if (std::abs(norm(p.normal) - 1.0) > kUnitTolerance) {
      throw ContractError("surface: patch " + std::to_string(i) + " normal is not unit length");
    }
    if (!(p.area > 0.0)) throw ContractError("surface: patch " + std::to_string(i) + " area must be positive");
  }
}

double force_coefficient(const SurfacePatchSet& surface) {
  surface.validate();
  double total = 0.0;
  for (const SurfacePatch& p : surface.patches) {
    double cosine = 0.0;
    for (std::size_t d = 0; d < p.normal.size(); ++d) cosine += p.normal[d] * surface.inflow_direction[d];
    total += p.pressure * cosine * p.area;
  }
  return 2.0 / (surface.inflow_speed * surface.inflow_speed * surface.reference_area) * total;
}

namespace {

double channel_mean(const Tensor& field, std::size_t channel) {
  double s = 0.0;
  for (std::size_t r = 0; r < field.rows(); ++r) s += field(r, channel);
  return s / static_cast<double>(field.rows());
}

Tensor channel(const Tensor& field, std::size_t c) {
  Tensor out({field.rows(), 1});
  for (std::size_t r = 0; r < field.rows(); ++r) out(r, 0) = field(r, c);
  return out;
}

}  // namespace

EvalReport evaluate(const ParamStore& params, const ModelConfig& config, const Dataset& dataset,
                    const EvalOptions& options) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  dataset.validate();
  const MeshSample& first = dataset.samples.front();
  if (first.coords.cols() != config.geometry_dim || first.observed_dim() != config.observed_dim ||
      first.target.cols() != config.output_dim) {
    throw ShapeError("evaluate: dataset dims (" + std::to_string(first.coords.cols()) + ", " +
                     std::to_string(first.observed_dim()) + ", " + std::to_string(first.target.cols()) +
                     ") do not match the model");
  }

  EvalReport report;
  report.samples = dataset.size();
  report.field_rel_l2.assign(config.output_dim, 0.0);
  if (options.attention_kl) report.layer_kl.assign(config.layers, 0.0);
  std::vector<double> c_pred, c_true;
  double coeff_err = 0.0;
  std::size_t kl_terms = 0;

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const MeshSample sample = options.resample_fraction
                                  ? resample_mesh(dataset.samples[i], *options.resample_fraction,
                                                  options.resample_seed + i)
                                  : dataset.samples[i];
    report.points = sample.points();
    ForwardTrace trace;
    const Tensor pred =
        predict_fields(sample, params, config, dataset.normalizer, options.attention_kl ? &trace : nullptr);
    report.rel_l2 += relative_l2(pred, sample.target);
    for (std::size_t c = 0; c < config.output_dim; ++c) {
      report.field_rel_l2[c] += relative_l2(channel(pred, c), channel(sample.target, c));
    }
    c_pred.push_back(channel_mean(pred, 0));
    c_true.push_back(channel_mean(sample.target, 0));
    coeff_err += std::abs(c_pred.back() - c_true.back()) / std::max(std::abs(c_true.back()), kRelativeL2Guard);
    if (options.attention_kl) {
      for (std::size_t l = 0; l < trace.layers.size(); ++l)
        for (const HeadTrace& h : trace.layers[l].heads) report.layer_kl[l] += attention_kl_from_uniform(h.attention);
      ++kl_terms;
    }
  }
  const double n = static_cast<double>(dataset.size());
  report.rel_l2 /= n;
  for (double& v : report.field_rel_l2) v /= n;
  report.coefficient_error = coeff_err / n;
  for (double& v : report.layer_kl) v /= static_cast<double>(kl_terms * config.heads);
  if (c_pred.size() >= 2) {
    try {
      report.spearman = spearman_rho(c_pred, c_true);
    } catch (const NumericError&) {
      report.spearman.reset();
    }
  }
  return report;
}

namespace {

std::vector<std::pair<std::string, std::string>> report_rows(const EvalReport& r) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("samples", std::to_string(r.samples));
  rows.emplace_back("points", std::to_string(r.points));
  rows.emplace_back("rel_l2", num(r.rel_l2));
  for (std::size_t c = 0; c < r.field_rel_l2.size(); ++c) rows.emplace_back("rel_l2.field" + std::to_string(c), num(r.field_rel_l2[c]));
  rows.emplace_back("coefficient_error", num(r.coefficient_error));
  rows.emplace_back("spearman_rho", r.spearman ? num(*r.spearman) : "nan");
  for (std::size_t l = 0; l < r.layer_kl.size(); ++l) rows.emplace_back("kl.layer" + std::to_string(l), num(r.layer_kl[l]));
  rows.emplace_back("shear_term", r.shear_term_included ? "included" : "excluded");
  return rows;
}

}  // namespace

void write_report_text(std::ostream& os, const EvalReport& report) {
  for (const auto& [k, v] : report_rows(report)) os << k << '=' << v << '\n';
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  os << "key,value\n";
  for (const auto& [k, v] : report_rows(report)) os << k << ',' << v << '\n';
}

}  // namespace physattn
