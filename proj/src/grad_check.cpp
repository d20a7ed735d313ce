#include "physattn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "physattn/error.hpp"

namespace physattn {
namespace {

constexpr double kRelativeFloor = 1e-6;

double probe(const Objective& f, ParamStore& params, const Parameter& p, std::size_t k) {
  Graph graph;
  const double value = f(graph, params).value().item();
  if (!std::isfinite(value)) {
    throw NumericError("grad_check: non-finite loss while probing " + p.name + "[" + std::to_string(k) + "]");
  }
  return value;
}

}  // namespace

GradCheckReport grad_check(const Objective& f, ParamStore& params, double h, double tol) {
  if (!(h >= 1e-6 && h <= 1e-4)) throw ContractError("grad_check: step h must lie in [1e-6, 1e-4]");

  params.zero_grad();
  {
    Graph graph;
    Var loss = f(graph, params);
    if (!std::isfinite(loss.value().item())) throw NumericError("grad_check: non-finite loss at the base point");
    graph.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (Parameter& p : params) {
    const std::vector<double> analytic(p.grad.data().begin(), p.grad.data().end());
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + h;
      const double up = probe(f, params, p, k);
      p.value[k] = saved - h;
      const double down = probe(f, params, p, k);
      p.value[k] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), kRelativeFloor});
      const double rel = std::abs(analytic[k] - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error || report.worst_parameter.empty()) {
        report.max_rel_error = rel;
        report.worst_parameter = p.name;
        report.worst_index = k;
        report.worst_analytic = analytic[k];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace physattn
