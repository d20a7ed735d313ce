#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "physattn/graph.hpp"
#include "physattn/param_store.hpp"

namespace physattn {

/// Builds a scalar loss on `graph` from the parameters in `params`.
using Objective = std::function<Var(Graph& graph, ParamStore& params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Compares reverse-mode gradients with central differences
/// (f(θ+h) − f(θ−h)) / 2h for every parameter entry. The relative error of
/// an entry is |analytic − numeric| / max(|analytic|, |numeric|, 1e-6); the
/// floor keeps round-off on vanishing gradients from reading as failure.
/// Parameter values are restored on return; gradients hold the analytic
/// result.
GradCheckReport grad_check(const Objective& f, ParamStore& params, double h = 1e-5, double tol = 1e-4);

}  // namespace physattn
