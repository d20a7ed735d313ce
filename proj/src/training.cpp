#include "physattn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "physattn/error.hpp"
#include "physattn/ops.hpp"

namespace physattn {

namespace {

double frobenius(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

Var relative_l2_loss(Var pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("relative_l2: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  const double denom = frobenius(target) + kRelativeL2Guard;
  Var diff = sub(pred, pred.graph->constant(target));
  return scale(frobenius_norm(diff), 1.0 / denom);
}

Var gradient_reg_loss(Var pred, const Tensor& target, const std::optional<GridShape>& grid) {
  if (!grid) throw GeometryError("gradient regularizer needs a grid-structured sample");
  if (pred.shape() != target.shape()) {
    throw ShapeError("gradient_reg_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  Graph scratch;
  const Tensor target_grad = grid_central_gradient(scratch.constant(target), *grid).value();
  return relative_l2_loss(grid_central_gradient(pred, *grid), target_grad);
}

void adamw_step(ParamStore& params, AdamWState& state, double lr, const AdamWOptions& options) {
  for (const Parameter& p : params) {
    if (!p.has_grad) throw ContractError("adamw_step: parameter '" + p.name + "' has no gradient");
  }
  if (state.m.empty()) {
    for (const Parameter& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adamw_step: optimizer state does not match parameters");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  const double decay = 1.0 - lr * options.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    double* w = p.value.raw();
    const double* g = p.grad.raw();
    double* m = state.m[i].raw();
    double* v = state.v[i].raw();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      w[k] *= decay;
      m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g[k];
      v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter& p : params)
    for (double g : p.grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter& p : params)
      for (double& g : p.grad.data()) g *= f;
  }
  return norm;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (grad_reg_weight < 0.0) throw ConfigError("grad_reg_weight must be non-negative");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (!(clip_threshold > 0.0)) throw ConfigError("clip_threshold must be positive");
}

double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (config.schedule == LrSchedule::constant || total_steps == 0) return config.lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void write_history_csv(std::ostream& os, const TrainHistory& history, bool include_timing) {
  os << "epoch,train_loss,test_rel_l2,lr";
  if (include_timing) os << ",seconds";
  os << '\n';
  char buf[64];
  for (const EpochRecord& r : history.epochs) {
    os << r.epoch;
    std::snprintf(buf, sizeof buf, ",%.17g,", r.train_loss);
    os << buf;
    if (r.test_rel_l2) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.test_rel_l2);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g", r.lr);
    os << buf;
    if (include_timing) {
      std::snprintf(buf, sizeof buf, ",%.6f", r.seconds);
      os << buf;
    }
    os << '\n';
  }
}

namespace {

// pred_std · diag(σ) + μ as graph nodes.
Var to_physical(Var pred, const ChannelStats& stats) {
  Graph& g = *pred.graph;
  const std::size_t C = stats.mean.size();
  Tensor diag({C, C});
  for (std::size_t c = 0; c < C; ++c) diag(c, c) = stats.std[c];
  return add_bias(matmul(pred, g.constant(std::move(diag))), g.constant(Tensor({C}, stats.mean)));
}

}  // namespace

Tensor predict_fields(const MeshSample& raw, const ParamStore& params, const ModelConfig& config,
                      const Normalizer& normalizer, ForwardTrace* trace) {
  const MeshSample input = normalizer.standardize(raw);
  return normalizer.target.destandardize(predict(input, params, config, trace));
}

double mean_relative_l2(const ParamStore& params, const ModelConfig& config, const Dataset& dataset) {
  if (dataset.empty()) throw DataError("mean_relative_l2: empty dataset");
  double total = 0.0;
  for (const MeshSample& s : dataset.samples) {
    const Tensor pred = predict_fields(s, params, config, dataset.normalizer);
    Graph g;
    total += relative_l2_loss(g.constant(pred), s.target).value().item();
  }
  return total / static_cast<double>(dataset.size());
}

TrainResult train(const ModelConfig& model, const TrainConfig& config, const Dataset& train_set,
                  const Dataset* test_set, const TrainHooks& hooks) {
  model.validate();
  config.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  train_set.validate();

  // Inputs are standardized once; losses compare against raw targets.
  std::vector<MeshSample> inputs;
  inputs.reserve(train_set.size());
  for (const MeshSample& s : train_set.samples) inputs.push_back(train_set.normalizer.standardize(s));

  TrainResult result;
  result.params = init_params(model, config.seed);
  ParamStore& params = result.params;
  AdamWState state;
  AdamWOptions adam;
  adam.weight_decay = config.weight_decay;

  const std::size_t n = train_set.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(n);

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    record.lr = scheduled_lr(config, step, total_steps);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(begin + config.batch_size, n);
      const double weight = 1.0 / static_cast<double>(end - begin);
      params.zero_grad();
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t idx = order[k];
        const MeshSample& raw = train_set.samples[idx];
        Graph graph;
        const ModelWeights weights = bind_weights(graph, params, model);
        Var pred = to_physical(forward(graph, inputs[idx], weights, model), train_set.normalizer.target);
        Var loss = relative_l2_loss(pred, raw.target);
        if (config.grad_reg_weight > 0.0 && raw.grid) {
          loss = add(loss, scale(gradient_reg_loss(pred, raw.target, raw.grid), config.grad_reg_weight));
        }
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                             ", sample " + std::to_string(idx));
        }
        loss_sum += value;
        graph.backward(scale(loss, weight));
      }
      if (config.grad_clip) clip_grad_norm(params, config.clip_threshold);
      adamw_step(params, state, scheduled_lr(config, step, total_steps), adam);
      ++step;
    }
    record.train_loss = loss_sum / static_cast<double>(n);
    if (test_set != nullptr && !test_set->empty() && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
      record.test_rel_l2 = mean_relative_l2(params, model, *test_set);
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
  }
  if (hooks.checkpoint) save_checkpoint(*hooks.checkpoint, model, params);
  return result;
}

}  // namespace physattn
