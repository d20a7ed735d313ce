#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "physattn/graph.hpp"
#include "physattn/physics_attention.hpp"
#include "physattn/tensor.hpp"

namespace physattn::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double spread = 1.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Plain values of one multi-head attention block.
struct AttentionValues {
  std::vector<Tensor> proj_w, proj_b;  // per head: C_h×M, M
  Tensor wq, bq, wk, bk, wv, bv;       // C_h×C_h, C_h
  Tensor wo, bo;                       // C×C, C
};

inline AttentionValues random_attention(std::size_t channels, std::size_t heads, std::size_t slices,
                                        std::mt19937_64& rng) {
  const std::size_t ch = channels / heads;
  AttentionValues a;
  for (std::size_t h = 0; h < heads; ++h) {
    a.proj_w.push_back(random_tensor({ch, slices}, rng));
    a.proj_b.push_back(random_tensor({slices}, rng, 0.5));
  }
  a.wq = random_tensor({ch, ch}, rng);
  a.bq = random_tensor({ch}, rng, 0.3);
  a.wk = random_tensor({ch, ch}, rng);
  a.bk = random_tensor({ch}, rng, 0.3);
  a.wv = random_tensor({ch, ch}, rng);
  a.bv = random_tensor({ch}, rng, 0.3);
  a.wo = random_tensor({channels, channels}, rng);
  a.bo = random_tensor({channels}, rng, 0.3);
  return a;
}

inline AttentionParams bind_attention(Graph& g, const AttentionValues& a) {
  AttentionParams p;
  for (std::size_t h = 0; h < a.proj_w.size(); ++h) {
    p.slice_projectors.push_back({{g.constant(a.proj_w[h]), g.constant(a.proj_b[h])}, ProjectorKind::pointwise});
  }
  p.tokens.query = {g.constant(a.wq), g.constant(a.bq)};
  p.tokens.key = {g.constant(a.wk), g.constant(a.bk)};
  p.tokens.value = {g.constant(a.wv), g.constant(a.bv)};
  p.output = {g.constant(a.wo), g.constant(a.bo)};
  return p;
}

// Single-pass loop evaluation of slice, encode, attend, deslice per head,
// then the output map. `pre_output` receives the concatenated head outputs.
inline Tensor naive_physics_attention(const Tensor& x, const AttentionValues& a, std::size_t heads,
                                      Tensor* pre_output = nullptr) {
  const std::size_t n = x.rows(), c = x.cols(), ch = c / heads;
  const std::size_t m = a.proj_b.front().size();
  Tensor merged({n, c});
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<std::vector<double>> w(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i) {
      double top = -1e300;
      for (std::size_t j = 0; j < m; ++j) {
        double s = a.proj_b[h][j];
        for (std::size_t k = 0; k < ch; ++k) s += x(i, h * ch + k) * a.proj_w[h](k, j);
        w[i][j] = s;
        top = std::max(top, s);
      }
      double total = 0.0;
      for (double& v : w[i]) total += (v = std::exp(v - top));
      for (double& v : w[i]) v /= total;
    }
    std::vector<std::vector<double>> z(m, std::vector<double>(ch, 0.0));
    for (std::size_t j = 0; j < m; ++j) {
      double mass = 0.0;
      for (std::size_t i = 0; i < n; ++i) mass += w[i][j];
      for (std::size_t k = 0; k < ch; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += w[i][j] * x(i, h * ch + k);
        z[j][k] = s / (mass + 1e-8);
      }
    }
    auto project = [&](const Tensor& wt, const Tensor& b) {
      std::vector<std::vector<double>> out(m, std::vector<double>(ch));
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < ch; ++k) {
          double s = b[k];
          for (std::size_t r = 0; r < ch; ++r) s += z[j][r] * wt(r, k);
          out[j][k] = s;
        }
      return out;
    };
    const auto q = project(a.wq, a.bq), kk = project(a.wk, a.bk), v = project(a.wv, a.bv);
    std::vector<std::vector<double>> zt(m, std::vector<double>(ch, 0.0));
    for (std::size_t r = 0; r < m; ++r) {
      std::vector<double> logits(m);
      double top = -1e300;
      for (std::size_t s = 0; s < m; ++s) {
        double dot = 0.0;
        for (std::size_t k = 0; k < ch; ++k) dot += q[r][k] * kk[s][k];
        logits[s] = dot / std::sqrt(static_cast<double>(ch));
        top = std::max(top, logits[s]);
      }
      double total = 0.0;
      for (double& l : logits) total += (l = std::exp(l - top));
      for (std::size_t s = 0; s < m; ++s)
        for (std::size_t k = 0; k < ch; ++k) zt[r][k] += logits[s] / total * v[s][k];
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < ch; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += w[i][j] * zt[j][k];
        merged(i, h * ch + k) = s;
      }
  }
  if (pre_output) *pre_output = merged;
  Tensor out = naive_matmul(merged, a.wo);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) out(i, k) += a.bo[k];
  return out;
}

inline Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) out(i, k) = x(perm[i], k);
  return out;
}

}  // namespace physattn::testing
