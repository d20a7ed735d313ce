#include "physattn/darcy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "physattn/error.hpp"

namespace physattn {

Tensor generate_permeability(std::uint64_t seed, std::size_t resolution, const PermeabilityOptions& options) {
  if (resolution < 8) throw ConfigError("permeability resolution must be at least 8");
  const std::size_t R = resolution;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> field(R * R);
  for (double& v : field) v = noise(rng);

  std::vector<double> next(R * R);
  for (std::size_t pass = 0; pass < options.smoothing_passes; ++pass) {
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t j = 0; j < R; ++j) {
        double total = 0.0;
        int count = 0;
        for (std::size_t ii = (i == 0 ? 0 : i - 1); ii <= std::min(i + 1, R - 1); ++ii)
          for (std::size_t jj = (j == 0 ? 0 : j - 1); jj <= std::min(j + 1, R - 1); ++jj) {
            total += field[ii * R + jj];
            ++count;
          }
        next[i * R + j] = total / count;
      }
    }
    field.swap(next);
  }

  std::vector<double> sorted = field;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  Tensor a({R, R});
  for (std::size_t k = 0; k < field.size(); ++k) a[k] = field[k] >= median ? options.high : options.low;
  return a;
}

namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

// Matrix-free 5-point operator on the interior nodes of an R×R grid; vectors
// are full R×R grids whose boundary entries stay zero.
class DarcyOperator {
 public:
  explicit DarcyOperator(const Tensor& a) : R_(a.rows()) {
    const double inv_h2 = static_cast<double>((R_ - 1) * (R_ - 1));
    east_.assign(R_ * R_, 0.0);
    south_.assign(R_ * R_, 0.0);
    for (std::size_t i = 0; i < R_; ++i)
      for (std::size_t j = 0; j < R_; ++j) {
        if (j + 1 < R_) east_[i * R_ + j] = harmonic(a(i, j), a(i, j + 1)) * inv_h2;
        if (i + 1 < R_) south_[i * R_ + j] = harmonic(a(i, j), a(i + 1, j)) * inv_h2;
      }
  }

  std::size_t size() const { return R_; }
  bool interior(std::size_t i, std::size_t j) const { return i > 0 && j > 0 && i + 1 < R_ && j + 1 < R_; }

  void apply(const std::vector<double>& p, std::vector<double>& out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 1; i + 1 < R_; ++i)
      for (std::size_t j = 1; j + 1 < R_; ++j) {
        const std::size_t k = i * R_ + j;
        const double ce = east_[k], cw = east_[k - 1], cs = south_[k], cn = south_[k - R_];
        out[k] = (ce + cw + cs + cn) * p[k] - ce * p[k + 1] - cw * p[k - 1] - cs * p[k + R_] - cn * p[k - R_];
      }
  }

 private:
  std::size_t R_;
  std::vector<double> east_, south_;  // face coefficient / h² to the east / south neighbour
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void require_square_grid(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols() || a.rows() < 3) {
    throw ShapeError("darcy: permeability must be a square grid of side >= 3, got " + shape_string(a.shape()));
  }
  for (double v : a.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("darcy: permeability must be positive and finite");
  }
}

}  // namespace

double darcy_residual(const Tensor& permeability, const Tensor& pressure, double forcing) {
  require_square_grid(permeability);
  if (pressure.shape() != permeability.shape()) {
    throw ShapeError("darcy_residual: pressure " + shape_string(pressure.shape()) + " vs permeability " +
                     shape_string(permeability.shape()));
  }
  const DarcyOperator op(permeability);
  const std::size_t R = op.size();
  std::vector<double> p(pressure.data().begin(), pressure.data().end()), ap(R * R);
  op.apply(p, ap);
  double rr = 0.0, ff = 0.0;
  for (std::size_t i = 1; i + 1 < R; ++i)
    for (std::size_t j = 1; j + 1 < R; ++j) {
      const double r = forcing - ap[i * R + j];
      rr += r * r;
      ff += forcing * forcing;
    }
  if (ff == 0.0) return std::sqrt(rr);
  return std::sqrt(rr / ff);
}

DarcySolution solve_darcy(const Tensor& permeability, double forcing, double tolerance) {
  require_square_grid(permeability);
  const DarcyOperator op(permeability);
  const std::size_t R = op.size();
  const std::size_t unknowns = (R - 2) * (R - 2);

  DarcySolution sol;
  sol.pressure = Tensor({R, R});
  if (forcing == 0.0) return sol;

  std::vector<double> b(R * R, 0.0);
  for (std::size_t i = 1; i + 1 < R; ++i)
    for (std::size_t j = 1; j + 1 < R; ++j) b[i * R + j] = forcing;
  const double b_norm = std::sqrt(dot(b, b));

  std::vector<double> x(R * R, 0.0), r = b, p = r, ap(R * R);
  double rr = dot(r, r);
  const std::size_t max_iterations = 10 * unknowns;
  std::size_t it = 0;
  while (true) {
    if (std::sqrt(rr) <= tolerance * b_norm) {
      // The recurrence residual drifts from the true one; confirm before
      // stopping and restart from the true residual otherwise.
      op.apply(x, ap);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] = b[k] - ap[k];
      rr = dot(r, r);
      if (std::sqrt(rr) <= tolerance * b_norm) break;
      p = r;
    }
    if (it >= max_iterations) {
      throw NumericError("darcy: conjugate gradients did not converge in " + std::to_string(max_iterations) +
                         " iterations (relative residual " + std::to_string(std::sqrt(rr) / b_norm) + ")");
    }
    op.apply(p, ap);
    const double alpha = rr / dot(p, ap);
    for (std::size_t k = 0; k < x.size(); ++k) {
      x[k] += alpha * p[k];
      r[k] -= alpha * ap[k];
    }
    const double rr_next = dot(r, r);
    const double beta = rr_next / rr;
    rr = rr_next;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = r[k] + beta * p[k];
    ++it;
  }
  std::copy(x.begin(), x.end(), sol.pressure.raw());
  sol.iterations = it;
  sol.relative_residual = std::sqrt(rr) / b_norm;
  return sol;
}

MeshSample make_darcy_sample(std::uint64_t seed, std::size_t resolution) {
  const Tensor a = generate_permeability(seed, resolution);
  const DarcySolution sol = solve_darcy(a, 1.0);
  const std::size_t R = resolution, N = R * R;
  MeshSample s;
  s.coords = Tensor({N, 2});
  s.observed = Tensor({N, 1});
  s.target = Tensor({N, 1});
  s.grid = GridShape{R, R};
  const double inv = 1.0 / static_cast<double>(R - 1);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < R; ++j) {
      const std::size_t k = i * R + j;
      s.coords(k, 0) = static_cast<double>(j) * inv;
      s.coords(k, 1) = static_cast<double>(i) * inv;
      (*s.observed)(k, 0) = a[k];
      s.target(k, 0) = sol.pressure[k];
    }
  return s;
}

namespace {

Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t C = t.cols();
  Tensor out({rows.size(), C});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(t.raw() + rows[r] * C, C, out.raw() + r * C);
  return out;
}

}  // namespace

MeshSample resample_mesh(const MeshSample& sample, double keep_fraction, std::uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must lie in (0, 1]");
  const std::size_t N = sample.points();
  const auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(N)));
  if (keep < 4) throw DataError("resampled mesh would keep only " + std::to_string(keep) + " points");

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, N - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());

  MeshSample out;
  out.coords = take_rows(sample.coords, order);
  if (sample.observed) out.observed = take_rows(*sample.observed, order);
  out.target = take_rows(sample.target, order);
  return out;
}

}  // namespace physattn
