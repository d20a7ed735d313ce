#include "physattn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "physattn/binary_io.hpp"
#include "physattn/darcy.hpp"
#include "physattn/error.hpp"
#include "physattn/runtime.hpp"

namespace physattn {

Task parse_task(const std::string& name) {
  if (name == "darcy") return Task::darcy;
  throw ConfigError("unknown task '" + name + "' (supported: darcy)");
}

ChannelStats ChannelStats::fit(const std::vector<const Tensor*>& fields) {
  if (fields.empty()) throw DataError("cannot fit statistics on an empty split");
  const std::size_t C = fields.front()->cols();
  ChannelStats s;
  s.mean.assign(C, 0.0);
  s.std.assign(C, 0.0);
  std::size_t rows = 0;
  for (const Tensor* f : fields) {
    if (f->cols() != C) throw DataError("channel count differs between samples");
    for (std::size_t r = 0; r < f->rows(); ++r)
      for (std::size_t c = 0; c < C; ++c) s.mean[c] += (*f)(r, c);
    rows += f->rows();
  }
  for (double& m : s.mean) m /= static_cast<double>(rows);
  for (const Tensor* f : fields)
    for (std::size_t r = 0; r < f->rows(); ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = (*f)(r, c) - s.mean[c];
        s.std[c] += d * d;
      }
  for (double& v : s.std) {
    v = std::sqrt(v / static_cast<double>(rows));
    if (v == 0.0) v = 1.0;
  }
  return s;
}

Tensor ChannelStats::standardize(const Tensor& field) const {
  if (field.rank() != 2 || field.cols() != mean.size()) {
    throw ShapeError("standardize: field " + shape_string(field.shape()) + " vs " + std::to_string(mean.size()) +
                     " channels");
  }
  Tensor out = Tensor::uninitialized(field.shape());
  const std::size_t C = mean.size();
  for (std::size_t k = 0; k < field.size(); ++k) out[k] = (field[k] - mean[k % C]) / std[k % C];
  return out;
}

Tensor ChannelStats::destandardize(const Tensor& field) const {
  if (field.rank() != 2 || field.cols() != mean.size()) {
    throw ShapeError("destandardize: field " + shape_string(field.shape()) + " vs " + std::to_string(mean.size()) +
                     " channels");
  }
  Tensor out = Tensor::uninitialized(field.shape());
  const std::size_t C = mean.size();
  for (std::size_t k = 0; k < field.size(); ++k) out[k] = field[k] * std[k % C] + mean[k % C];
  return out;
}

MeshSample Normalizer::standardize(const MeshSample& raw) const {
  MeshSample s = raw;
  if (s.observed) s.observed = observed.standardize(*s.observed);
  s.target = target.standardize(s.target);
  return s;
}

void Dataset::validate() const {
  if (samples.empty()) return;
  const MeshSample& first = samples.front();
  for (const MeshSample& s : samples) {
    if (s.coords.cols() != first.coords.cols() || s.observed_dim() != first.observed_dim() ||
        s.target.cols() != first.target.cols() || s.grid.has_value() != first.grid.has_value() ||
        (s.grid && !(*s.grid == *first.grid))) {
      throw DataError("dataset samples disagree in dimensions or structure");
    }
    if (s.target.rows() != s.points() || (s.observed && s.observed->rows() != s.points())) {
      throw DataError("dataset sample has inconsistent row counts");
    }
  }
  if (normalizer.target.mean.size() != first.target.cols() ||
      normalizer.observed.mean.size() != first.observed_dim()) {
    throw DataError("normalization stats do not match the sample channels");
  }
}

namespace {

std::vector<MeshSample> generate(Task task, std::uint64_t first_seed, std::size_t count, std::size_t resolution) {
  std::vector<MeshSample> out(count);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < count; i += stride) {
      switch (task) {
        case Task::darcy:
          out[i] = make_darcy_sample(first_seed + i, resolution);
          break;
      }
    }
  };
  const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(count, 1));
  if (threads <= 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> failures(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        work(t, threads);
      } catch (...) {
        failures[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
  return out;
}

}  // namespace

DatasetSplit build_dataset(Task task, std::size_t n_train, std::size_t n_test, std::size_t resolution,
                           std::uint64_t base_seed) {
  if (n_train == 0) throw ConfigError("n_train must be positive");
  if (base_seed > std::numeric_limits<std::uint64_t>::max() - n_train - n_test) {
    throw ConfigError("seed range overflows");
  }
  // Train seeds occupy [base, train_end), test seeds [test_seed, test_seed + n_test).
  const std::uint64_t train_end = base_seed + n_train;
  const std::uint64_t test_seed = train_end;
  if (test_seed < train_end && test_seed + n_test > base_seed) {
    throw ContractError("train and test seed ranges overlap");
  }

  DatasetSplit split;
  split.train.samples = generate(task, base_seed, n_train, resolution);
  split.test.samples = generate(task, test_seed, n_test, resolution);

  std::vector<const Tensor*> observed, target;
  for (const MeshSample& s : split.train.samples) {
    if (s.observed) observed.push_back(&*s.observed);
    target.push_back(&s.target);
  }
  if (!observed.empty()) split.train.normalizer.observed = ChannelStats::fit(observed);
  split.train.normalizer.target = ChannelStats::fit(target);
  split.test.normalizer = split.train.normalizer;
  return split;
}

namespace {

void write_stats(binary::Writer& w, const ChannelStats& s) {
  w.f64s(s.mean);
  w.f64s(s.std);
}

ChannelStats read_stats(binary::Reader& r, std::size_t channels) {
  ChannelStats s;
  s.mean.resize(channels);
  s.std.resize(channels);
  r.f64s(s.mean);
  r.f64s(s.std);
  return s;
}

constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 40;

}  // namespace

void write_dataset(std::ostream& os, const Dataset& dataset) {
  dataset.validate();
  if (dataset.empty()) throw DataError("cannot write an empty dataset");
  const MeshSample& first = dataset.samples.front();
  binary::Writer w(os);
  w.bytes("PDED");
  w.u32(kDatasetVersion);
  w.u32(first.grid ? 0 : 1);
  w.u64(dataset.size());
  w.u64(first.points());
  w.u64(first.grid ? first.grid->height : 0);
  w.u64(first.grid ? first.grid->width : 0);
  w.u64(first.coords.cols());
  w.u64(first.observed_dim());
  w.u64(first.target.cols());
  write_stats(w, dataset.normalizer.observed);
  write_stats(w, dataset.normalizer.target);
  for (const MeshSample& s : dataset.samples) {
    if (s.points() != first.points()) throw DataError("dataset file requires equal point counts");
    w.f64s(s.coords.data());
    if (s.observed) w.f64s(s.observed->data());
    w.f64s(s.target.data());
  }
  if (!os) throw DataError("dataset: write failed");
}

Dataset read_dataset(std::istream& is) {
  binary::Reader r(is, "dataset");
  r.expect_magic("PDED");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw DataError("dataset: unsupported version " + std::to_string(version));
  const std::uint32_t structure = r.u32();
  if (structure > 1) throw DataError("dataset: unknown structure tag " + std::to_string(structure));
  const std::uint64_t count = r.u64(), n = r.u64(), height = r.u64(), width = r.u64();
  const std::uint64_t cg = r.u64(), cu = r.u64(), cout = r.u64();
  if (count == 0 || n == 0 || cg == 0 || cout == 0 || count > kMaxCount || n > kMaxCount || cg > 16 || cu > 4096 ||
      cout > 4096) {
    throw DataError("dataset: implausible header counts");
  }
  std::optional<GridShape> grid;
  if (structure == 0) {
    if (height * width != n) throw DataError("dataset: grid extents do not match the point count");
    grid = GridShape{height, width};
  }

  Dataset d;
  d.normalizer.observed = read_stats(r, cu);
  d.normalizer.target = read_stats(r, cout);
  d.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    MeshSample s;
    s.coords = Tensor::uninitialized({n, cg});
    r.f64s(s.coords.data());
    if (cu > 0) {
      s.observed = Tensor::uninitialized({n, cu});
      r.f64s(s.observed->data());
    }
    s.target = Tensor::uninitialized({n, cout});
    r.f64s(s.target.data());
    s.grid = grid;
    d.samples.push_back(std::move(s));
  }
  r.expect_end();
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_dataset(os, dataset);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset " + path.string());
  return read_dataset(is);
}

}  // namespace physattn
