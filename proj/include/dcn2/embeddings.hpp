#pragma once

// Hashed embedding table with an optional trainable scalar weight per row.
//
// Rows are stored as [e_1 .. e_d | w] (stride d + 1) when collision weights
// are enabled and as [e_1 .. e_d] otherwise. A lookup returns w * e.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcn2/errors.hpp"
#include "dcn2/features.hpp"
#include "dcn2/numerics.hpp"

namespace dcn2 {

struct TableInit {
  double mu = 0.0;
  double sigma = 0.05;
  double omega = 0.1;
  std::uint64_t seed = 1;
};

// Rejection sampling attempts before falling back to clamping.
inline constexpr int kMaxInitRetries = 64;

template <typename T>
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  // Embeddings from N(mu, sigma^2) truncated to [-omega, omega]; weights 1.
  static EmbeddingTable create(int hash_bits, std::size_t dim, bool collision_weights,
                               const TableInit& init) {
    if (!(init.sigma > 0.0)) throw ConfigError("embedding table: sigma must be > 0");
    if (!(init.omega > 0.0)) throw ConfigError("embedding table: omega must be > 0");
    EmbeddingTable t = zeros(hash_bits, dim, collision_weights, init);

    std::mt19937_64 rng(init.seed);
    std::normal_distribution<double> normal(init.mu, init.sigma);
    for (std::size_t r = 0; r < t.capacity_; ++r) {
      T* row = t.data_.data() + r * t.stride_;
      for (std::size_t k = 0; k < dim; ++k) {
        double v = normal(rng);
        for (int attempt = 0; attempt < kMaxInitRetries && std::abs(v) > init.omega;
             ++attempt) {
          v = normal(rng);
        }
        row[k] = T(std::clamp(v, -init.omega, init.omega));
      }
      if (collision_weights) row[dim] = T(1);
    }
    return t;
  }

  // All-zero storage (weights included); used when loading from disk.
  static EmbeddingTable zeros(int hash_bits, std::size_t dim, bool collision_weights,
                              const TableInit& init) {
    if (hash_bits < kMinHashBits || hash_bits > kMaxHashBits) {
      throw ConfigError("embedding table: hash_bits must be in [1, 30]");
    }
    if (dim < 1) throw ConfigError("embedding table: dim must be >= 1");
    EmbeddingTable t;
    t.hash_bits_ = hash_bits;
    t.capacity_ = std::size_t{1} << hash_bits;
    t.dim_ = dim;
    t.weighted_ = collision_weights;
    t.stride_ = dim + (collision_weights ? 1 : 0);
    t.init_ = init;
    t.data_.assign(t.capacity_ * t.stride_, T(0));
    return t;
  }

  int hash_bits() const { return hash_bits_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t stride() const { return stride_; }
  bool collision_weighted() const { return weighted_; }
  const TableInit& init() const { return init_; }

  std::span<const T> row(std::size_t index) const {
    check(index);
    return {data_.data() + index * stride_, dim_};
  }
  std::span<T> mutable_row(std::size_t index) {
    check(index);
    return {data_.data() + index * stride_, dim_};
  }
  T weight(std::size_t index) const {
    check(index);
    return weighted_ ? data_[index * stride_ + dim_] : T(1);
  }
  void set_weight(std::size_t index, T w) {
    check(index);
    if (!weighted_) throw ConfigError("set_weight on a table without collision weights");
    data_[index * stride_ + dim_] = w;
  }

  std::span<T> storage() { return data_; }
  std::span<const T> storage() const { return data_; }

  // out = w(index) * e(index). The weighted path costs exactly dim() extra
  // multiplications over the plain path.
  void lookup_into(std::size_t index, std::span<T> out) const {
    check(index);
    const T* r = data_.data() + index * stride_;
    if (weighted_) {
      const T w = r[dim_];
      for (std::size_t k = 0; k < dim_; ++k) out[k] = r[k] * w;
    } else {
      for (std::size_t k = 0; k < dim_; ++k) out[k] = r[k];
    }
  }

  // out += scale * w(index) * e(index)
  void lookup_accumulate(std::size_t index, T scale, std::span<T> out) const {
    check(index);
    const T* r = data_.data() + index * stride_;
    const T s = weighted_ ? scale * r[dim_] : scale;
    for (std::size_t k = 0; k < dim_; ++k) out[k] += r[k] * s;
  }

 private:
  void check(std::size_t index) const {
    if (index >= capacity_) {
      throw std::logic_error("embedding index " + std::to_string(index) +
                             " out of range for capacity " + std::to_string(capacity_));
    }
  }

  int hash_bits_ = 0;
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t stride_ = 0;
  bool weighted_ = false;
  TableInit init_;
  std::vector<T> data_;
};

template <typename T>
EmbeddingTable<T> init_table(int hash_bits, std::size_t dim, double omega, double mu,
                             double sigma, std::uint64_t rng_seed) {
  return EmbeddingTable<T>::create(hash_bits, dim, true, {mu, sigma, omega, rng_seed});
}

template <typename T>
DenseVector<T> lookup(const EmbeddingTable<T>& table, std::size_t index) {
  DenseVector<T> out(table.dim());
  table.lookup_into(index, out.span());
  return out;
}

// Sum of the first `valid` lookups; remaining slots are padding.
template <typename T>
DenseVector<T> lookup_multivalue(const EmbeddingTable<T>& table,
                                 std::span<const std::uint32_t> indices,
                                 std::size_t valid) {
  if (valid > indices.size()) throw ShapeError("lookup_multivalue: valid > len(indices)");
  DenseVector<T> out(table.dim());
  for (std::size_t i = 0; i < valid; ++i) table.lookup_accumulate(indices[i], T(1), out.span());
  return out;
}

// Row gradients for the rows touched by one batch. Each touched row gets a
// stride()-sized block laid out like the table row (embedding, then weight).
template <typename T>
class SparseRowGradients {
 public:
  SparseRowGradients() = default;
  SparseRowGradients(std::size_t capacity, std::size_t stride)
      : stride_(stride), slot_of_(capacity, kNoSlot) {}

  std::span<T> row(std::uint32_t index) {
    std::uint32_t& slot = slot_of_.at(index);
    if (slot == kNoSlot) {
      slot = static_cast<std::uint32_t>(rows_.size());
      rows_.push_back(index);
      values_.resize(values_.size() + stride_, T(0));
    }
    return {values_.data() + static_cast<std::size_t>(slot) * stride_, stride_};
  }

  // Empty span when the row was not touched.
  std::span<const T> find(std::uint32_t index) const {
    const std::uint32_t slot = slot_of_.at(index);
    if (slot == kNoSlot) return {};
    return {values_.data() + static_cast<std::size_t>(slot) * stride_, stride_};
  }

  const std::vector<std::uint32_t>& rows() const { return rows_; }
  std::span<const T> values() const { return values_; }
  std::span<T> values() { return values_; }
  std::size_t stride() const { return stride_; }

  void clear() {
    for (auto r : rows_) slot_of_[r] = kNoSlot;
    rows_.clear();
    values_.clear();
  }

 private:
  static constexpr std::uint32_t kNoSlot = std::numeric_limits<std::uint32_t>::max();
  std::size_t stride_ = 0;
  std::vector<std::uint32_t> slot_of_;
  std::vector<std::uint32_t> rows_;
  std::vector<T> values_;
};

// Backward of lookup for one slot: d/de = scale * w * upstream,
// d/dw = scale * <e, upstream>. Repeated indices accumulate.
template <typename T>
void accumulate_slot_gradient(const EmbeddingTable<T>& table, std::uint32_t index,
                              T scale, std::span<const T> upstream,
                              SparseRowGradients<T>& grads) {
  const std::span<const T> e = table.row(index);
  std::span<T> g = grads.row(index);
  const std::size_t d = table.dim();
  if (table.collision_weighted()) {
    const T sw = scale * table.weight(index);
    T dot = T(0);
    for (std::size_t k = 0; k < d; ++k) {
      g[k] += sw * upstream[k];
      dot += e[k] * upstream[k];
    }
    g[d] += scale * dot;
  } else {
    for (std::size_t k = 0; k < d; ++k) g[k] += scale * upstream[k];
  }
}

// `upstream_per_slot` holds one dim()-sized gradient per entry of `touched`.
template <typename T>
void accumulate_gradients(const EmbeddingTable<T>& table,
                          std::span<const std::uint32_t> touched,
                          std::span<const T> upstream_per_slot,
                          SparseRowGradients<T>& grads) {
  const std::size_t d = table.dim();
  if (upstream_per_slot.size() != touched.size() * d) {
    throw ShapeError("accumulate_gradients: upstream has " +
                     std::to_string(upstream_per_slot.size()) + " values, expected " +
                     std::to_string(touched.size() * d));
  }
  for (std::size_t s = 0; s < touched.size(); ++s) {
    accumulate_slot_gradient(table, touched[s], T(1), upstream_per_slot.subspan(s * d, d),
                             grads);
  }
}

struct WeightBucket {
  double low = 0.0;
  double high = 0.0;
  std::uint64_t count = 0;
};

struct WeightDistribution {
  std::vector<WeightBucket> buckets;
  std::uint64_t total = 0;
  std::uint64_t exactly_one = 0;
  // Weights with |w - 1| > epsilon.
  std::uint64_t modified = 0;
  std::uint64_t below_one = 0;
  std::uint64_t above_one = 0;
  double epsilon = 0.0;
  double fraction_modified = 0.0;
  double mean_modified = 1.0;
  // Sum of |w - 1| over modified weights on each side of 1.
  double mass_below = 0.0;
  double mass_above = 0.0;
  double min_weight = 1.0;
  double max_weight = 1.0;
  // Furthest modified weight from 1 on each side (0 when none).
  double lower_tail = 0.0;
  double upper_tail = 0.0;
};

template <typename T>
WeightDistribution export_weight_distribution(const EmbeddingTable<T>& table,
                                              double epsilon, std::size_t bins = 50) {
  if (!(epsilon > 0.0)) throw ConfigError("export_weight_distribution: epsilon must be > 0");
  if (bins == 0) throw ConfigError("export_weight_distribution: bins must be > 0");
  WeightDistribution out;
  out.epsilon = epsilon;
  out.total = table.capacity();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double sum_modified = 0.0;
  for (std::size_t i = 0; i < table.capacity(); ++i) {
    const double w = static_cast<double>(table.weight(i));
    lo = std::min(lo, w);
    hi = std::max(hi, w);
    if (w == 1.0) ++out.exactly_one;
    const double dev = w - 1.0;
    if (std::abs(dev) > epsilon) {
      ++out.modified;
      sum_modified += w;
      if (dev < 0) {
        ++out.below_one;
        out.mass_below += -dev;
        out.lower_tail = std::max(out.lower_tail, -dev);
      } else {
        ++out.above_one;
        out.mass_above += dev;
        out.upper_tail = std::max(out.upper_tail, dev);
      }
    }
  }
  out.min_weight = lo;
  out.max_weight = hi;
  out.fraction_modified =
      out.total == 0 ? 0.0 : static_cast<double>(out.modified) / static_cast<double>(out.total);
  out.mean_modified = out.modified == 0 ? 1.0 : sum_modified / static_cast<double>(out.modified);

  if (hi <= lo) {
    out.buckets.push_back({lo, hi, out.total});
    return out;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  out.buckets.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out.buckets[b].low = lo + width * static_cast<double>(b);
    out.buckets[b].high = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (std::size_t i = 0; i < table.capacity(); ++i) {
    const double w = static_cast<double>(table.weight(i));
    auto b = static_cast<std::size_t>((w - lo) / width);
    ++out.buckets[std::min(b, bins - 1)].count;
  }
  return out;
}

// Binary table file: 8-byte magic, then little-endian u32 version, u64
// capacity, u32 dim, u32 flags (bit 0: collision weights), f64 omega,
// u64 seed, followed by capacity * stride fp32 values.
inline constexpr char kTableMagic[8] = {'D', 'C', 'N', '2', 'T', 'B', 'L', '\0'};
inline constexpr std::uint32_t kTableVersion = 1;

namespace detail {

template <typename V>
void write_pod(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("unexpected end of table file");
  return v;
}

}  // namespace detail

template <typename T>
void write_table(std::ostream& out, const EmbeddingTable<T>& table) {
  out.write(kTableMagic, sizeof(kTableMagic));
  detail::write_pod<std::uint32_t>(out, kTableVersion);
  detail::write_pod<std::uint64_t>(out, table.capacity());
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  detail::write_pod<std::uint32_t>(out, table.collision_weighted() ? 1U : 0U);
  detail::write_pod<double>(out, table.init().omega);
  detail::write_pod<std::uint64_t>(out, table.init().seed);
  std::vector<float> block(table.storage().begin(), table.storage().end());
  out.write(reinterpret_cast<const char*>(block.data()),
            static_cast<std::streamsize>(block.size() * sizeof(float)));
  if (!out) throw IoError("failed writing embedding table");
}

template <typename T>
EmbeddingTable<T> read_table(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTableMagic, sizeof(magic)) != 0) {
    throw IoError("not an embedding table file (bad magic)");
  }
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kTableVersion) {
    throw IoError("unsupported table version " + std::to_string(version));
  }
  const auto capacity = detail::read_pod<std::uint64_t>(in);
  const auto dim = detail::read_pod<std::uint32_t>(in);
  const auto flags = detail::read_pod<std::uint32_t>(in);
  TableInit init;
  init.omega = detail::read_pod<double>(in);
  init.seed = detail::read_pod<std::uint64_t>(in);
  int bits = 0;
  while ((std::uint64_t{1} << bits) < capacity) ++bits;
  if ((std::uint64_t{1} << bits) != capacity || bits < kMinHashBits || bits > kMaxHashBits) {
    throw IoError("table capacity is not a supported power of two");
  }
  EmbeddingTable<T> table = EmbeddingTable<T>::zeros(bits, dim, (flags & 1U) != 0, init);
  std::vector<float> block(table.storage().size());
  in.read(reinterpret_cast<char*>(block.data()),
          static_cast<std::streamsize>(block.size() * sizeof(float)));
  if (!in) throw IoError("truncated embedding table block");
  std::copy(block.begin(), block.end(), table.storage().begin());
  return table;
}

}  // namespace dcn2
