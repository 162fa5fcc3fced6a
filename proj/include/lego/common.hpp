#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <iostream>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lego {

// Row-major so that a user's embedding is a contiguous slice.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Warnings go to stderr unless silenced; tests silence them.
inline bool& warnings_enabled() {
  static bool enabled = true;
  return enabled;
}

inline void warn(std::string_view message) {
  static std::mutex mu;
  if (!warnings_enabled()) return;
  std::lock_guard lock(mu);
  std::cerr << "[lego] warning: " << message << '\n';
}

// FNV-1a, 64 bit. Used for checksums and content keys; not cryptographic.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::string_view text) { return update(text.data(), text.size()); }
  template <typename T>
    requires std::is_trivially_copyable_v<T>
  Fnv1a& update_value(const T& value) {
    return update(&value, sizeof(T));
  }
  Fnv1a& update(const Matrix& m) {
    update_value(static_cast<std::int64_t>(m.rows()));
    update_value(static_cast<std::int64_t>(m.cols()));
    return update(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  Fnv1a& update(const Labels& labels) {
    update_value(static_cast<std::int64_t>(labels.size()));
    return update(labels.data(), sizeof(int) * labels.size());
  }
  [[nodiscard]] std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

// Derives an independent stream seed from a parent seed and a tag, so that
// per-attribute runs do not depend on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  Fnv1a h;
  h.update_value(seed);
  h.update(tag);
  return h.digest();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Gathers `rows` of `source` into a new matrix.
inline Matrix gather_rows(const Matrix& source, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = source.row(rows[i]);
  return out;
}

inline Labels gather_labels(const Labels& source, std::span<const int> rows) {
  Labels out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = source[static_cast<std::size_t>(rows[i])];
  return out;
}

// Epoch-style sampler: uniform without replacement within a pass over [0, n),
// reshuffled at every pass.
class BatchSampler {
 public:
  BatchSampler(int n, int batch_size, std::uint64_t seed)
      : n_(n), batch_(std::min(batch_size, n)), rng_(seed) {
    if (n <= 0) throw Error("BatchSampler: empty population");
    if (batch_size <= 0) throw Error("BatchSampler: batch size must be positive");
    order_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
    reshuffle();
  }

  std::vector<int> next() {
    if (cursor_ + batch_ > n_) reshuffle();
    std::vector<int> out(order_.begin() + cursor_, order_.begin() + cursor_ + batch_);
    cursor_ += batch_;
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  int n_;
  int batch_;
  Rng rng_;
  std::vector<int> order_;
  int cursor_ = 0;
};

}  // namespace lego
