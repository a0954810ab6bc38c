#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmm {

// Error taxonomy, mapped to CLI exit codes in tools/.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input (dimensions, ranges, unknown config keys).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a domain invariant (NaN payload, T=0,
// out-of-range token id).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data (bad magic, truncation, CRC mismatch).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Exact frame rate as a rational, so 50 Hz round-trips through files
// without float drift.
struct Rational {
  std::uint32_t num = 1;
  std::uint32_t den = 1;

  double hz() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
};

// Row-major float32 matrix. Storage is 32-bit by contract; accumulation
// anywhere in the library happens in 64-bit.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), values(r * c, fill) {}

  float* row(std::size_t i) { return values.data() + i * cols; }
  const float* row(std::size_t i) const { return values.data() + i * cols; }
  std::span<const float> row_span(std::size_t i) const { return {row(i), cols}; }
  float& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  float at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

  bool operator==(const Matrix&) const = default;
};

bool all_finite(const Matrix& m);

// Deterministic 64-bit mixing/hashing used for seed derivation and
// id-keyed subsampling.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

// Mixes a stream tag into a base seed so sub-components (layers, stages,
// init restarts) get decorrelated but reproducible RNG streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return splitmix64(base ^ splitmix64(tag + 0x9e3779b97f4a7c15ULL));
}

unsigned resolve_jobs(unsigned jobs);

// Runs fn over [0, n) split into fixed-size chunks. The chunk grid depends
// only on n and chunk_size, never on the worker count, so chunk-indexed
// partial results reduce to bit-identical totals for any number of jobs.
void parallel_chunks(std::size_t n, std::size_t chunk_size, unsigned jobs,
                     const std::function<void(std::size_t chunk_index, std::size_t begin,
                                              std::size_t end)>& fn);

inline std::size_t chunk_count(std::size_t n, std::size_t chunk_size) {
  return (n + chunk_size - 1) / chunk_size;
}

}  // namespace mmm
