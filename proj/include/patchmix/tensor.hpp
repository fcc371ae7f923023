// Dense float32 tensor, deterministic RNG, and the elementwise/reduction
// kernels shared by every other module. Storage is row-major float32;
// reductions accumulate in float64.
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchmix {

// ---------------------------------------------------------------- errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Precondition / validation failure (CLI exit code 1).
struct ArgumentError : Error {
  using Error::Error;
};
// Zero-norm vectors and similar degenerate numeric inputs.
struct DegenerateInputError : ArgumentError {
  using ArgumentError::ArgumentError;
};
// Operation called in the wrong order (e.g. backward without forward).
struct StateError : Error {
  using Error::Error;
};
// File ingestion problems; message distinguishes magic/shape/missing-file.
struct IoError : Error {
  using Error::Error;
};
// Exact solver asked for an instance above its hard size bound.
struct CapacityError : ArgumentError {
  using ArgumentError::ArgumentError;
};
// Dataset cannot satisfy an episode request.
struct SamplingError : ArgumentError {
  using ArgumentError::ArgumentError;
};
// NaN/Inf surfaced by a numeric pipeline (CLI exit code 2).
struct NumericError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------- tensor

// Dense N-dimensional float32 array, row-major, immutable by convention
// once handed to another module.
class TensorF32 {
 public:
  TensorF32() = default;
  explicit TensorF32(std::vector<uint32_t> shape, float fill = 0.0f);
  static TensorF32 from_data(std::vector<uint32_t> shape,
                             std::vector<float> data);

  const std::vector<uint32_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }
  uint32_t dim(size_t i) const { return shape_.at(i); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float operator[](size_t i) const { return data_[i]; }
  float& operator[](size_t i) { return data_[i]; }

  const std::vector<float>& vec() const { return data_; }
  std::vector<float>& vec() { return data_; }

  bool all_finite() const;
  bool same_shape(const TensorF32& other) const {
    return shape_ == other.shape_;
  }

 private:
  std::vector<uint32_t> shape_;
  std::vector<float> data_;
};

// Throws NumericError naming `what` if any element is NaN/Inf.
void ensure_finite(const TensorF32& t, const std::string& what);
void ensure_finite(double v, const std::string& what);

// ------------------------------------------------------------------ rng

// Deterministic xoshiro256** stream seeded via splitmix64. The same seed
// yields the same stream on every platform; all stochastic operations in
// the library take an Rng handle explicitly (no global state).
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform real in [lo, hi). lo >= hi is an argument error.
  double uniform(double lo, double hi);
  double uniform01() { return uniform(0.0, 1.0); }

  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n);

  // Box-Muller; consumes exactly two uniform draws per call.
  double gaussian(double mean = 0.0, double stddev = 1.0);

  // Child stream: seeded from the next draw of this stream. Split children
  // are independent of later draws from the parent.
  Rng split();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::array<uint64_t, 4> state_;
};

// -------------------------------------------------------------- kernels

// <a,b> / (|a||b|), accumulated in float64. Zero-norm input is a
// degenerate-input error.
double cosine(const float* a, const float* b, size_t n);
double cosine(const std::vector<float>& a, const std::vector<float>& b);

// Shift-invariant softmax with temperature; outputs sum to 1.
std::vector<double> softmax(const std::vector<double>& x, double temperature);

double dot(const float* a, const float* b, size_t n);
double l2_norm(const float* a, size_t n);
double sum(const float* a, size_t n);
double mean(const float* a, size_t n);

// --------------------------------------------------------- tensor files

// Binary tensor file: magic "PMX1", u32 rank, rank x u32 dims, then the
// little-endian f32 payload. Bit-exact across platforms.
void save_pmx(const std::string& path, const TensorF32& t);
TensorF32 load_pmx(const std::string& path);

}  // namespace patchmix
