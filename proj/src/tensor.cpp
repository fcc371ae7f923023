#include "patchmix/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

namespace patchmix {

// ---------------------------------------------------------------- tensor

TensorF32::TensorF32(std::vector<uint32_t> shape, float fill)
    : shape_(std::move(shape)) {
  size_t n = 1;
  for (uint32_t d : shape_) n *= d;
  data_.assign(n, fill);
}

TensorF32 TensorF32::from_data(std::vector<uint32_t> shape,
                               std::vector<float> data) {
  size_t n = 1;
  for (uint32_t d : shape) n *= d;
  if (n != data.size())
    throw ArgumentError("tensor shape does not match data length");
  TensorF32 t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

bool TensorF32::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void ensure_finite(const TensorF32& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + what);
}

void ensure_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
}

// ------------------------------------------------------------------ rng

namespace {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t sm = seed;
  for (auto& s : state_) s = splitmix64(sm);
}

uint64_t Rng::next_u64() {
  // xoshiro256** (Blackman & Vigna)
  uint64_t result = rotl(state_[1] * 5, 7) * 9;
  uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) throw ArgumentError("uniform: requires lo < hi");
  double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  double r = lo + u * (hi - lo);
  // fp rounding can land on hi when the interval is tiny; contract is [lo,hi)
  if (r >= hi) r = std::nextafter(hi, lo);
  return r;
}

uint64_t Rng::below(uint64_t n) {
  if (n == 0) throw ArgumentError("below: n must be positive");
  uint64_t threshold = (0 - n) % n;  // 2^64 mod n
  uint64_t r;
  do {
    r = next_u64();
  } while (r < threshold);
  return r % n;
}

double Rng::gaussian(double mean, double stddev) {
  double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
  double u2 = uniform01();
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  return mean + stddev * z;
}

Rng Rng::split() { return Rng(next_u64()); }

// -------------------------------------------------------------- kernels

double dot(const float* a, const float* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double l2_norm(const float* a, size_t n) { return std::sqrt(dot(a, a, n)); }

double sum(const float* a, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double mean(const float* a, size_t n) {
  if (n == 0) throw ArgumentError("mean of empty range");
  return sum(a, n) / static_cast<double>(n);
}

double cosine(const float* a, const float* b, size_t n) {
  double na = l2_norm(a, n);
  double nb = l2_norm(b, n);
  if (na == 0.0 || nb == 0.0)
    throw DegenerateInputError("cosine: zero-norm input");
  double c = dot(a, b, n) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size())
    throw ArgumentError("cosine: length mismatch");
  return cosine(a.data(), b.data(), a.size());
}

std::vector<double> softmax(const std::vector<double>& x, double temperature) {
  if (!(temperature > 0.0))
    throw ArgumentError("softmax: temperature must be positive");
  if (x.empty()) throw ArgumentError("softmax of empty vector");
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> out(x.size());
  double z = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp((x[i] - mx) / temperature);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

// --------------------------------------------------------- tensor files

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("tensor file truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_pmx(const std::string& path, const TensorF32& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write("PMX1", 4);
  put_u32(f, static_cast<uint32_t>(t.rank()));
  for (uint32_t d : t.shape()) put_u32(f, d);
  for (size_t i = 0; i < t.numel(); ++i) {
    uint32_t bits;
    float v = t[i];
    std::memcpy(&bits, &v, 4);
    put_u32(f, bits);
  }
  if (!f) throw IoError("write failed: " + path);
}

TensorF32 load_pmx(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing tensor file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PMX1", 4) != 0)
    throw IoError("unknown magic in tensor file: " + path);
  uint32_t rank = get_u32(f);
  if (rank > 8) throw IoError("implausible tensor rank in: " + path);
  std::vector<uint32_t> shape(rank);
  size_t n = 1;
  for (uint32_t& d : shape) {
    d = get_u32(f);
    n *= d;
  }
  std::vector<float> data(n);
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits = get_u32(f);
    std::memcpy(&data[i], &bits, 4);
  }
  return TensorF32::from_data(std::move(shape), std::move(data));
}

}  // namespace patchmix
