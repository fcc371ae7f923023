#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "patchmix/tensor.hpp"

using namespace patchmix;

TEST_CASE("uniform draws stay in range and advance the stream") {
  Rng rng(123);
  double a = rng.uniform(0.0, 1.0);
  double b = rng.uniform(0.0, 1.0);
  CHECK(a != b);
  CHECK(a >= 0.0);
  CHECK(a < 1.0);

  Rng tight(9);
  for (int i = 0; i < 2000; ++i) {
    double v = tight.uniform(5.0, 5.0000001);
    CHECK(v >= 5.0);
    CHECK(v < 5.0000001);
  }
  CHECK_THROWS_AS(rng.uniform(1.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(rng.uniform(2.0, 1.0), ArgumentError);
}

TEST_CASE("first draws at seed 7 match the frozen golden stream") {
  Rng rng(7);
  CHECK(rng.uniform(0.0, 1.0) == doctest::Approx(0.7005764821796896).epsilon(0));
  CHECK(rng.uniform(0.0, 1.0) == doctest::Approx(0.27875122947378428).epsilon(0));
  CHECK(rng.uniform(0.0, 1.0) == doctest::Approx(0.83962746187641979).epsilon(0));
}

TEST_CASE("identical seeds give bit-identical streams, splits diverge") {
  Rng a(555), b(555);
  for (int i = 0; i < 200; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng parent(1);
  Rng child1 = parent.split();
  Rng child2 = parent.split();
  CHECK(child1.next_u64() != child2.next_u64());
}

TEST_CASE("below is bounded and shuffle is a permutation") {
  Rng rng(77);
  for (int i = 0; i < 500; ++i) CHECK(rng.below(7) < 7);
  CHECK_THROWS_AS(rng.below(0), ArgumentError);
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> s = v;
  rng.shuffle(s);
  std::vector<int> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == v);
}

TEST_CASE("cosine identities and scale-sign property") {
  std::vector<float> v = {1.f, -2.f, 3.f};
  std::vector<float> nv = {-1.f, 2.f, -3.f};
  CHECK(cosine(v, v) == doctest::Approx(1.0));
  CHECK(cosine(v, nv) == doctest::Approx(-1.0));
  CHECK(cosine({1.f, 0.f}, {0.f, 1.f}) == doctest::Approx(0.0));

  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<float> a(4), b(4);
    for (int i = 0; i < 4; ++i) {
      a[i] = static_cast<float>(rng.gaussian());
      b[i] = static_cast<float>(rng.gaussian());
    }
    double alpha = rng.uniform(0.1, 3.0) * (rng.below(2) ? 1.0 : -1.0);
    double beta = rng.uniform(0.1, 3.0) * (rng.below(2) ? 1.0 : -1.0);
    std::vector<float> sa(4), sb(4);
    for (int i = 0; i < 4; ++i) {
      sa[i] = static_cast<float>(alpha * a[i]);
      sb[i] = static_cast<float>(beta * b[i]);
    }
    double sign = alpha * beta > 0 ? 1.0 : -1.0;
    CHECK(cosine(sa, sb) == doctest::Approx(sign * cosine(a, b)).epsilon(1e-5));
  }
  std::vector<float> zero = {0.f, 0.f};
  CHECK_THROWS_AS(cosine(zero, v = {1.f, 2.f}), DegenerateInputError);
}

TEST_CASE("softmax is a shift-invariant distribution") {
  std::vector<double> s = softmax({0.0, std::log(3.0)}, 1.0);
  CHECK(s[0] == doctest::Approx(0.25));
  CHECK(s[1] == doctest::Approx(0.75));

  std::vector<double> sym = softmax({4.2, 4.2, 4.2}, 1.0);
  for (double v : sym) CHECK(v == doctest::Approx(1.0 / 3.0));

  std::vector<double> hard = softmax({10.0, 0.0}, 1e-3);
  CHECK(hard[0] == doctest::Approx(1.0));
  CHECK(hard[1] == doctest::Approx(0.0));

  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> x(5);
    for (double& v : x) v = rng.gaussian(0, 3);
    double c = rng.gaussian(0, 10);
    std::vector<double> p = softmax(x, 1.7);
    double total = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::fabs(total - 1.0) < 1e-6);
    std::vector<double> shifted = x;
    for (double& v : shifted) v += c;
    std::vector<double> ps = softmax(shifted, 1.7);
    for (size_t i = 0; i < p.size(); ++i)
      CHECK(ps[i] == doctest::Approx(p[i]).epsilon(1e-9));
  }
  CHECK_THROWS_AS(softmax({1.0}, 0.0), ArgumentError);
  CHECK_THROWS_AS(softmax({1.0}, -1.0), ArgumentError);
}

TEST_CASE("pmx files round-trip bit-exactly and reject junk") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pmx_test";
  fs::create_directories(dir);

  TensorF32 t({2, 3, 4});
  Rng rng(8);
  for (size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.gaussian());
  std::string path = (dir / "t.pmx").string();
  save_pmx(path, t);
  TensorF32 back = load_pmx(path);
  CHECK(back.shape() == t.shape());
  for (size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == t[i]);

  // same bytes when written twice
  save_pmx((dir / "t2.pmx").string(), t);
  std::ifstream f1(path, std::ios::binary), f2(dir / "t2.pmx", std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  CHECK_THROWS_AS(load_pmx((dir / "missing.pmx").string()), IoError);
  std::ofstream bad(dir / "bad.pmx", std::ios::binary);
  bad << "NOPE1234";
  bad.close();
  CHECK_THROWS_AS(load_pmx((dir / "bad.pmx").string()), IoError);
  std::ofstream trunc(dir / "trunc.pmx", std::ios::binary);
  trunc << "PMX1";
  trunc.close();
  CHECK_THROWS_AS(load_pmx((dir / "trunc.pmx").string()), IoError);
}

TEST_CASE("non-finite values are surfaced, never silent") {
  TensorF32 t({2}, 1.0f);
  CHECK(t.all_finite());
  CHECK_NOTHROW(ensure_finite(t, "ok"));
  t[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(ensure_finite(t, "bad tensor"), NumericError);
  CHECK_THROWS_AS(ensure_finite(std::numeric_limits<double>::infinity(), "inf"),
                  NumericError);
}

TEST_CASE("from_data validates the element count") {
  CHECK_THROWS_AS(TensorF32::from_data({2, 2}, {1.f, 2.f, 3.f}), ArgumentError);
}
