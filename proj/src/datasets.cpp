#include "patchmix/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace patchmix {

namespace fs = std::filesystem;

void LabeledDataset::validate() const {
  if (images.size() != labels.size())
    throw ArgumentError("dataset: image/label count mismatch");
  for (size_t i = 0; i < images.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes)
      throw ArgumentError("dataset: label out of range at record " +
                          std::to_string(i));
    if (images[i].rank() != 3)
      throw ArgumentError("dataset: image is not C x H x W at record " +
                          std::to_string(i));
    if (!images[i].same_shape(images[0]))
      throw ArgumentError("dataset: image shape mismatch at record " +
                          std::to_string(i));
  }
}

Episode sample_episode(const LabeledDataset& ds, int way, int shot,
                       int queries_per_class, Rng& rng) {
  if (way < 2 || shot < 1 || queries_per_class < 1)
    throw ArgumentError("sample_episode: invalid way/shot/queries");
  const int need = shot + queries_per_class;

  std::vector<std::vector<size_t>> by_class(ds.n_classes);
  for (size_t i = 0; i < ds.labels.size(); ++i)
    by_class[ds.labels[i]].push_back(i);

  std::vector<int> eligible;
  for (int c = 0; c < ds.n_classes; ++c)
    if (static_cast<int>(by_class[c].size()) >= need) eligible.push_back(c);
  if (static_cast<int>(eligible.size()) < way)
    throw SamplingError("sample_episode: only " +
                        std::to_string(eligible.size()) +
                        " classes have enough images for way=" +
                        std::to_string(way));

  rng.shuffle(eligible);
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries_per_class = queries_per_class;
  ep.class_map.assign(eligible.begin(), eligible.begin() + way);
  for (int e = 0; e < way; ++e) {
    auto& pool = by_class[ep.class_map[e]];
    rng.shuffle(pool);
    for (int k = 0; k < shot; ++k) {
      ep.support_idx.push_back(pool[k]);
      ep.support_label.push_back(e);
    }
    for (int q = 0; q < queries_per_class; ++q) {
      ep.query_idx.push_back(pool[shot + q]);
      ep.query_label.push_back(e);
    }
  }
  return ep;
}

// ------------------------------------------------------------------ SCM

void ScmConfig::validate() const {
  if (rho < 0.0 || rho > 1.0) throw ArgumentError("scm: rho must be in [0,1]");
  if (grid * grid < 2) throw ArgumentError("scm: grid too small");
  if (image < grid || image % grid != 0)
    throw ArgumentError("scm: image side must be a positive multiple of grid");
  if (n_classes < 2 || n_novel < 2)
    throw ArgumentError("scm: need at least two base and two novel classes");
  if (dim_z < 2) throw ArgumentError("scm: dim_z must be >= 2");
  if (dim_s_eff() < total_classes())
    throw ArgumentError("scm: dim_s must cover base + novel one-hot codes");
  if (noise_sigma < 0.0) throw ArgumentError("scm: negative noise_sigma");
}

int scm_partner(const ScmConfig& cfg, int y) { return y % cfg.dim_z; }

namespace {

// Random rows of unit L2 norm; full column rank with probability 1.
std::vector<float> random_render_map(int rows, int cols, Rng& rng) {
  std::vector<float> m(static_cast<size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    double norm2 = 0.0;
    for (int c = 0; c < cols; ++c) {
      double v = rng.gaussian();
      m[static_cast<size_t>(r) * cols + c] = static_cast<float>(v);
      norm2 += v * v;
    }
    double inv = 1.0 / std::sqrt(std::max(norm2, 1e-30));
    for (int c = 0; c < cols; ++c)
      m[static_cast<size_t>(r) * cols + c] =
          static_cast<float>(m[static_cast<size_t>(r) * cols + c] * inv);
  }
  return m;
}

ScmRender make_render(const ScmConfig& cfg, Rng& rng) {
  ScmRender rd;
  int g = cfg.grid;
  int patch = cfg.image / g;
  int quad = std::max(1, g / 2);  // S occupies the top-left quad x quad cells
  for (int cy = 0; cy < g; ++cy)
    for (int cx = 0; cx < g; ++cx) {
      bool is_s = (cy < quad && cx < quad);
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px) {
          size_t off = (static_cast<size_t>(cy) * patch + py) * cfg.image +
                       (static_cast<size_t>(cx) * patch + px);
          (is_s ? rd.s_pixel_index : rd.z_pixel_index).push_back(off);
        }
    }
  rd.s_pixels = static_cast<int>(rd.s_pixel_index.size());
  rd.z_pixels = static_cast<int>(rd.z_pixel_index.size());
  if (rd.s_pixels < cfg.dim_s_eff() || rd.z_pixels < cfg.dim_z)
    throw ArgumentError("scm: image too small to render codes injectively");
  rd.s_map = random_render_map(rd.s_pixels, cfg.dim_s_eff(), rng);
  rd.z_map = random_render_map(rd.z_pixels, cfg.dim_z, rng);
  return rd;
}

ScmSample draw_sample(const ScmConfig& cfg, int y, Rng& rng) {
  ScmSample s;
  s.y = y;
  s.s.resize(cfg.dim_s_eff());
  for (int i = 0; i < cfg.dim_s_eff(); ++i) {
    double code = (i == y) ? cfg.code_scale : 0.0;
    s.s[i] = static_cast<float>(code + cfg.noise_sigma * rng.gaussian());
  }
  s.z_component = static_cast<int>(rng.below(cfg.dim_z));
  s.z.resize(cfg.dim_z);
  for (int i = 0; i < cfg.dim_z; ++i) {
    double code = (i == s.z_component) ? cfg.z_scale_eff() : 0.0;
    s.z[i] = static_cast<float>(code + cfg.noise_sigma * rng.gaussian());
  }
  return s;
}

TensorF32 render_image(const ScmConfig& cfg, const ScmRender& rd,
                       const ScmSample& s, Rng& rng) {
  TensorF32 img({1, static_cast<uint32_t>(cfg.image),
                 static_cast<uint32_t>(cfg.image)});
  for (int p = 0; p < rd.s_pixels; ++p) {
    double v = 0.0;
    for (size_t i = 0; i < s.s.size(); ++i)
      v += static_cast<double>(rd.s_map[static_cast<size_t>(p) * s.s.size() + i]) * s.s[i];
    img[rd.s_pixel_index[p]] =
        static_cast<float>(v + cfg.noise_sigma * rng.gaussian());
  }
  for (int p = 0; p < rd.z_pixels; ++p) {
    double v = 0.0;
    for (size_t i = 0; i < s.z.size(); ++i)
      v += static_cast<double>(rd.z_map[static_cast<size_t>(p) * s.z.size() + i]) * s.z[i];
    img[rd.z_pixel_index[p]] =
        static_cast<float>(v + cfg.noise_sigma * rng.gaussian());
  }
  return img;
}

}  // namespace

ScmData generate_scm(const ScmConfig& cfg, int n_train, int n_test, Rng& rng) {
  cfg.validate();
  if (n_train < 1 || n_test < 1)
    throw ArgumentError("scm: sample counts must be positive");
  ScmData data;
  data.render = make_render(cfg, rng);
  data.train.split = Split::kBase;
  data.train.n_classes = cfg.total_classes();
  data.test.split = Split::kNovel;
  data.test.n_classes = cfg.total_classes();

  // training split: rejection sampling realizes the collider Y -> C <- Z
  while (static_cast<int>(data.train.images.size()) < n_train) {
    int y = static_cast<int>(rng.below(cfg.n_classes));
    ScmSample s = draw_sample(cfg, y, rng);
    bool match = (s.z_component == scm_partner(cfg, y));
    double accept = match ? cfg.rho : 1.0 - cfg.rho;
    if (rng.uniform01() >= accept) continue;
    s.c = 1;
    s.image_index = data.train.images.size();
    data.train.images.push_back(render_image(cfg, data.render, s, rng));
    data.train.labels.push_back(y);
    data.train_samples.push_back(std::move(s));
  }

  // test split: novel classes, no selection
  for (int i = 0; i < n_test; ++i) {
    int y = cfg.n_classes + static_cast<int>(rng.below(cfg.n_novel));
    ScmSample s = draw_sample(cfg, y, rng);
    s.c = 0;
    s.image_index = data.test.images.size();
    data.test.images.push_back(render_image(cfg, data.render, s, rng));
    data.test.labels.push_back(y);
    data.test_samples.push_back(std::move(s));
  }

  data.train.validate();
  data.test.validate();
  return data;
}

// -------------------------------------------------------------- manifest

LabeledDataset load_dataset(const std::string& manifest_path, Split split) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("missing manifest: " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();

  LabeledDataset ds;
  ds.split = split;
  std::string line;
  size_t lineno = 0;
  int max_label = -1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw IoError("manifest line " + std::to_string(lineno) +
                    ": expected <path>\\t<label>");
    std::string rel = line.substr(0, tab);
    int label;
    try {
      label = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw IoError("manifest line " + std::to_string(lineno) +
                    ": bad label field");
    }
    if (label < 0)
      throw IoError("manifest line " + std::to_string(lineno) +
                    ": negative label");
    TensorF32 img = load_pmx((base / rel).string());
    if (img.rank() != 3)
      throw IoError("manifest line " + std::to_string(lineno) +
                    ": tensor is not C x H x W");
    if (!ds.images.empty() && !img.same_shape(ds.images[0]))
      throw IoError("manifest line " + std::to_string(lineno) +
                    ": image shape differs from the first record");
    ensure_finite(img, "ingested image");
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  ds.n_classes = max_label + 1;
  ds.validate();
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& dir,
                  const std::string& manifest_name) {
  fs::create_directories(dir);
  std::ofstream mf(fs::path(dir) / manifest_name);
  if (!mf) throw IoError("cannot write manifest in " + dir);
  char name[32];
  for (size_t i = 0; i < ds.images.size(); ++i) {
    std::snprintf(name, sizeof(name), "%06zu.pmx", i);
    save_pmx((fs::path(dir) / name).string(), ds.images[i]);
    mf << name << '\t' << ds.labels[i] << '\n';
  }
}

}  // namespace patchmix
