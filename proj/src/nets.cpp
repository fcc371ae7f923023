#include "patchmix/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace patchmix {

namespace {

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

// y (rows) += A (rows x cols) * x (cols)
void affine(const TensorF32& a, const TensorF32& b, const double* x,
            double* y, int rows, int cols) {
  const float* ap = a.data();
  for (int r = 0; r < rows; ++r) {
    double acc = b[r];
    const float* row = ap + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += static_cast<double>(row[c]) * x[c];
    y[r] = acc;
  }
}

// dW += dy x^T ; db += dy ; dx += W^T dy
void affine_backward(const TensorF32& a, const double* x, const double* dy,
                     std::vector<double>& dw, std::vector<double>& db,
                     double* dx, int rows, int cols) {
  const float* ap = a.data();
  for (int r = 0; r < rows; ++r) {
    double g = dy[r];
    db[r] += g;
    double* dwrow = dw.data() + static_cast<size_t>(r) * cols;
    const float* row = ap + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      dwrow[c] += g * x[c];
      if (dx) dx[c] += static_cast<double>(row[c]) * g;
    }
  }
}

TensorF32 xavier(int rows, int cols, Rng& rng) {
  double r = std::sqrt(6.0 / (rows + cols));
  TensorF32 t({static_cast<uint32_t>(rows), static_cast<uint32_t>(cols)});
  for (size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.uniform(-r, r));
  return t;
}

}  // namespace

void NetShape::validate() const {
  if (channels < 1 || height < 1 || width < 1)
    throw ArgumentError("net: bad input shape");
  if (grid_h < 1 || grid_w < 1 || height % grid_h != 0 || width % grid_w != 0)
    throw ArgumentError("net: image dims must be divisible by the grid");
  if (d_hidden < 1 || feat_dim < 1 || n_base < 2)
    throw ArgumentError("net: bad layer sizes");
}

TensorF32 FeatureMap::to_chw() const {
  TensorF32 t({static_cast<uint32_t>(feat_dim), static_cast<uint32_t>(grid_h),
               static_cast<uint32_t>(grid_w)});
  for (int ch = 0; ch < feat_dim; ++ch)
    for (int i = 0; i < cells(); ++i)
      t[static_cast<size_t>(ch) * cells() + i] =
          static_cast<float>(data[static_cast<size_t>(i) * feat_dim + ch]);
  return t;
}

std::vector<double> FeatureMap::pooled() const {
  std::vector<double> out(feat_dim, 0.0);
  for (int i = 0; i < cells(); ++i) {
    const double* f = cell(i);
    for (int ch = 0; ch < feat_dim; ++ch) out[ch] += f[ch];
  }
  for (double& v : out) v /= cells();
  return out;
}

Model init_model(const NetShape& shape, Rng& rng) {
  shape.validate();
  Model m;
  m.shape = shape;
  m.backbone.a1 = xavier(shape.d_hidden, shape.patch_pixels(), rng);
  m.backbone.b1 = TensorF32({static_cast<uint32_t>(shape.d_hidden)});
  m.backbone.a2 = xavier(shape.feat_dim, shape.d_hidden, rng);
  m.backbone.b2 = TensorF32({static_cast<uint32_t>(shape.feat_dim)});
  m.gc.w = xavier(shape.n_base, shape.feat_dim, rng);
  m.gc.b = TensorF32({static_cast<uint32_t>(shape.n_base)});
  m.decoder.d1 = xavier(shape.d_hidden, shape.feat_dim, rng);
  m.decoder.c1 = TensorF32({static_cast<uint32_t>(shape.d_hidden)});
  m.decoder.d2 = xavier(shape.patch_pixels(), shape.d_hidden, rng);
  m.decoder.c2 = TensorF32({static_cast<uint32_t>(shape.patch_pixels())});
  return m;
}

std::vector<TensorF32*> param_list(Model& m) {
  return {&m.backbone.a1, &m.backbone.b1, &m.backbone.a2, &m.backbone.b2,
          &m.gc.w,        &m.gc.b,        &m.decoder.d1,  &m.decoder.c1,
          &m.decoder.d2,  &m.decoder.c2};
}

std::vector<const TensorF32*> param_list(const Model& m) {
  return {&m.backbone.a1, &m.backbone.b1, &m.backbone.a2, &m.backbone.b2,
          &m.gc.w,        &m.gc.b,        &m.decoder.d1,  &m.decoder.c1,
          &m.decoder.d2,  &m.decoder.c2};
}

std::vector<std::string> param_names() {
  return {"backbone.a1", "backbone.b1", "backbone.a2", "backbone.b2",
          "gc.w",        "gc.b",        "dec.d1",      "dec.c1",
          "dec.d2",      "dec.c2"};
}

GradBuffer::GradBuffer(const Model& m) {
  for (const TensorF32* p : param_list(m)) g.emplace_back(p->numel(), 0.0);
}

void GradBuffer::zero() {
  for (auto& v : g) std::fill(v.begin(), v.end(), 0.0);
}

void GradBuffer::add_scaled(const GradBuffer& other, double scale) {
  for (size_t i = 0; i < g.size(); ++i)
    for (size_t j = 0; j < g[i].size(); ++j) g[i][j] += scale * other.g[i][j];
}

bool GradBuffer::all_finite() const {
  for (const auto& v : g)
    for (double x : v)
      if (!std::isfinite(x)) return false;
  return true;
}

// --------------------------------------------------------------- backbone

FeatureMap forward_backbone(const Model& m, const TensorF32& image,
                            BackboneCache* cache) {
  const NetShape& s = m.shape;
  if (image.rank() != 3 || static_cast<int>(image.dim(0)) != s.channels ||
      static_cast<int>(image.dim(1)) != s.height ||
      static_cast<int>(image.dim(2)) != s.width)
    throw ArgumentError("backbone: image shape does not match the net");

  const int cells = s.cells(), np = s.patch_pixels(), dh = s.d_hidden;
  FeatureMap feat(s.feat_dim, s.grid_h, s.grid_w);
  std::vector<double> patch(np), pre(dh), hid(dh);
  if (cache) {
    cache->patches.resize(static_cast<size_t>(cells) * np);
    cache->pre1.resize(static_cast<size_t>(cells) * dh);
    cache->hidden.resize(static_cast<size_t>(cells) * dh);
  }
  for (int cell = 0; cell < cells; ++cell) {
    int r = cell / s.grid_w, c = cell % s.grid_w;
    int k = 0;
    for (int ch = 0; ch < s.channels; ++ch)
      for (int py = 0; py < s.patch_h(); ++py)
        for (int px = 0; px < s.patch_w(); ++px)
          patch[k++] = image[(static_cast<size_t>(ch) * s.height +
                              r * s.patch_h() + py) * s.width +
                             c * s.patch_w() + px];
    affine(m.backbone.a1, m.backbone.b1, patch.data(), pre.data(), dh, np);
    for (int i = 0; i < dh; ++i) hid[i] = elu(pre[i]);
    affine(m.backbone.a2, m.backbone.b2, hid.data(), feat.cell(cell),
           s.feat_dim, dh);
    if (cache) {
      std::copy(patch.begin(), patch.end(),
                cache->patches.begin() + static_cast<size_t>(cell) * np);
      std::copy(pre.begin(), pre.end(),
                cache->pre1.begin() + static_cast<size_t>(cell) * dh);
      std::copy(hid.begin(), hid.end(),
                cache->hidden.begin() + static_cast<size_t>(cell) * dh);
    }
  }
  return feat;
}

void backward_backbone(const Model& m, const BackboneCache& cache,
                       const FeatureMap& dfeat, GradBuffer& grads) {
  const NetShape& s = m.shape;
  const int cells = s.cells(), np = s.patch_pixels(), dh = s.d_hidden;
  if (cache.patches.size() != static_cast<size_t>(cells) * np)
    throw StateError("backbone backward without retained activations");
  std::vector<double> dhid(dh), dpre(dh);
  for (int cell = 0; cell < cells; ++cell) {
    const double* patch = cache.patches.data() + static_cast<size_t>(cell) * np;
    const double* pre = cache.pre1.data() + static_cast<size_t>(cell) * dh;
    const double* hid = cache.hidden.data() + static_cast<size_t>(cell) * dh;
    std::fill(dhid.begin(), dhid.end(), 0.0);
    affine_backward(m.backbone.a2, hid, dfeat.cell(cell), grads.g[2],
                    grads.g[3], dhid.data(), s.feat_dim, dh);
    for (int i = 0; i < dh; ++i) dpre[i] = dhid[i] * elu_grad(pre[i]);
    affine_backward(m.backbone.a1, patch, dpre.data(), grads.g[0], grads.g[1],
                    nullptr, dh, np);
  }
}

// -------------------------------------------------------- global classifier

std::vector<double> forward_gc(const Model& m, const FeatureMap& feat) {
  const NetShape& s = m.shape;
  std::vector<double> logits(static_cast<size_t>(feat.cells()) * s.n_base);
  for (int cell = 0; cell < feat.cells(); ++cell)
    affine(m.gc.w, m.gc.b, feat.cell(cell),
           logits.data() + static_cast<size_t>(cell) * s.n_base, s.n_base,
           s.feat_dim);
  return logits;
}

void backward_gc(const Model& m, const FeatureMap& feat,
                 const std::vector<double>& dlogits, GradBuffer& grads,
                 FeatureMap& dfeat) {
  const NetShape& s = m.shape;
  for (int cell = 0; cell < feat.cells(); ++cell)
    affine_backward(m.gc.w, feat.cell(cell),
                    dlogits.data() + static_cast<size_t>(cell) * s.n_base,
                    grads.g[4], grads.g[5], dfeat.cell(cell), s.n_base,
                    s.feat_dim);
}

// ---------------------------------------------------------------- decoder

std::vector<double> forward_decoder(const Model& m, const FeatureMap& feat,
                                    DecoderCache* cache) {
  const NetShape& s = m.shape;
  if (feat.feat_dim != s.feat_dim || feat.grid_h != s.grid_h ||
      feat.grid_w != s.grid_w)
    throw ArgumentError("decoder: feature map shape does not match the net");
  const int cells = s.cells(), np = s.patch_pixels(), dh = s.d_hidden;
  std::vector<double> image(static_cast<size_t>(s.channels) * s.height * s.width);
  std::vector<double> pre(dh), hid(dh), patch(np);
  if (cache) {
    cache->input.assign(feat.data.begin(), feat.data.end());
    cache->pre1.resize(static_cast<size_t>(cells) * dh);
    cache->hidden.resize(static_cast<size_t>(cells) * dh);
  }
  for (int cell = 0; cell < cells; ++cell) {
    int r = cell / s.grid_w, c = cell % s.grid_w;
    affine(m.decoder.d1, m.decoder.c1, feat.cell(cell), pre.data(), dh,
           s.feat_dim);
    for (int i = 0; i < dh; ++i) hid[i] = elu(pre[i]);
    affine(m.decoder.d2, m.decoder.c2, hid.data(), patch.data(), np, dh);
    int k = 0;
    for (int ch = 0; ch < s.channels; ++ch)
      for (int py = 0; py < s.patch_h(); ++py)
        for (int px = 0; px < s.patch_w(); ++px)
          image[(static_cast<size_t>(ch) * s.height + r * s.patch_h() + py) *
                    s.width +
                c * s.patch_w() + px] = patch[k++];
    if (cache) {
      std::copy(pre.begin(), pre.end(),
                cache->pre1.begin() + static_cast<size_t>(cell) * dh);
      std::copy(hid.begin(), hid.end(),
                cache->hidden.begin() + static_cast<size_t>(cell) * dh);
    }
  }
  return image;
}

void backward_decoder(const Model& m, const DecoderCache& cache,
                      const std::vector<double>& dimage, GradBuffer& grads,
                      FeatureMap& dfeat) {
  const NetShape& s = m.shape;
  const int cells = s.cells(), np = s.patch_pixels(), dh = s.d_hidden;
  if (cache.input.size() != static_cast<size_t>(cells) * s.feat_dim)
    throw StateError("decoder backward without retained activations");
  std::vector<double> dpatch(np), dhid(dh), dpre(dh);
  for (int cell = 0; cell < cells; ++cell) {
    int r = cell / s.grid_w, c = cell % s.grid_w;
    int k = 0;
    for (int ch = 0; ch < s.channels; ++ch)
      for (int py = 0; py < s.patch_h(); ++py)
        for (int px = 0; px < s.patch_w(); ++px)
          dpatch[k++] =
              dimage[(static_cast<size_t>(ch) * s.height + r * s.patch_h() +
                      py) * s.width +
                     c * s.patch_w() + px];
    const double* pre = cache.pre1.data() + static_cast<size_t>(cell) * dh;
    const double* hid = cache.hidden.data() + static_cast<size_t>(cell) * dh;
    const double* input = cache.input.data() + static_cast<size_t>(cell) * s.feat_dim;
    std::fill(dhid.begin(), dhid.end(), 0.0);
    affine_backward(m.decoder.d2, hid, dpatch.data(), grads.g[8], grads.g[9],
                    dhid.data(), np, dh);
    for (int i = 0; i < dh; ++i) dpre[i] = dhid[i] * elu_grad(pre[i]);
    affine_backward(m.decoder.d1, input, dpre.data(), grads.g[6], grads.g[7],
                    dfeat.cell(cell), dh, s.feat_dim);
  }
}

// -------------------------------------------------------------------- sgd

SgdState::SgdState(const Model& m) {
  for (const TensorF32* p : param_list(m))
    velocity.emplace_back(p->numel(), 0.0);
}

void sgd_step(Model& m, const GradBuffer& grads, SgdState& state, double lr,
              double weight_decay, double momentum) {
  auto params = param_list(m);
  if (grads.g.size() != params.size() || state.velocity.size() != params.size())
    throw ArgumentError("sgd_step: mismatched parameter lists");
  for (size_t i = 0; i < params.size(); ++i) {
    TensorF32& p = *params[i];
    for (size_t j = 0; j < p.numel(); ++j) {
      double v = momentum * state.velocity[i][j] + grads.g[i][j] +
                 weight_decay * static_cast<double>(p[j]);
      state.velocity[i][j] = v;
      p[j] = static_cast<float>(static_cast<double>(p[j]) - lr * v);
    }
    ensure_finite(p, "parameters after sgd step");
  }
}

double cosine_lr(double lr0, int t, int t_total) {
  if (t_total <= 0) throw ArgumentError("cosine_lr: t_total must be positive");
  if (t < 0) t = 0;
  if (t > t_total) t = t_total;
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / t_total));
}

// ------------------------------------------------------------ checkpoints

namespace {

void put_u32f(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m) {
  auto params = param_list(m);
  auto names = param_names();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for write: " + path);
  f.write("PMCK", 4);
  put_u32f(f, static_cast<uint32_t>(params.size() + 1));

  auto write_entry = [&f](const std::string& name, const TensorF32& t) {
    put_u32f(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    f.write("PMX1", 4);
    put_u32f(f, static_cast<uint32_t>(t.rank()));
    for (uint32_t d : t.shape()) put_u32f(f, d);
    for (size_t i = 0; i < t.numel(); ++i) {
      uint32_t bits;
      float v = t[i];
      std::memcpy(&bits, &v, 4);
      put_u32f(f, bits);
    }
  };

  const NetShape& s = m.shape;
  TensorF32 meta = TensorF32::from_data(
      {8}, {static_cast<float>(s.channels), static_cast<float>(s.height),
            static_cast<float>(s.width), static_cast<float>(s.grid_h),
            static_cast<float>(s.grid_w), static_cast<float>(s.d_hidden),
            static_cast<float>(s.feat_dim), static_cast<float>(s.n_base)});
  write_entry("meta.shape", meta);
  for (size_t i = 0; i < params.size(); ++i) write_entry(names[i], *params[i]);
  if (!f) throw IoError("checkpoint write failed: " + path);
}

namespace {

uint32_t get_u32f(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("checkpoint truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

TensorF32 read_tensor_blob(std::ifstream& f) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PMX1", 4) != 0)
    throw IoError("checkpoint: bad tensor magic");
  uint32_t rank = get_u32f(f);
  if (rank > 8) throw IoError("checkpoint: implausible tensor rank");
  std::vector<uint32_t> shape(rank);
  size_t n = 1;
  for (uint32_t& d : shape) {
    d = get_u32f(f);
    n *= d;
  }
  std::vector<float> data(n);
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits = get_u32f(f);
    std::memcpy(&data[i], &bits, 4);
  }
  return TensorF32::from_data(std::move(shape), std::move(data));
}

}  // namespace

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PMCK", 4) != 0)
    throw IoError("unknown checkpoint magic in: " + path);
  uint32_t count = get_u32f(f);

  std::vector<std::pair<std::string, TensorF32>> entries;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = get_u32f(f);
    if (len > 256) throw IoError("checkpoint: implausible name length");
    std::string name(len, '\0');
    f.read(name.data(), len);
    if (!f) throw IoError("checkpoint truncated");
    entries.emplace_back(std::move(name), read_tensor_blob(f));
  }

  auto find = [&entries](const std::string& name) -> TensorF32& {
    for (auto& e : entries)
      if (e.first == name) return e.second;
    throw IoError("checkpoint: missing tensor " + name);
  };

  const TensorF32& meta = find("meta.shape");
  if (meta.numel() != 8) throw IoError("checkpoint: bad meta.shape");
  Model m;
  m.shape.channels = static_cast<int>(meta[0]);
  m.shape.height = static_cast<int>(meta[1]);
  m.shape.width = static_cast<int>(meta[2]);
  m.shape.grid_h = static_cast<int>(meta[3]);
  m.shape.grid_w = static_cast<int>(meta[4]);
  m.shape.d_hidden = static_cast<int>(meta[5]);
  m.shape.feat_dim = static_cast<int>(meta[6]);
  m.shape.n_base = static_cast<int>(meta[7]);
  m.shape.validate();

  auto names = param_names();
  auto params = param_list(m);
  for (size_t i = 0; i < params.size(); ++i) *params[i] = find(names[i]);
  return m;
}

}  // namespace patchmix
