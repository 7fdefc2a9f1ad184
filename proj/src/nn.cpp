#include "psr/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace psr {

void ModelState::validate() const {
  if (weights.size() != ema.size())
    throw std::runtime_error("model state: weights/ema name sets differ");
  auto it = ema.begin();
  for (const auto& [name, w] : weights) {
    if (it->first != name) throw std::runtime_error("model state: weights/ema name sets differ");
    if (it->second.shape != w.shape)
      throw std::runtime_error("model state: weights/ema shape mismatch for " + name);
    ++it;
  }
}

Tensor kaiming_init(const std::vector<int64_t>& shape, uint64_t seed) {
  int64_t fan_in;
  if (shape.size() == 4)
    fan_in = shape[1] * shape[2] * shape[3];
  else if (shape.size() == 2)
    fan_in = shape[1];
  else
    throw std::invalid_argument("kaiming_init: fan-in undefined for this rank");
  double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

void ema_update(ModelState& state, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("ema_update: decay out of [0,1)");
  for (auto& [name, e] : state.ema) {
    const Tensor& w = state.weights.at(name);
    for (int64_t i = 0; i < e.numel(); ++i) e[i] = decay * e[i] + (1.0 - decay) * w[i];
  }
}

double ema_decay_at(int64_t step, double limit) {
  double warm = (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step));
  return std::min(limit, warm);
}

ParamBank ParamBank::init_mode(uint64_t seed) {
  ParamBank b;
  b.mode_ = Mode::Init;
  b.seed_ = seed;
  return b;
}

ParamBank ParamBank::bind_trainable(const std::map<std::string, Tensor>& weights) {
  ParamBank b;
  b.mode_ = Mode::BindTrainable;
  b.source_ = &weights;
  return b;
}

ParamBank ParamBank::bind_const(const std::map<std::string, Tensor>& weights) {
  ParamBank b;
  b.mode_ = Mode::BindConst;
  b.source_ = &weights;
  return b;
}

VarPtr ParamBank::create_or_bind(const std::string& name, std::vector<int64_t> shape,
                                 bool kaiming) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    // Re-binding the same parameter (e.g. rebuilding a graph each step).
    VarPtr v = entries_[it->second].second;
    if (v->val.shape != shape) throw std::runtime_error("param bank: shape clash for " + name);
    return v;
  }
  VarPtr var;
  if (mode_ == Mode::Init) {
    Tensor t = kaiming ? kaiming_init(shape, Rng::mix64(seed_, static_cast<uint64_t>(counter_)))
                       : Tensor::zeros(std::move(shape));
    var = make_param(std::move(t));
  } else {
    auto src = source_->find(name);
    if (src == source_->end()) throw std::runtime_error("param bank: missing array " + name);
    if (src->second.shape != shape)
      throw std::runtime_error("param bank: shape mismatch for " + name + ", stored " +
                               src->second.shape_str());
    var = mode_ == Mode::BindTrainable ? make_param(src->second) : make_const(src->second);
  }
  counter_++;
  index_[name] = entries_.size();
  entries_.emplace_back(name, var);
  return var;
}

VarPtr ParamBank::conv_weight(const std::string& name, int64_t co, int64_t ci, int64_t kh,
                              int64_t kw) {
  return create_or_bind(name, {co, ci, kh, kw}, true);
}

VarPtr ParamBank::matrix(const std::string& name, int64_t out, int64_t in) {
  return create_or_bind(name, {out, in}, true);
}

VarPtr ParamBank::zeros(const std::string& name, std::vector<int64_t> shape) {
  return create_or_bind(name, std::move(shape), false);
}

VarPtr ParamBank::ones(const std::string& name, std::vector<int64_t> shape) {
  auto it = index_.find(name);
  bool fresh = it == index_.end() && mode_ == Mode::Init;
  VarPtr v = create_or_bind(name, std::move(shape), false);
  if (fresh) v->val.fill(1.0);
  return v;
}

std::vector<VarPtr> ParamBank::vars() const {
  std::vector<VarPtr> out;
  out.reserve(entries_.size());
  for (const auto& [name, v] : entries_) out.push_back(v);
  return out;
}

std::map<std::string, Tensor> ParamBank::to_map() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : entries_) out[name] = v->val;
  return out;
}

void ParamBank::write_back(std::map<std::string, Tensor>& out) const {
  for (const auto& [name, v] : entries_) out[name] = v->val;
}

void Adam::step(const std::vector<VarPtr>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros(p->val.shape));
      v_.push_back(Tensor::zeros(p->val.shape));
    }
  }
  if (m_.size() != params.size()) throw std::runtime_error("adam: parameter list changed");
  t_++;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params.size(); ++k) {
    Var& p = *params[k];
    p.ensure_grad();
    for (int64_t i = 0; i < p.val.numel(); ++i) {
      double g = p.grad[i];
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
      double mhat = m_[k][i] / bc1;
      double vhat = v_[k][i] / bc2;
      p.val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Tensor images_to_nchw(const std::vector<ImageTensor>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("images_to_nchw: empty batch");
  int64_t h = imgs[0].height(), w = imgs[0].width(), c = imgs[0].channels();
  int64_t n = static_cast<int64_t>(imgs.size());
  Tensor t({n, c, h, w});
  for (int64_t in = 0; in < n; ++in) {
    const ImageTensor& img = imgs[static_cast<size_t>(in)];
    if (img.height() != h || img.width() != w || img.channels() != c)
      throw std::invalid_argument("images_to_nchw: inconsistent shapes");
    for (int64_t cc = 0; cc < c; ++cc)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) t.at(in, cc, y, x) = img.at(y, x, cc);
  }
  return t;
}

Tensor image_to_nchw(const ImageTensor& img) { return images_to_nchw({img}); }

ImageTensor nchw_to_image(const Tensor& t, int64_t n, ValueRange range) {
  if (t.ndim() != 4) throw std::invalid_argument("nchw_to_image: rank mismatch");
  int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  ImageTensor img(h, w, c, range);
  for (int64_t cc = 0; cc < c; ++cc)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) img.at(y, x, cc) = t.at(n, cc, y, x);
  return img;
}

Tensor planes_to_nchw(const std::vector<Tensor>& planes) {
  if (planes.empty()) throw std::invalid_argument("planes_to_nchw: empty batch");
  int64_t h = planes[0].dim(0), w = planes[0].dim(1);
  int64_t n = static_cast<int64_t>(planes.size());
  Tensor t({n, 1, h, w});
  for (int64_t in = 0; in < n; ++in) {
    const Tensor& p = planes[static_cast<size_t>(in)];
    if (p.shape != std::vector<int64_t>{h, w})
      throw std::invalid_argument("planes_to_nchw: inconsistent shapes");
    std::copy(p.data.begin(), p.data.end(), t.data.begin() + in * h * w);
  }
  return t;
}

namespace {

constexpr char kMagic[4] = {'P', 'S', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }

void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_array_map(std::ostream& os, const std::map<std::string, Tensor>& m) {
  write_u32(os, static_cast<uint32_t>(m.size()));
  for (const auto& [name, t] : m) {
    write_str(os, name);
    write_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int64_t d : t.shape) write_i64(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
}

uint32_t read_u32(std::istream& is) {
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int64_t read_i64(std::istream& is) {
  int64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

std::string read_str(std::istream& is) {
  uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

std::map<std::string, Tensor> read_array_map(std::istream& is) {
  std::map<std::string, Tensor> m;
  uint32_t count = read_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = read_str(is);
    uint32_t nd = read_u32(is);
    std::vector<int64_t> shape(nd);
    for (uint32_t d = 0; d < nd; ++d) shape[d] = read_i64(is);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    m[name] = std::move(t);
  }
  return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_str(os, ckpt.kind);
  write_str(os, ckpt.config_text);
  write_u64(os, ckpt.state.seed);
  write_i64(os, ckpt.state.step);
  write_array_map(os, ckpt.state.weights);
  write_array_map(os, ckpt.state.ema);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = read_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unrecognized version in " + path);
  Checkpoint ckpt;
  ckpt.kind = read_str(is);
  ckpt.config_text = read_str(is);
  ckpt.state.seed = read_u64(is);
  ckpt.state.step = read_i64(is);
  ckpt.state.weights = read_array_map(is);
  ckpt.state.ema = read_array_map(is);
  if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
  ckpt.state.validate();
  return ckpt;
}

}  // namespace psr
