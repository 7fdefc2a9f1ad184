#include "psr/senet.hpp"

#include <cmath>
#include <mutex>

namespace psr {

namespace {

int gn_groups(int64_t c) {
  for (int g = 8; g > 1; --g)
    if (c % g == 0 && c / g >= 2) return g;
  return 1;
}

VarPtr conv_block(ParamBank& bank, const std::string& name, const VarPtr& x, int64_t ci,
                  int64_t co, int k, int stride) {
  VarPtr w = bank.conv_weight(name + ".w", co, ci, k, k);
  VarPtr b = bank.zeros(name + ".b", {co});
  return conv2d(x, w, b, stride, (k - 1) / 2);
}

VarPtr norm_act(ParamBank& bank, const std::string& name, const VarPtr& x, int64_t c) {
  VarPtr g = bank.ones(name + ".g", {c});
  VarPtr be = bank.zeros(name + ".be", {c});
  return silu(group_norm(x, g, be, gn_groups(c)));
}

VarPtr res_block(ParamBank& bank, const std::string& name, const VarPtr& x, int64_t c) {
  VarPtr h = norm_act(bank, name + ".n1", x, c);
  h = conv_block(bank, name + ".c1", h, c, c, 3, 1);
  h = norm_act(bank, name + ".n2", h, c);
  h = conv_block(bank, name + ".c2", h, c, c, 3, 1);
  return add(x, h);
}

}  // namespace

void SENetConfig::validate() const {
  if (num_residual_blocks < 1)
    throw std::invalid_argument("senet config: num_residual_blocks must be >= 1");
  if (lambda_perceptual < 0.0 || lambda_gan < 0.0)
    throw std::invalid_argument("senet config: lambdas must be >= 0");
  if (base_channels < 1) throw std::invalid_argument("senet config: base_channels must be >= 1");
}

VarPtr senet_graph(const SENetConfig& cfg, ParamBank& bank, const VarPtr& x_nchw) {
  cfg.validate();
  if (x_nchw->val.ndim() != 4 || x_nchw->val.dim(1) != 3)
    throw std::invalid_argument("senet: expected [N,3,H,W] input");
  if (x_nchw->val.dim(2) % 4 != 0 || x_nchw->val.dim(3) % 4 != 0)
    throw std::invalid_argument("senet: H and W must be divisible by 4");
  int64_t b1 = cfg.base_channels, b2 = 2 * b1, b4 = 4 * b1;

  VarPtr h = conv_block(bank, "flat", x_nchw, 3, b1, 3, 1);
  h = norm_act(bank, "flat.n", h, b1);
  h = conv_block(bank, "down1", h, b1, b2, 3, 2);
  h = norm_act(bank, "down1.n", h, b2);
  h = conv_block(bank, "down2", h, b2, b4, 3, 2);
  h = norm_act(bank, "down2.n", h, b4);
  for (int64_t r = 0; r < cfg.num_residual_blocks; ++r)
    h = res_block(bank, "res" + std::to_string(r), h, b4);
  h = nearest_upsample2(h);
  h = conv_block(bank, "up1", h, b4, b2, 3, 1);
  h = norm_act(bank, "up1.n", h, b2);
  h = nearest_upsample2(h);
  h = conv_block(bank, "up2", h, b2, b1, 3, 1);
  h = norm_act(bank, "up2.n", h, b1);
  h = conv_block(bank, "head", h, b1, 1, 3, 1);
  return sigmoid(h);
}

VarPtr discriminator_graph(int64_t base_channels, ParamBank& bank, const VarPtr& s_nchw) {
  if (s_nchw->val.ndim() != 4 || s_nchw->val.dim(1) != 1)
    throw std::invalid_argument("discriminator: expected [N,1,H,W] input");
  int64_t d1 = base_channels, d2 = 2 * d1, d4 = 4 * d1;
  VarPtr h = conv_block(bank, "d1", s_nchw, 1, d1, 4, 2);
  h = silu(h);
  h = conv_block(bank, "d2", h, d1, d2, 4, 2);
  h = norm_act(bank, "d2.n", h, d2);
  h = conv_block(bank, "d3", h, d2, d4, 4, 2);
  h = norm_act(bank, "d3.n", h, d4);
  h = conv_block(bank, "d4", h, d4, d4, 5, 1);
  h = norm_act(bank, "d4.n", h, d4);
  return conv_block(bank, "dhead", h, d4, 1, 3, 1);
}

namespace {

ModelState state_from_bank(const ParamBank& bank, uint64_t seed) {
  ModelState st;
  st.weights = bank.to_map();
  st.ema = st.weights;
  st.step = 0;
  st.seed = seed;
  return st;
}

VarPtr dummy_input(int64_t c) {
  return make_const(Tensor::zeros({1, c, 8, 8}));
}

}  // namespace

ModelState senet_init(const SENetConfig& cfg, uint64_t seed) {
  ParamBank bank = ParamBank::init_mode(seed);
  senet_graph(cfg, bank, dummy_input(3));
  return state_from_bank(bank, seed);
}

ModelState discriminator_init(int64_t base_channels, uint64_t seed) {
  ParamBank bank = ParamBank::init_mode(seed);
  discriminator_graph(base_channels, bank, dummy_input(1));
  return state_from_bank(bank, seed);
}

std::vector<ImageTensor> senet_forward_batch(const ModelState& state, const SENetConfig& cfg,
                                             const std::vector<ImageTensor>& imgs,
                                             WeightKind kind) {
  const auto& weights = kind == WeightKind::Ema ? state.ema : state.weights;
  ParamBank bank = ParamBank::bind_const(weights);
  VarPtr x = make_const(images_to_nchw(imgs));
  VarPtr y = senet_graph(cfg, bank, x);
  std::vector<ImageTensor> out;
  out.reserve(imgs.size());
  for (size_t i = 0; i < imgs.size(); ++i)
    out.push_back(nchw_to_image(y->val, static_cast<int64_t>(i), ValueRange::Unit));
  return out;
}

ImageTensor senet_forward(const ModelState& state, const SENetConfig& cfg, const ImageTensor& img,
                          WeightKind kind) {
  return senet_forward_batch(state, cfg, {img}, kind)[0];
}

Tensor discriminator_forward(const ModelState& dstate, int64_t base_channels,
                             const ImageTensor& s_map, WeightKind kind) {
  if (s_map.channels() != 1)
    throw std::invalid_argument("discriminator_forward: single-channel input required");
  const auto& weights = kind == WeightKind::Ema ? dstate.ema : dstate.weights;
  ParamBank bank = ParamBank::bind_const(weights);
  VarPtr x = make_const(image_to_nchw(s_map));
  VarPtr y = discriminator_graph(base_channels, bank, x);
  int64_t h = y->val.dim(2), w = y->val.dim(3);
  Tensor logits({h, w});
  for (int64_t i = 0; i < h * w; ++i) logits[i] = y->val[i];
  return logits;
}

// ---- perceptual distance ----

namespace {

constexpr uint64_t kPerceptualSeed = 0xfea70000c0ffeeULL;
constexpr int64_t kPerceptualWidth = 8;

// Frozen random conv stack for a given input channel count.
const std::map<std::string, Tensor>& perceptual_weights(int64_t cin) {
  static std::mutex mu;
  static std::map<int64_t, std::map<std::string, Tensor>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(cin);
  if (it == cache.end()) {
    std::map<std::string, Tensor> w;
    w["p1.w"] = kaiming_init({kPerceptualWidth, cin, 3, 3}, Rng::mix64(kPerceptualSeed, 1));
    w["p1.b"] = Tensor::zeros({kPerceptualWidth});
    w["p2.w"] =
        kaiming_init({kPerceptualWidth, kPerceptualWidth, 3, 3}, Rng::mix64(kPerceptualSeed, 2));
    w["p2.b"] = Tensor::zeros({kPerceptualWidth});
    w["p3.w"] =
        kaiming_init({kPerceptualWidth, kPerceptualWidth, 3, 3}, Rng::mix64(kPerceptualSeed, 3));
    w["p3.b"] = Tensor::zeros({kPerceptualWidth});
    it = cache.emplace(cin, std::move(w)).first;
  }
  return it->second;
}

VarPtr perceptual_features(const VarPtr& x) {
  const auto& wmap = perceptual_weights(x->val.dim(1));
  ParamBank bank = ParamBank::bind_const(wmap);
  VarPtr h = conv2d(x, bank.conv_weight("p1.w", kPerceptualWidth, x->val.dim(1), 3, 3),
                    bank.zeros("p1.b", {kPerceptualWidth}), 1, 1);
  h = silu(h);
  h = conv2d(h, bank.conv_weight("p2.w", kPerceptualWidth, kPerceptualWidth, 3, 3),
             bank.zeros("p2.b", {kPerceptualWidth}), 1, 1);
  h = silu(h);
  h = conv2d(h, bank.conv_weight("p3.w", kPerceptualWidth, kPerceptualWidth, 3, 3),
             bank.zeros("p3.b", {kPerceptualWidth}), 1, 1);
  return h;
}

// 2x average pooling for the second perceptual scale.
VarPtr half_scale(const VarPtr& x) {
  int64_t n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
  int64_t ho = h / 2, wo = w / 2;
  Tensor y({n, c, ho, wo});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x->val.data.data() + nc * h * w;
    double* dst = y.data.data() + nc * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox)
        dst[oy * wo + ox] = 0.25 * (src[(2 * oy) * w + 2 * ox] + src[(2 * oy) * w + 2 * ox + 1] +
                                    src[(2 * oy + 1) * w + 2 * ox] +
                                    src[(2 * oy + 1) * w + 2 * ox + 1]);
  }
  auto out = std::make_shared<Var>();
  out->val = std::move(y);
  if (x->requires_grad) {
    out->requires_grad = true;
    out->parents = {x};
    out->backprop = [x, n, c, h, w, ho, wo](Var& o) {
      x->ensure_grad();
      for (int64_t nc = 0; nc < n * c; ++nc) {
        const double* dy = o.grad.data.data() + nc * ho * wo;
        double* dx = x->grad.data.data() + nc * h * w;
        for (int64_t oy = 0; oy < ho; ++oy)
          for (int64_t ox = 0; ox < wo; ++ox) {
            double g = 0.25 * dy[oy * wo + ox];
            dx[(2 * oy) * w + 2 * ox] += g;
            dx[(2 * oy) * w + 2 * ox + 1] += g;
            dx[(2 * oy + 1) * w + 2 * ox] += g;
            dx[(2 * oy + 1) * w + 2 * ox + 1] += g;
          }
      }
    };
  }
  return out;
}

}  // namespace

VarPtr perceptual_distance_graph(const VarPtr& a_nchw, const VarPtr& b_nchw) {
  check_same_shape(a_nchw->val, b_nchw->val, "perceptual_distance");
  VarPtr d1 = mse_loss(perceptual_features(a_nchw), perceptual_features(b_nchw));
  VarPtr d2 = mse_loss(perceptual_features(half_scale(a_nchw)),
                       perceptual_features(half_scale(b_nchw)));
  return mul_scalar(add(d1, d2), 0.5);
}

double perceptual_distance(const ImageTensor& a, const ImageTensor& b) {
  VarPtr av = make_const(image_to_nchw(a));
  VarPtr bv = make_const(image_to_nchw(b));
  return perceptual_distance_graph(av, bv)->val[0];
}

SENetLosses senet_losses(const ImageTensor& pred, const ImageTensor& target,
                         const Tensor& dlogits, double lambda_perceptual, double lambda_gan) {
  check_same_shape(pred.data, target.data, "senet_losses");
  SENetLosses out;
  double acc = 0.0;
  for (int64_t i = 0; i < pred.data.numel(); ++i)
    acc += std::abs(pred.data[i] - target.data[i]);
  out.rec = acc / static_cast<double>(pred.data.numel());
  out.perceptual = perceptual_distance(pred, target);
  double g = 0.0;
  for (int64_t i = 0; i < dlogits.numel(); ++i) {
    double d = dlogits[i] - 1.0;
    g += d * d;
  }
  out.gan = g / static_cast<double>(dlogits.numel());
  out.total = out.rec + lambda_perceptual * out.perceptual + lambda_gan * out.gan;
  return out;
}

SENetTrainResult train_senet(const std::vector<PairedSample>& dataset, const SENetConfig& cfg,
                             uint64_t seed) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_senet: empty dataset");

  SENetTrainResult res;
  res.state = senet_init(cfg, Rng::mix64(seed, 0xa));
  res.discriminator = discriminator_init(cfg.base_channels, Rng::mix64(seed, 0xb));

  Adam opt_g(cfg.learning_rate);
  Adam opt_d(cfg.learning_rate);
  Rng rng(Rng::mix64(seed, 0xc));

  int64_t n = static_cast<int64_t>(dataset.size());
  int64_t batch = std::min<int64_t>(cfg.batch_size, n);
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates over the sample order.
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(rng.uniform_int(0, i))]);

    for (int64_t start = 0; start + batch <= n; start += batch) {
      std::vector<ImageTensor> inputs, targets;
      for (int64_t k = 0; k < batch; ++k) {
        const PairedSample& s = dataset[static_cast<size_t>(order[static_cast<size_t>(start + k)])];
        inputs.push_back(s.input);
        targets.push_back(s.target_structure);
      }
      VarPtr x = make_const(images_to_nchw(inputs));
      VarPtr y = make_const(images_to_nchw(targets));

      // Generator step (discriminator weights held constant).
      ParamBank g_bank = ParamBank::bind_trainable(res.state.weights);
      VarPtr pred = senet_graph(cfg, g_bank, x);
      ParamBank d_const = ParamBank::bind_const(res.discriminator.weights);
      VarPtr d_on_pred = discriminator_graph(cfg.base_channels, d_const, pred);
      VarPtr rec = l1_loss(pred, y);
      VarPtr perc = perceptual_distance_graph(pred, y);
      VarPtr gan = mean_all(square(add_scalar(d_on_pred, -1.0)));
      VarPtr total = add(rec, add(mul_scalar(perc, cfg.lambda_perceptual),
                                  mul_scalar(gan, cfg.lambda_gan)));
      auto g_params = g_bank.vars();
      zero_grad(g_params);
      backward(total);
      opt_g.step(g_params);
      g_bank.write_back(res.state.weights);
      res.total_loss_history.push_back(total->val[0]);

      // Discriminator step on the detached prediction.
      ParamBank d_bank = ParamBank::bind_trainable(res.discriminator.weights);
      VarPtr fake = make_const(pred->val);
      VarPtr d_fake = discriminator_graph(cfg.base_channels, d_bank, fake);
      VarPtr d_real = discriminator_graph(cfg.base_channels, d_bank, y);
      VarPtr loss_d = mul_scalar(add(mean_all(square(add_scalar(d_real, -1.0))),
                                     mean_all(square(d_fake))),
                                 0.5);
      auto d_params = d_bank.vars();
      zero_grad(d_params);
      backward(loss_d);
      opt_d.step(d_params);
      d_bank.write_back(res.discriminator.weights);

      res.state.step++;
      ema_update(res.state, ema_decay_at(res.state.step, cfg.ema_limit));
    }
  }
  res.state.seed = seed;
  return res;
}

}  // namespace psr
