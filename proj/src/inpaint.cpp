#include "psr/inpaint.hpp"

#include <cmath>

namespace psr {

namespace {

void stamp_disc(ShadowMask& m, int64_t cy, int64_t cx, int r) {
  for (int64_t y = cy - r; y <= cy + r; ++y)
    for (int64_t x = cx - r; x <= cx + r; ++x)
      if (y >= 0 && y < m.height() && x >= 0 && x < m.width() &&
          (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
        m.at(y, x) = 1.0;
}

void add_random_shape(ShadowMask& m, Rng& rng, bool force_rect) {
  int64_t h = m.height(), w = m.width();
  int kind = force_rect ? 0 : static_cast<int>(rng.uniform_int(0, 2));
  if (kind == 0) {
    // Rectangle at least 6x6 so one connected component is guaranteed.
    int64_t rw = rng.uniform_int(6, std::max<int64_t>(6, w / 2));
    int64_t rh = rng.uniform_int(6, std::max<int64_t>(6, h / 2));
    int64_t x0 = rng.uniform_int(0, w - rw);
    int64_t y0 = rng.uniform_int(0, h - rh);
    for (int64_t y = y0; y < y0 + rh; ++y)
      for (int64_t x = x0; x < x0 + rw; ++x) m.at(y, x) = 1.0;
  } else if (kind == 1) {
    double cx = rng.uniform(0.2, 0.8) * static_cast<double>(w);
    double cy = rng.uniform(0.2, 0.8) * static_cast<double>(h);
    double a = rng.uniform(0.08, 0.30) * static_cast<double>(w);
    double b = rng.uniform(0.08, 0.30) * static_cast<double>(h);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double px = (static_cast<double>(x) - cx) / a, py = (static_cast<double>(y) - cy) / b;
        if (px * px + py * py <= 1.0) m.at(y, x) = 1.0;
      }
  } else {
    // Brush stroke: random walk of disc stamps.
    int64_t cy = rng.uniform_int(4, h - 5), cx = rng.uniform_int(4, w - 5);
    int r = static_cast<int>(rng.uniform_int(1, 3));
    int steps = static_cast<int>(rng.uniform_int(10, 30));
    for (int s = 0; s < steps; ++s) {
      stamp_disc(m, cy, cx, r);
      cy = std::clamp<int64_t>(cy + rng.uniform_int(-2, 2), 0, h - 1);
      cx = std::clamp<int64_t>(cx + rng.uniform_int(-2, 2), 0, w - 1);
    }
  }
}

}  // namespace

ShadowMask random_training_mask(int64_t seed, int64_t h, int64_t w) {
  Rng base(Rng::mix64(0x7a51c0deULL, static_cast<uint64_t>(seed)));
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng = base.fork(static_cast<uint64_t>(attempt));
    ShadowMask m(h, w);
    int shapes = static_cast<int>(rng.uniform_int(1, 4));
    for (int s = 0; s < shapes; ++s) add_random_shape(m, rng, s == 0);
    double frac = static_cast<double>(m.count()) / static_cast<double>(h * w);
    if (frac >= 0.10 && frac <= 0.50) return m;
  }
  // Central rectangle covering 25% is always within bounds.
  ShadowMask m(h, w);
  for (int64_t y = h / 4; y < 3 * h / 4; ++y)
    for (int64_t x = w / 4; x < 3 * w / 4; ++x) m.at(y, x) = 1.0;
  return m;
}

void DiffusionTrainOpts::validate() const {
  if (steps < 1 || batch_size < 1)
    throw std::invalid_argument("diffusion train: steps and batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("diffusion train: bad learning rate");
}

namespace {

// Pack [x_t, masked image (signed), map (signed or raw), mask] into the
// 8-channel condition stack.
Tensor pack_condition(const Tensor& x_t_chw, const ImageTensor& cond_img_unit,
                      const Tensor& map_plane, const ShadowMask& mask, bool map_is_unit) {
  int64_t h = mask.height(), w = mask.width();
  Tensor x({1, 8, h, w});
  double* base = x.data.data();
  // x_t channels.
  std::copy(x_t_chw.data.begin(), x_t_chw.data.end(), base);
  // Masked/coarse image, unit -> signed.
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < h * w; ++i)
      base[(3 + c) * h * w + i] = 2.0 * cond_img_unit.data[i * 3 + c] - 1.0;
  // Condition map channel.
  for (int64_t i = 0; i < h * w; ++i)
    base[6 * h * w + i] = map_is_unit ? 2.0 * map_plane.data[static_cast<size_t>(i)] - 1.0
                                      : map_plane.data[static_cast<size_t>(i)];
  // Mask channel, kept as {0,1}.
  std::copy(mask.data.data.begin(), mask.data.data.end(), base + 7 * h * w);
  return x;
}

Tensor batch_pack(const std::vector<Tensor>& singles) {
  int64_t n = static_cast<int64_t>(singles.size());
  int64_t c = singles[0].dim(1), h = singles[0].dim(2), w = singles[0].dim(3);
  Tensor out({n, c, h, w});
  for (int64_t i = 0; i < n; ++i)
    std::copy(singles[static_cast<size_t>(i)].data.begin(),
              singles[static_cast<size_t>(i)].data.end(), out.data.begin() + i * c * h * w);
  return out;
}

Tensor image_plane(const ImageTensor& img) {
  if (img.channels() != 1) throw std::invalid_argument("expected single-channel map");
  Tensor p({img.height(), img.width()});
  std::copy(img.data.data.begin(), img.data.data.end(), p.data.begin());
  return p;
}

}  // namespace

DiffusionTrainResult train_inpaint(const std::vector<ImageTensor>& clean_portraits,
                                   const ModelState& senet_state, const SENetConfig& senet_cfg,
                                   const CondUNetConfig& cfg, const NoiseSchedule& sched,
                                   const DiffusionTrainOpts& opts, uint64_t seed,
                                   bool use_structure) {
  opts.validate();
  if (clean_portraits.empty()) throw std::invalid_argument("train_inpaint: empty dataset");
  if (senet_state.weights.empty())
    throw std::invalid_argument("train_inpaint: missing structure network weights");

  int64_t n = static_cast<int64_t>(clean_portraits.size());
  int64_t h = clean_portraits[0].height(), w = clean_portraits[0].width();

  // Structure maps depend only on the clean image; compute them once with
  // the frozen extraction network.
  std::vector<Tensor> structure_cache(static_cast<size_t>(n));
  if (use_structure) {
    const int64_t chunk = 16;
    for (int64_t start = 0; start < n; start += chunk) {
      int64_t end = std::min(n, start + chunk);
      std::vector<ImageTensor> batch(clean_portraits.begin() + start,
                                     clean_portraits.begin() + end);
      auto maps = senet_forward_batch(senet_state, senet_cfg, batch, WeightKind::Ema);
      for (int64_t i = start; i < end; ++i)
        structure_cache[static_cast<size_t>(i)] = image_plane(maps[static_cast<size_t>(i - start)]);
    }
  }
  // The unconditioned ablation replaces the structure channel with a flat
  // mid-gray map (signed zero); sampling must feed the same constant.
  Tensor flat_map = Tensor::full({h, w}, 0.5);

  DiffusionTrainResult res;
  res.state = unet_init(cfg, Rng::mix64(seed, 0x11));
  Adam opt(opts.learning_rate);
  Rng rng(Rng::mix64(seed, 0x22));
  int64_t batch = std::min<int64_t>(opts.batch_size, n);

  for (int64_t step = 0; step < opts.steps; ++step) {
    std::vector<Tensor> xs;
    std::vector<int64_t> ts;
    Tensor eps_batch({batch, 3, h, w});
    for (int64_t k = 0; k < batch; ++k) {
      int64_t idx = rng.uniform_int(0, n - 1);
      const ImageTensor& clean = clean_portraits[static_cast<size_t>(idx)];
      ShadowMask mask = random_training_mask(static_cast<int64_t>(rng.next_u64() >> 1), h, w);
      int64_t t = rng.uniform_int(0, sched.T - 1);

      Tensor x0({1, 3, h, w});
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < h * w; ++i)
          x0[c * h * w + i] = 2.0 * clean.data[i * 3 + c] - 1.0;
      Tensor eps({1, 3, h, w});
      for (double& v : eps.data) v = rng.normal();
      Tensor x_t = forward_diffuse(x0, t, eps, sched);

      ImageTensor masked = clean;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          if (mask.at(y, x) != 0.0)
            for (int64_t c = 0; c < 3; ++c) masked.at(y, x, c) = 0.0;

      const Tensor& smap = use_structure ? structure_cache[static_cast<size_t>(idx)] : flat_map;
      xs.push_back(pack_condition(x_t, masked, smap, mask, true));
      ts.push_back(t);
      std::copy(eps.data.begin(), eps.data.end(), eps_batch.data.begin() + k * 3 * h * w);
    }

    ParamBank bank = ParamBank::bind_trainable(res.state.weights);
    VarPtr x = make_const(batch_pack(xs));
    VarPtr pred = unet_graph(cfg, bank, x, ts);
    VarPtr loss = mse_loss(pred, make_const(eps_batch));
    auto params = bank.vars();
    zero_grad(params);
    backward(loss);
    opt.step(params);
    bank.write_back(res.state.weights);

    res.state.step++;
    ema_update(res.state, ema_decay_at(res.state.step, opts.ema_limit));
    res.loss_history.push_back(loss->val[0]);
  }
  res.state.seed = seed;
  return res;
}

Tensor eps_forward(const ModelState& state, const CondUNetConfig& cfg, const Tensor& x_t_chw,
                   const ImageTensor& masked_input, const ImageTensor& structure,
                   const ShadowMask& mask, int64_t t, int64_t T, WeightKind kind) {
  if (t < 0 || t >= T) throw std::out_of_range("eps_forward: t out of range");
  Tensor x = pack_condition(x_t_chw, masked_input, image_plane(structure), mask, true);
  Tensor y = unet_predict(state, cfg, x, {t}, kind);
  return y.reshaped({3, mask.height(), mask.width()});
}

std::vector<ImageTensor> sample_inpaint_batch(const ModelState& state, const CondUNetConfig& cfg,
                                              const std::vector<ImageTensor>& inputs,
                                              const std::vector<ShadowMask>& masks,
                                              const std::vector<ImageTensor>& structures,
                                              const TimestepPlan& plan,
                                              const NoiseSchedule& sched,
                                              const std::vector<uint64_t>& seeds) {
  if (state.weights.empty()) throw std::invalid_argument("sample_inpaint: untrained state");
  size_t n = inputs.size();
  if (masks.size() != n || structures.size() != n || seeds.size() != n)
    throw std::invalid_argument("sample_inpaint: batch size mismatch");
  plan.validate(sched.T);

  std::vector<ImageTensor> out(n);
  // Active set: images whose mask is non-empty; empty masks short-circuit.
  std::vector<size_t> active;
  for (size_t i = 0; i < n; ++i) {
    if (masks[i].empty())
      out[i] = inputs[i];
    else
      active.push_back(i);
  }
  if (active.empty()) return out;

  int64_t h = inputs[0].height(), w = inputs[0].width();
  int64_t na = static_cast<int64_t>(active.size());

  // Initial noise and per-image conditions.
  std::vector<Tensor> x_cur(active.size());
  std::vector<ImageTensor> masked(active.size());
  for (size_t a = 0; a < active.size(); ++a) {
    size_t i = active[a];
    Rng rng(seeds[i]);
    Tensor x({1, 3, h, w});
    for (double& v : x.data) v = rng.normal();
    x_cur[a] = std::move(x);
    ImageTensor m_img = inputs[i];
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx)
        if (masks[i].at(y, xx) != 0.0)
          for (int64_t c = 0; c < 3; ++c) m_img.at(y, xx, c) = 0.0;
    masked[a] = std::move(m_img);
  }

  for (size_t pi = 0; pi < plan.steps.size(); ++pi) {
    int64_t t = plan.steps[pi];
    std::vector<Tensor> packed(active.size());
    std::vector<int64_t> ts(active.size(), t);
    for (size_t a = 0; a < active.size(); ++a)
      packed[a] = pack_condition(x_cur[a], masked[a], image_plane(structures[active[a]]),
                                 masks[active[a]], true);
    Tensor eps = unet_predict(state, cfg, batch_pack(packed), ts, WeightKind::Ema);
    for (int64_t a = 0; a < na; ++a) {
      Tensor e({1, 3, h, w});
      std::copy(eps.data.begin() + a * 3 * h * w, eps.data.begin() + (a + 1) * 3 * h * w,
                e.data.begin());
      if (pi + 1 < plan.steps.size())
        x_cur[static_cast<size_t>(a)] =
            ddim_step(x_cur[static_cast<size_t>(a)], e, t, plan.steps[pi + 1], sched);
      else
        x_cur[static_cast<size_t>(a)] = ddim_final(x_cur[static_cast<size_t>(a)], e, t, sched);
    }
  }

  for (size_t a = 0; a < active.size(); ++a) {
    size_t i = active[a];
    ImageTensor gen(h, w, 3, ValueRange::Unit);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t p = 0; p < h * w; ++p)
        gen.data[p * 3 + c] =
            std::clamp((x_cur[a][c * h * w + p] + 1.0) * 0.5, 0.0, 1.0);
    out[i] = composite(inputs[i], gen, masks[i]);
  }
  return out;
}

ImageTensor sample_inpaint(const ModelState& state, const CondUNetConfig& cfg,
                           const ImageTensor& input, const ShadowMask& mask,
                           const ImageTensor& structure, const TimestepPlan& plan,
                           const NoiseSchedule& sched, uint64_t seed) {
  return sample_inpaint_batch(state, cfg, {input}, {mask}, {structure}, plan, sched, {seed})[0];
}

}  // namespace psr
