#include "psr/detail_model.hpp"

#include <cmath>

namespace psr {

namespace {

constexpr int64_t kBlock = 4;

Tensor pack_condition_detail(const Tensor& x_t_chw, const ImageTensor& coarse_unit,
                             const Tensor& grad_plane, const ShadowMask& mask) {
  int64_t h = mask.height(), w = mask.width();
  Tensor x({1, 8, h, w});
  double* base = x.data.data();
  std::copy(x_t_chw.data.begin(), x_t_chw.data.end(), base);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < h * w; ++i)
      base[(3 + c) * h * w + i] = 2.0 * coarse_unit.data[i * 3 + c] - 1.0;
  // Gradient magnitudes are fed raw; they are already small and non-negative.
  std::copy(grad_plane.data.begin(), grad_plane.data.end(), base + 6 * h * w);
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

}  // namespace

ImageTensor simulate_coarse(const ImageTensor& clean, const ShadowMask& mask) {
  if (mask.height() != clean.height() || mask.width() != clean.width())
    throw std::invalid_argument("simulate_coarse: mask dimensions mismatch");
  ImageTensor out = clean;
  int64_t h = clean.height(), w = clean.width(), c = clean.channels();
  for (int64_t by = 0; by < h; by += kBlock)
    for (int64_t bx = 0; bx < w; bx += kBlock) {
      int64_t y1 = std::min(by + kBlock, h), x1 = std::min(bx + kBlock, w);
      int64_t count = 0;
      for (int64_t y = by; y < y1; ++y)
        for (int64_t x = bx; x < x1; ++x) count += mask.at(y, x) != 0.0;
      if (count == 0) continue;
      for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int64_t y = by; y < y1; ++y)
          for (int64_t x = bx; x < x1; ++x)
            if (mask.at(y, x) != 0.0) acc += clean.at(y, x, ch);
        double mean = acc / static_cast<double>(count);
        for (int64_t y = by; y < y1; ++y)
          for (int64_t x = bx; x < x1; ++x)
            if (mask.at(y, x) != 0.0) out.at(y, x, ch) = mean;
      }
    }
  return out;
}

DiffusionTrainResult train_detail(const std::vector<PairedSample>& dataset,
                                  const CondUNetConfig& cfg, const NoiseSchedule& sched,
                                  const DiffusionTrainOpts& opts, uint64_t seed) {
  opts.validate();
  if (dataset.empty()) throw std::invalid_argument("train_detail: empty dataset");
  int64_t n = static_cast<int64_t>(dataset.size());
  int64_t h = dataset[0].clean.height(), w = dataset[0].clean.width();

  // The coarse simulation and gradient condition are deterministic per
  // sample; precompute them.
  std::vector<ImageTensor> coarse(static_cast<size_t>(n));
  std::vector<Tensor> grads(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const PairedSample& s = dataset[static_cast<size_t>(i)];
    coarse[static_cast<size_t>(i)] = simulate_coarse(s.clean, s.mask);
    grads[static_cast<size_t>(i)] = gradient_map(s.clean, s.mask).data;
  }

  DiffusionTrainResult res;
  res.state = unet_init(cfg, Rng::mix64(seed, 0x33));
  Adam opt(opts.learning_rate);
  Rng rng(Rng::mix64(seed, 0x44));
  int64_t batch = std::min<int64_t>(opts.batch_size, n);

  for (int64_t step = 0; step < opts.steps; ++step) {
    std::vector<Tensor> xs;
    std::vector<int64_t> ts;
    Tensor eps_batch({batch, 3, h, w});
    for (int64_t k = 0; k < batch; ++k) {
      int64_t idx = rng.uniform_int(0, n - 1);
      const PairedSample& s = dataset[static_cast<size_t>(idx)];
      int64_t t = rng.uniform_int(0, sched.T - 1);
      Tensor x0({1, 3, h, w});
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < h * w; ++i)
          x0[c * h * w + i] = 2.0 * s.clean.data[i * 3 + c] - 1.0;
      Tensor eps({1, 3, h, w});
      for (double& v : eps.data) v = rng.normal();
      Tensor x_t = forward_diffuse(x0, t, eps, sched);
      xs.push_back(pack_condition_detail(x_t, coarse[static_cast<size_t>(idx)],
                                         grads[static_cast<size_t>(idx)], s.mask));
      ts.push_back(t);
      std::copy(eps.data.begin(), eps.data.end(), eps_batch.data.begin() + k * 3 * h * w);
    }

    ParamBank bank = ParamBank::bind_trainable(res.state.weights);
    VarPtr pred = unet_graph(cfg, bank, make_const(batch_pack(xs)), ts);
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

Tensor eps_forward_detail(const ModelState& state, const CondUNetConfig& cfg,
                          const Tensor& x_t_chw, const ImageTensor& coarse,
                          const GradientMap& grad, const ShadowMask& mask, int64_t t, int64_t T,
                          WeightKind kind) {
  if (t < 0 || t >= T) throw std::out_of_range("eps_forward_detail: t out of range");
  Tensor x = pack_condition_detail(x_t_chw, coarse, grad.data, mask);
  Tensor y = unet_predict(state, cfg, x, {t}, kind);
  return y.reshaped({3, mask.height(), mask.width()});
}

std::vector<ImageTensor> sample_detail_batch(const ModelState& state, const CondUNetConfig& cfg,
                                             const std::vector<ImageTensor>& coarse,
                                             const std::vector<ImageTensor>& original_inputs,
                                             const std::vector<ShadowMask>& masks,
                                             const TimestepPlan& plan, const NoiseSchedule& sched,
                                             const std::vector<uint64_t>& seeds) {
  if (state.weights.empty()) throw std::invalid_argument("sample_detail: untrained state");
  size_t n = coarse.size();
  if (original_inputs.size() != n || masks.size() != n || seeds.size() != n)
    throw std::invalid_argument("sample_detail: batch size mismatch");
  plan.validate(sched.T);

  std::vector<ImageTensor> out(n);
  std::vector<size_t> active;
  for (size_t i = 0; i < n; ++i) {
    if (masks[i].empty())
      out[i] = coarse[i];
    else
      active.push_back(i);
  }
  if (active.empty()) return out;

  int64_t h = coarse[0].height(), w = coarse[0].width();
  std::vector<Tensor> x_cur(active.size());
  std::vector<GradientMap> grads(active.size());
  for (size_t a = 0; a < active.size(); ++a) {
    size_t i = active[a];
    Rng rng(seeds[i]);
    Tensor x({1, 3, h, w});
    for (double& v : x.data) v = rng.normal();
    x_cur[a] = std::move(x);
    // Gradients of the original shadowed input inside the mask.
    grads[a] = gradient_map(original_inputs[i], masks[i]);
  }

  for (size_t pi = 0; pi < plan.steps.size(); ++pi) {
    int64_t t = plan.steps[pi];
    std::vector<Tensor> packed(active.size());
    std::vector<int64_t> ts(active.size(), t);
    for (size_t a = 0; a < active.size(); ++a)
      packed[a] = pack_condition_detail(x_cur[a], coarse[active[a]], grads[a].data,
                                        masks[active[a]]);
    Tensor eps = unet_predict(state, cfg, batch_pack(packed), ts, WeightKind::Ema);
    for (size_t a = 0; a < active.size(); ++a) {
      Tensor e({1, 3, h, w});
      std::copy(eps.data.begin() + static_cast<int64_t>(a) * 3 * h * w,
                eps.data.begin() + static_cast<int64_t>(a + 1) * 3 * h * w, e.data.begin());
      if (pi + 1 < plan.steps.size())
        x_cur[a] = ddim_step(x_cur[a], e, t, plan.steps[pi + 1], sched);
      else
        x_cur[a] = ddim_final(x_cur[a], e, t, sched);
    }
  }

  for (size_t a = 0; a < active.size(); ++a) {
    size_t i = active[a];
    ImageTensor gen(h, w, 3, ValueRange::Unit);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t p = 0; p < h * w; ++p)
        gen.data[p * 3 + c] = std::clamp((x_cur[a][c * h * w + p] + 1.0) * 0.5, 0.0, 1.0);
    out[i] = composite(coarse[i], gen, masks[i]);
  }
  return out;
}

ImageTensor sample_detail(const ModelState& state, const CondUNetConfig& cfg,
                          const ImageTensor& coarse, const ImageTensor& original_input,
                          const ShadowMask& mask, const TimestepPlan& plan,
                          const NoiseSchedule& sched, uint64_t seed) {
  return sample_detail_batch(state, cfg, {coarse}, {original_input}, {mask}, plan, sched,
                             {seed})[0];
}

}  // namespace psr
