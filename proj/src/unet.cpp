#include "psr/unet.hpp"

#include <cmath>

namespace psr {

namespace {

// Largest group count <= 8 that keeps at least 2 channels per group, so
// per-channel shifts (the time embedding) survive the normalization.
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

VarPtr norm(ParamBank& bank, const std::string& name, const VarPtr& x, int64_t c) {
  VarPtr g = bank.ones(name + ".g", {c});
  VarPtr be = bank.zeros(name + ".be", {c});
  return group_norm(x, g, be, gn_groups(c));
}

Tensor sinusoidal_embedding(const std::vector<int64_t>& timesteps, int64_t dim) {
  int64_t n = static_cast<int64_t>(timesteps.size());
  int64_t half = dim / 2;
  Tensor emb({n, dim});
  for (int64_t in = 0; in < n; ++in) {
    double t = static_cast<double>(timesteps[static_cast<size_t>(in)]);
    for (int64_t k = 0; k < half; ++k) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                             static_cast<double>(half > 1 ? half - 1 : 1));
      emb.at(in, k) = std::sin(t * freq);
      emb.at(in, half + k) = std::cos(t * freq);
    }
  }
  return emb;
}

struct UNetCtx {
  ParamBank* bank;
  VarPtr temb_act;  // silu(time embedding), [N, De]
  int64_t temb_dim;
};

VarPtr res_block(UNetCtx& ctx, const std::string& name, const VarPtr& x, int64_t ci, int64_t co) {
  ParamBank& bank = *ctx.bank;
  VarPtr h = silu(norm(bank, name + ".n1", x, ci));
  h = conv_block(bank, name + ".c1", h, ci, co, 3, 1);
  VarPtr tproj = linear(ctx.temb_act, bank.matrix(name + ".t.w", co, ctx.temb_dim),
                        bank.zeros(name + ".t.b", {co}));
  h = add_channel_vec(h, tproj);
  h = silu(norm(bank, name + ".n2", h, co));
  h = conv_block(bank, name + ".c2", h, co, co, 3, 1);
  VarPtr skip = ci == co ? x : conv_block(bank, name + ".skip", x, ci, co, 1, 1);
  return add(skip, h);
}

VarPtr attention_block(UNetCtx& ctx, const std::string& name, const VarPtr& x, int64_t c) {
  ParamBank& bank = *ctx.bank;
  int64_t n = x->val.dim(0), h = x->val.dim(2), w = x->val.dim(3), l = h * w;
  VarPtr g = norm(bank, name + ".n", x, c);
  VarPtr q = reshape(conv_block(bank, name + ".q", g, c, c, 1, 1), {n, c, l});
  VarPtr k = reshape(conv_block(bank, name + ".k", g, c, c, 1, 1), {n, c, l});
  VarPtr v = reshape(conv_block(bank, name + ".v", g, c, c, 1, 1), {n, c, l});
  VarPtr scores = mul_scalar(bmm(q, k, true, false), 1.0 / std::sqrt(static_cast<double>(c)));
  VarPtr att = softmax_lastdim(scores);          // [N, L, L], rows sum to 1
  VarPtr out = bmm(v, att, false, true);         // [N, C, L]
  out = conv_block(bank, name + ".proj", reshape(out, {n, c, h, w}), c, c, 1, 1);
  return add(x, out);
}

}  // namespace

void CondUNetConfig::validate() const {
  if (base_channels < 1) throw std::invalid_argument("unet config: base_channels must be >= 1");
  if (channel_multipliers.empty())
    throw std::invalid_argument("unet config: need at least one channel multiplier");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw std::invalid_argument("unet config: time_embed_dim must be even and >= 2");
  if (in_channels != 8)
    throw std::invalid_argument("unet config: in_channels must equal the 3+3+1+1 condition stack");
  if (out_channels != 3) throw std::invalid_argument("unet config: out_channels must be 3");
}

VarPtr unet_graph(const CondUNetConfig& cfg, ParamBank& bank, const VarPtr& x_nchw,
                  const std::vector<int64_t>& timesteps) {
  cfg.validate();
  if (x_nchw->val.ndim() != 4 || x_nchw->val.dim(1) != cfg.in_channels)
    throw std::invalid_argument("unet: input channel mismatch");
  if (static_cast<int64_t>(timesteps.size()) != x_nchw->val.dim(0))
    throw std::invalid_argument("unet: one timestep per sample required");
  size_t levels = cfg.channel_multipliers.size();
  int64_t div = int64_t{1} << (levels - 1);
  if (x_nchw->val.dim(2) % div != 0 || x_nchw->val.dim(3) % div != 0)
    throw std::invalid_argument("unet: H and W must be divisible by the downsampling factor");

  UNetCtx ctx;
  ctx.bank = &bank;
  ctx.temb_dim = cfg.time_embed_dim;
  VarPtr temb = make_const(sinusoidal_embedding(timesteps, cfg.time_embed_dim));
  temb = linear(temb, bank.matrix("temb.w1", cfg.time_embed_dim, cfg.time_embed_dim),
                bank.zeros("temb.b1", {cfg.time_embed_dim}));
  temb = silu(temb);
  temb = linear(temb, bank.matrix("temb.w2", cfg.time_embed_dim, cfg.time_embed_dim),
                bank.zeros("temb.b2", {cfg.time_embed_dim}));
  ctx.temb_act = silu(temb);

  std::vector<int64_t> ch(levels);
  for (size_t i = 0; i < levels; ++i) ch[i] = cfg.base_channels * cfg.channel_multipliers[i];

  VarPtr h = conv_block(bank, "in", x_nchw, cfg.in_channels, ch[0], 3, 1);
  std::vector<VarPtr> skips(levels);
  for (size_t lv = 0; lv < levels; ++lv) {
    h = res_block(ctx, "enc" + std::to_string(lv), h, h->val.dim(1), ch[lv]);
    if (lv + 1 == levels && cfg.attention_at_lowest)
      h = attention_block(ctx, "encattn", h, ch[lv]);
    skips[lv] = h;
    if (lv + 1 < levels)
      h = conv_block(bank, "down" + std::to_string(lv), h, ch[lv], ch[lv + 1], 3, 2);
  }

  h = res_block(ctx, "mid1", h, ch.back(), ch.back());
  if (cfg.attention_at_lowest) h = attention_block(ctx, "midattn", h, ch.back());
  h = res_block(ctx, "mid2", h, ch.back(), ch.back());

  for (size_t lv = levels; lv-- > 0;) {
    h = concat_channels({h, skips[lv]});
    h = res_block(ctx, "dec" + std::to_string(lv), h, 2 * ch[lv], ch[lv]);
    if (lv > 0) {
      h = nearest_upsample2(h);
      h = conv_block(bank, "up" + std::to_string(lv), h, ch[lv], ch[lv - 1], 3, 1);
    }
  }

  h = silu(norm(bank, "out.n", h, ch[0]));
  return conv_block(bank, "out", h, ch[0], cfg.out_channels, 3, 1);
}

ModelState unet_init(const CondUNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamBank bank = ParamBank::init_mode(seed);
  size_t levels = cfg.channel_multipliers.size();
  int64_t sz = int64_t{1} << (levels + 1);  // smallest spatial size that survives the downs
  VarPtr dummy = make_const(Tensor::zeros({1, cfg.in_channels, sz, sz}));
  unet_graph(cfg, bank, dummy, {0});
  ModelState st;
  st.weights = bank.to_map();
  st.ema = st.weights;
  st.step = 0;
  st.seed = seed;
  return st;
}

Tensor unet_predict(const ModelState& state, const CondUNetConfig& cfg, const Tensor& x_nchw,
                    const std::vector<int64_t>& timesteps, WeightKind kind) {
  const auto& weights = kind == WeightKind::Ema ? state.ema : state.weights;
  ParamBank bank = ParamBank::bind_const(weights);
  VarPtr x = make_const(x_nchw);
  return unet_graph(cfg, bank, x, timesteps)->val;
}

}  // namespace psr
