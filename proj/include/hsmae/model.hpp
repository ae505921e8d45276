#pragma once

// Asymmetric masked autoencoder over (p, p, s) tokens.
//
// The encoder sees only visible tokens. Its latents are projected to the decoder
// width, scattered back into the full grid with a learned mask token filling the
// masked slots, and the decoder reconstructs every token. The loss is the mean
// squared error over all pixels (masked and visible).

#include <random>
#include <span>
#include <string>
#include <vector>

#include "hsmae/common.hpp"
#include "hsmae/datacube.hpp"
#include "hsmae/layers.hpp"
#include "hsmae/patching.hpp"

namespace hsmae {

struct ModelConfig {
  std::string preset = "desk";
  std::size_t patch = 8;  // spatial side p
  std::size_t group = 4;  // bands per group s
  std::size_t enc_blocks = 2;
  std::size_t dec_blocks = 1;
  std::size_t enc_dim = 64;
  std::size_t dec_dim = 48;
  std::size_t enc_heads = 4;
  std::size_t dec_heads = 4;
  std::size_t mlp_ratio = 4;

  std::size_t token_len() const noexcept { return patch * patch * group; }
  bool operator==(const ModelConfig&) const = default;
};

inline ModelConfig desk_preset() { return {}; }

/// 128x128x240 EMIT-shaped input; 4/2 blocks, 768/512 wide, 8/8 heads.
inline ModelConfig emit_paper_preset() { return {"emit-paper", 16, 10, 4, 2, 768, 512, 8, 8, 4}; }

/// 202 EnMAP bands only split into groups of 2 (202 = 2 * 101).
inline ModelConfig enmap_paper_preset() { return {"enmap-paper", 16, 2, 4, 2, 768, 512, 8, 8, 4}; }

inline ModelConfig model_preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "emit-paper") return emit_paper_preset();
  if (name == "enmap-paper") return enmap_paper_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk, emit-paper or enmap-paper)");
}

inline void validate(const ModelConfig& c) {
  require(c.patch >= 1 && c.group >= 1, "model config: patch and group must be >= 1");
  require(c.enc_heads >= 1 && c.dec_heads >= 1 && c.mlp_ratio >= 1, "model config: heads and mlp_ratio must be >= 1");
  require(c.enc_dim % c.enc_heads == 0, "model config: enc_dim must be divisible by enc_heads");
  require(c.dec_dim % c.dec_heads == 0, "model config: dec_dim must be divisible by dec_heads");
  require(c.enc_dim >= 8 && c.enc_dim % 8 == 0 && c.dec_dim >= 8 && c.dec_dim % 8 == 0,
          "model config: widths must be positive multiples of 8 (position table layout)");
}

inline json to_json(const ModelConfig& c) {
  return json{{"preset", c.preset},       {"patch", c.patch},         {"group", c.group},
              {"enc_blocks", c.enc_blocks}, {"dec_blocks", c.dec_blocks}, {"enc_dim", c.enc_dim},
              {"dec_dim", c.dec_dim},     {"enc_heads", c.enc_heads}, {"dec_heads", c.dec_heads},
              {"mlp_ratio", c.mlp_ratio}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.preset = j.value("preset", c.preset);
  c.patch = j.at("patch").get<std::size_t>();
  c.group = j.at("group").get<std::size_t>();
  c.enc_blocks = j.at("enc_blocks").get<std::size_t>();
  c.dec_blocks = j.at("dec_blocks").get<std::size_t>();
  c.enc_dim = j.at("enc_dim").get<std::size_t>();
  c.dec_dim = j.at("dec_dim").get<std::size_t>();
  c.enc_heads = j.at("enc_heads").get<std::size_t>();
  c.dec_heads = j.at("dec_heads").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  validate(c);
  return c;
}

template <typename T>
struct ModelState {
  ModelConfig config;
  Linear<T> patch_embed;
  std::vector<Block<T>> encoder;
  Linear<T> enc_to_dec;
  Mat<T> mask_token;  // 1 x dec_dim
  std::vector<Block<T>> decoder;
  LayerNorm<T> dec_norm;
  Linear<T> head;
};

template <typename M>
struct BasicParamRef {
  std::string name;
  M* value;
  bool encoder_side;  // frozen by freeze_encoder
  bool decays;        // weight matrices only
};

template <typename T>
using ParamRef = BasicParamRef<Mat<T>>;
template <typename T>
using ConstParamRef = BasicParamRef<const Mat<T>>;

namespace detail {

template <typename T>
void push_linear(std::vector<ParamRef<T>>& out, const std::string& name, Linear<T>& l, bool enc) {
  out.push_back({name + ".weight", &l.weight, enc, true});
  if (l.has_bias()) out.push_back({name + ".bias", &l.bias, enc, false});
}

template <typename T>
void push_norm(std::vector<ParamRef<T>>& out, const std::string& name, LayerNorm<T>& n, bool enc) {
  out.push_back({name + ".gain", &n.gain, enc, false});
  out.push_back({name + ".bias", &n.bias, enc, false});
}

template <typename T>
void push_block(std::vector<ParamRef<T>>& out, const std::string& name, Block<T>& b, bool enc) {
  push_norm(out, name + ".norm1", b.norm1, enc);
  push_linear(out, name + ".attn.query", b.attn.query, enc);
  push_linear(out, name + ".attn.key", b.attn.key, enc);
  push_linear(out, name + ".attn.value", b.attn.value, enc);
  push_linear(out, name + ".attn.out", b.attn.out, enc);
  push_norm(out, name + ".norm2", b.norm2, enc);
  push_linear(out, name + ".mlp.fc1", b.fc1, enc);
  push_linear(out, name + ".mlp.fc2", b.fc2, enc);
}

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, bool bias = true) {
  return {Mat<T>::Zero(in, out), bias ? Mat<T>::Zero(1, out) : Mat<T>()};
}

template <typename T>
LayerNorm<T> make_norm(std::size_t d) {
  return {Mat<T>::Ones(1, d), Mat<T>::Zero(1, d)};
}

template <typename T>
Block<T> make_block(std::size_t d, std::size_t heads, std::size_t mlp_ratio) {
  Block<T> b;
  b.norm1 = make_norm<T>(d);
  b.attn.heads = heads;
  b.attn.query = make_linear<T>(d, d);
  b.attn.key = make_linear<T>(d, d, false);
  b.attn.value = make_linear<T>(d, d);
  b.attn.out = make_linear<T>(d, d);
  b.norm2 = make_norm<T>(d);
  b.fc1 = make_linear<T>(d, d * mlp_ratio);
  b.fc2 = make_linear<T>(d * mlp_ratio, d);
  return b;
}

}  // namespace detail

/// All learnable tensors in canonical order. This order defines checkpoint layout.
template <typename T>
std::vector<ParamRef<T>> params(ModelState<T>& m) {
  std::vector<ParamRef<T>> out;
  detail::push_linear(out, "patch_embed", m.patch_embed, true);
  for (std::size_t i = 0; i < m.encoder.size(); ++i)
    detail::push_block(out, "encoder." + std::to_string(i), m.encoder[i], true);
  detail::push_linear(out, "enc_to_dec", m.enc_to_dec, false);
  out.push_back({"mask_token", &m.mask_token, false, false});
  for (std::size_t i = 0; i < m.decoder.size(); ++i)
    detail::push_block(out, "decoder." + std::to_string(i), m.decoder[i], false);
  detail::push_norm(out, "dec_norm", m.dec_norm, false);
  detail::push_linear(out, "head", m.head, false);
  return out;
}

template <typename T>
std::vector<ConstParamRef<T>> params(const ModelState<T>& m) {
  std::vector<ConstParamRef<T>> out;
  for (auto& p : params(const_cast<ModelState<T>&>(m))) out.push_back({p.name, p.value, p.encoder_side, p.decays});
  return out;
}

/// Same shapes as the config dictates, every value zero. Used for gradients and moments.
template <typename T>
ModelState<T> zero_model(const ModelConfig& cfg) {
  validate(cfg);
  ModelState<T> m;
  m.config = cfg;
  m.patch_embed = detail::make_linear<T>(cfg.token_len(), cfg.enc_dim);
  for (std::size_t i = 0; i < cfg.enc_blocks; ++i)
    m.encoder.push_back(detail::make_block<T>(cfg.enc_dim, cfg.enc_heads, cfg.mlp_ratio));
  m.enc_to_dec = detail::make_linear<T>(cfg.enc_dim, cfg.dec_dim);
  m.mask_token = Mat<T>::Zero(1, cfg.dec_dim);
  for (std::size_t i = 0; i < cfg.dec_blocks; ++i)
    m.decoder.push_back(detail::make_block<T>(cfg.dec_dim, cfg.dec_heads, cfg.mlp_ratio));
  m.dec_norm = detail::make_norm<T>(cfg.dec_dim);
  m.head = detail::make_linear<T>(cfg.dec_dim, cfg.token_len());
  return m;
}

template <typename T>
ModelState<T> zeros_like(const ModelState<T>& m) {
  ModelState<T> z = m;
  for (auto& p : params(z)) p.value->setZero();
  return z;
}

/// Weights ~ normal(0, 0.02) truncated at two standard deviations, biases 0, norm gains 1,
/// mask token ~ the same truncated normal.
template <typename T>
ModelState<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelState<T> m = zero_model<T>(cfg);
  std::mt19937_64 rng(derive_seed(seed, {0x1417}));
  std::normal_distribution<double> normal(0.0, 0.02);
  auto draw = [&] {
    for (;;) {
      const double v = normal(rng);
      if (std::abs(v) <= 0.04) return static_cast<T>(v);
    }
  };
  for (auto& p : params(m))
    if (p.decays || p.name == "mask_token")
      for (Eigen::Index i = 0; i < p.value->size(); ++i) p.value->data()[i] = draw();
  return m;
}

/// Fixed position tables for the encoder and decoder widths.
template <typename T>
struct PosTables {
  Mat<T> encoder;
  Mat<T> decoder;
};

template <typename T>
PosTables<T> make_pos_tables(const GridDims& dims, const ModelConfig& cfg) {
  return {build_pos_embed<T>(dims, cfg.enc_dim), build_pos_embed<T>(dims, cfg.dec_dim)};
}

template <typename T>
Mat<T> gather_rows(const Mat<T>& m, std::span<const std::size_t> rows) {
  Mat<T> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

template <typename T>
struct EncoderCache {
  Mat<T> tokens;
  std::vector<typename Block<T>::Cache> blocks;
};

/// Encoder over an arbitrary set of token rows with their position rows attached.
/// Attention is permutation-equivariant, so row order only permutes the output.
template <typename T>
Mat<T> encode_tokens(const ModelState<T>& m, const Mat<T>& tokens, const Mat<T>& pos_rows,
                     EncoderCache<T>* cache = nullptr) {
  require(tokens.rows() >= 1, "no visible tokens: the encoder needs at least one");
  require(static_cast<std::size_t>(tokens.cols()) == m.config.token_len(), "encode: token length mismatch");
  require(pos_rows.rows() == tokens.rows() && static_cast<std::size_t>(pos_rows.cols()) == m.config.enc_dim,
          "encode: position rows mismatch");
  Mat<T> x = m.patch_embed.forward(tokens) + pos_rows;
  if (cache) {
    cache->tokens = tokens;
    cache->blocks.resize(m.encoder.size());
  }
  for (std::size_t b = 0; b < m.encoder.size(); ++b)
    x = m.encoder[b].forward(x, cache ? &cache->blocks[b] : nullptr);
  return x;
}

template <typename T>
struct Latents {
  Mat<T> values;                   // one enc_dim row per visible token
  std::vector<std::size_t> tokens;  // their token indices, ascending
};

template <typename T>
Latents<T> encode(const ModelState<T>& m, const TokenGrid<T>& grid, const MaskPlan& plan, const PosTables<T>& pos) {
  require(grid.dims == plan.dims(), "encode: grid and mask plan dims differ");
  require(static_cast<std::size_t>(pos.encoder.rows()) == grid.dims.token_count(), "encode: position table mismatch");
  const auto& vis = plan.visible();
  return {encode_tokens(m, gather_rows(grid.tokens, vis), gather_rows(pos.encoder, vis)), vis};
}

template <typename T>
struct DecoderCache {
  Mat<T> latents;
  std::vector<typename Block<T>::Cache> blocks;
  typename LayerNorm<T>::Cache norm;
  Mat<T> normed;
};

template <typename T>
Mat<T> decode_tokens(const ModelState<T>& m, const Mat<T>& latents, const MaskPlan& plan, const Mat<T>& dec_pos,
                     DecoderCache<T>* cache = nullptr) {
  const auto& vis = plan.visible();
  require(static_cast<std::size_t>(latents.rows()) == vis.size(), "decode: latent count does not match visible tokens");
  require(static_cast<std::size_t>(dec_pos.rows()) == plan.dims().token_count(), "decode: position table mismatch");
  Mat<T> projected = m.enc_to_dec.forward(latents);
  Mat<T> x = dec_pos;
  for (std::size_t r = 0; r < vis.size(); ++r)
    x.row(static_cast<Eigen::Index>(vis[r])) += projected.row(static_cast<Eigen::Index>(r));
  for (std::size_t t : plan.masked()) x.row(static_cast<Eigen::Index>(t)) += m.mask_token.row(0);
  if (cache) {
    cache->latents = latents;
    cache->blocks.resize(m.decoder.size());
  }
  for (std::size_t b = 0; b < m.decoder.size(); ++b)
    x = m.decoder[b].forward(x, cache ? &cache->blocks[b] : nullptr);
  Mat<T> normed = m.dec_norm.forward(x, cache ? &cache->norm : nullptr);
  Mat<T> out = m.head.forward(normed);
  if (cache) cache->normed = std::move(normed);
  return out;
}

template <typename T>
TokenGrid<T> decode(const ModelState<T>& m, const Latents<T>& latents, const MaskPlan& plan, const PosTables<T>& pos) {
  require(latents.tokens == plan.visible(), "decode: latents were produced under a different mask plan");
  return {plan.dims(), decode_tokens(m, latents.values, plan, pos.decoder)};
}

struct LossBreakdown {
  double total = 0.0;
  double masked = 0.0;
  double unmasked = 0.0;
  std::size_t masked_pixels = 0;
  std::size_t unmasked_pixels = 0;
};

/// Mean squared error over all pixels, and separately over masked and visible tokens'
/// pixels. An empty set contributes 0.
template <typename T>
LossBreakdown holistic_loss(const TokenGrid<T>& recon, const TokenGrid<T>& target, const MaskPlan& plan) {
  require(recon.dims == target.dims && recon.dims == plan.dims(), "holistic_loss: dims differ");
  require(recon.tokens.rows() == target.tokens.rows() && recon.tokens.cols() == target.tokens.cols(),
          "holistic_loss: token matrices differ in shape");
  const auto len = static_cast<std::size_t>(recon.tokens.cols());
  double sum_masked = 0.0, sum_visible = 0.0;
  for (Eigen::Index t = 0; t < recon.tokens.rows(); ++t) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < recon.tokens.cols(); ++k) {
      const double d = static_cast<double>(recon.tokens(t, k)) - static_cast<double>(target.tokens(t, k));
      s += d * d;
    }
    (plan.is_masked(static_cast<std::size_t>(t)) ? sum_masked : sum_visible) += s;
  }
  LossBreakdown l;
  l.masked_pixels = plan.masked_count() * len;
  l.unmasked_pixels = plan.visible_count() * len;
  l.masked = l.masked_pixels ? sum_masked / static_cast<double>(l.masked_pixels) : 0.0;
  l.unmasked = l.unmasked_pixels ? sum_visible / static_cast<double>(l.unmasked_pixels) : 0.0;
  l.total = (sum_masked + sum_visible) / static_cast<double>(l.masked_pixels + l.unmasked_pixels);
  return l;
}

/// Normalized input/target token grids plus the plan that hides part of the input.
template <typename T>
struct Sample {
  TokenGrid<T> input;
  TokenGrid<T> target;
  MaskPlan plan;
};

template <typename T>
Sample<T> make_sample(const Cube& input, const Cube& target, const MaskPlan& plan, const BandStats& stats,
                      const ModelConfig& cfg) {
  require(input.values.same_shape(target.values), "sample: input and target dims differ");
  TokenGrid<T> in = patchify(normalized<T>(input.values, stats), cfg.patch, cfg.group);
  require(in.dims == plan.dims(), "sample: mask plan dims do not match the cube");
  TokenGrid<T> tg = patchify(normalized<T>(target.values, stats), cfg.patch, cfg.group);
  return {std::move(in), std::move(tg), plan};
}

/// Full pass. When grad is non-null, d(total loss) * weight is accumulated into it.
/// With skip_encoder the backward pass stops at the encoder output.
template <typename T>
LossBreakdown loss_and_grad(const ModelState<T>& m, const Sample<T>& sample, const PosTables<T>& pos,
                            ModelState<T>* grad = nullptr, T weight = T(1), bool skip_encoder = false,
                            Mat<T>* recon_out = nullptr) {
  const MaskPlan& plan = sample.plan;
  const auto& vis = plan.visible();
  EncoderCache<T> ec;
  DecoderCache<T> dc;
  Mat<T> vis_tokens = gather_rows(sample.input.tokens, vis);
  Mat<T> latents = encode_tokens(m, vis_tokens, gather_rows(pos.encoder, vis), grad ? &ec : nullptr);
  Mat<T> recon = decode_tokens(m, latents, plan, pos.decoder, grad ? &dc : nullptr);
  const LossBreakdown loss = holistic_loss(TokenGrid<T>{plan.dims(), recon}, sample.target, plan);

  if (grad) {
    const T scale = weight * static_cast<T>(2.0 / static_cast<double>(recon.size()));
    Mat<T> d = (recon - sample.target.tokens) * scale;
    d = m.head.backward(dc.normed, d, grad->head);
    d = m.dec_norm.backward(d, dc.norm, grad->dec_norm);
    for (std::size_t b = m.decoder.size(); b-- > 0;) d = m.decoder[b].backward(d, dc.blocks[b], grad->decoder[b]);
    Mat<T> dprojected(static_cast<Eigen::Index>(vis.size()), d.cols());
    for (std::size_t r = 0; r < vis.size(); ++r) dprojected.row(static_cast<Eigen::Index>(r)) = d.row(static_cast<Eigen::Index>(vis[r]));
    for (std::size_t t : plan.masked()) grad->mask_token.row(0) += d.row(static_cast<Eigen::Index>(t));
    Mat<T> dlatent = m.enc_to_dec.backward(latents, dprojected, grad->enc_to_dec);
    if (!skip_encoder) {
      for (std::size_t b = m.encoder.size(); b-- > 0;)
        dlatent = m.encoder[b].backward(dlatent, ec.blocks[b], grad->encoder[b]);
      m.patch_embed.backward(ec.tokens, dlatent, grad->patch_embed);
    }
  }
  if (recon_out) *recon_out = std::move(recon);
  return loss;
}

template <typename T>
struct ForwardResult {
  Volume<T> reconstruction;  // reflectance space
  LossBreakdown loss;        // normalized space
};

/// Reconstructs target from input under plan. Normalization by stats is applied
/// internally; the loss is measured in normalized space.
template <typename T>
ForwardResult<T> forward(const ModelState<T>& m, const Cube& input, const Cube& target, const MaskPlan& plan,
                         const BandStats& stats) {
  const Sample<T> sample = make_sample<T>(input, target, plan, stats, m.config);
  const PosTables<T> pos = make_pos_tables<T>(plan.dims(), m.config);
  Mat<T> recon;
  const LossBreakdown loss = loss_and_grad<T>(m, sample, pos, nullptr, T(1), false, &recon);
  Volume<T> values =
      unpatchify(TokenGrid<T>{plan.dims(), std::move(recon)}, input.height(), input.width(), input.channels());
  return {denormalized(values, stats), loss};
}

template <typename T>
ForwardResult<T> forward(const ModelState<T>& m, const Cube& cube, const MaskPlan& plan, const BandStats& stats) {
  return forward(m, cube, cube, plan, stats);
}

}  // namespace hsmae
