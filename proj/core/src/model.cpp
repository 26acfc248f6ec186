// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/model.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "config_json.hpp"
#include "fsvg/errors.hpp"
#include "fsvg/rng.hpp"

namespace fsvg {

// --- ModelConfig -------------------------------------------------------------

bool ModelConfig::is_fs_layer(std::size_t block) const {
  return std::find(fs_layers.begin(), fs_layers.end(), block) != fs_layers.end();
}

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0) throw ConfigError("image and patch size must be positive");
  if (image_size % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed dim " + std::to_string(embed_dim) + " must be a positive multiple of " +
                      std::to_string(heads) + " heads");
  }
  if (depth == 0) throw ConfigError("depth must be at least 1");
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be at least 1");
  std::set<std::size_t> seen;
  for (std::size_t layer : fs_layers) {
    if (layer < 1 || layer > depth) {
      throw ConfigError("selection layer " + std::to_string(layer) + " outside blocks 1.." +
                        std::to_string(depth));
    }
    if (!seen.insert(layer).second) throw ConfigError("duplicate selection layer " + std::to_string(layer));
  }
  validate_rho(rho);
  if (vocab_size < 2) throw ConfigError("vocabulary must hold the pad token and at least one word");
  if (max_text_len == 0) throw ConfigError("max_text_len must be at least 1");
  if (head_hidden == 0) throw ConfigError("head_hidden must be at least 1");
  loss.validate();
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.image_size == b.image_size && a.patch_size == b.patch_size && a.embed_dim == b.embed_dim &&
         a.depth == b.depth && a.heads == b.heads && a.ffn_mult == b.ffn_mult &&
         a.fs_layers == b.fs_layers && a.rho == b.rho && a.vocab_size == b.vocab_size &&
         a.max_text_len == b.max_text_len && a.head_hidden == b.head_hidden &&
         a.loss.l1 == b.loss.l1 && a.loss.giou == b.loss.giou && a.seed == b.seed;
}

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["image_size"] = c.image_size;
  j["patch_size"] = c.patch_size;
  j["embed_dim"] = c.embed_dim;
  j["depth"] = c.depth;
  j["heads"] = c.heads;
  j["ffn_mult"] = c.ffn_mult;
  j["fs_layers"] = c.fs_layers;
  j["rho"] = c.rho;
  j["vocab_size"] = c.vocab_size;
  j["max_text_len"] = c.max_text_len;
  j["head_hidden"] = c.head_hidden;
  j["lambda_l1"] = c.loss.l1;
  j["lambda_giou"] = c.loss.giou;
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from_json(const nlohmann::ordered_json& j) {
  try {
    ModelConfig c;
    c.image_size = j.at("image_size").get<std::size_t>();
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
    c.fs_layers = j.at("fs_layers").get<std::vector<std::size_t>>();
    c.rho = j.at("rho").get<double>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_text_len = j.at("max_text_len").get<std::size_t>();
    c.head_hidden = j.at("head_hidden").get<std::size_t>();
    c.loss.l1 = j.at("lambda_l1").get<double>();
    c.loss.giou = j.at("lambda_giou").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

std::string ModelConfig::to_json() const { return config_to_json(*this).dump(); }

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  return config_from_json(j);
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_size = 12;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.ffn_mult = 2;
  c.fs_layers = {1, 2};
  c.rho = 0.7;
  c.vocab_size = 8;
  c.max_text_len = 4;
  c.head_hidden = 16;
  return c;
}

ModelConfig ModelConfig::vitb() {
  ModelConfig c;
  c.image_size = 384;
  c.patch_size = 16;
  c.embed_dim = 768;
  c.depth = 12;
  c.heads = 12;
  c.ffn_mult = 4;
  c.fs_layers = {4, 7, 10};
  c.rho = 0.7;
  c.vocab_size = 49408;
  c.max_text_len = 77;
  c.head_hidden = 256;
  return c;
}

// --- parameters --------------------------------------------------------------

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.embed_dim;
  ModelParams p;
  p.patch_embed = nn::LinearParams<T>::zeros(config.patch_dim(), d);
  p.patch_pos = Tensor<T>({config.num_patches(), d});
  p.token_embed = Tensor<T>({config.vocab_size, d});
  p.text_pos = Tensor<T>({config.max_text_len, d});
  p.reg = Tensor<T>({1, d});
  for (std::size_t i = 0; i < config.depth; ++i) {
    p.blocks.push_back(nn::BlockParams<T>::make(d, config.heads, config.ffn_mult));
  }
  p.final_norm_gamma = Tensor<T>({d}, T{1});
  p.final_norm_beta = Tensor<T>({d});
  p.head[0] = nn::LinearParams<T>::zeros(d, config.head_hidden);
  p.head[1] = nn::LinearParams<T>::zeros(config.head_hidden, config.head_hidden);
  p.head[2] = nn::LinearParams<T>::zeros(config.head_hidden, 4);
  return p;
}

template <typename T>
std::vector<Tensor<T>*> ModelParams<T>::tensors() {
  std::vector<Tensor<T>*> out;
  visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
std::vector<std::string> ModelParams<T>::names() const {
  std::vector<std::string> out;
  visit([&](const std::string& name, const Tensor<T>&) { out.push_back(name); });
  return out;
}

template <typename T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  visit([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.blocks.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) out.blocks[i].heads = blocks[i].heads;
  std::vector<const Tensor<T>*> src;
  visit([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
  return out;
}

namespace {
bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed, double stddev) {
  ModelParams<T> p = ModelParams<T>::zeros(config);
  Rng rng(seed);
  p.visit([&](const std::string& name, Tensor<T>& t) {
    if (ends_with(name, ".bias") || ends_with(name, ".beta") || ends_with(name, ".gamma")) return;
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  });
  return p;
}

// --- forward -------------------------------------------------------------------

template <typename T>
Tensor<T> extract_patches(const Image& image, std::size_t patch_size) {
  if (patch_size == 0 || image.height % patch_size != 0 || image.width % patch_size != 0) {
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not divisible into " + std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t gh = image.height / patch_size;
  const std::size_t gw = image.width / patch_size;
  const std::size_t pd = patch_size * patch_size * 3;
  Tensor<T> out({gh * gw, pd});
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      T* row = out.data().data() + (py * gw + px) * pd;
      std::size_t k = 0;
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            row[k++] = static_cast<T>(image.at(py * patch_size + y, px * patch_size + x, c));
    }
  }
  return out;
}

template <typename T>
ad::Var<T> patch_embed(ad::Tape<T>& tape, const Image& image, const ModelParams<T>& params,
                       const ModelConfig& config) {
  Tensor<T> patches = extract_patches<T>(image, config.patch_size);
  if (image.height != config.image_size || image.width != config.image_size) {
    throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", model expects " + std::to_string(config.image_size));
  }
  ad::Var<T> x = tape.constant(std::move(patches));
  return ad::add(nn::linear(x, params.patch_embed), tape.param(params.patch_pos));
}

std::vector<TokenId> pad_text(std::span<const TokenId> ids, const ModelConfig& config) {
  std::vector<TokenId> out(config.max_text_len, kPadToken);
  std::copy_n(ids.begin(), std::min(ids.size(), out.size()), out.begin());
  return out;
}

template <typename T>
TextEmbedding<T> text_embed(ad::Tape<T>& tape, std::span<const TokenId> ids,
                            const ModelParams<T>& params, const ModelConfig& config) {
  if (ids.empty()) throw ContractError("text_embed: at least one token is required");
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
  const std::vector<TokenId> padded = pad_text(ids, config);
  std::vector<std::size_t> rows(padded.begin(), padded.end());
  TextEmbedding<T> out;
  out.valid.assign(config.max_text_len, 0);
  std::fill_n(out.valid.begin(), std::min(ids.size(), config.max_text_len), std::uint8_t{1});
  ad::Var<T> looked_up = ad::gather_rows(tape.param(params.token_embed), std::span<const std::size_t>(rows));
  out.tokens = ad::add(looked_up, tape.param(params.text_pos));
  return out;
}

template <typename T>
TokenSequence<T> assemble_sequence(ad::Var<T> reg, ad::Var<T> visual, ad::Var<T> language) {
  if (reg.rows() != 1) throw ShapeError("assemble_sequence: REG must be a single row");
  if (reg.cols() != visual.cols() || visual.cols() != language.cols()) {
    throw ShapeError("assemble_sequence: token widths differ");
  }
  const std::array<ad::Var<T>, 3> parts{reg, visual, language};
  TokenSequence<T> seq;
  seq.data = ad::concat_rows<T>(parts);
  seq.segments = Segments{1, visual.rows(), language.rows()};
  seq.patch_index_map.resize(visual.rows());
  for (std::size_t i = 0; i < visual.rows(); ++i) seq.patch_index_map[i] = i;
  return seq;
}

template <typename T>
BackboneOutput<T> backbone_forward(TokenSequence<T> seq, const ModelParams<T>& params,
                                   const ModelConfig& config,
                                   std::span<const std::uint8_t> language_valid) {
  if (params.blocks.size() != config.depth) throw ShapeError("backbone: block count differs from depth");
  if (language_valid.size() != seq.segments.language_count) {
    throw ShapeError("backbone: language mask length mismatch");
  }
  BackboneOutput<T> out;
  std::vector<std::uint8_t> key_mask;
  for (std::size_t i = 1; i <= config.depth; ++i) {
    const auto& block = params.blocks[i - 1];
    key_mask.assign(1 + seq.segments.visual_count, 1);
    key_mask.insert(key_mask.end(), language_valid.begin(), language_valid.end());

    BlockLengths lengths;
    lengths.mhsa_len = seq.segments.total();
    nn::AttentionOutput<T> attn = nn::attention_residual(seq.data, block, key_mask);
    seq.data = attn.y;
    if (config.is_fs_layer(i)) {
      std::vector<double> scores = visual_language_scores(attn.logits, seq.segments, language_valid);
      const std::vector<std::size_t> kept = top_rho_indices(scores, config.rho);
      seq = apply_selection(seq, kept, i, std::move(scores), out.trace);
    }
    lengths.ffn_len = seq.segments.total();
    seq.data = nn::ffn_residual(seq.data, block);
    out.lengths.push_back(lengths);
  }
  out.sequence = std::move(seq);
  return out;
}

template <typename T>
ad::Var<T> head_forward(ad::Var<T> reg_out, const ModelParams<T>& params) {
  ad::Var<T> h = ad::relu(nn::linear(reg_out, params.head[0]));
  h = ad::relu(nn::linear(h, params.head[1]));
  return ad::sigmoid(nn::linear(h, params.head[2]));
}

namespace {
template <typename T>
BBox bbox_from(const Tensor<T>& box) {
  if (box.numel() != 4) throw ShapeError("box tensor must hold four values");
  return {static_cast<double>(box[0]), static_cast<double>(box[1]), static_cast<double>(box[2]),
          static_cast<double>(box[3])};
}
}  // namespace

BBox to_bbox(const Tensor<float>& box) { return bbox_from(box); }
BBox to_bbox(const Tensor<double>& box) { return bbox_from(box); }
BBox to_bbox(const Tensor<long double>& box) { return bbox_from(box); }

template <typename T>
ModelOutput<T> model_forward(ad::Tape<T>& tape, const Image& image, std::span<const TokenId> ids,
                             const ModelParams<T>& params, const ModelConfig& config) {
  ad::Var<T> visual = patch_embed(tape, image, params, config);
  TextEmbedding<T> text = text_embed(tape, ids, params, config);
  TokenSequence<T> seq = assemble_sequence(tape.param(params.reg), visual, text.tokens);
  BackboneOutput<T> bb = backbone_forward(std::move(seq), params, config, text.valid);

  ModelOutput<T> out;
  ad::Var<T> reg_out = ad::layernorm_rows(ad::slice_rows(bb.sequence.data, 0, 1),
                                          tape.param(params.final_norm_gamma),
                                          tape.param(params.final_norm_beta));
  out.box = head_forward(reg_out, params);
  out.bbox = to_bbox(out.box.value());
  out.trace = std::move(bb.trace);
  out.lengths = std::move(bb.lengths);
  out.final_segments = bb.sequence.segments;
  return out;
}

template <typename T>
ad::Var<T> box_loss(ad::Var<T> box, const BBox& gt, const LossWeights& weights) {
  if (box.value().numel() != 4) throw ShapeError("box_loss: expected four coordinates");
  // float boxes are scored in double; wider types keep their own precision
  using R = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
  return ad::apply_scalar_fn<T>("box_loss", box, [gt, weights](std::span<const T> x, std::span<T> grad) {
    const std::array<R, 4> pred{static_cast<R>(x[0]), static_cast<R>(x[1]), static_cast<R>(x[2]),
                                static_cast<R>(x[3])};
    std::array<R, 4> g{};
    const R value = total_loss_with_grad(pred, gt, weights, g);
    for (std::size_t i = 0; i < 4; ++i) grad[i] = static_cast<T>(g[i]);
    return static_cast<T>(value);
  });
}

template <typename T>
std::pair<BBox, SelectionTrace> predict(const Image& image, std::span<const TokenId> ids,
                                        const ModelParams<T>& params, const ModelConfig& config) {
  ad::Tape<T> tape(false);
  ModelOutput<T> out = model_forward(tape, image, ids, params, config);
  return {out.bbox, std::move(out.trace)};
}

#define FSVG_INSTANTIATE_MODEL(T)                                                                   \
  template struct ModelParams<T>;                                                                   \
  template ModelParams<T> init_params(const ModelConfig&, std::uint64_t, double);                      \
  template Tensor<T> extract_patches(const Image&, std::size_t);                                    \
  template ad::Var<T> patch_embed(ad::Tape<T>&, const Image&, const ModelParams<T>&,                \
                                  const ModelConfig&);                                              \
  template TextEmbedding<T> text_embed(ad::Tape<T>&, std::span<const TokenId>,                      \
                                       const ModelParams<T>&, const ModelConfig&);                  \
  template TokenSequence<T> assemble_sequence(ad::Var<T>, ad::Var<T>, ad::Var<T>);                  \
  template BackboneOutput<T> backbone_forward(TokenSequence<T>, const ModelParams<T>&,              \
                                              const ModelConfig&, std::span<const std::uint8_t>);   \
  template ad::Var<T> head_forward(ad::Var<T>, const ModelParams<T>&);                              \
  template ModelOutput<T> model_forward(ad::Tape<T>&, const Image&, std::span<const TokenId>,       \
                                        const ModelParams<T>&, const ModelConfig&);                 \
  template ad::Var<T> box_loss(ad::Var<T>, const BBox&, const LossWeights&);                        \
  template std::pair<BBox, SelectionTrace> predict(const Image&, std::span<const TokenId>,          \
                                                   const ModelParams<T>&, const ModelConfig&);

FSVG_INSTANTIATE_MODEL(float)
FSVG_INSTANTIATE_MODEL(double)
FSVG_INSTANTIATE_MODEL(long double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;
template ModelParams<long double> ModelParams<double>::cast<long double>() const;

#undef FSVG_INSTANTIATE_MODEL

}  // namespace fsvg
