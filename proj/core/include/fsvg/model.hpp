// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsvg/autodiff.hpp"
#include "fsvg/image.hpp"
#include "fsvg/nn.hpp"
#include "fsvg/objectives.hpp"
#include "fsvg/selection.hpp"

namespace fsvg {

using TokenId = std::int32_t;
inline constexpr TokenId kPadToken = 0;

/// Architecture and loss hyperparameters. fs_layers are 1-based block indices.
struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::vector<std::size_t> fs_layers = {2, 3};
  double rho = 0.7;
  std::size_t vocab_size = 8;
  std::size_t max_text_len = 8;
  std::size_t head_hidden = 256;
  LossWeights loss;
  std::uint64_t seed = 0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  bool is_fs_layer(std::size_t block) const;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  // 64x64 images, 8x8 patches, D=64, 4 blocks, selection after blocks 2 and 3.
  static ModelConfig toy();
  // Gradient-check size: 3x3 patch grid, D=16, 2 blocks, 4 text slots.
  static ModelConfig tiny();
  // CLIP-ViT-B/16 geometry at 384 px with 77 text tokens, selection at 4, 7, 10.
  static ModelConfig vitb();

  friend bool operator==(const ModelConfig& a, const ModelConfig& b);
};

template <typename T>
struct ModelParams {
  nn::LinearParams<T> patch_embed;   // patch_dim -> D
  Tensor<T> patch_pos;               // [N_v x D]
  Tensor<T> token_embed;             // [vocab x D]
  Tensor<T> text_pos;                // [N_l x D]
  Tensor<T> reg;                     // [1 x D]
  std::vector<nn::BlockParams<T>> blocks;
  Tensor<T> final_norm_gamma, final_norm_beta;  // applied to the REG row before the head
  std::array<nn::LinearParams<T>, 3> head;

  // Correctly shaped, zero weights, unit norm gammas.
  static ModelParams zeros(const ModelConfig& config);

  // f(name, tensor) for every parameter, in checkpoint order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::vector<Tensor<T>*> tensors();
  std::vector<std::string> names() const;
  std::size_t count() const;
  void zero_grad();

  template <typename U>
  ModelParams<U> cast() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    nn::visit_linear("patch_embed", self.patch_embed, f);
    f("patch_pos", self.patch_pos);
    f("token_embed", self.token_embed);
    f("text_pos", self.text_pos);
    f("reg", self.reg);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      nn::visit_block("blocks." + std::to_string(i + 1), self.blocks[i], f);
    }
    f("final_norm.gamma", self.final_norm_gamma);
    f("final_norm.beta", self.final_norm_beta);
    for (std::size_t i = 0; i < self.head.size(); ++i) {
      nn::visit_linear("head." + std::to_string(i), self.head[i], f);
    }
  }
};

/// Deterministic initialization: N(0, stddev) for weights and embeddings,
/// zeros for biases and norm betas, ones for norm gammas. Values are drawn in
/// double and rounded, so float and double parameter sets from one seed agree.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed, double stddev = 0.02);

// Sequence lengths seen by the two halves of one block.
struct BlockLengths {
  std::size_t mhsa_len = 0;
  std::size_t ffn_len = 0;
  friend bool operator==(const BlockLengths&, const BlockLengths&) = default;
};

// [N_v x P*P*3] patch matrix in raster patch order; each row flattened over (y, x, channel).
template <typename T>
Tensor<T> extract_patches(const Image& image, std::size_t patch_size);

template <typename T>
ad::Var<T> patch_embed(ad::Tape<T>& tape, const Image& image, const ModelParams<T>& params,
                       const ModelConfig& config);

template <typename T>
struct TextEmbedding {
  ad::Var<T> tokens;                // [N_l x D]
  std::vector<std::uint8_t> valid;  // 1 for real tokens, 0 for padding
};

// Truncates to max_text_len, pads with kPadToken.
std::vector<TokenId> pad_text(std::span<const TokenId> ids, const ModelConfig& config);

template <typename T>
TextEmbedding<T> text_embed(ad::Tape<T>& tape, std::span<const TokenId> ids,
                            const ModelParams<T>& params, const ModelConfig& config);

template <typename T>
TokenSequence<T> assemble_sequence(ad::Var<T> reg, ad::Var<T> visual, ad::Var<T> language);

template <typename T>
struct BackboneOutput {
  TokenSequence<T> sequence;
  SelectionTrace trace;
  std::vector<BlockLengths> lengths;  // one per block
};

template <typename T>
BackboneOutput<T> backbone_forward(TokenSequence<T> seq, const ModelParams<T>& params,
                                   const ModelConfig& config,
                                   std::span<const std::uint8_t> language_valid);

// Three linear layers (D -> hidden -> hidden -> 4) with ReLU between and a
// sigmoid on the output. Returns a [1 x 4] (cx, cy, w, h) row.
template <typename T>
ad::Var<T> head_forward(ad::Var<T> reg_out, const ModelParams<T>& params);

BBox to_bbox(const Tensor<float>& box);
BBox to_bbox(const Tensor<double>& box);
BBox to_bbox(const Tensor<long double>& box);

template <typename T>
struct ModelOutput {
  ad::Var<T> box;
  BBox bbox;
  SelectionTrace trace;
  std::vector<BlockLengths> lengths;
  Segments final_segments;
};

template <typename T>
ModelOutput<T> model_forward(ad::Tape<T>& tape, const Image& image, std::span<const TokenId> ids,
                             const ModelParams<T>& params, const ModelConfig& config);

// Weighted L1 + (1 - GIoU) loss of a [1 x 4] box row, as a scalar node.
template <typename T>
ad::Var<T> box_loss(ad::Var<T> box, const BBox& gt, const LossWeights& weights);

// Forward without recording gradients of interest; returns the box and trace.
template <typename T>
std::pair<BBox, SelectionTrace> predict(const Image& image, std::span<const TokenId> ids,
                                        const ModelParams<T>& params, const ModelConfig& config);

}  // namespace fsvg
