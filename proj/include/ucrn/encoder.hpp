#pragma once

#include <cstdint>
#include <vector>

#include "ucrn/checkpoint.hpp"
#include "ucrn/rng.hpp"
#include "ucrn/tensor.hpp"

namespace ucrn {

// Two-tower embedding model. The text tower is an order-blind bag of words
// (mean of word vectors through one linear map); the image tower is a two-layer
// MLP. Each tower emits a unit vector; a fused multimodal embedding is the
// normalized sum, with an absent modality contributing zero.
struct DualEncoder {
  int vocab = 0, feature_dim = 0, dim = 0;
  Tensor word_emb;          // V x dim
  Tensor text_w, text_b;    // dim -> dim
  Tensor img_w1, img_b1;    // feature_dim -> img_hidden
  Tensor img_w2, img_b2;    // img_hidden -> dim
  Tensor logit_scale;       // 1-element log temperature for contrastive scores

  static DualEncoder init(int vocab, int feature_dim, int dim, int img_hidden,
                          std::uint64_t seed);
  std::vector<Tensor> parameters() const;
  NamedTensors named_parameters() const;
  std::vector<std::uint8_t> serialized() const { return serialize_checkpoint(named_parameters()); }
  void set_requires_grad(bool b);

  // unit row vector (1 x dim); empty input yields an all-zero row
  Tensor encode_text(Graph& g, const std::vector<int>& ids) const;
  Tensor encode_image(Graph& g, const std::vector<double>& features) const;
  // normalize(text + image); at least one modality must be present
  Tensor encode_multimodal(Graph& g, const std::vector<int>& ids,
                           const std::vector<double>& features) const;
};

inline constexpr double kInitialLogitScale = 2.6592600369327783;  // ln(1/0.07)
inline constexpr double kMaxLogitScale = 4.605170185988092;       // ln(100)

}  // namespace ucrn
