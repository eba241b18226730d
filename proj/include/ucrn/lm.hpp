#pragma once

#include <cstdint>
#include <vector>

#include "ucrn/checkpoint.hpp"
#include "ucrn/data.hpp"
#include "ucrn/rng.hpp"
#include "ucrn/tensor.hpp"

namespace ucrn {

struct ToyLMConfig {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int max_sequence = 96;
  int vocab = 0;
  int ff_hidden = 128;
  int tiles = 4;
  int feature_dim = 32;
  int adapter_hidden = 128;
};

// LayerNorm -> FC -> GeLU -> FC over tile sub-vectors. Used both as the LM's
// native visual adapter and (a trained copy) as the entity adapter.
struct TileAdapter {
  int tile_dim = 0, hidden = 0, out = 0;
  Tensor ln_g, ln_b, w1, b1, w2, b2;

  static TileAdapter init(int tile_dim, int hidden, int out, Rng& rng);
  TileAdapter deep_copy() const;
  // tiles: rows of tile_dim features -> rows of `out` embeddings
  Tensor forward(Graph& g, const Tensor& tiles) const;
  std::vector<Tensor> parameters() const;
  void append_named(NamedTensors& out, const std::string& prefix) const;
  void set_requires_grad(bool b);
};

struct LMBlock {
  Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b, w1, b1, w2, b2;
};

// Pre-norm causal transformer with learned positions and a final layer norm.
// forward() takes content embeddings so image tiles, adapted entities and
// token embeddings can share one stream.
struct ToyLM {
  ToyLMConfig cfg;
  Tensor tok_emb;   // V x d
  Tensor pos_emb;   // max_sequence x d
  std::vector<LMBlock> blocks;
  Tensor final_g, final_b;
  Tensor w_out, b_out;  // d x V
  TileAdapter visual;   // native visual adapter
  bool frozen = false;

  static ToyLM init(const ToyLMConfig& cfg, std::uint64_t seed);
  void freeze();
  std::vector<Tensor> parameters() const;
  NamedTensors named_parameters() const;
  std::vector<std::uint8_t> serialized() const { return serialize_checkpoint(named_parameters()); }

  struct Output {
    Tensor logits;  // T x V
    Tensor hidden;  // T x d, after the final layer norm
  };
  Output forward(Graph& g, const Tensor& content) const;

  Tensor embed_tokens(Graph& g, const std::vector<int>& ids) const;
  // feature vector split into cfg.tiles sub-vectors, mapped by the native adapter
  Tensor visual_prefix(Graph& g, const std::vector<double>& features) const;
  // [tiles, IMG, question tokens]; either modality may be absent but not both
  Tensor query_content(Graph& g, const MultimodalQuery& q) const;
};

Tensor split_tiles(const std::vector<double>& features, int tiles);

// final-norm hidden state at the last input position, detached (1 x d)
Tensor extract_hidden_state(const ToyLM& lm, const MultimodalQuery& q);

struct PretrainConfig {
  int epochs = 30;
  double lr = 3e-4;
  int batch = 32;
  double doc_mix = 0.5;        // fraction of sequences drawn in the doc-grounded shape
  double tile_fidelity = 0.6;  // fraction of doc-grounded sequences with gold tiles
  std::uint64_t seed = 1;
};

// Next-token training over example sequences. A seeded per-example-per-epoch
// coin picks between the query-only shape and the doc-grounded shape, which
// exposes the gold document's tiles and caption/metadata text before the
// answer so the frozen base learns to ground comments in document content.
std::vector<double> pretrain_toy_lm(ToyLM& lm, const Corpus& corpus, const Tokenizer& tok,
                                    const PretrainConfig& pc);

double lm_perplexity(const ToyLM& lm, const Corpus& corpus, const Tokenizer& tok,
                     std::size_t max_examples);

}  // namespace ucrn
