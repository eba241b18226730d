#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ucrn/data.hpp"
#include "ucrn/encoder.hpp"
#include "ucrn/lm.hpp"

namespace ucrn {

// FC -> GeLU -> FC from LM hidden-state space into the shared embedding space;
// output is L2-normalized.
struct HiddenStateAdapter {
  Tensor w1, b1, w2, b2;
  static HiddenStateAdapter init(int d_model, int hidden, int dim, Rng& rng);
  Tensor forward(Graph& g, const Tensor& h) const;
  std::vector<Tensor> parameters() const;
  void append_named(NamedTensors& out, const std::string& prefix) const;
  void set_requires_grad(bool b);
};

// Query-side retriever state: the hidden-state adapter, the fusion logit b
// (weight beta = sigmoid(b)), and the dual encoder it fuses with.
struct Retriever {
  HiddenStateAdapter adapter;
  Tensor fusion_b;  // 1 element
  DualEncoder enc;

  static Retriever init(DualEncoder enc, int d_model, int adapter_hidden, std::uint64_t seed);
  double beta() const;
  std::vector<Tensor> parameters() const;  // adapter + fusion + encoder
  NamedTensors named_parameters() const;
  std::vector<std::uint8_t> serialized() const { return serialize_checkpoint(named_parameters()); }
};

std::vector<int> query_text_ids(const MultimodalQuery& q);
// (comment when asked and present, else caption) followed by metadata
std::vector<int> document_text_ids(const EntityDocument& doc, bool use_comment);
Tensor embed_document(Graph& g, const DualEncoder& enc, const EntityDocument& doc,
                      bool use_comment);

// beta_override < 0 uses the learned fusion weight; 0 and 1 short-circuit to
// the pure encoder / pure adapter paths so those endpoints are exact.
Tensor embed_query_from_hidden(Graph& g, const Retriever& r, const Tensor& hidden,
                               const MultimodalQuery& q, double beta_override = -1.0);
Tensor embed_query(Graph& g, const Retriever& r, const ToyLM& lm, const MultimodalQuery& q,
                   double beta_override = -1.0);

// symmetric InfoNCE over in-batch negatives: mean of row-wise and column-wise
// cross entropy against the diagonal, after multiplying scores by `scale`
Tensor info_nce(Graph& g, const Tensor& queries, const Tensor& docs, const Tensor& scale);
Tensor info_nce(Graph& g, const Tensor& queries, const Tensor& docs, double scale);

struct EmbeddingIndex {
  std::size_t dim = 0;
  std::vector<double> emb;         // size() x dim, row-major
  std::vector<int> ids;
  std::uint64_t params_checksum = 0;
  std::size_t size() const { return ids.size(); }
};

EmbeddingIndex build_index(const DualEncoder& enc, const std::vector<EntityDocument>& docs,
                           std::uint64_t params_checksum);
void save_index(const std::string& path, const EmbeddingIndex& index);
EmbeddingIndex load_index(const std::string& path);

struct Hit {
  int id = -1;
  double score = 0.0;
};
// top-k by descending dot product, ties broken by ascending document id
std::vector<Hit> retrieve(const EmbeddingIndex& index, const std::vector<double>& query, int k);

struct ContrastiveConfig {
  int epochs = 10;
  double lr = 1e-3;
  int batch = 64;
  std::uint64_t seed = 1;
};

// encoder-only contrastive pretraining (multimodal queries vs caption docs)
std::vector<double> train_encoder_contrastive(DualEncoder& enc, const Corpus& corpus,
                                              const Tokenizer& tok, const ContrastiveConfig& cc);
// stage 1: adapter-only alignment; encoder, fusion and logit scale stay frozen
std::vector<double> train_retriever_stage1(Retriever& r, const ToyLM& lm, const Corpus& corpus,
                                           const Tokenizer& tok, const ContrastiveConfig& cc);
// stage 2: joint comment-aware training of adapter, fusion weight and encoder;
// the document text samples caption or comment per example each epoch
std::vector<double> train_retriever_stage2(Retriever& r, const ToyLM& lm, const Corpus& corpus,
                                           const Tokenizer& tok, const ContrastiveConfig& cc);

std::vector<std::vector<double>> cache_hidden_states(const ToyLM& lm,
                                                     const std::vector<const CoRExample*>& exs,
                                                     const Tokenizer& tok);

}  // namespace ucrn
