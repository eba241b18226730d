#pragma once

#include <cstdint>
#include <vector>

#include "ucrn/data.hpp"
#include "ucrn/lm.hpp"
#include "ucrn/retriever.hpp"

namespace ucrn {

// The entity adapter is a TileAdapter with the same architecture as the LM's
// native visual adapter and starts as a copy of it; training specializes it to
// render retrieved documents into LM space.
TileAdapter init_entity_adapter(const ToyLM& lm);

// [adapted document tiles, caption token embeddings, metadata token embeddings]
Tensor adapt_entity(Graph& g, const TileAdapter& xi, const ToyLM& lm, const EntityDocument& doc);

struct GenerationResult {
  std::vector<int> tokens;      // generated ids, end-of-sequence stripped
  int retrieved_doc = -1;
  double retrieval_score = 0.0;
  int retrieval_count = 0;      // index lookups made during this generation
  bool hit_eos = false;
  std::size_t prompt_rows = 0;  // committed embedding rows before decoding
  std::size_t entity_rows = 0;  // rows contributed by the spliced document
};

// retrieval-first generation: embed the query, retrieve the top document,
// splice it through the entity adapter, then decode the comment greedily
GenerationResult generate_with_retrieval(const ToyLM& lm, const Retriever& r,
                                         const TileAdapter& xi, const EmbeddingIndex& index,
                                         const std::vector<EntityDocument>& docs,
                                         const MultimodalQuery& q, int max_new_tokens);
// same splice layout but with a caller-chosen document and no index lookup
GenerationResult generate_with_entity(const ToyLM& lm, const TileAdapter& xi,
                                      const EntityDocument& doc, const MultimodalQuery& q,
                                      int max_new_tokens);
// prompt-level baseline: retrieved document enters as native-adapter tiles plus
// caption/metadata text and a fixed answer template; no trained adapter
GenerationResult generate_rag(const ToyLM& lm, const Retriever& r, const EmbeddingIndex& index,
                              const std::vector<EntityDocument>& docs, const Tokenizer& tok,
                              const MultimodalQuery& q, int max_new_tokens);
GenerationResult generate_plain(const ToyLM& lm, const MultimodalQuery& q, int max_new_tokens);

// generated token streams open with scaffold tokens (answer template, BOS);
// the comment proper is everything after the first BOS
std::vector<int> extract_comment(const std::vector<int>& emitted);

struct EntityAdapterTrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  int batch = 32;
  std::uint64_t seed = 1;
  bool condition_on_retrieved = false;  // default: condition on the gold document
};

// teacher-forced comment loss through the frozen LM; only the adapter trains.
// With condition_on_retrieved, documents come from the given retriever/index.
std::vector<double> train_entity_adapter(TileAdapter& xi, const ToyLM& lm, const Corpus& corpus,
                                         const Tokenizer& tok,
                                         const EntityAdapterTrainConfig& tc,
                                         const Retriever* r = nullptr,
                                         const EmbeddingIndex* index = nullptr);

const EntityDocument& document_by_id(const std::vector<EntityDocument>& docs, int id);

}  // namespace ucrn
