#include "ucrn/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ucrn/datagen.hpp"
#include "ucrn/optim.hpp"

namespace ucrn {

TileAdapter init_entity_adapter(const ToyLM& lm) { return lm.visual.deep_copy(); }

Tensor adapt_entity(Graph& g, const TileAdapter& xi, const ToyLM& lm, const EntityDocument& doc) {
  Tensor tiles = xi.forward(g, split_tiles(doc.features, lm.cfg.tiles));
  std::vector<int> text = doc.caption;
  text.insert(text.end(), doc.metadata.begin(), doc.metadata.end());
  if (text.empty()) return tiles;
  return g.concat_rows({tiles, lm.embed_tokens(g, text)});
}

const EntityDocument& document_by_id(const std::vector<EntityDocument>& docs, int id) {
  if (id >= 0 && static_cast<std::size_t>(id) < docs.size() &&
      docs[static_cast<std::size_t>(id)].id == id)
    return docs[static_cast<std::size_t>(id)];
  for (const EntityDocument& d : docs)
    if (d.id == id) return d;
  throw std::runtime_error("document_by_id: no document with id " + std::to_string(id));
}

// generation emits scaffold tokens (answer template, BOS) before the comment
// proper; the comment is everything after the first BOS
std::vector<int> extract_comment(const std::vector<int>& emitted) {
  auto it = std::find(emitted.begin(), emitted.end(), kBos);
  if (it == emitted.end()) return emitted;
  return std::vector<int>(it + 1, emitted.end());
}

namespace {

// greedy decode from committed embedding rows, re-running the full forward per
// step; decoding needs no gradients so values are copied out of each graph
void decode_greedy(const ToyLM& lm, std::vector<double> buf, std::size_t rows, int max_new,
                   GenerationResult& out) {
  std::size_t d = static_cast<std::size_t>(lm.cfg.d_model);
  for (int step = 0; step < max_new; ++step) {
    if (rows >= static_cast<std::size_t>(lm.cfg.max_sequence)) break;
    Graph g;
    Tensor content = Tensor::from({rows, d}, buf);
    ToyLM::Output o = lm.forward(g, content);
    const std::vector<double>& logits = o.logits.values();
    const double* last = logits.data() + (rows - 1) * static_cast<std::size_t>(lm.cfg.vocab);
    int best = 0;
    for (int v = 1; v < lm.cfg.vocab; ++v)
      if (last[v] > last[best]) best = v;
    if (best == kEos) {
      out.hit_eos = true;
      break;
    }
    out.tokens.push_back(best);
    const std::vector<double>& emb = lm.tok_emb.values();
    const double* row = emb.data() + static_cast<std::size_t>(best) * d;
    buf.insert(buf.end(), row, row + d);
    ++rows;
  }
}

struct Prompt {
  std::vector<double> buf;
  std::size_t rows = 0;
};

void append_tensor(Prompt& p, const Tensor& t) {
  p.buf.insert(p.buf.end(), t.values().begin(), t.values().end());
  p.rows += t.rows();
}

Prompt base_prompt(Graph& g, const ToyLM& lm, const MultimodalQuery& q) {
  Prompt p;
  if (!q.image_features.empty()) {
    append_tensor(p, lm.visual_prefix(g, q.image_features));
    append_tensor(p, lm.embed_tokens(g, {kImg}));
  }
  if (!q.question.empty()) append_tensor(p, lm.embed_tokens(g, q.question));
  if (p.rows == 0) throw std::runtime_error("generate: query has no modalities");
  return p;
}

}  // namespace

GenerationResult generate_with_entity(const ToyLM& lm, const TileAdapter& xi,
                                      const EntityDocument& doc, const MultimodalQuery& q,
                                      int max_new_tokens) {
  Graph g;
  Prompt p = base_prompt(g, lm, q);
  Tensor ent = adapt_entity(g, xi, lm, doc);
  append_tensor(p, ent);
  GenerationResult out;
  out.retrieved_doc = doc.id;
  out.entity_rows = ent.rows();
  out.prompt_rows = p.rows;
  decode_greedy(lm, std::move(p.buf), p.rows, max_new_tokens, out);
  return out;
}

GenerationResult generate_with_retrieval(const ToyLM& lm, const Retriever& r,
                                         const TileAdapter& xi, const EmbeddingIndex& index,
                                         const std::vector<EntityDocument>& docs,
                                         const MultimodalQuery& q, int max_new_tokens) {
  Graph g;
  std::vector<double> qemb = embed_query(g, r, lm, q).values();
  std::vector<Hit> hits = retrieve(index, qemb, 1);
  GenerationResult out =
      generate_with_entity(lm, xi, document_by_id(docs, hits[0].id), q, max_new_tokens);
  out.retrieval_score = hits[0].score;
  out.retrieval_count = 1;
  return out;
}

GenerationResult generate_rag(const ToyLM& lm, const Retriever& r, const EmbeddingIndex& index,
                              const std::vector<EntityDocument>& docs, const Tokenizer& tok,
                              const MultimodalQuery& q, int max_new_tokens) {
  Graph g;
  std::vector<double> qemb = embed_query(g, r, lm, q).values();
  std::vector<Hit> hits = retrieve(index, qemb, 1);
  const EntityDocument& doc = document_by_id(docs, hits[0].id);
  Prompt p = base_prompt(g, lm, q);
  append_tensor(p, lm.visual_prefix(g, doc.features));
  std::vector<int> text = doc.caption;
  text.insert(text.end(), doc.metadata.begin(), doc.metadata.end());
  std::vector<int> ans = answer_template_tokens(tok);
  text.insert(text.end(), ans.begin(), ans.end());
  append_tensor(p, lm.embed_tokens(g, text));
  GenerationResult out;
  out.retrieved_doc = doc.id;
  out.retrieval_score = hits[0].score;
  out.retrieval_count = 1;
  out.prompt_rows = p.rows;
  decode_greedy(lm, std::move(p.buf), p.rows, max_new_tokens, out);
  return out;
}

GenerationResult generate_plain(const ToyLM& lm, const MultimodalQuery& q, int max_new_tokens) {
  Graph g;
  Prompt p = base_prompt(g, lm, q);
  GenerationResult out;
  out.prompt_rows = p.rows;
  decode_greedy(lm, std::move(p.buf), p.rows, max_new_tokens, out);
  return out;
}

std::vector<double> train_entity_adapter(TileAdapter& xi, const ToyLM& lm, const Corpus& corpus,
                                         const Tokenizer& tok,
                                         const EntityAdapterTrainConfig& tc, const Retriever* r,
                                         const EmbeddingIndex* index) {
  if (!lm.frozen)
    throw std::runtime_error("train-entity-adapter: language model must be frozen first");
  std::vector<const CoRExample*> train;
  for (const CoRExample& ex : corpus.examples)
    if (ex.split == Split::train) train.push_back(&ex);
  if (train.empty()) throw std::runtime_error("train-entity-adapter: no training examples");

  // resolve the conditioning document per example once; the retriever is fixed
  // during adapter training so retrieved picks cannot drift between epochs
  std::vector<int> doc_ids(train.size());
  if (tc.condition_on_retrieved) {
    if (r == nullptr || index == nullptr)
      throw std::runtime_error("train-entity-adapter: retrieved condition needs a retriever "
                               "and an index");
    for (std::size_t i = 0; i < train.size(); ++i) {
      Graph g;
      MultimodalQuery q = make_query(*train[i], tok);
      doc_ids[i] = retrieve(*index, embed_query(g, *r, lm, q).values(), 1)[0].id;
    }
  } else {
    for (std::size_t i = 0; i < train.size(); ++i) doc_ids[i] = train[i]->target_doc;
  }

  xi.set_requires_grad(true);
  std::vector<Tensor> params = xi.parameters();
  Optimizer opt(Optimizer::Kind::adam, tc.lr);
  std::vector<double> losses;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng rng(Rng::derive(tc.seed, 600 + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double total = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      std::size_t chunk = std::min<std::size_t>(static_cast<std::size_t>(tc.batch),
                                                order.size() - done);
      for (std::size_t j = 0; j < chunk; ++j) {
        const CoRExample& ex = *train[order[done + j]];
        const EntityDocument& doc =
            document_by_id(corpus.documents, doc_ids[order[done + j]]);
        Graph g;
        std::vector<Tensor> parts;
        parts.push_back(lm.visual_prefix(g, ex.query_features));
        parts.push_back(lm.embed_tokens(g, {kImg}));
        parts.push_back(lm.embed_tokens(g, ex.question));
        Tensor ent = adapt_entity(g, xi, lm, doc);
        parts.push_back(ent);
        // teacher-forced continuation covers the scaffold the generator must
        // emit after the splice (answer template, BOS) plus the comment
        std::vector<int> continuation = answer_template_tokens(tok);
        continuation.push_back(kBos);
        continuation.insert(continuation.end(), ex.comment.begin(), ex.comment.end());
        continuation.push_back(kEos);
        std::vector<int> cont_inputs(continuation.begin(), continuation.end() - 1);
        if (!cont_inputs.empty()) parts.push_back(lm.embed_tokens(g, cont_inputs));
        Tensor content = g.concat_rows(parts);
        ToyLM::Output o = lm.forward(g, content);
        // loss from the final entity row (predicting the first scaffold token)
        // through the row predicting EOS
        std::size_t first = static_cast<std::size_t>(lm.cfg.tiles) + 1 + ex.question.size() +
                            ent.rows() - 1;
        std::vector<int> rows(continuation.size());
        std::iota(rows.begin(), rows.end(), static_cast<int>(first));
        Tensor loss = g.softmax_cross_entropy(g.take_rows(o.logits, rows), continuation);
        double lv = loss.item();
        if (!std::isfinite(lv))
          throw std::runtime_error("train-entity-adapter: loss diverged (non-finite) at epoch " +
                                   std::to_string(epoch));
        total += lv;
        g.backward(g.scale(loss, 1.0 / static_cast<double>(chunk)));
      }
      opt.step(params);
      done += chunk;
    }
    losses.push_back(total / static_cast<double>(order.size()));
  }
  if (losses.size() >= 2 && losses.back() >= losses.front())
    throw std::runtime_error("train-entity-adapter: loss did not decrease over training");
  return losses;
}

}  // namespace ucrn
