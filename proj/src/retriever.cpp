#include "ucrn/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "ucrn/datagen.hpp"
#include "ucrn/optim.hpp"

namespace ucrn {

namespace {

Tensor randn(Rng& rng, std::vector<std::size_t> shape, double sigma) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& x : t.values()) x = rng.normal(0.0, sigma);
  return t;
}

}  // namespace

HiddenStateAdapter HiddenStateAdapter::init(int d_model, int hidden, int dim, Rng& rng) {
  HiddenStateAdapter a;
  std::size_t d = static_cast<std::size_t>(d_model);
  std::size_t h = static_cast<std::size_t>(hidden);
  std::size_t e = static_cast<std::size_t>(dim);
  a.w1 = randn(rng, {d, h}, 1.0 / std::sqrt(static_cast<double>(d_model)));
  a.b1 = Tensor::zeros({h}, true);
  a.w2 = randn(rng, {h, e}, 1.0 / std::sqrt(static_cast<double>(hidden)));
  a.b2 = Tensor::zeros({e}, true);
  return a;
}

Tensor HiddenStateAdapter::forward(Graph& g, const Tensor& h) const {
  Tensor z = g.gelu(g.add_bias(g.matmul(h, w1), b1));
  z = g.add_bias(g.matmul(z, w2), b2);
  return g.l2_normalize_rows(z);
}

std::vector<Tensor> HiddenStateAdapter::parameters() const { return {w1, b1, w2, b2}; }

void HiddenStateAdapter::append_named(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
  out.emplace_back(prefix + ".b2", b2);
}

void HiddenStateAdapter::set_requires_grad(bool b) {
  for (Tensor t : parameters()) t.set_requires_grad(b);
}

Retriever Retriever::init(DualEncoder enc_in, int d_model, int adapter_hidden,
                          std::uint64_t seed) {
  Rng rng(seed);
  Retriever r;
  r.adapter = HiddenStateAdapter::init(d_model, adapter_hidden, enc_in.dim, rng);
  r.fusion_b = Tensor::zeros({1}, true);
  r.enc = std::move(enc_in);
  return r;
}

double Retriever::beta() const { return 1.0 / (1.0 + std::exp(-fusion_b.values()[0])); }

std::vector<Tensor> Retriever::parameters() const {
  std::vector<Tensor> ps = adapter.parameters();
  ps.push_back(fusion_b);
  for (Tensor t : enc.parameters()) ps.push_back(t);
  return ps;
}

NamedTensors Retriever::named_parameters() const {
  NamedTensors out;
  adapter.append_named(out, "ret.adapter");
  out.emplace_back("ret.fusion_b", fusion_b);
  for (auto& [name, t] : enc.named_parameters()) out.emplace_back("ret." + name, t);
  return out;
}

std::vector<int> query_text_ids(const MultimodalQuery& q) {
  std::vector<int> ids = q.instruction;
  ids.insert(ids.end(), q.question.begin(), q.question.end());
  return ids;
}

std::vector<int> document_text_ids(const EntityDocument& doc, bool use_comment) {
  std::vector<int> ids = (use_comment && !doc.comment.empty()) ? doc.comment : doc.caption;
  ids.insert(ids.end(), doc.metadata.begin(), doc.metadata.end());
  return ids;
}

Tensor embed_document(Graph& g, const DualEncoder& enc, const EntityDocument& doc,
                      bool use_comment) {
  return enc.encode_multimodal(g, document_text_ids(doc, use_comment), doc.features);
}

Tensor embed_query_from_hidden(Graph& g, const Retriever& r, const Tensor& hidden,
                               const MultimodalQuery& q, double beta_override) {
  if (beta_override > 1.0)
    throw std::runtime_error("embed_query: beta override must lie in [0,1]");
  if (beta_override == 0.0)
    return r.enc.encode_multimodal(g, query_text_ids(q), q.image_features);
  if (beta_override == 1.0) return r.adapter.forward(g, hidden);
  Tensor adapted = r.adapter.forward(g, hidden);
  Tensor mm = r.enc.encode_multimodal(g, query_text_ids(q), q.image_features);
  Tensor fused;
  if (beta_override > 0.0) {
    fused = g.add(g.scale(adapted, beta_override), g.scale(mm, 1.0 - beta_override));
  } else {
    Tensor beta_t = g.sigmoid(r.fusion_b);
    Tensor one_minus = g.add_const(g.scale(beta_t, -1.0), 1.0);
    fused = g.add(g.scale_by(adapted, beta_t), g.scale_by(mm, one_minus));
  }
  return g.l2_normalize_rows(fused);
}

Tensor embed_query(Graph& g, const Retriever& r, const ToyLM& lm, const MultimodalQuery& q,
                   double beta_override) {
  if (beta_override == 0.0)
    return r.enc.encode_multimodal(g, query_text_ids(q), q.image_features);
  Tensor hidden = extract_hidden_state(lm, q);
  return embed_query_from_hidden(g, r, hidden, q, beta_override);
}

Tensor info_nce(Graph& g, const Tensor& queries, const Tensor& docs, const Tensor& scale) {
  std::size_t b = queries.rows();
  if (b < 2 || docs.rows() != b)
    throw std::runtime_error("info_nce: need matching batches of at least 2, got " +
                             std::to_string(b) + " and " + std::to_string(docs.rows()));
  Tensor s = g.scale_by(g.matmul_nt(queries, docs), scale);
  std::vector<int> diag(b);
  std::iota(diag.begin(), diag.end(), 0);
  Tensor row_loss = g.softmax_cross_entropy(s, diag);
  Tensor col_loss = g.softmax_cross_entropy(g.transpose(s), diag);
  return g.scale(g.add(row_loss, col_loss), 0.5);
}

Tensor info_nce(Graph& g, const Tensor& queries, const Tensor& docs, double scale) {
  return info_nce(g, queries, docs, Tensor::full({1}, scale));
}

EmbeddingIndex build_index(const DualEncoder& enc, const std::vector<EntityDocument>& docs,
                           std::uint64_t params_checksum) {
  if (docs.empty()) throw std::runtime_error("build_index: empty document list");
  EmbeddingIndex index;
  index.dim = static_cast<std::size_t>(enc.dim);
  index.params_checksum = params_checksum;
  index.emb.reserve(docs.size() * index.dim);
  for (const EntityDocument& doc : docs) {
    Graph g;
    Tensor e = embed_document(g, enc, doc, false);
    index.emb.insert(index.emb.end(), e.values().begin(), e.values().end());
    index.ids.push_back(doc.id);
  }
  return index;
}

void save_index(const std::string& path, const EmbeddingIndex& index) {
  NamedTensors records;
  records.emplace_back("index.embeddings",
                       Tensor::from({index.size(), index.dim}, index.emb));
  std::vector<double> ids(index.ids.begin(), index.ids.end());
  records.emplace_back("index.doc_ids", Tensor::from({index.size()}, ids));
  double checksum_bits = 0.0;
  static_assert(sizeof(double) == sizeof(std::uint64_t));
  std::memcpy(&checksum_bits, &index.params_checksum, sizeof(double));
  records.emplace_back("index.params_checksum", Tensor::from({1}, {checksum_bits}));
  write_checkpoint(path, records);
}

EmbeddingIndex load_index(const std::string& path) {
  NamedTensors records = read_checkpoint(path);
  EmbeddingIndex index;
  bool have_emb = false, have_ids = false, have_sum = false;
  for (auto& [name, t] : records) {
    if (name == "index.embeddings") {
      if (t.rank() != 2) throw std::runtime_error("load_index: embeddings record must be rank 2");
      index.dim = t.shape()[1];
      index.emb = t.values();
      have_emb = true;
    } else if (name == "index.doc_ids") {
      index.ids.assign(t.values().begin(), t.values().end());
      have_ids = true;
    } else if (name == "index.params_checksum") {
      std::memcpy(&index.params_checksum, t.values().data(), sizeof(std::uint64_t));
      have_sum = true;
    } else {
      throw std::runtime_error("load_index: unexpected record '" + name + "' in " + path);
    }
  }
  if (!have_emb || !have_ids || !have_sum)
    throw std::runtime_error("load_index: missing records in " + path);
  if (index.emb.size() != index.ids.size() * index.dim)
    throw std::runtime_error("load_index: embedding/id size mismatch in " + path);
  return index;
}

std::vector<Hit> retrieve(const EmbeddingIndex& index, const std::vector<double>& query, int k) {
  if (index.size() == 0) throw std::runtime_error("retrieve: index is empty");
  if (k < 1 || static_cast<std::size_t>(k) > index.size())
    throw std::runtime_error("retrieve: k=" + std::to_string(k) + " out of range [1, " +
                             std::to_string(index.size()) + "]");
  if (query.size() != index.dim)
    throw std::runtime_error("retrieve: query dim " + std::to_string(query.size()) +
                             " does not match index dim " + std::to_string(index.dim));
  std::vector<double> scores(index.size(), 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const double* row = index.emb.data() + i * index.dim;
    double s = 0.0;
    for (std::size_t j = 0; j < index.dim; ++j) s += row[j] * query[j];
    scores[i] = s;
  }
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.ids[a] < index.ids[b];
  });
  std::vector<Hit> hits;
  for (int i = 0; i < k; ++i) hits.push_back({index.ids[order[i]], scores[order[i]]});
  return hits;
}

std::vector<std::vector<double>> cache_hidden_states(const ToyLM& lm,
                                                     const std::vector<const CoRExample*>& exs,
                                                     const Tokenizer& tok) {
  std::vector<std::vector<double>> out;
  out.reserve(exs.size());
  for (const CoRExample* ex : exs)
    out.push_back(extract_hidden_state(lm, make_query(*ex, tok)).values());
  return out;
}

namespace {

std::vector<const CoRExample*> train_split(const Corpus& corpus) {
  std::vector<const CoRExample*> out;
  for (const CoRExample& ex : corpus.examples)
    if (ex.split == Split::train) out.push_back(&ex);
  if (out.size() < 2) throw std::runtime_error("contrastive training: need at least 2 examples");
  return out;
}

const EntityDocument& doc_of(const Corpus& corpus, const CoRExample& ex) {
  const EntityDocument& doc = corpus.documents.at(static_cast<std::size_t>(ex.target_doc));
  if (doc.id != ex.target_doc)
    throw std::runtime_error("contrastive training: document ids out of order");
  return doc;
}

// batches with no repeated target document (repeats would poison the
// in-batch-negative objective); remainders of size < 2 are dropped
std::vector<std::vector<std::size_t>> plan_batches(const std::vector<const CoRExample*>& exs,
                                                   std::vector<std::size_t> order,
                                                   std::size_t batch) {
  std::vector<std::vector<std::size_t>> plan;
  std::vector<std::size_t> remaining = std::move(order);
  while (!remaining.empty()) {
    std::vector<std::size_t> chosen;
    std::vector<std::size_t> deferred;
    std::unordered_set<int> used;
    for (std::size_t idx : remaining) {
      if (chosen.size() < batch && used.insert(exs[idx]->target_doc).second)
        chosen.push_back(idx);
      else
        deferred.push_back(idx);
    }
    if (chosen.size() < 2) break;
    plan.push_back(std::move(chosen));
    remaining = std::move(deferred);
  }
  return plan;
}

// Batches that keep examples aiming at sibling documents together, so the
// in-batch negatives include the hard same-family distractors. Examples are
// grouped by the target's family-name tokens, then split into rounds with one
// example per distinct target; rounds are packed whole into batches, never
// mixing two rounds of one family (that would repeat targets in a batch).
std::vector<std::vector<std::size_t>> plan_family_batches(
    const Corpus& corpus, const std::vector<const CoRExample*>& exs, Rng& rng,
    std::size_t batch) {
  std::map<std::pair<int, int>, std::map<int, std::vector<std::size_t>>> families;
  for (std::size_t i = 0; i < exs.size(); ++i) {
    const EntityDocument& doc = doc_of(corpus, *exs[i]);
    if (doc.metadata.size() < 2)
      throw std::runtime_error("contrastive training: document metadata lacks family tokens");
    families[{doc.metadata[0], doc.metadata[1]}][doc.id].push_back(i);
  }
  std::size_t rounds = 0;
  for (auto& [fkey, targets] : families)
    for (auto& [id, group] : targets) {
      rng.shuffle(group);
      rounds = std::max(rounds, group.size());
    }
  std::vector<std::vector<std::size_t>> plan;
  std::vector<std::size_t> current;
  std::set<std::pair<int, int>> current_families;
  auto flush = [&] {
    if (current.size() >= 2) plan.push_back(current);
    current.clear();
    current_families.clear();
  };
  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<std::pair<std::pair<int, int>, std::vector<std::size_t>>> blocks;
    for (auto& [fkey, targets] : families) {
      std::vector<std::size_t> block;
      for (auto& [id, group] : targets)
        if (r < group.size()) block.push_back(group[r]);
      if (!block.empty()) blocks.emplace_back(fkey, std::move(block));
    }
    rng.shuffle(blocks);
    for (auto& [fkey, block] : blocks) {
      if (current.size() + block.size() > batch || current_families.count(fkey)) flush();
      current.insert(current.end(), block.begin(), block.end());
      current_families.insert(fkey);
    }
  }
  flush();
  return plan;
}

void check_epoch_losses(const char* what, const std::vector<double>& losses) {
  if (losses.size() >= 2 && losses.back() >= losses.front())
    throw std::runtime_error(std::string(what) + ": loss did not decrease over training");
}

double finite_or_throw(const char* what, double v, int epoch) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string(what) + ": loss diverged (non-finite) at epoch " +
                             std::to_string(epoch));
  return v;
}

Tensor stack_rows(Graph& g, std::vector<Tensor> rows) {
  return rows.size() == 1 ? rows[0] : g.concat_rows(rows);
}

}  // namespace

std::vector<double> train_encoder_contrastive(DualEncoder& enc, const Corpus& corpus,
                                              const Tokenizer& tok, const ContrastiveConfig& cc) {
  std::vector<const CoRExample*> exs = train_split(corpus);
  std::vector<MultimodalQuery> queries;
  queries.reserve(exs.size());
  for (const CoRExample* ex : exs) queries.push_back(make_query(*ex, tok));
  std::vector<Tensor> params = enc.parameters();
  Optimizer opt(Optimizer::Kind::adam, cc.lr);
  std::vector<double> losses;
  for (int epoch = 0; epoch < cc.epochs; ++epoch) {
    Rng rng(Rng::derive(cc.seed, 200 + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(exs.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : plan_batches(exs, order, static_cast<std::size_t>(cc.batch))) {
      Graph g;
      std::vector<Tensor> q_rows, d_rows;
      for (std::size_t idx : batch) {
        q_rows.push_back(
            enc.encode_multimodal(g, query_text_ids(queries[idx]), queries[idx].image_features));
        d_rows.push_back(embed_document(g, enc, doc_of(corpus, *exs[idx]), false));
      }
      Tensor scale_t = g.exp(g.clamp_max(enc.logit_scale, kMaxLogitScale));
      Tensor loss = info_nce(g, stack_rows(g, q_rows), stack_rows(g, d_rows), scale_t);
      total += finite_or_throw("train-encoders", loss.item(), epoch) * batch.size();
      count += batch.size();
      g.backward(loss);
      opt.step(params);
    }
    losses.push_back(total / static_cast<double>(count));
  }
  check_epoch_losses("train-encoders", losses);
  return losses;
}

std::vector<double> train_retriever_stage1(Retriever& r, const ToyLM& lm, const Corpus& corpus,
                                           const Tokenizer& tok, const ContrastiveConfig& cc) {
  std::vector<const CoRExample*> exs = train_split(corpus);
  std::vector<std::vector<double>> hidden = cache_hidden_states(lm, exs, tok);
  // frozen encoder: document embeddings are constants, computed once
  r.enc.set_requires_grad(false);
  std::unordered_map<int, std::vector<double>> doc_emb;
  for (const CoRExample* ex : exs) {
    const EntityDocument& doc = doc_of(corpus, *ex);
    if (doc_emb.count(doc.id)) continue;
    Graph g;
    doc_emb.emplace(doc.id, embed_document(g, r.enc, doc, false).values());
  }
  double scale = std::exp(std::min(r.enc.logit_scale.values()[0], kMaxLogitScale));
  std::size_t d_model = hidden[0].size();
  std::size_t dim = static_cast<std::size_t>(r.enc.dim);
  std::vector<Tensor> params = r.adapter.parameters();
  Optimizer opt(Optimizer::Kind::adam, cc.lr);
  std::vector<double> losses;
  for (int epoch = 0; epoch < cc.epochs; ++epoch) {
    Rng rng(Rng::derive(cc.seed, 300 + static_cast<std::uint64_t>(epoch)));
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch :
         plan_family_batches(corpus, exs, rng, static_cast<std::size_t>(cc.batch))) {
      Graph g;
      std::vector<double> hbuf, dbuf;
      for (std::size_t idx : batch) {
        const std::vector<double>& h = hidden[idx];
        hbuf.insert(hbuf.end(), h.begin(), h.end());
        const std::vector<double>& de = doc_emb.at(exs[idx]->target_doc);
        dbuf.insert(dbuf.end(), de.begin(), de.end());
      }
      Tensor h = Tensor::from({batch.size(), d_model}, hbuf);
      Tensor d = Tensor::from({batch.size(), dim}, dbuf);
      Tensor loss = info_nce(g, r.adapter.forward(g, h), d, scale);
      total += finite_or_throw("train-retriever stage 1", loss.item(), epoch) * batch.size();
      count += batch.size();
      g.backward(loss);
      opt.step(params);
    }
    losses.push_back(total / static_cast<double>(count));
  }
  check_epoch_losses("train-retriever stage 1", losses);
  return losses;
}

std::vector<double> train_retriever_stage2(Retriever& r, const ToyLM& lm, const Corpus& corpus,
                                           const Tokenizer& tok, const ContrastiveConfig& cc) {
  std::vector<const CoRExample*> exs = train_split(corpus);
  std::vector<std::vector<double>> hidden = cache_hidden_states(lm, exs, tok);
  std::vector<MultimodalQuery> queries;
  queries.reserve(exs.size());
  for (const CoRExample* ex : exs) queries.push_back(make_query(*ex, tok));
  r.enc.set_requires_grad(true);
  r.fusion_b.set_requires_grad(true);
  r.adapter.set_requires_grad(true);
  std::size_t d_model = hidden[0].size();
  std::vector<Tensor> params = r.parameters();
  Optimizer opt(Optimizer::Kind::adam, cc.lr);
  std::vector<double> losses;
  for (int epoch = 0; epoch < cc.epochs; ++epoch) {
    Rng rng(Rng::derive(cc.seed, 400 + static_cast<std::uint64_t>(epoch)));
    Rng text_rng(Rng::derive(cc.seed, 500 + static_cast<std::uint64_t>(epoch)));
    // caption-or-comment choice per example for this epoch
    std::vector<bool> use_comment(exs.size());
    for (std::size_t i = 0; i < exs.size(); ++i) use_comment[i] = text_rng.uniform() < 0.5;
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch :
         plan_family_batches(corpus, exs, rng, static_cast<std::size_t>(cc.batch))) {
      Graph g;
      std::vector<Tensor> q_rows, d_rows;
      for (std::size_t idx : batch) {
        Tensor h = Tensor::from({1, d_model}, hidden[idx]);
        q_rows.push_back(embed_query_from_hidden(g, r, h, queries[idx]));
        const EntityDocument& doc = doc_of(corpus, *exs[idx]);
        std::vector<int> text = use_comment[idx] ? exs[idx]->comment : doc.caption;
        text.insert(text.end(), doc.metadata.begin(), doc.metadata.end());
        d_rows.push_back(r.enc.encode_multimodal(g, text, doc.features));
      }
      Tensor scale_t = g.exp(g.clamp_max(r.enc.logit_scale, kMaxLogitScale));
      Tensor loss = info_nce(g, stack_rows(g, q_rows), stack_rows(g, d_rows), scale_t);
      total += finite_or_throw("train-retriever stage 2", loss.item(), epoch) * batch.size();
      count += batch.size();
      g.backward(loss);
      opt.step(params);
    }
    losses.push_back(total / static_cast<double>(count));
  }
  check_epoch_losses("train-retriever stage 2", losses);
  return losses;
}

}  // namespace ucrn
