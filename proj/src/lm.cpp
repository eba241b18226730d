#include "ucrn/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "ucrn/datagen.hpp"
#include "ucrn/optim.hpp"
#include "ucrn/words.hpp"

namespace ucrn {

namespace {

Tensor randn(Rng& rng, std::vector<std::size_t> shape, double sigma, bool grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& x : t.values()) x = rng.normal(0.0, sigma);
  return t;
}

Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  return g.add_bias(g.matmul(x, w), b);
}

}  // namespace

TileAdapter TileAdapter::init(int tile_dim, int hidden, int out, Rng& rng) {
  TileAdapter a;
  a.tile_dim = tile_dim;
  a.hidden = hidden;
  a.out = out;
  std::size_t td = static_cast<std::size_t>(tile_dim);
  std::size_t hd = static_cast<std::size_t>(hidden);
  std::size_t od = static_cast<std::size_t>(out);
  a.ln_g = Tensor::full({td}, 1.0, true);
  a.ln_b = Tensor::zeros({td}, true);
  a.w1 = randn(rng, {td, hd}, 1.0 / std::sqrt(static_cast<double>(tile_dim)));
  a.b1 = Tensor::zeros({hd}, true);
  a.w2 = randn(rng, {hd, od}, 1.0 / std::sqrt(static_cast<double>(hidden)));
  a.b2 = Tensor::zeros({od}, true);
  return a;
}

TileAdapter TileAdapter::deep_copy() const {
  TileAdapter a;
  a.tile_dim = tile_dim;
  a.hidden = hidden;
  a.out = out;
  a.ln_g = ln_g.detached_copy();
  a.ln_b = ln_b.detached_copy();
  a.w1 = w1.detached_copy();
  a.b1 = b1.detached_copy();
  a.w2 = w2.detached_copy();
  a.b2 = b2.detached_copy();
  a.set_requires_grad(true);
  return a;
}

Tensor TileAdapter::forward(Graph& g, const Tensor& tiles) const {
  Tensor h = g.layer_norm(tiles, ln_g, ln_b);
  h = g.gelu(linear(g, h, w1, b1));
  return linear(g, h, w2, b2);
}

std::vector<Tensor> TileAdapter::parameters() const { return {ln_g, ln_b, w1, b1, w2, b2}; }

void TileAdapter::append_named(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".ln_g", ln_g);
  out.emplace_back(prefix + ".ln_b", ln_b);
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
  out.emplace_back(prefix + ".b2", b2);
}

void TileAdapter::set_requires_grad(bool b) {
  for (Tensor t : parameters()) t.set_requires_grad(b);
}

ToyLM ToyLM::init(const ToyLMConfig& cfg, std::uint64_t seed) {
  if (cfg.vocab <= 0) throw std::runtime_error("lm: config vocab must be positive");
  if (cfg.d_model % cfg.heads != 0) throw std::runtime_error("lm: d_model must divide by heads");
  if (cfg.feature_dim % cfg.tiles != 0)
    throw std::runtime_error("lm: feature_dim must divide by tiles");
  Rng rng(seed);
  ToyLM lm;
  lm.cfg = cfg;
  std::size_t V = static_cast<std::size_t>(cfg.vocab);
  std::size_t d = static_cast<std::size_t>(cfg.d_model);
  std::size_t f = static_cast<std::size_t>(cfg.ff_hidden);
  double ws = 1.0 / std::sqrt(static_cast<double>(d));
  lm.tok_emb = randn(rng, {V, d}, 0.02);
  lm.pos_emb = randn(rng, {static_cast<std::size_t>(cfg.max_sequence), d}, 0.02);
  for (int l = 0; l < cfg.layers; ++l) {
    LMBlock b;
    b.ln1_g = Tensor::full({d}, 1.0, true);
    b.ln1_b = Tensor::zeros({d}, true);
    b.wq = randn(rng, {d, d}, ws);
    b.bq = Tensor::zeros({d}, true);
    b.wk = randn(rng, {d, d}, ws);
    b.bk = Tensor::zeros({d}, true);
    b.wv = randn(rng, {d, d}, ws);
    b.bv = Tensor::zeros({d}, true);
    b.wo = randn(rng, {d, d}, ws);
    b.bo = Tensor::zeros({d}, true);
    b.ln2_g = Tensor::full({d}, 1.0, true);
    b.ln2_b = Tensor::zeros({d}, true);
    b.w1 = randn(rng, {d, f}, ws);
    b.b1 = Tensor::zeros({f}, true);
    b.w2 = randn(rng, {f, d}, 1.0 / std::sqrt(static_cast<double>(f)));
    b.b2 = Tensor::zeros({d}, true);
    lm.blocks.push_back(std::move(b));
  }
  lm.final_g = Tensor::full({d}, 1.0, true);
  lm.final_b = Tensor::zeros({d}, true);
  lm.w_out = randn(rng, {d, V}, ws);
  lm.b_out = Tensor::zeros({V}, true);
  lm.visual = TileAdapter::init(cfg.feature_dim / cfg.tiles, cfg.adapter_hidden, cfg.d_model, rng);
  return lm;
}

void ToyLM::freeze() {
  for (Tensor t : parameters()) t.set_requires_grad(false);
  frozen = true;
}

std::vector<Tensor> ToyLM::parameters() const {
  std::vector<Tensor> ps = {tok_emb, pos_emb};
  for (const LMBlock& b : blocks) {
    for (const Tensor& t : {b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo,
                            b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2})
      ps.push_back(t);
  }
  ps.push_back(final_g);
  ps.push_back(final_b);
  ps.push_back(w_out);
  ps.push_back(b_out);
  for (Tensor t : visual.parameters()) ps.push_back(t);
  return ps;
}

NamedTensors ToyLM::named_parameters() const {
  NamedTensors out;
  out.emplace_back("lm.tok_emb", tok_emb);
  out.emplace_back("lm.pos_emb", pos_emb);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const LMBlock& b = blocks[l];
    std::string p = "lm.block" + std::to_string(l);
    out.emplace_back(p + ".ln1_g", b.ln1_g);
    out.emplace_back(p + ".ln1_b", b.ln1_b);
    out.emplace_back(p + ".wq", b.wq);
    out.emplace_back(p + ".bq", b.bq);
    out.emplace_back(p + ".wk", b.wk);
    out.emplace_back(p + ".bk", b.bk);
    out.emplace_back(p + ".wv", b.wv);
    out.emplace_back(p + ".bv", b.bv);
    out.emplace_back(p + ".wo", b.wo);
    out.emplace_back(p + ".bo", b.bo);
    out.emplace_back(p + ".ln2_g", b.ln2_g);
    out.emplace_back(p + ".ln2_b", b.ln2_b);
    out.emplace_back(p + ".w1", b.w1);
    out.emplace_back(p + ".b1", b.b1);
    out.emplace_back(p + ".w2", b.w2);
    out.emplace_back(p + ".b2", b.b2);
  }
  out.emplace_back("lm.final_g", final_g);
  out.emplace_back("lm.final_b", final_b);
  out.emplace_back("lm.w_out", w_out);
  out.emplace_back("lm.b_out", b_out);
  visual.append_named(out, "lm.visual");
  return out;
}

ToyLM::Output ToyLM::forward(Graph& g, const Tensor& content) const {
  std::size_t T = content.rows();
  if (T == 0) throw std::runtime_error("lm.forward: empty content");
  if (T > static_cast<std::size_t>(cfg.max_sequence))
    throw std::runtime_error("lm.forward: sequence length " + std::to_string(T) +
                             " exceeds max_sequence " + std::to_string(cfg.max_sequence));
  int dh = cfg.d_model / cfg.heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor x = g.add(content, g.slice_rows(pos_emb, 0, T));
  for (const LMBlock& b : blocks) {
    Tensor h = g.layer_norm(x, b.ln1_g, b.ln1_b);
    Tensor q = linear(g, h, b.wq, b.bq);
    Tensor k = linear(g, h, b.wk, b.bk);
    Tensor v = linear(g, h, b.wv, b.bv);
    std::vector<Tensor> heads;
    for (int i = 0; i < cfg.heads; ++i) {
      std::size_t c0 = static_cast<std::size_t>(i * dh);
      Tensor qi = g.slice_cols(q, c0, static_cast<std::size_t>(dh));
      Tensor ki = g.slice_cols(k, c0, static_cast<std::size_t>(dh));
      Tensor vi = g.slice_cols(v, c0, static_cast<std::size_t>(dh));
      Tensor att = g.causal_softmax(g.scale(g.matmul_nt(qi, ki), inv_sqrt_dh));
      heads.push_back(g.matmul(att, vi));
    }
    Tensor merged = g.concat_cols(heads);
    x = g.add(x, linear(g, merged, b.wo, b.bo));
    Tensor h2 = g.layer_norm(x, b.ln2_g, b.ln2_b);
    Tensor ff = linear(g, g.gelu(linear(g, h2, b.w1, b.b1)), b.w2, b.b2);
    x = g.add(x, ff);
  }
  Output out;
  out.hidden = g.layer_norm(x, final_g, final_b);
  out.logits = linear(g, out.hidden, w_out, b_out);
  return out;
}

Tensor ToyLM::embed_tokens(Graph& g, const std::vector<int>& ids) const {
  if (ids.empty()) throw std::runtime_error("lm.embed_tokens: empty id list");
  return g.take_rows(tok_emb, ids);
}

Tensor split_tiles(const std::vector<double>& features, int tiles) {
  if (tiles <= 0 || features.size() % static_cast<std::size_t>(tiles) != 0)
    throw std::runtime_error("split_tiles: feature size " + std::to_string(features.size()) +
                             " not divisible into " + std::to_string(tiles) + " tiles");
  std::size_t td = features.size() / static_cast<std::size_t>(tiles);
  return Tensor::from({static_cast<std::size_t>(tiles), td}, features, false);
}

Tensor ToyLM::visual_prefix(Graph& g, const std::vector<double>& features) const {
  if (static_cast<int>(features.size()) != cfg.feature_dim)
    throw std::runtime_error("lm.visual_prefix: expected " + std::to_string(cfg.feature_dim) +
                             " features, got " + std::to_string(features.size()));
  return visual.forward(g, split_tiles(features, cfg.tiles));
}

Tensor ToyLM::query_content(Graph& g, const MultimodalQuery& q) const {
  std::vector<Tensor> parts;
  if (!q.image_features.empty()) {
    parts.push_back(visual_prefix(g, q.image_features));
    parts.push_back(embed_tokens(g, {kImg}));
  }
  if (!q.question.empty()) parts.push_back(embed_tokens(g, q.question));
  if (parts.empty()) throw std::runtime_error("lm.query_content: query has no modalities");
  return parts.size() == 1 ? parts[0] : g.concat_rows(parts);
}

Tensor extract_hidden_state(const ToyLM& lm, const MultimodalQuery& q) {
  Graph g;
  Tensor content = lm.query_content(g, q);
  ToyLM::Output out = lm.forward(g, content);
  Tensor last = g.slice_rows(out.hidden, content.rows() - 1, 1);
  return last.detached_copy();
}

namespace {

// Two sequence shapes share the query prefix [tiles, IMG, question]:
//   query-only:     ... BOS comment EOS
//   doc-grounded:   ... doc-tiles caption metadata answer-template BOS comment EOS
// The doc-grounded shape is exactly the retrieval-augmented prompt layout, so
// a frozen LM stays in distribution when a document is spliced in later.
struct TrainSequence {
  std::vector<double> query_features;
  std::vector<double> doc_features;  // empty for the query-only shape
  std::vector<int> pre_doc;          // IMG + question
  std::vector<int> post_doc;         // everything after the doc tiles (or the question)
};

TrainSequence build_sequence(const Corpus& corpus, const Tokenizer& tok, const CoRExample& ex,
                             bool with_document) {
  const EntityDocument& doc = corpus.documents.at(static_cast<std::size_t>(ex.target_doc));
  if (doc.id != ex.target_doc) throw std::runtime_error("pretrain: document ids out of order");
  TrainSequence s;
  s.query_features = ex.query_features;
  s.pre_doc.push_back(kImg);
  s.pre_doc.insert(s.pre_doc.end(), ex.question.begin(), ex.question.end());
  if (with_document) {
    s.doc_features = doc.features;
    std::vector<int> ans = answer_template_tokens(tok);
    s.post_doc.insert(s.post_doc.end(), doc.caption.begin(), doc.caption.end());
    s.post_doc.insert(s.post_doc.end(), doc.metadata.begin(), doc.metadata.end());
    s.post_doc.insert(s.post_doc.end(), ans.begin(), ans.end());
  }
  s.post_doc.push_back(kBos);
  s.post_doc.insert(s.post_doc.end(), ex.comment.begin(), ex.comment.end());
  s.post_doc.push_back(kEos);
  return s;
}

struct NamePools {
  std::vector<int> family, given;
};

NamePools name_pools(const Tokenizer& tok) {
  NamePools p;
  for (const char* w : words::kFamilyPool) p.family.push_back(tok.id(w));
  for (const char* w : words::kGivenPool) p.given.push_back(tok.id(w));
  return p;
}

// remap the target's family and given-name tokens to fresh pool words,
// consistently across question, metadata and comment; names then carry no
// memorizable signal and the model is forced to copy them from context
void scramble_names(TrainSequence& s, const EntityDocument& doc, const NamePools& pools,
                    Rng& rng) {
  if (doc.metadata.size() < 6)
    throw std::runtime_error("pretrain: document metadata lacks family and given names");
  auto pick = [&rng](const std::vector<int>& pool, std::size_t n) {
    std::vector<int> out;
    while (out.size() < n) {
      int c = pool[rng.index(pool.size())];
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    }
    return out;
  };
  std::vector<int> fam = pick(pools.family, 2);
  std::vector<int> giv = pick(pools.given, 4);
  std::vector<std::pair<int, int>> map;
  for (std::size_t i = 0; i < 2; ++i) map.emplace_back(doc.metadata[i], fam[i]);
  for (std::size_t i = 0; i < 4; ++i) map.emplace_back(doc.metadata[2 + i], giv[i]);
  auto apply = [&map](std::vector<int>& v) {
    for (int& t : v)
      for (const auto& [from, to] : map)
        if (t == from) {
          t = to;
          break;
        }
  };
  apply(s.pre_doc);
  apply(s.post_doc);
}

// mean CE over next-token targets from the IMG position onward; rows whose
// successor is a continuous tile row carry no target
Tensor sequence_loss(Graph& g, const ToyLM& lm, const TrainSequence& s) {
  int tiles = lm.cfg.tiles;
  std::vector<Tensor> parts = {lm.visual_prefix(g, s.query_features),
                               lm.embed_tokens(g, s.pre_doc)};
  std::vector<int> rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i + 1 < s.pre_doc.size(); ++i) {
    rows.push_back(tiles + static_cast<int>(i));
    targets.push_back(s.pre_doc[i + 1]);
  }
  std::size_t post_start = static_cast<std::size_t>(tiles) + s.pre_doc.size();
  if (!s.doc_features.empty()) {
    parts.push_back(lm.visual_prefix(g, s.doc_features));
    post_start += static_cast<std::size_t>(tiles);
  }
  parts.push_back(lm.embed_tokens(g, s.post_doc));
  // the row just before the first post-doc token predicts it: the last doc
  // tile in the doc-grounded shape, the last question token otherwise
  rows.push_back(static_cast<int>(post_start) - 1);
  targets.push_back(s.post_doc[0]);
  for (std::size_t i = 0; i + 1 < s.post_doc.size(); ++i) {
    rows.push_back(static_cast<int>(post_start + i));
    targets.push_back(s.post_doc[i + 1]);
  }
  ToyLM::Output out = lm.forward(g, g.concat_rows(parts));
  Tensor pred = g.take_rows(out.logits, rows);
  return g.softmax_cross_entropy(pred, targets);
}

}  // namespace

std::vector<double> pretrain_toy_lm(ToyLM& lm, const Corpus& corpus, const Tokenizer& tok,
                                    const PretrainConfig& pc) {
  std::vector<const CoRExample*> train;
  for (const CoRExample& ex : corpus.examples)
    if (ex.split == Split::train) train.push_back(&ex);
  if (train.empty()) throw std::runtime_error("pretrain-lm: no training examples");
  std::vector<Tensor> params = lm.parameters();
  Optimizer opt(Optimizer::Kind::adam, pc.lr);
  NamePools pools = name_pools(tok);
  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < pc.epochs; ++epoch) {
    Rng order_rng(Rng::derive(pc.seed, 100 + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    double total = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      std::size_t chunk = std::min<std::size_t>(static_cast<std::size_t>(pc.batch),
                                                order.size() - done);
      for (std::size_t j = 0; j < chunk; ++j) {
        const CoRExample& ex = *train[order[done + j]];
        Rng mix(Rng::derive(pc.seed, 7000000 + static_cast<std::uint64_t>(ex.id) * 131 +
                                         static_cast<std::uint64_t>(epoch)));
        bool with_doc = mix.uniform() < pc.doc_mix;
        TrainSequence s = build_sequence(corpus, tok, ex, with_doc);
        // document tiles are only partially reliable during pretraining: with
        // probability 1 - tile_fidelity another document's render is swapped
        // in while the text stays gold, so the model learns calibrated rather
        // than absolute trust in the spliced image rows
        if (with_doc && mix.uniform() >= pc.tile_fidelity) {
          const EntityDocument& decoy =
              corpus.documents[mix.index(corpus.documents.size())];
          s.doc_features = decoy.features;
        }
        scramble_names(s, corpus.documents.at(static_cast<std::size_t>(ex.target_doc)), pools,
                       mix);
        Graph g;
        Tensor loss = sequence_loss(g, lm, s);
        double lv = loss.item();
        if (!std::isfinite(lv))
          throw std::runtime_error("pretrain-lm: loss diverged (non-finite) at epoch " +
                                   std::to_string(epoch));
        total += lv;
        g.backward(g.scale(loss, 1.0 / static_cast<double>(chunk)));
      }
      opt.step(params);
      done += chunk;
    }
    epoch_losses.push_back(total / static_cast<double>(order.size()));
  }
  if (epoch_losses.size() >= 2 && epoch_losses.back() >= epoch_losses.front())
    throw std::runtime_error("pretrain-lm: loss did not decrease over training");
  return epoch_losses;
}

double lm_perplexity(const ToyLM& lm, const Corpus& corpus, const Tokenizer& tok,
                     std::size_t max_examples) {
  double total = 0.0;
  std::size_t n = 0;
  for (const CoRExample& ex : corpus.examples) {
    if (ex.split != Split::test) continue;
    Graph g;
    total += sequence_loss(g, lm, build_sequence(corpus, tok, ex, false)).item();
    if (++n >= max_examples) break;
  }
  if (n == 0) throw std::runtime_error("lm_perplexity: no test examples");
  return std::exp(total / static_cast<double>(n));
}

}  // namespace ucrn
