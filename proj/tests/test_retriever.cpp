#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "ucrn/datagen.hpp"
#include "ucrn/retriever.hpp"

using namespace ucrn;

namespace {

bool throws_containing(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const std::exception& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

CorpusConfig tiny_config() {
  CorpusConfig cc;
  cc.documents = 64;
  cc.train_examples = 64;
  cc.test_examples = 32;
  cc.golden_examples = 16;
  cc.seed = 99;
  return cc;
}

struct Fixture {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus corpus;
  ToyLM lm;
  Retriever r;
  Fixture() {
    corpus = build_corpus(tiny_config(), tok);
    ToyLMConfig lc;
    lc.vocab = tok.vocab_size();
    lm = ToyLM::init(lc, 7);
    lm.freeze();
    r = Retriever::init(DualEncoder::init(tok.vocab_size(), kFeatureDim, 32, 64, 13), lc.d_model,
                        128, 19);
  }
};

}  // namespace

TEST_CASE("fusion endpoints bypass the mixing arithmetic exactly") {
  Fixture f;
  MultimodalQuery q = make_query(f.corpus.examples[0], f.tok);
  Graph g;
  Tensor enc_only = embed_query(g, f.r, f.lm, q, 0.0);
  Tensor pure_enc = f.r.enc.encode_multimodal(g, query_text_ids(q), q.image_features);
  CHECK(enc_only.values() == pure_enc.values());
  Tensor ada_only = embed_query(g, f.r, f.lm, q, 1.0);
  Tensor pure_ada = f.r.adapter.forward(g, extract_hidden_state(f.lm, q));
  CHECK(ada_only.values() == pure_ada.values());
  CHECK(throws_containing([&] { embed_query(g, f.r, f.lm, q, 1.5); }, "beta"));
  // the learned fusion starts at beta = 0.5
  CHECK(f.r.beta() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("InfoNCE equals ln 4 when every pair is indistinguishable") {
  Graph g;
  std::vector<double> same;
  for (int i = 0; i < 4; ++i) {
    same.push_back(1.0);
    same.push_back(0.0);
    same.push_back(0.0);
  }
  Tensor q = Tensor::from({4, 3}, same);
  Tensor d = Tensor::from({4, 3}, same);
  double loss = info_nce(g, q, d, 1.0).item();
  CHECK(std::abs(loss - std::log(4.0)) < 1e-9);
}

TEST_CASE("InfoNCE approaches zero for orthogonal pairs under a sharp scale") {
  Graph g;
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[static_cast<std::size_t>(i * 4 + i)] = 1.0;
  Tensor q = Tensor::from({4, 4}, eye);
  Tensor d = Tensor::from({4, 4}, eye);
  CHECK(info_nce(g, q, d, 50.0).item() < 1e-9);
}

TEST_CASE("InfoNCE rejects tiny or mismatched batches") {
  Graph g;
  Tensor one = Tensor::from({1, 2}, {1.0, 0.0});
  CHECK(throws_containing([&] { info_nce(g, one, one, 1.0); }, "at least 2"));
  Tensor two = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor three = Tensor::from({3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 0.0});
  CHECK(throws_containing([&] { info_nce(g, two, three, 1.0); }, "matching"));
}

TEST_CASE("retrieve ranks by score and breaks exact ties by ascending id") {
  EmbeddingIndex index;
  index.dim = 2;
  index.ids = {7, 3, 5};
  index.emb = {1.0, 0.0, 1.0, 0.0, 0.5, 0.0};
  std::vector<Hit> hits = retrieve(index, {1.0, 0.0}, 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].id == 3);  // same score as id 7, lower id wins
  CHECK(hits[1].id == 7);
  CHECK(hits[2].id == 5);
  CHECK(hits[0].score == doctest::Approx(1.0));
}

TEST_CASE("retrieve agrees with a brute-force oracle on quantized vectors") {
  Rng rng(21);
  EmbeddingIndex index;
  index.dim = 4;
  for (int i = 0; i < 32; ++i) {
    index.ids.push_back(31 - i);  // ids deliberately unsorted
    for (int j = 0; j < 4; ++j)
      index.emb.push_back(0.25 * static_cast<double>(rng.index(5)));  // grid forces ties
  }
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> q(4);
    for (double& x : q) x = 0.25 * static_cast<double>(rng.index(5));
    std::vector<std::pair<double, int>> oracle;
    for (std::size_t i = 0; i < index.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) s += index.emb[i * 4 + j] * q[j];
      oracle.emplace_back(-s, index.ids[i]);
    }
    std::sort(oracle.begin(), oracle.end());
    std::vector<Hit> hits = retrieve(index, q, 10);
    for (int i = 0; i < 10; ++i) {
      CHECK(hits[static_cast<std::size_t>(i)].id == oracle[static_cast<std::size_t>(i)].second);
      CHECK(hits[static_cast<std::size_t>(i)].score ==
            doctest::Approx(-oracle[static_cast<std::size_t>(i)].first));
    }
  }
}

TEST_CASE("retrieve validates index, k and query dimension") {
  EmbeddingIndex empty;
  CHECK(throws_containing([&] { retrieve(empty, {1.0}, 1); }, "empty"));
  EmbeddingIndex index;
  index.dim = 2;
  index.ids = {0, 1};
  index.emb = {1.0, 0.0, 0.0, 1.0};
  CHECK(throws_containing([&] { retrieve(index, {1.0, 0.0}, 0); }, "k=0"));
  CHECK(throws_containing([&] { retrieve(index, {1.0, 0.0}, 3); }, "k=3"));
  CHECK(throws_containing([&] { retrieve(index, {1.0}, 1); }, "dim"));
}

TEST_CASE("index survives a save/load roundtrip including the checksum") {
  Fixture f;
  EmbeddingIndex index = build_index(f.r.enc, f.corpus.documents, 0xDEADBEEFCAFEBABEull);
  std::string path = "index_roundtrip.ckpt";
  save_index(path, index);
  EmbeddingIndex back = load_index(path);
  CHECK(back.dim == index.dim);
  CHECK(back.ids == index.ids);
  CHECK(back.emb == index.emb);
  CHECK(back.params_checksum == 0xDEADBEEFCAFEBABEull);
  std::remove(path.c_str());
}

TEST_CASE("stage 1 trains the adapter without touching encoder or fusion") {
  Fixture f;
  std::vector<std::uint8_t> enc_before = f.r.enc.serialized();
  std::vector<std::uint8_t> adapter_before = serialize_checkpoint([&] {
    NamedTensors n;
    f.r.adapter.append_named(n, "a");
    return n;
  }());
  ContrastiveConfig cc;
  cc.epochs = 3;
  cc.seed = 23;
  std::vector<double> losses = train_retriever_stage1(f.r, f.lm, f.corpus, f.tok, cc);
  REQUIRE(losses.size() == 3);
  CHECK(losses.back() < losses.front());
  CHECK(f.r.enc.serialized() == enc_before);
  CHECK(f.r.beta() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(serialize_checkpoint([&] {
          NamedTensors n;
          f.r.adapter.append_named(n, "a");
          return n;
        }()) != adapter_before);
}

TEST_CASE("stage 2 moves the fusion weight jointly with the towers") {
  Fixture f;
  ContrastiveConfig cc;
  cc.epochs = 3;
  cc.seed = 29;
  std::vector<double> losses = train_retriever_stage2(f.r, f.lm, f.corpus, f.tok, cc);
  REQUIRE(losses.size() == 3);
  CHECK(losses.back() < losses.front());
  CHECK(f.r.beta() != 0.5);
}

TEST_CASE("hidden-state caching is deterministic") {
  Fixture f;
  std::vector<const CoRExample*> exs;
  for (std::size_t i = 0; i < 4; ++i) exs.push_back(&f.corpus.examples[i]);
  std::vector<std::vector<double>> a = cache_hidden_states(f.lm, exs, f.tok);
  std::vector<std::vector<double>> b = cache_hidden_states(f.lm, exs, f.tok);
  CHECK(a == b);
}

TEST_CASE("document text uses the comment only when asked and present") {
  Fixture f;
  // the trailing singleton documents are never an example's target and carry
  // no comment text
  EntityDocument doc = f.corpus.documents.back();
  REQUIRE(doc.comment.empty());
  CHECK(document_text_ids(doc, true) == document_text_ids(doc, false));
  doc.comment = {kBos, 5, 6};
  std::vector<int> with = document_text_ids(doc, true);
  std::vector<int> expect = doc.comment;
  expect.insert(expect.end(), doc.metadata.begin(), doc.metadata.end());
  CHECK(with == expect);
  std::vector<int> without = document_text_ids(doc, false);
  std::vector<int> cap = doc.caption;
  cap.insert(cap.end(), doc.metadata.begin(), doc.metadata.end());
  CHECK(without == cap);
}
