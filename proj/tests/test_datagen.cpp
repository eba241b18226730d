#include <algorithm>
#include <filesystem>
#include <functional>
#include <set>
#include <string>

#include "doctest.h"
#include "ucrn/datagen.hpp"
#include "ucrn/words.hpp"

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

}  // namespace

TEST_CASE("rendered features decode back to the source attributes") {
  Rng rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    EntityRecord e;
    e.cat = static_cast<int>(rng.index(16));
    e.color = static_cast<int>(rng.index(8));
    e.size = static_cast<int>(rng.index(3));
    e.stage = static_cast<int>(rng.index(2));
    e.pattern = static_cast<int>(rng.index(3));
    std::vector<double> img = render_image(e, rng.next_u64());
    REQUIRE(img.size() == static_cast<std::size_t>(kFeatureDim));
    DecodedAttributes d = decode_attributes(img);
    CHECK(d.cat == e.cat);
    CHECK(d.color == e.color);
    CHECK(d.size == e.size);
    CHECK(d.stage == e.stage);
    CHECK(d.pattern == e.pattern);
  }
}

TEST_CASE("query and document renders of one entity differ but decode alike") {
  EntityRecord e;
  e.cat = 3;
  e.color = 2;
  e.size = 1;
  e.stage = 0;
  std::vector<double> a = render_image(e, 1);
  std::vector<double> b = render_image(e, 2);
  CHECK(a != b);
  CHECK(decode_attributes(a).cat == decode_attributes(b).cat);
}

TEST_CASE("corpus counts match the family arithmetic exactly") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus c = build_corpus(tiny_config(), tok);
  CHECK(c.documents.size() == 64);
  CHECK(c.examples.size() == 96);
  CHECK(c.families == 10);  // 64 documents = 10 families of 6 + 4 singletons
  int train = 0, test = 0, golden = 0;
  for (const CoRExample& ex : c.examples) {
    if (ex.split == Split::train) ++train;
    if (ex.split == Split::test) ++test;
    if (ex.split == Split::golden) ++golden;
  }
  CHECK(train == 64);
  CHECK(test + golden == 32);
  CHECK(golden == 16);
  // 16 examples per family means 6 families were used; each family skips
  // exactly 14 relation applications that lack a unique target
  CHECK(c.skipped_relations == 6 * 14);
}

TEST_CASE("document ids are dense and examples reference valid targets") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus c = build_corpus(tiny_config(), tok);
  for (std::size_t i = 0; i < c.documents.size(); ++i)
    CHECK(c.documents[i].id == static_cast<int>(i));
  for (std::size_t i = 0; i < c.examples.size(); ++i) {
    const CoRExample& ex = c.examples[i];
    CHECK(ex.id == static_cast<int>(i));
    REQUIRE(ex.target_doc >= 0);
    REQUIRE(ex.target_doc < static_cast<int>(c.documents.size()));
    CHECK(!ex.question.empty());
    CHECK(!ex.comment.empty());
    CHECK(ex.target_caption == c.documents[ex.target_doc].caption);
  }
}

TEST_CASE("train and test splits share no target documents or families") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus c = build_corpus(tiny_config(), tok);
  std::set<int> train_targets, test_targets;
  for (const CoRExample& ex : c.examples)
    (ex.split == Split::train ? train_targets : test_targets).insert(ex.target_doc);
  for (int t : test_targets) CHECK(train_targets.count(t) == 0);
  // question word multisets must also be family-disjoint across the split:
  // family name words appear in every question of that family
  std::set<std::vector<int>> train_questions, test_questions;
  for (const CoRExample& ex : c.examples) {
    std::vector<int> sorted = ex.question;
    std::sort(sorted.begin(), sorted.end());
    (ex.split == Split::train ? train_questions : test_questions).insert(sorted);
  }
  for (const auto& q : test_questions) CHECK(train_questions.count(q) == 0);
}

TEST_CASE("golden examples are the leading test examples") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus c = build_corpus(tiny_config(), tok);
  bool seen_plain_test = false;
  for (const CoRExample& ex : c.examples) {
    if (ex.split == Split::train) continue;
    if (ex.split == Split::test) seen_plain_test = true;
    if (ex.split == Split::golden) CHECK(!seen_plain_test);
  }
}

TEST_CASE("comments carry content that questions provably lack") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus c = build_corpus(tiny_config(), tok);
  for (const CoRExample& ex : c.examples) {
    std::set<int> qwords(ex.question.begin(), ex.question.end());
    const EntityDocument& doc = c.documents[ex.target_doc];
    // the target's four-word given name is in the document metadata and the
    // comment but never in the question, so copying it needs the document
    int fresh = 0;
    for (int m : doc.metadata)
      if (!qwords.count(m) && std::count(ex.comment.begin(), ex.comment.end(), m)) ++fresh;
    CHECK(fresh >= 4);
  }
}

TEST_CASE("every question resolves to exactly one document corpus-wide") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus c = build_corpus(tiny_config(), tok);
  // the target's metadata must contain both family words of the question and
  // no other family's document may satisfy the relation; the builder audits
  // this internally, so here we spot-check that the family words of each
  // question appear in the target's metadata
  for (const CoRExample& ex : c.examples) {
    const EntityDocument& doc = c.documents[ex.target_doc];
    std::set<int> meta(doc.metadata.begin(), doc.metadata.end());
    int family_words_in_target = 0;
    for (int q : ex.question)
      if (meta.count(q)) ++family_words_in_target;
    CHECK(family_words_in_target >= 2);
  }
}

TEST_CASE("jsonl round trip preserves the corpus") {
  namespace fs = std::filesystem;
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus c = build_corpus(tiny_config(), tok);
  fs::path dir = fs::temp_directory_path() / "ucrn_test_jsonl";
  fs::create_directories(dir);
  std::string docs_path = (dir / "documents.jsonl").string();
  std::string ex_path = (dir / "examples.jsonl").string();
  write_documents_jsonl(docs_path, c.documents, tok);
  write_examples_jsonl(ex_path, c.examples, tok);
  std::vector<EntityDocument> docs = load_documents_jsonl(docs_path, tok);
  std::vector<CoRExample> exs = load_examples_jsonl(ex_path, tok, docs);
  REQUIRE(docs.size() == c.documents.size());
  REQUIRE(exs.size() == c.examples.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    CHECK(docs[i].id == c.documents[i].id);
    CHECK(docs[i].features == c.documents[i].features);  // exact f64 round trip
    CHECK(docs[i].caption == c.documents[i].caption);
    CHECK(docs[i].metadata == c.documents[i].metadata);
  }
  for (std::size_t i = 0; i < exs.size(); ++i) {
    CHECK(exs[i].id == c.examples[i].id);
    CHECK(exs[i].query_features == c.examples[i].query_features);
    CHECK(exs[i].question == c.examples[i].question);
    CHECK(exs[i].target_doc == c.examples[i].target_doc);
    CHECK(exs[i].comment == c.examples[i].comment);
    CHECK(exs[i].split == c.examples[i].split);
    CHECK(exs[i].relation == c.examples[i].relation);
    CHECK(exs[i].target_caption == c.examples[i].target_caption);
  }
  fs::remove_all(dir);
}

TEST_CASE("generation is deterministic in the seed") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus a = build_corpus(tiny_config(), tok);
  Corpus b = build_corpus(tiny_config(), tok);
  REQUIRE(a.examples.size() == b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    CHECK(a.examples[i].question == b.examples[i].question);
    CHECK(a.examples[i].query_features == b.examples[i].query_features);
  }
  CorpusConfig other = tiny_config();
  other.seed = 100;
  Corpus c = build_corpus(other, tok);
  bool any_differs = false;
  for (std::size_t i = 0; i < a.examples.size() && !any_differs; ++i)
    any_differs = a.examples[i].query_features != c.examples[i].query_features;
  CHECK(any_differs);
}

TEST_CASE("invalid corpus configurations are rejected by name") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  CorpusConfig cc = tiny_config();
  cc.train_examples = 60;  // not a multiple of 16
  CHECK(throws_containing([&] { build_corpus(cc, tok); }, "16"));
  cc = tiny_config();
  cc.documents = 12;  // not enough families for the requested examples
  CHECK(throws_containing([&] { build_corpus(cc, tok); }, "families"));
  cc = tiny_config();
  cc.golden_examples = 48;  // more golden than test
  CHECK(throws_containing([&] { build_corpus(cc, tok); }, "golden"));
}

TEST_CASE("queries carry the retrieval instruction and the question") {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus c = build_corpus(tiny_config(), tok);
  MultimodalQuery q = make_query(c.examples[0], tok);
  CHECK(q.question == c.examples[0].question);
  CHECK(q.image_features == c.examples[0].query_features);
  CHECK(q.instruction == instruction_tokens(tok));
}
