#include "ucrn/datagen.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "ucrn/words.hpp"

namespace ucrn {

namespace {

constexpr int kCatN = 16, kColorN = 8, kSizeN = 3, kStageN = 2, kPatternN = 3;
constexpr int kFamilySize = 6;

struct Family {
  int f1, f2;
  std::vector<EntityRecord> members;  // E0, stage-flip, color-var, size-var, P, Q
};

std::vector<int> tokens(const Tokenizer& tok, const std::vector<std::string>& ws) {
  std::vector<int> out;
  out.reserve(ws.size());
  for (const std::string& w : ws) out.push_back(tok.id(w));
  return out;
}

std::string cat_w(int i) { return words::kCategories[static_cast<std::size_t>(i)]; }
std::string color_w(int i) { return words::kColors[static_cast<std::size_t>(i)]; }
std::string size_w(int i) { return words::kSizes[static_cast<std::size_t>(i)]; }
std::string stage_w(int i) { return words::kStages[static_cast<std::size_t>(i)]; }
std::string pattern_w(int i) { return words::kPatterns[static_cast<std::size_t>(i)]; }
std::string fam_w(int i) { return words::kFamilyPool[static_cast<std::size_t>(i)]; }
std::string given_w(int i) { return words::kGivenPool[static_cast<std::size_t>(i)]; }

std::vector<int> make_caption(const Tokenizer& tok, const EntityRecord& e) {
  return tokens(tok, {"a", cat_w(e.cat), "specimen"});
}

// family name + given name; deliberately free of attribute words, so colors,
// sizes, stages, and patterns can only reach a comment through the image
std::vector<int> make_metadata(const Tokenizer& tok, const EntityRecord& e) {
  return tokens(tok, {fam_w(e.f1), fam_w(e.f2), given_w(e.g1), given_w(e.g2), given_w(e.g3),
                      given_w(e.g4)});
}

std::vector<int> make_question(const Tokenizer& tok, Relation rel, const EntityRecord& q,
                               const EntityRecord& t) {
  const std::string f1 = fam_w(q.f1), f2 = fam_w(q.f2);
  switch (rel) {
    case Relation::stage_change:
      return tokens(tok, {"show", "this", f1, f2, cat_w(q.cat), "as", stage_w(t.stage), "not",
                          stage_w(q.stage)});
    case Relation::color_change:
      return tokens(tok, {"for", "this", f1, f2, cat_w(q.cat), "swap", color_w(q.color), "for",
                          color_w(t.color)});
    case Relation::size_change:
      return tokens(tok, {"for", "this", f1, f2, cat_w(q.cat), "trade", size_w(q.size), "for",
                          size_w(t.size)});
    case Relation::partner:
      return tokens(tok, {"show", "the", cat_w(t.cat), "partner", "of", "this", f1, f2,
                          cat_w(q.cat)});
  }
  throw std::runtime_error("make_question: bad relation");
}

// comments carry the target's given name (metadata-only) and pattern
// (image-only); attribute words that merely echo the question are avoided so
// that a generator without the document has little to copy
std::vector<int> make_comment(const Tokenizer& tok, Relation rel, const EntityRecord& t) {
  const std::string f1 = fam_w(t.f1), f2 = fam_w(t.f2);
  const std::string g1 = given_w(t.g1), g2 = given_w(t.g2);
  const std::string g3 = given_w(t.g3), g4 = given_w(t.g4);
  const std::string pat = pattern_w(t.pattern);
  switch (rel) {
    case Relation::stage_change:
      return tokens(tok, {"the", stage_w(t.stage), "form", "of", "this", f1, f2, cat_w(t.cat),
                          "is", "called", g1, g2, g3, g4, "a", pat, "one"});
    case Relation::color_change:
      return tokens(tok, {"the", color_w(t.color), cat_w(t.cat), "of", "the", f1, f2, "set",
                          "is", "called", g1, g2, g3, g4, "a", pat, "one"});
    case Relation::size_change:
      return tokens(tok, {"the", size_w(t.size), cat_w(t.cat), "of", "the", f1, f2, "set",
                          "is", "called", g1, g2, g3, g4, "a", pat, "one"});
    case Relation::partner:
      // size, color, stage, and pattern of the partner appear nowhere in the
      // question or caption, so this comment leans hardest on the image
      return tokens(tok, {"the", cat_w(t.cat), "partner", "named", g1, g2, g3, g4, "is", "a",
                          size_w(t.size), color_w(t.color), stage_w(t.stage), pat, "one"});
  }
  throw std::runtime_error("make_comment: bad relation");
}

// candidate targets for a relation applied to member `qi` of a family
std::vector<int> relation_candidates(const Family& fam, int qi, Relation rel, int partner_cat) {
  const EntityRecord& q = fam.members[static_cast<std::size_t>(qi)];
  std::vector<int> out;
  for (int i = 0; i < kFamilySize; ++i) {
    if (i == qi) continue;
    const EntityRecord& c = fam.members[static_cast<std::size_t>(i)];
    bool ok = false;
    switch (rel) {
      case Relation::stage_change:
        ok = c.cat == q.cat && c.color == q.color && c.size == q.size && c.stage != q.stage;
        break;
      case Relation::color_change:
        ok = c.cat == q.cat && c.size == q.size && c.stage == q.stage && c.color != q.color;
        break;
      case Relation::size_change:
        ok = c.cat == q.cat && c.color == q.color && c.stage == q.stage && c.size != q.size;
        break;
      case Relation::partner:
        ok = c.cat == partner_cat;
        break;
    }
    if (ok) out.push_back(i);
  }
  return out;
}

}  // namespace

std::vector<double> render_image(const EntityRecord& e, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> f(kFeatureDim, 0.0);
  f[static_cast<std::size_t>(e.cat)] = 1.0;
  f[static_cast<std::size_t>(kCatN + e.color)] = 1.0;
  f[static_cast<std::size_t>(kCatN + kColorN + e.size)] = 1.0;
  f[static_cast<std::size_t>(kCatN + kColorN + kSizeN + e.stage)] = 1.0;
  f[static_cast<std::size_t>(kCatN + kColorN + kSizeN + kStageN + e.pattern)] = 1.0;
  for (double& x : f) x += rng.normal(0.0, kRenderNoise);
  return f;
}

DecodedAttributes decode_attributes(const std::vector<double>& features) {
  if (features.size() != kFeatureDim)
    throw std::runtime_error("decode_attributes: expected " + std::to_string(kFeatureDim) +
                             " dims, got " + std::to_string(features.size()));
  auto block_argmax = [&](int off, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (features[static_cast<std::size_t>(off + i)] > features[static_cast<std::size_t>(off + best)])
        best = i;
    return best;
  };
  DecodedAttributes d;
  d.cat = block_argmax(0, kCatN);
  d.color = block_argmax(kCatN, kColorN);
  d.size = block_argmax(kCatN + kColorN, kSizeN);
  d.stage = block_argmax(kCatN + kColorN + kSizeN, kStageN);
  d.pattern = block_argmax(kCatN + kColorN + kSizeN + kStageN, kPatternN);
  return d;
}

std::vector<int> instruction_tokens(const Tokenizer& tok) {
  return tokens(tok, {"find", "the", "image", "that", "answers"});
}

std::vector<int> answer_template_tokens(const Tokenizer& tok) {
  return tokens(tok, {"describe", "the", "answer", "now"});
}

MultimodalQuery make_query(const CoRExample& ex, const Tokenizer& tok) {
  MultimodalQuery q;
  q.question = ex.question;
  q.image_features = ex.query_features;
  q.instruction = instruction_tokens(tok);
  return q;
}

Corpus build_corpus(const CorpusConfig& cfg, const Tokenizer& tok) {
  if (cfg.train_examples % 16 != 0 || cfg.test_examples % 16 != 0)
    throw std::runtime_error("datagen: train/test example counts must be multiples of 16");
  if (cfg.golden_examples > cfg.test_examples)
    throw std::runtime_error("datagen: golden must be a subset of test");
  const int n_fam = cfg.documents / kFamilySize;
  const int singles = cfg.documents - n_fam * kFamilySize;
  const int train_fams = cfg.train_examples / 16;
  const int test_fams = cfg.test_examples / 16;
  if (train_fams + test_fams > n_fam)
    throw std::runtime_error("datagen: " + std::to_string(cfg.documents) +
                             " documents support at most " + std::to_string(n_fam) +
                             " families; need " + std::to_string(train_fams + test_fams));

  Rng rng(Rng::derive(cfg.seed, 1));

  // unique two-word family names
  std::vector<std::pair<int, int>> name_pairs;
  for (int i = 0; i < static_cast<int>(words::kFamilyPool.size()); ++i)
    for (int j = 0; j < static_cast<int>(words::kFamilyPool.size()); ++j)
      if (i != j) name_pairs.emplace_back(i, j);
  rng.shuffle(name_pairs);
  if (static_cast<int>(name_pairs.size()) < n_fam + singles)
    throw std::runtime_error("datagen: family name pool exhausted");

  // four distinct words per name: repeats would make copying from metadata
  // ambiguous for the generator's induction behaviour
  auto sample_given = [&](std::set<std::array<int, 4>>& used) {
    for (;;) {
      std::array<int, 4> name;
      for (std::size_t i = 0; i < name.size(); ++i) {
        for (;;) {
          name[i] = static_cast<int>(rng.index(words::kGivenPool.size()));
          bool dup = false;
          for (std::size_t j = 0; j < i; ++j) dup |= name[j] == name[i];
          if (!dup) break;
        }
      }
      if (used.insert(name).second) return name;
    }
  };

  std::vector<Family> fams;
  fams.reserve(static_cast<std::size_t>(n_fam));
  int next_id = 0;
  for (int fi = 0; fi < n_fam; ++fi) {
    Family fam;
    fam.f1 = name_pairs[static_cast<std::size_t>(fi)].first;
    fam.f2 = name_pairs[static_cast<std::size_t>(fi)].second;
    const int cat = static_cast<int>(rng.index(kCatN));
    const int color1 = static_cast<int>(rng.index(kColorN));
    int color2 = static_cast<int>(rng.index(kColorN - 1));
    if (color2 >= color1) ++color2;
    const int size1 = static_cast<int>(rng.index(kSizeN));
    int size2 = static_cast<int>(rng.index(kSizeN - 1));
    if (size2 >= size1) ++size2;
    const int stage1 = static_cast<int>(rng.index(kStageN));
    int cat_p = static_cast<int>(rng.index(kCatN - 1));
    if (cat_p >= cat) ++cat_p;
    int cat_q;
    do {
      cat_q = static_cast<int>(rng.index(kCatN));
    } while (cat_q == cat || cat_q == cat_p);

    auto base = [&](int c, int co, int sz, int st) {
      EntityRecord e;
      e.family = fi;
      e.f1 = fam.f1;
      e.f2 = fam.f2;
      e.cat = c; e.color = co; e.size = sz; e.stage = st;
      return e;
    };
    fam.members.push_back(base(cat, color1, size1, stage1));
    fam.members.push_back(base(cat, color1, size1, 1 - stage1));
    fam.members.push_back(base(cat, color2, size1, stage1));
    fam.members.push_back(base(cat, color1, size2, stage1));
    fam.members.push_back(base(cat_p, static_cast<int>(rng.index(kColorN)),
                               static_cast<int>(rng.index(kSizeN)),
                               static_cast<int>(rng.index(kStageN))));
    fam.members.push_back(base(cat_q, static_cast<int>(rng.index(kColorN)),
                               static_cast<int>(rng.index(kSizeN)),
                               static_cast<int>(rng.index(kStageN))));
    std::set<std::array<int, 4>> used;
    for (EntityRecord& e : fam.members) {
      e.pattern = static_cast<int>(rng.index(kPatternN));  // independent of siblings
      auto name = sample_given(used);
      e.g1 = name[0];
      e.g2 = name[1];
      e.g3 = name[2];
      e.g4 = name[3];
      e.id = next_id++;
    }
    fams.push_back(std::move(fam));
  }

  std::vector<EntityRecord> singles_rec;
  for (int s = 0; s < singles; ++s) {
    EntityRecord e;
    e.family = n_fam + s;
    e.f1 = name_pairs[static_cast<std::size_t>(n_fam + s)].first;
    e.f2 = name_pairs[static_cast<std::size_t>(n_fam + s)].second;
    e.cat = static_cast<int>(rng.index(kCatN));
    e.color = static_cast<int>(rng.index(kColorN));
    e.size = static_cast<int>(rng.index(kSizeN));
    e.stage = static_cast<int>(rng.index(kStageN));
    e.pattern = static_cast<int>(rng.index(kPatternN));
    std::set<std::array<int, 4>> fresh;
    auto name = sample_given(fresh);
    e.g1 = name[0];
    e.g2 = name[1];
    e.g3 = name[2];
    e.g4 = name[3];
    e.id = next_id++;
    singles_rec.push_back(e);
  }

  Corpus corpus;
  corpus.families = n_fam;
  auto add_doc = [&](const EntityRecord& e) {
    EntityDocument d;
    d.id = e.id;
    d.features = render_image(e, Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(e.id)));
    d.caption = make_caption(tok, e);
    d.metadata = make_metadata(tok, e);
    corpus.documents.push_back(std::move(d));
  };
  for (const Family& fam : fams)
    for (const EntityRecord& e : fam.members) add_doc(e);
  for (const EntityRecord& e : singles_rec) add_doc(e);

  // examples: member-major enumeration; invalid relation applications counted
  int next_example = 0;
  for (int fi = 0; fi < train_fams + test_fams; ++fi) {
    const Family& fam = fams[static_cast<std::size_t>(fi)];
    const Split split = fi < train_fams ? Split::train : Split::test;
    for (int qi = 0; qi < kFamilySize; ++qi) {
      const EntityRecord& q = fam.members[static_cast<std::size_t>(qi)];
      auto emit = [&](Relation rel, int ti) {
        const EntityRecord& t = fam.members[static_cast<std::size_t>(ti)];
        CoRExample ex;
        ex.id = next_example++;
        ex.query_features =
            render_image(q, Rng::derive(cfg.seed, 5000000 + static_cast<std::uint64_t>(ex.id)));
        ex.question = make_question(tok, rel, q, t);
        ex.target_doc = t.id;
        ex.comment = make_comment(tok, rel, t);
        ex.target_caption = make_caption(tok, t);
        ex.split = split;
        ex.relation = rel;
        corpus.examples.push_back(std::move(ex));
      };
      for (Relation rel : {Relation::stage_change, Relation::color_change, Relation::size_change}) {
        std::vector<int> cand = relation_candidates(fam, qi, rel, -1);
        if (cand.size() == 1)
          emit(rel, cand[0]);
        else
          ++corpus.skipped_relations;
      }
      std::vector<int> seen_cats;
      for (int oi = 0; oi < kFamilySize; ++oi) {
        const int ocat = fam.members[static_cast<std::size_t>(oi)].cat;
        if (ocat == q.cat) continue;
        if (std::find(seen_cats.begin(), seen_cats.end(), ocat) != seen_cats.end()) continue;
        seen_cats.push_back(ocat);
        std::vector<int> cand = relation_candidates(fam, qi, Relation::partner, ocat);
        if (cand.size() == 1)
          emit(Relation::partner, cand[0]);
        else
          ++corpus.skipped_relations;
      }
    }
  }

  // corpus-wide unique-target audit: the question-observable predicate
  // (family words + relation constraints) must match exactly one document
  {
    std::unordered_map<long, std::vector<const EntityRecord*>> by_family_name;
    auto key = [](int f1, int f2) { return static_cast<long>(f1) * 1000 + f2; };
    for (const Family& fam : fams)
      for (const EntityRecord& e : fam.members) by_family_name[key(e.f1, e.f2)].push_back(&e);
    for (const EntityRecord& e : singles_rec) by_family_name[key(e.f1, e.f2)].push_back(&e);
    std::unordered_map<int, const EntityRecord*> rec_by_id;
    for (const Family& fam : fams)
      for (const EntityRecord& e : fam.members) rec_by_id[e.id] = &e;
    for (const CoRExample& ex : corpus.examples) {
      const EntityRecord& t = *rec_by_id.at(ex.target_doc);
      int matches = 0;
      for (const EntityRecord* c : by_family_name.at(key(t.f1, t.f2))) {
        bool ok = false;
        switch (ex.relation) {
          case Relation::stage_change:
          case Relation::color_change:
          case Relation::size_change:
            ok = c->cat == t.cat && c->color == t.color && c->size == t.size &&
                 c->stage == t.stage;
            break;
          case Relation::partner:
            ok = c->cat == t.cat;
            break;
        }
        if (ok) ++matches;
      }
      if (matches != 1)
        throw std::runtime_error("datagen: example " + std::to_string(ex.id) + " has " +
                                 std::to_string(matches) + " matching documents");
    }
  }

  // golden tagging: leading test examples whose comments reconstruct exactly
  {
    std::unordered_map<int, const EntityRecord*> rec_by_id;
    for (const Family& fam : fams)
      for (const EntityRecord& e : fam.members) rec_by_id[e.id] = &e;
    int tagged = 0;
    for (CoRExample& ex : corpus.examples) {
      if (tagged >= cfg.golden_examples) break;
      if (ex.split != Split::test) continue;
      const EntityRecord& t = *rec_by_id.at(ex.target_doc);
      if (make_comment(tok, ex.relation, t) != ex.comment)
        throw std::runtime_error("datagen: example " + std::to_string(ex.id) +
                                 " failed the reconstruction audit");
      ex.split = Split::golden;
      ++tagged;
    }
    if (tagged != cfg.golden_examples)
      throw std::runtime_error("datagen: only " + std::to_string(tagged) + " golden examples");
  }

  // attach a comment-style text to documents that are some example's target
  {
    std::unordered_map<int, std::size_t> doc_pos;
    for (std::size_t i = 0; i < corpus.documents.size(); ++i)
      doc_pos[corpus.documents[i].id] = i;
    for (const CoRExample& ex : corpus.examples) {
      EntityDocument& d = corpus.documents[doc_pos.at(ex.target_doc)];
      if (d.comment.empty()) d.comment = ex.comment;
    }
  }

  return corpus;
}

}  // namespace ucrn
