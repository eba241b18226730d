#pragma once

#include <cstdint>

#include "ucrn/data.hpp"
#include "ucrn/rng.hpp"

namespace ucrn {

// Synthetic commented-retrieval corpus. Entities live in six-member families:
//   E0 base, E1 = stage flip of E0, E2 = color variant, E3 = size variant,
//   P and Q = partner entities in two other categories with free attributes.
// Each family yields exactly 16 examples (2 stage, 2 color, 2 size, 10 partner);
// relation applications without a unique in-family target are skipped and
// counted. Questions carry the family's two name words, so every kept relation
// resolves to exactly one document corpus-wide.
struct CorpusConfig {
  int documents = 2048;
  int train_examples = 4096;   // must be a multiple of 16
  int test_examples = 512;     // must be a multiple of 16
  int golden_examples = 128;   // leading subset of test, audit-verified
  std::uint64_t seed = 1234;
};

struct EntityRecord {
  int id = -1;
  int family = -1;
  int cat = 0, color = 0, size = 0, stage = 0;
  int pattern = 0;              // image-only attribute, independent per entity
  int f1 = 0, f2 = 0;           // family name word indices into the family pool
  int g1 = 0, g2 = 0, g3 = 0, g4 = 0;  // four-word given name, given pool indices
};

inline constexpr int kFeatureDim = 32;
inline constexpr double kRenderNoise = 0.05;

// one-hot blocks [cat 16 | color 8 | size 3 | stage 2 | pattern 3] + Gaussian noise
std::vector<double> render_image(const EntityRecord& e, std::uint64_t seed);

struct DecodedAttributes {
  int cat = 0, color = 0, size = 0, stage = 0, pattern = 0;
};
DecodedAttributes decode_attributes(const std::vector<double>& features);

Corpus build_corpus(const CorpusConfig& cfg, const Tokenizer& tok);

std::vector<int> instruction_tokens(const Tokenizer& tok);      // retrieval instruction tag
std::vector<int> answer_template_tokens(const Tokenizer& tok);  // fixed prompt suffix for RAG

MultimodalQuery make_query(const CoRExample& ex, const Tokenizer& tok);

}  // namespace ucrn
