#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace ucrn {

// Closed-vocabulary whitespace tokenizer. Ids are stable across runs: specials
// first, then the corpus word list in declaration order.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kImg = 3;
  static constexpr int kRet = 4;

  static Tokenizer corpus_vocab();  // canonical vocabulary of the synthetic corpus

  explicit Tokenizer(std::vector<std::string> words);

  int vocab_size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;            // throws on unknown word
  const std::string& word(int id) const;            // throws on out-of-range id
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;         // one token per line
  static Tokenizer load(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

inline constexpr int kPad = Tokenizer::kPad;
inline constexpr int kBos = Tokenizer::kBos;
inline constexpr int kEos = Tokenizer::kEos;
inline constexpr int kImg = Tokenizer::kImg;
inline constexpr int kRet = Tokenizer::kRet;

}  // namespace ucrn
