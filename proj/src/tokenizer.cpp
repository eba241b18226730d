#include "ucrn/tokenizer.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ucrn/words.hpp"

namespace ucrn {

Tokenizer::Tokenizer(std::vector<std::string> words) : words_(std::move(words)) {
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) {
    auto [it, fresh] = ids_.emplace(words_[i], i);
    if (!fresh) throw std::runtime_error("tokenizer: duplicate word " + words_[i]);
  }
}

Tokenizer Tokenizer::corpus_vocab() {
  std::vector<std::string> w = {"<pad>", "<bos>", "<eos>", "<img>", "<ret>"};
  for (const char* s : words::kCategories) w.emplace_back(s);
  for (const char* s : words::kColors) w.emplace_back(s);
  for (const char* s : words::kSizes) w.emplace_back(s);
  for (const char* s : words::kStages) w.emplace_back(s);
  for (const char* s : words::kPatterns) w.emplace_back(s);
  for (const char* s : words::kFamilyPool) w.emplace_back(s);
  for (const char* s : words::kGivenPool) w.emplace_back(s);
  for (const char* s : words::kTemplateWords) w.emplace_back(s);
  return Tokenizer(std::move(w));
}

int Tokenizer::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw std::runtime_error("tokenizer: unknown word '" + word + "'");
  return it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || id >= vocab_size())
    throw std::runtime_error("tokenizer: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(vocab_size()) + ")");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(id(tok));
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("tokenizer: cannot open " + path + " for writing");
  for (const std::string& w : words_) f << w << '\n';
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("tokenizer: cannot open " + path);
  std::vector<std::string> w;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) w.push_back(line);
  return Tokenizer(std::move(w));
}

}  // namespace ucrn
