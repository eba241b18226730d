#include "ucrn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace ucrn {

namespace {

void check_pairs(std::size_t h, std::size_t r, const char* what) {
  if (h != r)
    throw std::runtime_error(std::string(what) + ": hypothesis/reference count mismatch (" +
                             std::to_string(h) + " vs " + std::to_string(r) + ")");
  if (h == 0) throw std::runtime_error(std::string(what) + ": empty evaluation set");
}

using Counts = std::map<std::vector<int>, long>;

Counts ngram_counts(const std::vector<int>& seq, int n) {
  Counts c;
  if (static_cast<int>(seq.size()) >= n)
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= seq.size(); ++i)
      ++c[std::vector<int>(seq.begin() + i, seq.begin() + i + n)];
  return c;
}

long overlap(const Counts& a, const Counts& b) {
  long total = 0;
  for (const auto& [g, ca] : a) {
    auto it = b.find(g);
    if (it != b.end()) total += std::min(ca, it->second);
  }
  return total;
}

}  // namespace

double recall_at_k(const std::vector<std::vector<int>>& ranked, const std::vector<int>& gold,
                   int k) {
  check_pairs(ranked.size(), gold.size(), "recall_at_k");
  if (k < 1) throw std::runtime_error("recall_at_k: k must be at least 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), ranked[i].size());
    for (std::size_t j = 0; j < depth; ++j)
      if (ranked[i][j] == gold[i]) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

double bleu_corpus(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs) {
  check_pairs(hyps.size(), refs.size(), "bleu_corpus");
  long hyp_len = 0, ref_len = 0;
  long matches[4] = {0, 0, 0, 0};
  long totals[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<long>(hyps[i].size());
    ref_len += static_cast<long>(refs[i].size());
    for (int n = 1; n <= 4; ++n) {
      Counts h = ngram_counts(hyps[i], n);
      Counts r = ngram_counts(refs[i], n);
      matches[n - 1] += overlap(h, r);
      long t = static_cast<long>(hyps[i].size()) - n + 1;
      if (t > 0) totals[n - 1] += t;
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    double p = totals[n] > 0 ? static_cast<double>(matches[n]) / static_cast<double>(totals[n])
                             : 0.0;
    if (p <= 0.0) p = kBleuEpsilon;
    log_sum += std::log(p);
  }
  double bp = hyp_len < ref_len
                  ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                  : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

double rouge_n_f1(const std::vector<std::vector<int>>& hyps,
                  const std::vector<std::vector<int>>& refs, int n) {
  check_pairs(hyps.size(), refs.size(), "rouge_n_f1");
  if (n < 1) throw std::runtime_error("rouge_n_f1: n must be at least 1");
  double total = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    long h_total = std::max<long>(0, static_cast<long>(hyps[i].size()) - n + 1);
    long r_total = std::max<long>(0, static_cast<long>(refs[i].size()) - n + 1);
    if (h_total == 0 || r_total == 0) continue;
    long ov = overlap(ngram_counts(hyps[i], n), ngram_counts(refs[i], n));
    double p = static_cast<double>(ov) / static_cast<double>(h_total);
    double r = static_cast<double>(ov) / static_cast<double>(r_total);
    if (p + r > 0.0) total += 2.0 * p * r / (p + r);
  }
  return total / static_cast<double>(hyps.size());
}

double token_f1(const std::vector<std::vector<int>>& hyps,
                const std::vector<std::vector<int>>& refs) {
  return rouge_n_f1(hyps, refs, 1);
}

double exact_match(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs) {
  check_pairs(hyps.size(), refs.size(), "exact_match");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i)
    if (hyps[i] == refs[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(hyps.size());
}

}  // namespace ucrn
