#pragma once

#include <vector>

namespace ucrn {

// fraction of queries whose gold id appears in the first k ranked ids
double recall_at_k(const std::vector<std::vector<int>>& ranked, const std::vector<int>& gold,
                   int k);

// corpus-level BLEU over n-grams up to 4 with uniform weights and a brevity
// penalty; zero precisions (including 0/0) are replaced by 1e-9 before the log
double bleu_corpus(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs);

// mean per-pair n-gram F1 with multiset (clipped-count) overlap
double rouge_n_f1(const std::vector<std::vector<int>>& hyps,
                  const std::vector<std::vector<int>>& refs, int n);

// mean per-pair unigram multiset F1
double token_f1(const std::vector<std::vector<int>>& hyps,
                const std::vector<std::vector<int>>& refs);

double exact_match(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs);

inline constexpr double kBleuEpsilon = 1e-9;

}  // namespace ucrn
