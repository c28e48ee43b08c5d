// Self-contained ROUGE-1/2/L with clipped n-gram counts, LCS recall, a
// language-aware tokenizer, and paired bootstrap significance testing.

#ifndef SOVMAS_ROUGE_HPP
#define SOVMAS_ROUGE_HPP

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sovmas {

struct RougeScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

inline RougeScore make_rouge(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  if (cand_total > 0) s.precision = overlap / cand_total;
  if (ref_total > 0) s.recall = overlap / ref_total;
  if (s.precision + s.recall > 0)
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

// Clipped n-gram overlap. Empty candidate or reference scores 0/0/0.
template <typename Token>
RougeScore rouge_n(std::span<const Token> candidate, std::span<const Token> reference,
                   int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  const int64_t c_total = static_cast<int64_t>(candidate.size()) - n + 1;
  const int64_t r_total = static_cast<int64_t>(reference.size()) - n + 1;
  if (c_total <= 0 || r_total <= 0) return {};
  std::map<std::vector<Token>, int64_t> ref_counts;
  for (int64_t i = 0; i < r_total; ++i)
    ++ref_counts[std::vector<Token>(reference.begin() + i, reference.begin() + i + n)];
  int64_t overlap = 0;
  for (int64_t i = 0; i < c_total; ++i) {
    auto it = ref_counts.find(
        std::vector<Token>(candidate.begin() + i, candidate.begin() + i + n));
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return make_rouge(static_cast<double>(overlap), static_cast<double>(c_total),
                    static_cast<double>(r_total));
}

// LCS-based score computed by dynamic programming.
template <typename Token>
RougeScore rouge_l(std::span<const Token> candidate, std::span<const Token> reference) {
  const size_t c = candidate.size(), r = reference.size();
  if (c == 0 || r == 0) return {};
  std::vector<int64_t> prev(r + 1, 0), cur(r + 1, 0);
  for (size_t i = 1; i <= c; ++i) {
    for (size_t j = 1; j <= r; ++j) {
      if (candidate[i - 1] == reference[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return make_rouge(static_cast<double>(prev[r]), static_cast<double>(c),
                    static_cast<double>(r));
}

// Languages whose scripts are scored per character rather than per word.
// This list is configuration, not ground truth; callers may override it.
const std::set<std::string>& default_char_scripted_languages();

// Lowercases and splits on whitespace/punctuation; for char-scripted
// languages every non-space character (UTF-8 code point) is a token.
std::vector<std::string> tokenize_for_rouge(const std::string& text,
                                            const std::string& lang);
std::vector<std::string> tokenize_for_rouge(const std::string& text,
                                            const std::string& lang,
                                            const std::set<std::string>& char_scripted);

struct SigReport {
  double p_value = 1.0;
  int64_t resamples = 0;
  double mean_diff = 0.0;  // mean(a) - mean(b)
};

// Paired bootstrap resampling (one-sided, system A claimed better): p is the
// fraction of resampled index sets where mean(A) <= mean(B).
SigReport paired_significance(std::span<const double> scores_a,
                              std::span<const double> scores_b, int64_t resamples,
                              uint64_t seed);

}  // namespace sovmas

#endif  // SOVMAS_ROUGE_HPP
