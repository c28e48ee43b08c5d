#include "sovmas/rouge.hpp"

#include <cctype>
#include <random>
#include <stdexcept>

namespace sovmas {

const std::set<std::string>& default_char_scripted_languages() {
  static const std::set<std::string> langs = {"zh", "ja", "my", "th", "km", "lo"};
  return langs;
}

namespace {

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_token_char(unsigned char c) {
  // ASCII alphanumerics plus any non-ASCII byte; everything else separates.
  return std::isalnum(c) || c >= 0x80;
}

size_t utf8_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;  // invalid byte, treat as one unit
}

}  // namespace

std::vector<std::string> tokenize_for_rouge(const std::string& text,
                                            const std::string& lang) {
  return tokenize_for_rouge(text, lang, default_char_scripted_languages());
}

std::vector<std::string> tokenize_for_rouge(const std::string& text,
                                            const std::string& lang,
                                            const std::set<std::string>& char_scripted) {
  std::vector<std::string> tokens;
  if (char_scripted.count(lang)) {
    size_t i = 0;
    while (i < text.size()) {
      const unsigned char c = static_cast<unsigned char>(text[i]);
      const size_t n = std::min(utf8_len(c), text.size() - i);
      if (!(n == 1 && is_ascii_space(c)))
        tokens.push_back(text.substr(i, n));
      i += n;
    }
    return tokens;
  }
  std::string cur;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (is_token_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

SigReport paired_significance(std::span<const double> scores_a,
                              std::span<const double> scores_b, int64_t resamples,
                              uint64_t seed) {
  if (scores_a.size() != scores_b.size())
    throw std::invalid_argument("paired_significance: score lists differ in length");
  if (scores_a.size() < 2)
    throw std::invalid_argument("paired_significance: need at least two pairs");
  if (resamples < 1)
    throw std::invalid_argument("paired_significance: resamples must be >= 1");
  const size_t n = scores_a.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  int64_t not_better = 0;
  for (int64_t r = 0; r < resamples; ++r) {
    double sum_a = 0, sum_b = 0;
    for (size_t i = 0; i < n; ++i) {
      const size_t idx = pick(rng);
      sum_a += scores_a[idx];
      sum_b += scores_b[idx];
    }
    if (sum_a <= sum_b) ++not_better;
  }
  SigReport report;
  report.resamples = resamples;
  report.p_value = static_cast<double>(not_better) / static_cast<double>(resamples);
  double mean_a = 0, mean_b = 0;
  for (size_t i = 0; i < n; ++i) {
    mean_a += scores_a[i];
    mean_b += scores_b[i];
  }
  report.mean_diff = (mean_a - mean_b) / static_cast<double>(n);
  return report;
}

}  // namespace sovmas
