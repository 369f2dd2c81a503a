#ifndef LORB_WER_HPP_
#define LORB_WER_HPP_

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

namespace lorb {

using Words = std::vector<std::string>;

inline Words split_words(const std::string& text) {
  Words out;
  std::istringstream iss(text);
  std::string w;
  while (iss >> w) out.push_back(w);
  return out;
}

inline std::string join_words(const Words& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// Word-level Levenshtein distance, unit costs, two-row DP.
inline int word_error_count(const Words& hyp, const Words& ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  if (n == 0) return static_cast<int>(m);
  if (m == 0) return static_cast<int>(n);
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace lorb

#endif  // LORB_WER_HPP_
