#ifndef LORB_VOCAB_HPP_
#define LORB_VOCAB_HPP_

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lorb/errors.hpp"
#include "lorb/wer.hpp"

namespace lorb {

// Word-level vocabulary with dense ids. Specials occupy the first four ids;
// encoding is total (unknown words map to [UNK]).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  Vocabulary() { init_specials(); }

  // Keeps the cap-4 most frequent corpus words; ties break lexicographically.
  static Vocabulary build(const std::vector<Words>& corpus, std::size_t cap) {
    if (cap < 5) {
      throw ConfigError(strcat("build_vocab: cap must be >= 5, got ", cap));
    }
    if (corpus.empty()) {
      throw ConfigError("build_vocab: empty corpus");
    }
    std::map<std::string, std::size_t> counts;
    for (const Words& sent : corpus)
      for (const std::string& w : sent) ++counts[w];

    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                            counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });

    Vocabulary v;
    const std::size_t room = cap - kNumSpecials;
    for (std::size_t i = 0; i < ranked.size() && i < room; ++i) {
      v.add_token(ranked[i].first);
    }
    return v;
  }

  // From an explicit token list (checkpoint restore); specials not included.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const std::string& t : tokens) v.add_token(t);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  int id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& word) const { return ids_.count(word) > 0; }

  const std::string& token(int id) const { return tokens_.at(id); }

  // Tokens beyond the specials, in id order.
  std::vector<std::string> regular_tokens() const {
    return {tokens_.begin() + kNumSpecials, tokens_.end()};
  }

 private:
  static constexpr std::size_t kNumSpecials = 4;

  void init_specials() {
    tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      ids_[tokens_[i]] = static_cast<int>(i);
  }

  void add_token(const std::string& t) {
    if (ids_.count(t)) return;
    ids_[t] = static_cast<int>(tokens_.size());
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// [CLS] + word ids truncated to max_len-2 + [SEP]. Padding and attention
// masks are the batching collator's job, not the encoder input's.
inline std::vector<int> encode_hypothesis(const Vocabulary& vocab,
                                          const Words& words,
                                          std::size_t max_len) {
  if (max_len < 3) {
    throw ConfigError(strcat("encode_hypothesis: max_len must be >= 3, got ",
                             max_len));
  }
  std::vector<int> ids;
  ids.reserve(std::min(words.size() + 2, max_len));
  ids.push_back(Vocabulary::kCls);
  const std::size_t keep = std::min(words.size(), max_len - 2);
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(vocab.id(words[i]));
  ids.push_back(Vocabulary::kSep);
  return ids;
}

}  // namespace lorb

#endif  // LORB_VOCAB_HPP_
