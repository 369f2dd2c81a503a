#ifndef LORB_NBEST_HPP_
#define LORB_NBEST_HPP_

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lorb/errors.hpp"
#include "lorb/wer.hpp"

namespace lorb {

// One first-pass hypothesis. Scores are negative log likelihoods: lower is
// more likely. word_errors is the edit distance to the reference once known.
struct Hypothesis {
  Words words;
  double first_pass_score = 0.0;
  std::optional<int> word_errors;

  std::string text() const { return join_words(words); }
};

struct NBestList {
  std::string utt_id;
  Words reference;
  std::vector<Hypothesis> hypotheses;

  // Index of the lowest-error hypothesis (stable lowest-index tie break).
  std::size_t oracle_index() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hypotheses.size(); ++i) {
      if (hypotheses[i].word_errors.value() <
          hypotheses[best].word_errors.value()) {
        best = i;
      }
    }
    return best;
  }
};

using Dataset = std::vector<NBestList>;

inline void validate_nbest(const NBestList& list) {
  if (list.hypotheses.empty()) {
    throw ParseError(strcat("utterance '", list.utt_id,
                            "': N-best list must hold at least one hypothesis"));
  }
  for (const Hypothesis& h : list.hypotheses) {
    if (!std::isfinite(h.first_pass_score)) {
      throw NumericError(strcat("utterance '", list.utt_id,
                                "': non-finite first-pass score"));
    }
  }
}

// Fills word_errors for every hypothesis against the list's reference.
inline void fill_word_errors(NBestList& list) {
  for (Hypothesis& h : list.hypotheses) {
    h.word_errors = word_error_count(h.words, list.reference);
  }
}

}  // namespace lorb

#endif  // LORB_NBEST_HPP_
