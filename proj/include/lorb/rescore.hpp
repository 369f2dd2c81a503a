#ifndef LORB_RESCORE_HPP_
#define LORB_RESCORE_HPP_

#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorb/encoder.hpp"
#include "lorb/nbest.hpp"
#include "lorb/vocab.hpp"

namespace lorb {

struct RescoreParams {
  double beta = 1.0;  // weight of the second-pass score

  void validate() const {
    if (!std::isfinite(beta)) {
      throw ConfigError("rescore: beta must be finite");
    }
  }
};

// s_i = s_a + beta * s_l. Both scores are negative log likelihoods.
inline double combine_scores(double s_a, double s_l, const RescoreParams& p) {
  p.validate();
  if (!std::isfinite(s_a) || !std::isfinite(s_l)) {
    throw NumericError(strcat("combine_scores: non-finite input (", s_a, ", ",
                              s_l, ")"));
  }
  return s_a + p.beta * s_l;
}

// argmin with stable lowest-index tie break.
inline std::size_t select_best(std::span<const double> scores) {
  if (scores.empty()) throw DimensionError("select_best: empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] < scores[best]) best = i;
  }
  return best;
}

struct UtteranceResult {
  std::string utt_id;
  std::size_t selected = 0;
  int errors = 0;
  std::size_t ref_words = 0;
};

struct WerResult {
  double wer = 0.0;
  long long errors = 0;
  long long ref_words = 0;
  std::vector<UtteranceResult> per_utterance;
};

inline WerResult corpus_wer(const std::vector<std::size_t>& selections,
                            const Dataset& data) {
  if (data.empty()) throw ConfigError("corpus_wer: empty dataset");
  if (selections.size() != data.size()) {
    throw DimensionError(strcat("corpus_wer: ", selections.size(),
                                " selections for ", data.size(),
                                " utterances"));
  }
  WerResult r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const NBestList& list = data[i];
    if (selections[i] >= list.hypotheses.size()) {
      throw DimensionError(strcat("corpus_wer: selection ", selections[i],
                                  " out of range for '", list.utt_id, "'"));
    }
    const Hypothesis& hyp = list.hypotheses[selections[i]];
    const int errs = hyp.word_errors
                         ? *hyp.word_errors
                         : word_error_count(hyp.words, list.reference);
    r.errors += errs;
    r.ref_words += static_cast<long long>(list.reference.size());
    r.per_utterance.push_back(
        {list.utt_id, selections[i], errs, list.reference.size()});
  }
  r.wer = r.ref_words == 0
              ? 0.0
              : static_cast<double>(r.errors) / static_cast<double>(r.ref_words);
  return r;
}

inline std::vector<std::size_t> first_pass_selection(const Dataset& data) {
  std::vector<std::size_t> sel;
  sel.reserve(data.size());
  for (const NBestList& list : data) {
    std::vector<double> scores;
    scores.reserve(list.hypotheses.size());
    for (const Hypothesis& h : list.hypotheses) {
      scores.push_back(h.first_pass_score);
    }
    sel.push_back(select_best(scores));
  }
  return sel;
}

inline std::vector<std::size_t> oracle_selection(const Dataset& data) {
  std::vector<std::size_t> sel;
  sel.reserve(data.size());
  for (const NBestList& list : data) sel.push_back(list.oracle_index());
  return sel;
}

// Eval-mode second-pass scores for every hypothesis in the dataset.
inline std::vector<std::vector<double>> second_pass_scores(
    const ScoringModel& model, const Vocabulary& vocab, const Dataset& data) {
  std::vector<std::vector<double>> out;
  out.reserve(data.size());
  const std::size_t max_len =
      static_cast<std::size_t>(model.config().max_seq_len);
  for (const NBestList& list : data) {
    std::vector<double> scores;
    scores.reserve(list.hypotheses.size());
    for (const Hypothesis& h : list.hypotheses) {
      scores.push_back(
          model.score_value(encode_hypothesis(vocab, h.words, max_len)));
    }
    out.push_back(std::move(scores));
  }
  return out;
}

inline std::vector<std::size_t> rescored_selection(
    const Dataset& data, const std::vector<std::vector<double>>& s_l,
    const RescoreParams& p) {
  std::vector<std::size_t> sel;
  sel.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> combined;
    combined.reserve(data[i].hypotheses.size());
    for (std::size_t j = 0; j < data[i].hypotheses.size(); ++j) {
      combined.push_back(
          combine_scores(data[i].hypotheses[j].first_pass_score, s_l[i][j], p));
    }
    sel.push_back(select_best(combined));
  }
  return sel;
}

inline WerResult evaluate_model_wer(const ScoringModel& model,
                                    const Vocabulary& vocab,
                                    const Dataset& data, double beta) {
  const auto s_l = second_pass_scores(model, vocab, data);
  return corpus_wer(rescored_selection(data, s_l, RescoreParams{beta}), data);
}

struct BetaSweepResult {
  double best_beta = 0.0;
  double best_wer = 0.0;
  std::vector<std::pair<double, double>> grid;  // (beta, wer)
};

// Picks the grid beta minimizing dev WER; ties go to the smaller beta.
// Second-pass scores are computed once and reused across the grid.
inline BetaSweepResult sweep_beta(const ScoringModel& model,
                                  const Vocabulary& vocab, const Dataset& dev,
                                  std::vector<double> grid) {
  if (grid.empty()) throw ConfigError("sweep_beta: empty grid");
  std::sort(grid.begin(), grid.end());
  const auto s_l = second_pass_scores(model, vocab, dev);
  BetaSweepResult result;
  bool first = true;
  for (double beta : grid) {
    const WerResult wr =
        corpus_wer(rescored_selection(dev, s_l, RescoreParams{beta}), dev);
    result.grid.emplace_back(beta, wr.wer);
    if (first || wr.wer < result.best_wer) {
      result.best_beta = beta;
      result.best_wer = wr.wer;
      first = false;
    }
  }
  return result;
}

// ---- reports ---------------------------------------------------------------

struct DomainEval {
  std::string domain;
  double wer = 0.0;
  long long errors = 0;
  long long ref_words = 0;
  // Relative improvement vs the named baseline, absent for the baseline row.
  std::optional<double> werr_vs_base;
};

struct EvalReport {
  std::vector<DomainEval> domains;
  std::string baseline_name;
  double trainable_fraction = 1.0;
  double wall_clock_seconds = 0.0;  // reported via the run manifest
  std::string config_digest;
};

// WERR = (WER_base - WER) / WER_base.
inline double relative_wer_improvement(double wer_base, double wer) {
  if (wer_base == 0.0) return 0.0;
  return (wer_base - wer) / wer_base;
}

// Deterministic payload: timing lives in the manifest, not the report.
inline nlohmann::json eval_report_json(const EvalReport& r) {
  nlohmann::json domains = nlohmann::json::array();
  for (const DomainEval& d : r.domains) {
    nlohmann::json jd = {{"domain", d.domain},
                         {"wer", d.wer},
                         {"errors", d.errors},
                         {"ref_words", d.ref_words}};
    if (d.werr_vs_base) {
      jd["werr_vs_base"] = *d.werr_vs_base;
    } else {
      jd["werr_vs_base"] = nullptr;
    }
    domains.push_back(jd);
  }
  return {{"domains", domains},
          {"baseline", r.baseline_name},
          {"trainable_fraction", r.trainable_fraction},
          {"config_digest", r.config_digest}};
}

// Aligned plain-text table; columns: domain, WER, WERR, delta-params%.
inline std::string eval_report_table(const EvalReport& r) {
  std::ostringstream oss;
  oss << std::left << std::setw(22) << "domain" << std::right << std::setw(10)
      << "WER" << std::setw(10) << "WERR" << std::setw(12) << "Δ-params%"
      << "\n";
  for (const DomainEval& d : r.domains) {
    oss << std::left << std::setw(22) << d.domain << std::right
        << std::setw(10) << std::fixed << std::setprecision(4) << d.wer;
    if (d.werr_vs_base) {
      oss << std::setw(9) << std::setprecision(2) << (*d.werr_vs_base * 100.0)
          << "%";
    } else {
      oss << std::setw(10) << "-";
    }
    oss << std::setw(11) << std::setprecision(3)
        << (r.trainable_fraction * 100.0) << "\n";
  }
  if (!r.baseline_name.empty()) {
    oss << "baseline: " << r.baseline_name << "\n";
  }
  return oss.str();
}

}  // namespace lorb

#endif  // LORB_RESCORE_HPP_
