#ifndef LORB_TRAINER_HPP_
#define LORB_TRAINER_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lorb/checkpoint.hpp"
#include "lorb/encoder.hpp"
#include "lorb/losses.hpp"
#include "lorb/peft.hpp"
#include "lorb/rescore.hpp"
#include "lorb/vocab.hpp"

namespace lorb {

struct TrainConfig {
  AdaptationConfig method;
  double lr = 1e-3;
  int warmup_steps = 50;
  int max_steps = 300;
  int batch_utterances = 8;
  int nbest_depth = 4;
  double beta = 1.0;       // fixed during training; retune via sweep_beta after
  double lambda = 0.01;    // regularizer weight
  int patience = 5;        // evaluations without improvement before stopping
  std::uint64_t seed = 0;
  int eval_every = 50;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (warmup_steps < 0 || warmup_steps > max_steps) {
      throw ConfigError(strcat("train: warmup ", warmup_steps,
                               " must lie in [0, max_steps=", max_steps, "]"));
    }
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    if (batch_utterances < 1) throw ConfigError("train: batch must be >= 1");
    if (nbest_depth < 1) throw ConfigError("train: nbest_depth must be >= 1");
    if (lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
  }
};

// Linear warmup from zero over warmup steps, constant afterwards; t is
// 1-based.
inline double warmup_lr(double lr, int warmup_steps, int t) {
  if (warmup_steps <= 0) return lr;
  return lr * std::min(1.0, static_cast<double>(t) /
                                static_cast<double>(warmup_steps));
}

struct TrainReport {
  std::vector<std::pair<int, double>> loss_curve;     // (step, loss)
  std::vector<std::pair<int, double>> dev_wer_curve;  // (step, dev WER)
  int best_step = 0;
  double best_dev_wer = std::numeric_limits<double>::infinity();
  double initial_dev_wer = 0.0;
  int steps_run = 0;
  bool diverged = false;
  int diverged_step = -1;
  double wall_clock_seconds = 0.0;  // reported via the run manifest
};

struct TrainResult {
  ScoringModel model;  // checkpoint with the minimum dev WER
  TrainReport report;
};

inline nlohmann::json train_report_json(const TrainReport& r) {
  nlohmann::json loss = nlohmann::json::array();
  for (const auto& [step, v] : r.loss_curve) loss.push_back({{"step", step}, {"loss", v}});
  nlohmann::json dev = nlohmann::json::array();
  for (const auto& [step, v] : r.dev_wer_curve) dev.push_back({{"step", step}, {"dev_wer", v}});
  return {{"loss_curve", loss},
          {"dev_wer_curve", dev},
          {"best_step", r.best_step},
          {"best_dev_wer", r.best_dev_wer},
          {"initial_dev_wer", r.initial_dev_wer},
          {"steps_run", r.steps_run},
          {"diverged", r.diverged},
          {"diverged_step", r.diverged_step}};
}

// CSV rows: step,loss,dev_wer (dev_wer empty between evaluations).
inline std::string train_report_csv(const TrainReport& r) {
  std::map<int, double> dev(r.dev_wer_curve.begin(), r.dev_wer_curve.end());
  std::ostringstream oss;
  oss << "step,loss,dev_wer\n";
  if (dev.count(0)) oss << "0,," << dev.at(0) << "\n";
  for (const auto& [step, loss] : r.loss_curve) {
    oss << step << "," << loss << ",";
    if (dev.count(step)) oss << dev.at(step);
    oss << "\n";
  }
  return oss.str();
}

namespace train_detail {

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update over the trainable parameters, sorted-name order.
  void step(ScoringModel& model, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, p] : model.trainable_parameters()) {
      if (!p.has_grad()) continue;  // unused this step
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) m.assign(p.size(), 0.0);
      if (v.empty()) v.assign(p.size(), 0.0);
      const std::vector<double>& g = p.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

// Snapshot of the frozen parameters, for the post-step audit.
inline std::map<std::string, std::vector<double>> frozen_snapshot(
    const ScoringModel& model) {
  std::map<std::string, std::vector<double>> snap;
  for (const auto& [name, t] : model.parameters()) {
    if (!t.requires_grad()) snap.emplace(name, t.values());
  }
  return snap;
}

inline void audit_frozen(const ScoringModel& model,
                         const std::map<std::string, std::vector<double>>& snap,
                         int step) {
  for (const auto& [name, values] : snap) {
    if (model.parameter(name).values() != values) {
      throw std::logic_error(strcat("freeze contract violated at step ", step,
                                    ": parameter '", name, "' changed"));
    }
  }
}

}  // namespace train_detail

// MWER fine-tuning with linear warmup, early stopping on dev WER, and a
// frozen-parameter audit at every evaluation. Divergence (NaN loss) aborts
// the run and is recorded in the report rather than thrown.
inline TrainResult train(const ScoringModel& base, const Vocabulary& vocab,
                         const Dataset& train_data, const Dataset& dev_data,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_data.empty()) throw ConfigError("train: empty training set");
  if (dev_data.empty()) throw ConfigError("train: empty dev set");

  ScoringModel model = base.clone();
  if (!model.adaptation()) {
    attach_method(model, cfg.method);
  } else if (model.adaptation()->method != cfg.method.method) {
    throw ConfigError(strcat("train: model has '",
                             method_name(model.adaptation()->method),
                             "' attached but config asks for '",
                             method_name(cfg.method.method), "'"));
  }

  const auto t_start = std::chrono::steady_clock::now();
  const auto frozen = train_detail::frozen_snapshot(model);
  train_detail::AdamOptimizer adam;
  RngStream root(cfg.seed);
  RngStream shuffle_rng = root.split(0x5f1eull);

  TrainReport report;
  auto eval_dev = [&](const ScoringModel& m) {
    return evaluate_model_wer(m, vocab, dev_data, cfg.beta).wer;
  };

  report.initial_dev_wer = eval_dev(model);
  report.dev_wer_curve.emplace_back(0, report.initial_dev_wer);
  report.best_dev_wer = report.initial_dev_wer;
  report.best_step = 0;
  ScoringModel best = model.clone();
  int evals_without_improvement = 0;

  const std::size_t max_len =
      static_cast<std::size_t>(model.config().max_seq_len);
  std::vector<std::size_t> order(train_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  auto reshuffle = [&]() {
    RngStream r = shuffle_rng.split(epoch++);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[r.next_below(i)]);
    }
    cursor = 0;
  };
  reshuffle();

  for (int step = 1; step <= cfg.max_steps; ++step) {
    Tape tape;
    RngStream dropout_rng = root.split(0xd0000000ull + step);
    MwerBatch batch;
    std::vector<Tensor> cls_rows;
    Tensor loss;
    double loss_value = 0.0;
    try {
      const std::size_t take = std::min<std::size_t>(
          static_cast<std::size_t>(cfg.batch_utterances), train_data.size());
      for (std::size_t b = 0; b < take; ++b) {
        if (cursor >= order.size()) reshuffle();
        const NBestList& list = train_data[order[cursor++]];
        MwerUtterance utt;
        const std::size_t depth = std::min<std::size_t>(
            static_cast<std::size_t>(cfg.nbest_depth), list.hypotheses.size());
        for (std::size_t h = 0; h < depth; ++h) {
          const Hypothesis& hyp = list.hypotheses[h];
          const std::vector<int> ids =
              encode_hypothesis(vocab, hyp.words, max_len);
          auto [s_l, cls] = model.score(tape, ids, {}, true, &dropout_rng);
          utt.scores.push_back(
              tape.shift(tape.scale(s_l, cfg.beta), hyp.first_pass_score));
          utt.word_errors.push_back(hyp.word_errors.value());
          cls_rows.push_back(cls);
        }
        batch.utterances.push_back(std::move(utt));
      }

      RegularizerConfig reg;
      reg.lambda = cfg.lambda;
      if (cfg.lambda > 0.0 && cls_rows.size() >= 2) {
        loss = combined_loss(tape, batch, tape.stack_rows(cls_rows), reg);
      } else {
        loss = mwer_loss(tape, batch);
      }
      loss_value = loss.item();
    } catch (const NumericError&) {
      loss_value = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(loss_value)) {
      report.diverged = true;
      report.diverged_step = step;
      break;
    }
    report.loss_curve.emplace_back(step, loss_value);
    tape.backward(loss);
    adam.step(model, warmup_lr(cfg.lr, cfg.warmup_steps, step));
    model.clear_grads();
    report.steps_run = step;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      train_detail::audit_frozen(model, frozen, step);
      double dev_wer;
      try {
        dev_wer = eval_dev(model);
      } catch (const NumericError&) {
        report.diverged = true;
        report.diverged_step = step;
        break;
      }
      report.dev_wer_curve.emplace_back(step, dev_wer);
      if (dev_wer < report.best_dev_wer) {
        report.best_dev_wer = dev_wer;
        report.best_step = step;
        best = model.clone();
        evals_without_improvement = 0;
      } else {
        ++evals_without_improvement;
        if (evals_without_improvement >= cfg.patience) break;
      }
    }
  }

  train_detail::audit_frozen(model, frozen, report.steps_run);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return {std::move(best), std::move(report)};
}

// Stand-in for a pretrained checkpoint: full fine-tuning with the plain MWER
// objective on a broad multi-domain mixture. Divergence here is an error,
// unlike in train().
inline TrainResult pretrain_proxy(const ScoringModel& model,
                                  const Vocabulary& vocab,
                                  const Dataset& mixture, const Dataset& dev,
                                  int steps, std::uint64_t seed = 0,
                                  double lr = 1e-3) {
  if (mixture.empty()) throw ConfigError("pretrain_proxy: empty corpus");
  if (steps == 0) {
    ScoringModel copy = model.clone();
    TrainReport report;
    report.initial_dev_wer = evaluate_model_wer(copy, vocab, dev, 1.0).wer;
    report.best_dev_wer = report.initial_dev_wer;
    return {std::move(copy), report};
  }
  TrainConfig cfg;
  cfg.method.method = Method::kFullFinetune;
  cfg.lr = lr;
  cfg.max_steps = steps;
  cfg.warmup_steps = std::min(50, steps);
  cfg.lambda = 0.0;
  cfg.seed = seed;
  cfg.eval_every = std::max(1, steps / 6);
  cfg.patience = 1000;  // proxy pretraining runs to its step budget
  TrainResult result = train(model, vocab, mixture, dev, cfg);
  if (result.report.diverged) {
    throw NumericError(strcat("pretrain_proxy: loss diverged at step ",
                              result.report.diverged_step));
  }
  return result;
}

}  // namespace lorb

#endif  // LORB_TRAINER_HPP_
