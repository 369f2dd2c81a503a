#ifndef LORB_LOSSES_HPP_
#define LORB_LOSSES_HPP_

#include <cmath>
#include <vector>

#include "lorb/tensor.hpp"

namespace lorb {

// One utterance's contribution to the discriminative loss: n differentiable
// combined scores and their fixed word-error counts.
struct MwerUtterance {
  std::vector<Tensor> scores;    // each a scalar tensor
  std::vector<int> word_errors;  // epsilon_i >= 0
};

struct MwerBatch {
  std::vector<MwerUtterance> utterances;

  void validate() const {
    if (utterances.empty()) {
      throw DimensionError("mwer_loss: empty batch");
    }
    for (const MwerUtterance& u : utterances) {
      if (u.scores.empty() || u.scores.size() != u.word_errors.size()) {
        throw DimensionError(
            strcat("mwer_loss: utterance needs matching scores/errors, got ",
                   u.scores.size(), " vs ", u.word_errors.size()));
      }
      for (const Tensor& s : u.scores) {
        if (s.size() != 1) {
          throw DimensionError("mwer_loss: scores must be scalars");
        }
        if (!std::isfinite(s.item())) {
          throw NumericError("mwer_loss: non-finite score");
        }
      }
      for (int e : u.word_errors) {
        if (e < 0) throw DimensionError("mwer_loss: negative word error count");
      }
    }
  }
};

struct RegularizerConfig {
  double lambda = 0.01;
  double variance_floor = 1e-8;
};

// Expected word errors above the list mean, averaged over utterances:
// per utterance P = softmax(-s), eps_bar = mean(eps),
// loss_u = sum_i P_i (eps_i - eps_bar).
inline Tensor mwer_loss(Tape& tape, const MwerBatch& batch) {
  batch.validate();
  Tensor total;
  for (const MwerUtterance& u : batch.utterances) {
    const std::size_t n = u.scores.size();
    Tensor s = tape.concat(u.scores);
    Tensor p = tape.softmax_neg(s);
    double eps_bar = 0.0;
    for (int e : u.word_errors) eps_bar += e;
    eps_bar /= static_cast<double>(n);
    std::vector<double> centered(n);
    for (std::size_t i = 0; i < n; ++i) {
      centered[i] = static_cast<double>(u.word_errors[i]) - eps_bar;
    }
    Tensor w = Tensor::from_values({n}, std::move(centered));
    Tensor lu = tape.sum(tape.mul(p, w));
    total = total.defined() ? tape.add(total, lu) : lu;
  }
  return tape.scale(total, 1.0 / static_cast<double>(batch.utterances.size()));
}

// Frobenius distance between the Pearson correlation matrix of the rows'
// dimensions and the identity. The variance floor keeps constant columns
// finite; it also makes the diagonal contribute (negligibly) less than one.
inline Tensor correlation_loss(Tape& tape, const Tensor& cls_batch,
                               const RegularizerConfig& cfg) {
  if (cls_batch.rank() != 2) {
    throw DimensionError(strcat("correlation_loss: expected [n,d], got ",
                                shape_str(cls_batch.shape())));
  }
  const std::size_t n = cls_batch.dim(0), d = cls_batch.dim(1);
  if (n < 2) {
    throw DimensionError(
        "correlation_loss: needs at least two rows; skip the regularizer "
        "for singleton batches");
  }
  Tensor mu = tape.mean_rows(cls_batch);
  Tensor centered =
      tape.add_row_broadcast(cls_batch, tape.scale(mu, -1.0));
  Tensor cov = tape.scale(tape.matmul(tape.transpose(centered), centered),
                          1.0 / static_cast<double>(n));
  Tensor inv_sd = tape.rsqrt(tape.shift(tape.diag(cov), cfg.variance_floor));
  Tensor corr = tape.mul(cov, tape.outer(inv_sd, inv_sd));
  Tensor eye = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) eye.data()[i * d + i] = 1.0;
  Tensor diff = tape.sub(corr, eye);
  return tape.sqrt(tape.sum(tape.mul(diff, diff)));
}

// L = L_MWER + lambda * L_cor. lambda == 0 degenerates to the MWER loss
// exactly. The regularizer is a function of the [CLS] batch only, so its
// gradient reaches just the parameters upstream of those vectors; the
// scoring head sees no regularizer gradient.
inline Tensor combined_loss(Tape& tape, const MwerBatch& batch,
                            const Tensor& cls_batch,
                            const RegularizerConfig& cfg) {
  Tensor mwer = mwer_loss(tape, batch);
  if (cfg.lambda == 0.0) return mwer;
  return tape.add(mwer, tape.scale(correlation_loss(tape, cls_batch, cfg),
                                   cfg.lambda));
}

}  // namespace lorb

#endif  // LORB_LOSSES_HPP_
