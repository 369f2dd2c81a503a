#ifndef LORB_ENCODER_HPP_
#define LORB_ENCODER_HPP_

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lorb/errors.hpp"
#include "lorb/rng.hpp"
#include "lorb/tensor.hpp"

namespace lorb {

struct EncoderConfig {
  int layers = 4;
  int model_dim = 64;
  int heads = 4;
  int ffn_dim = 128;
  int max_seq_len = 32;
  int vocab_size = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (layers < 1 || model_dim < 2 || heads < 1 || ffn_dim < 1 ||
        max_seq_len < 3 || vocab_size < 5) {
      throw ConfigError("encoder config: all dimensions must be positive "
                        "(model_dim >= 2, max_seq_len >= 3, vocab_size >= 5)");
    }
    if (model_dim % heads != 0) {
      throw ConfigError(strcat("encoder config: model_dim ", model_dim,
                               " not divisible by heads ", heads));
    }
    if (model_dim % 2 != 0) {
      throw ConfigError("encoder config: model_dim must be even");
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Weight matrices LoRA can host. W_o is selectable but not in either
// default target set.
enum class TargetMatrix { kQuery, kKey, kValue, kOutput, kFfnIn, kFfnOut };

inline const char* target_suffix(TargetMatrix t) {
  switch (t) {
    case TargetMatrix::kQuery: return "attn.wq";
    case TargetMatrix::kKey: return "attn.wk";
    case TargetMatrix::kValue: return "attn.wv";
    case TargetMatrix::kOutput: return "attn.wo";
    case TargetMatrix::kFfnIn: return "ffn.w1";
    case TargetMatrix::kFfnOut: return "ffn.w2";
  }
  throw ConfigError("unknown target matrix");
}

inline std::string target_short_name(TargetMatrix t) {
  switch (t) {
    case TargetMatrix::kQuery: return "q";
    case TargetMatrix::kKey: return "k";
    case TargetMatrix::kValue: return "v";
    case TargetMatrix::kOutput: return "o";
    case TargetMatrix::kFfnIn: return "f1";
    case TargetMatrix::kFfnOut: return "f2";
  }
  throw ConfigError("unknown target matrix");
}

inline TargetMatrix parse_target(const std::string& s) {
  if (s == "q") return TargetMatrix::kQuery;
  if (s == "k") return TargetMatrix::kKey;
  if (s == "v") return TargetMatrix::kValue;
  if (s == "o") return TargetMatrix::kOutput;
  if (s == "f1") return TargetMatrix::kFfnIn;
  if (s == "f2") return TargetMatrix::kFfnOut;
  throw ConfigError(strcat("unknown LoRA target '", s,
                           "' (expected q,k,v,o,f1,f2)"));
}

struct LoraConfig {
  int rank = 8;
  double alpha = 32.0;
  double dropout = 0.01;
  std::vector<TargetMatrix> targets = {TargetMatrix::kQuery,
                                       TargetMatrix::kValue};
};

struct AdapterConfig {
  int bottleneck = 0;  // 0 means model_dim / 2
};

enum class Method { kFullFinetune, kLora, kBitFit, kAdapter };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kFullFinetune: return "full-ft";
    case Method::kLora: return "lora";
    case Method::kBitFit: return "bitfit";
    case Method::kAdapter: return "adapter";
  }
  throw ConfigError("unknown method");
}

inline Method parse_method(const std::string& s) {
  if (s == "ft" || s == "full-ft") return Method::kFullFinetune;
  if (s == "lora") return Method::kLora;
  if (s == "bitfit") return Method::kBitFit;
  if (s == "adapter") return Method::kAdapter;
  throw ConfigError(strcat("unknown method '", s,
                           "' (expected ft, lora, bitfit, adapter)"));
}

struct AdaptationConfig {
  Method method = Method::kFullFinetune;
  LoraConfig lora;
  AdapterConfig adapter;
};

struct EncodeOutput {
  Tensor hidden;  // [T, d]
  Tensor cls;     // [d]
};

// BERT-style encoder plus scoring head. Parameters live in a name-keyed
// registry; the frozen state of a parameter is !requires_grad. Forward is
// pure given the weights; training mutates one model exclusively.
class ScoringModel {
 public:
  ScoringModel() = default;

  static ScoringModel init(EncoderConfig cfg) {
    cfg.validate();
    ScoringModel m;
    m.cfg_ = cfg;
    RngStream root(cfg.seed);
    const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
    const std::size_t f = static_cast<std::size_t>(cfg.ffn_dim);
    const std::size_t v = static_cast<std::size_t>(cfg.vocab_size);

    m.add_normal("embedding", {v, d}, root);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = layer_prefix(l);
      for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
        m.add_normal(p + w, {d, d}, root);
      }
      for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
        m.add_const(p + b, {d}, 0.0);
      }
      m.add_const(p + "ln1.gain", {d}, 1.0);
      m.add_const(p + "ln1.bias", {d}, 0.0);
      m.add_normal(p + "ffn.w1", {f, d}, root);
      m.add_const(p + "ffn.b1", {f}, 0.0);
      m.add_normal(p + "ffn.w2", {d, f}, root);
      m.add_const(p + "ffn.b2", {d}, 0.0);
      m.add_const(p + "ln2.gain", {d}, 1.0);
      m.add_const(p + "ln2.bias", {d}, 0.0);
    }
    const std::size_t h = d / 2;
    m.add_normal("head.w1", {h, d}, root);
    m.add_const("head.b1", {h}, 0.0);
    m.add_normal("head.w2", {1, h}, root);
    m.add_const("head.b2", {1}, 0.0);
    return m;
  }

  static std::string layer_prefix(int l) {
    return strcat("layer", l < 10 ? "0" : "", l, ".");
  }

  const EncoderConfig& config() const { return cfg_; }

  // ---- registry ----------------------------------------------------------

  const std::map<std::string, Tensor>& parameters() const { return params_; }

  Tensor parameter(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw ConfigError(strcat("model has no parameter '", name, "'"));
    }
    return it->second;
  }

  bool has_parameter(const std::string& name) const {
    return params_.count(name) > 0;
  }

  void insert_parameter(const std::string& name, Tensor t) {
    if (params_.count(name)) {
      throw ConfigError(strcat("parameter '", name, "' already exists"));
    }
    params_.emplace(name, std::move(t));
  }

  void remove_parameter(const std::string& name) { params_.erase(name); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  std::size_t trainable_parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) {
      if (t.requires_grad()) n += t.size();
    }
    return n;
  }

  // Trainable tensors in sorted-name order; the optimizer's iteration order.
  std::vector<std::pair<std::string, Tensor>> trainable_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : params_) {
      if (t.requires_grad()) out.emplace_back(name, t);
    }
    return out;
  }

  void set_all_trainable(bool trainable) {
    for (auto& [name, t] : params_) t.set_requires_grad(trainable);
  }

  // Marks exactly the parameters whose name satisfies pred as trainable.
  template <typename Pred>
  void set_trainable_where(Pred pred) {
    for (auto& [name, t] : params_) t.set_requires_grad(pred(name));
  }

  void clear_grads() {
    for (auto& [name, t] : params_) t.clear_grad();
  }

  std::optional<AdaptationConfig>& adaptation() { return adaptation_; }
  const std::optional<AdaptationConfig>& adaptation() const {
    return adaptation_;
  }

  ScoringModel clone() const {
    ScoringModel m;
    m.cfg_ = cfg_;
    m.adaptation_ = adaptation_;
    for (const auto& [name, t] : params_) m.params_.emplace(name, t.clone());
    return m;
  }

  // ---- forward -------------------------------------------------------------

  // Token ids -> final hidden states and the [CLS] vector. valid_mask marks
  // real positions (1) vs [PAD] (0); empty means all positions are real.
  EncodeOutput encode(Tape& tape, std::span<const int> ids,
                      std::span<const std::uint8_t> valid_mask = {},
                      bool training = false,
                      RngStream* dropout_rng = nullptr) const {
    const std::size_t t = ids.size();
    if (t == 0) throw DimensionError("encode: empty token sequence");
    if (t > static_cast<std::size_t>(cfg_.max_seq_len)) {
      throw DimensionError(strcat("encode: sequence length ", t,
                                  " exceeds max ", cfg_.max_seq_len));
    }
    if (!valid_mask.empty() && valid_mask.size() != t) {
      throw DimensionError("encode: mask length does not match sequence");
    }
    Tensor x = tape.embed(parameter("embedding"), ids);
    x = tape.add(x, positional_encoding(t));

    Tensor mask_bias;  // undefined when nothing is masked
    if (!valid_mask.empty()) {
      bool any_pad = false;
      for (std::uint8_t m : valid_mask) any_pad = any_pad || (m == 0);
      if (any_pad) {
        mask_bias = Tensor::zeros({t, t});
        for (std::size_t i = 0; i < t; ++i) {
          for (std::size_t j = 0; j < t; ++j) {
            if (valid_mask[j] == 0) mask_bias.data()[i * t + j] = kMaskedLogit;
          }
        }
      }
    }

    for (int l = 0; l < cfg_.layers; ++l) {
      x = layer_forward(tape, x, l, mask_bias, training, dropout_rng);
    }
    Tensor cls = tape.select_row(x, 0);
    return {x, cls};
  }

  // Two-layer FFNN head: d -> d/2, tanh, -> 1. Lower score = more likely.
  Tensor score_head(Tape& tape, const Tensor& g_cls) const {
    if (g_cls.rank() != 1 ||
        g_cls.size() != static_cast<std::size_t>(cfg_.model_dim)) {
      throw DimensionError(strcat("score_head: expected [", cfg_.model_dim,
                                  "], got ", shape_str(g_cls.shape())));
    }
    Tensor row = tape.stack_rows({g_cls});  // [1, d]
    Tensor h = tape.tanh(tape.add_row_broadcast(
        tape.matmul_nt(row, parameter("head.w1")), parameter("head.b1")));
    Tensor s = tape.add_row_broadcast(tape.matmul_nt(h, parameter("head.w2")),
                                      parameter("head.b2"));
    return tape.select_row(s, 0);  // scalar [1]
  }

  // encode + head in one go; returns (score, cls).
  std::pair<Tensor, Tensor> score(Tape& tape, std::span<const int> ids,
                                  std::span<const std::uint8_t> valid_mask = {},
                                  bool training = false,
                                  RngStream* dropout_rng = nullptr) const {
    EncodeOutput enc = encode(tape, ids, valid_mask, training, dropout_rng);
    return {score_head(tape, enc.cls), enc.cls};
  }

  // Eval-mode scalar score on a fresh no-grad tape.
  double score_value(std::span<const int> ids) const {
    Tape tape(false);
    return score(tape, ids).first.item();
  }

 private:
  static constexpr double kMaskedLogit = -1e30;

  void add_normal(const std::string& name, Shape shape, RngStream& root) {
    RngStream rng = root.split(fnv1a(name));
    params_.emplace(name, Tensor::randn(std::move(shape), rng, kInitStd, true));
  }

  void add_const(const std::string& name, Shape shape, double v) {
    params_.emplace(name, Tensor::full(std::move(shape), v, true));
  }

  Tensor positional_encoding(std::size_t t) const {
    const std::size_t d = static_cast<std::size_t>(cfg_.model_dim);
    Tensor pe = Tensor::zeros({t, d});
    for (std::size_t pos = 0; pos < t; ++pos) {
      for (std::size_t i = 0; i < d / 2; ++i) {
        const double freq =
            std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                  static_cast<double>(d));
        pe.data()[pos * d + 2 * i] = std::sin(static_cast<double>(pos) * freq);
        pe.data()[pos * d + 2 * i + 1] =
            std::cos(static_cast<double>(pos) * freq);
      }
    }
    return pe;
  }

  bool lora_targets(const std::string& wname) const {
    if (!adaptation_ || adaptation_->method != Method::kLora) return false;
    for (TargetMatrix t : adaptation_->lora.targets) {
      if (wname.size() > 8 && wname.substr(8) == target_suffix(t)) return true;
    }
    return false;
  }

  // h = W0 x + b, plus the scaled LoRA branch when this matrix is targeted:
  // h += (alpha/r) * W_B (W_A dropout(x)).
  Tensor project(Tape& tape, const Tensor& x, const std::string& wname,
                 const std::string& bname, bool training,
                 RngStream* dropout_rng) const {
    Tensor y = tape.add_row_broadcast(tape.matmul_nt(x, parameter(wname)),
                                      parameter(bname));
    if (lora_targets(wname)) {
      const LoraConfig& lc = adaptation_->lora;
      Tensor xin = x;
      if (training && lc.dropout > 0.0 && dropout_rng != nullptr) {
        xin = tape.dropout(x, lc.dropout, *dropout_rng);
      }
      Tensor low = tape.matmul_nt(xin, parameter(wname + ".lora_a"));
      Tensor up = tape.matmul_nt(low, parameter(wname + ".lora_b"));
      y = tape.add(y, tape.scale(up, lc.alpha / lc.rank));
    }
    return y;
  }

  // Houlsby-style bottleneck with internal skip: z + up(gelu(down(z))).
  Tensor adapter_forward(Tape& tape, const Tensor& z,
                         const std::string& prefix) const {
    Tensor down = tape.add_row_broadcast(
        tape.matmul_nt(z, parameter(prefix + ".down_w")),
        parameter(prefix + ".down_b"));
    Tensor up = tape.add_row_broadcast(
        tape.matmul_nt(tape.gelu(down), parameter(prefix + ".up_w")),
        parameter(prefix + ".up_b"));
    return tape.add(z, up);
  }

  Tensor attention(Tape& tape, const Tensor& x, const std::string& p,
                   const Tensor& mask_bias, bool training,
                   RngStream* dropout_rng) const {
    const std::size_t d = static_cast<std::size_t>(cfg_.model_dim);
    const std::size_t nh = static_cast<std::size_t>(cfg_.heads);
    const std::size_t dh = d / nh;
    Tensor q = project(tape, x, p + "attn.wq", p + "attn.bq", training, dropout_rng);
    Tensor k = project(tape, x, p + "attn.wk", p + "attn.bk", training, dropout_rng);
    Tensor v = project(tape, x, p + "attn.wv", p + "attn.bv", training, dropout_rng);
    std::vector<Tensor> heads;
    heads.reserve(nh);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < nh; ++h) {
      Tensor qh = tape.slice_cols(q, h * dh, dh);
      Tensor kh = tape.slice_cols(k, h * dh, dh);
      Tensor vh = tape.slice_cols(v, h * dh, dh);
      Tensor logits = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
      if (mask_bias.defined()) logits = tape.add(logits, mask_bias);
      Tensor attn = tape.softmax_rows(logits);
      heads.push_back(tape.matmul(attn, vh));
    }
    Tensor merged = tape.concat_cols(heads);
    return project(tape, merged, p + "attn.wo", p + "attn.bo", training,
                   dropout_rng);
  }

  // Post-LN sublayers: x = LN(x + Attn(x)); x = LN(x + FFN(x)).
  Tensor layer_forward(Tape& tape, Tensor x, int l, const Tensor& mask_bias,
                       bool training, RngStream* dropout_rng) const {
    const std::string p = layer_prefix(l);
    const bool adapters =
        adaptation_ && adaptation_->method == Method::kAdapter;
    Tensor attn_out = attention(tape, x, p, mask_bias, training, dropout_rng);
    if (adapters) attn_out = adapter_forward(tape, attn_out, p + "adapter_attn");
    x = tape.layer_norm(tape.add(x, attn_out), parameter(p + "ln1.gain"),
                        parameter(p + "ln1.bias"));
    Tensor f = project(tape, x, p + "ffn.w1", p + "ffn.b1", training, dropout_rng);
    f = project(tape, tape.gelu(f), p + "ffn.w2", p + "ffn.b2", training,
                dropout_rng);
    if (adapters) f = adapter_forward(tape, f, p + "adapter_ffn");
    x = tape.layer_norm(tape.add(x, f), parameter(p + "ln2.gain"),
                        parameter(p + "ln2.bias"));
    return x;
  }

  static constexpr double kInitStd = 0.02;

  EncoderConfig cfg_;
  std::map<std::string, Tensor> params_;
  std::optional<AdaptationConfig> adaptation_;
};

}  // namespace lorb

#endif  // LORB_ENCODER_HPP_
