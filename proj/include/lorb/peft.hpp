#ifndef LORB_PEFT_HPP_
#define LORB_PEFT_HPP_

#include <algorithm>
#include <string>
#include <vector>

#include "lorb/encoder.hpp"

namespace lorb {

namespace peft_detail {

inline bool is_head(const std::string& name) {
  return name.rfind("head.", 0) == 0;
}

inline bool is_bias(const std::string& name) {
  const auto dot = name.find_last_of('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "bias" || (leaf.size() == 2 && leaf[0] == 'b');
}

inline bool is_lora(const std::string& name) {
  return name.find(".lora_") != std::string::npos;
}

inline bool is_adapter(const std::string& name) {
  return name.find(".adapter_") != std::string::npos;
}

inline void require_unadapted(const ScoringModel& model, const char* op) {
  if (model.adaptation()) {
    throw ConfigError(strcat(op, ": model already has a '",
                             method_name(model.adaptation()->method),
                             "' adaptation attached"));
  }
}

}  // namespace peft_detail

// Full fine-tuning: everything trainable.
inline void attach_full_finetune(ScoringModel& model) {
  peft_detail::require_unadapted(model, "attach_full_finetune");
  model.set_all_trainable(true);
  AdaptationConfig cfg;
  cfg.method = Method::kFullFinetune;
  model.adaptation() = cfg;
}

// Adds a zero-initialised low-rank branch to every targeted matrix and
// freezes everything except the LoRA pairs and the scoring head. Attach is
// behavior-preserving because W_B starts at zero.
inline void attach_lora(ScoringModel& model, const LoraConfig& cfg) {
  peft_detail::require_unadapted(model, "attach_lora");
  if (cfg.targets.empty()) {
    throw ConfigError("attach_lora: target set must be nonempty");
  }
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) {
    throw ConfigError(strcat("attach_lora: dropout must lie in [0,1), got ",
                             cfg.dropout));
  }
  if (cfg.rank < 1) {
    throw ConfigError(strcat("attach_lora: rank must be >= 1, got ", cfg.rank));
  }
  // Validate rank against every targeted host matrix before touching state.
  for (int l = 0; l < model.config().layers; ++l) {
    for (TargetMatrix t : cfg.targets) {
      const std::string host =
          ScoringModel::layer_prefix(l) + target_suffix(t);
      const Tensor w = model.parameter(host);
      const int limit =
          static_cast<int>(std::min(w.dim(0), w.dim(1)));
      if (cfg.rank > limit) {
        throw ConfigError(strcat("attach_lora: rank ", cfg.rank,
                                 " exceeds min(d,k)=", limit, " for ", host));
      }
    }
  }
  RngStream root(model.config().seed ^ 0x10aaull);
  for (int l = 0; l < model.config().layers; ++l) {
    for (TargetMatrix t : cfg.targets) {
      const std::string host =
          ScoringModel::layer_prefix(l) + target_suffix(t);
      const Tensor w = model.parameter(host);
      const std::size_t d = w.dim(0), k = w.dim(1);
      const std::size_t r = static_cast<std::size_t>(cfg.rank);
      RngStream rng = root.split(fnv1a(host));
      model.insert_parameter(host + ".lora_a",
                             Tensor::randn({r, k}, rng, 0.02, true));
      model.insert_parameter(host + ".lora_b", Tensor::zeros({d, r}, true));
    }
  }
  model.set_trainable_where([](const std::string& name) {
    return peft_detail::is_lora(name) || peft_detail::is_head(name);
  });
  AdaptationConfig ad;
  ad.method = Method::kLora;
  ad.lora = cfg;
  model.adaptation() = ad;
}

// Folds W0 <- W0 + (alpha/r) W_B W_A and removes the adaptation structures.
// The result scores identically to the unmerged model but at base-model cost.
inline ScoringModel merge_lora(const ScoringModel& model) {
  if (!model.adaptation() || model.adaptation()->method != Method::kLora) {
    throw ConfigError("merge_lora: model has no LoRA adaptation attached");
  }
  const LoraConfig& lc = model.adaptation()->lora;
  ScoringModel merged = model.clone();
  for (int l = 0; l < merged.config().layers; ++l) {
    for (TargetMatrix t : lc.targets) {
      const std::string host =
          ScoringModel::layer_prefix(l) + target_suffix(t);
      Tensor w = merged.parameter(host);
      const Tensor a = merged.parameter(host + ".lora_a");
      const Tensor b = merged.parameter(host + ".lora_b");
      const std::size_t d = w.dim(0), k = w.dim(1);
      const std::size_t r = a.dim(0);
      std::vector<double> delta(d * k, 0.0);
      kernel::gemm_nn(b.data(), a.data(), delta.data(), d, r, k);
      const double s = lc.alpha / lc.rank;
      for (std::size_t i = 0; i < d * k; ++i) w.data()[i] += s * delta[i];
      merged.remove_parameter(host + ".lora_a");
      merged.remove_parameter(host + ".lora_b");
    }
  }
  merged.adaptation().reset();
  return merged;
}

// Only bias vectors (plus the scoring head) stay trainable.
inline void attach_bitfit(ScoringModel& model) {
  peft_detail::require_unadapted(model, "attach_bitfit");
  model.set_trainable_where([](const std::string& name) {
    return peft_detail::is_bias(name) || peft_detail::is_head(name);
  });
  AdaptationConfig ad;
  ad.method = Method::kBitFit;
  model.adaptation() = ad;
}

// Residual bottleneck adapters after the attention and FFN sublayers, both
// feeding the residual connection. Zero-initialised up-projections make the
// attach behavior-preserving.
inline void attach_adapter(ScoringModel& model, AdapterConfig cfg) {
  peft_detail::require_unadapted(model, "attach_adapter");
  const std::size_t d = static_cast<std::size_t>(model.config().model_dim);
  if (cfg.bottleneck == 0) cfg.bottleneck = model.config().model_dim / 2;
  if (cfg.bottleneck < 1) {
    throw ConfigError(strcat("attach_adapter: bottleneck must be >= 1, got ",
                             cfg.bottleneck));
  }
  const std::size_t w = static_cast<std::size_t>(cfg.bottleneck);
  RngStream root(model.config().seed ^ 0xadaull);
  for (int l = 0; l < model.config().layers; ++l) {
    for (const char* site : {"adapter_attn", "adapter_ffn"}) {
      const std::string prefix = ScoringModel::layer_prefix(l) + site;
      RngStream rng = root.split(fnv1a(prefix));
      model.insert_parameter(prefix + ".down_w",
                             Tensor::randn({w, d}, rng, 0.02, true));
      model.insert_parameter(prefix + ".down_b", Tensor::zeros({w}, true));
      model.insert_parameter(prefix + ".up_w", Tensor::zeros({d, w}, true));
      model.insert_parameter(prefix + ".up_b", Tensor::zeros({d}, true));
    }
  }
  model.set_trainable_where([](const std::string& name) {
    return peft_detail::is_adapter(name) || peft_detail::is_head(name);
  });
  AdaptationConfig ad;
  ad.method = Method::kAdapter;
  ad.adapter = cfg;
  model.adaptation() = ad;
}

inline void attach_method(ScoringModel& model, const AdaptationConfig& cfg) {
  switch (cfg.method) {
    case Method::kFullFinetune: attach_full_finetune(model); return;
    case Method::kLora: attach_lora(model, cfg.lora); return;
    case Method::kBitFit: attach_bitfit(model); return;
    case Method::kAdapter: attach_adapter(model, cfg.adapter); return;
  }
  throw ConfigError("attach_method: unknown method");
}

inline double trainable_fraction(const ScoringModel& model) {
  const std::size_t total = model.parameter_count();
  if (total == 0) throw ConfigError("trainable_fraction: empty model");
  return static_cast<double>(model.trainable_parameter_count()) /
         static_cast<double>(total);
}

// Element count of the LoRA pairs alone (head excluded).
inline std::size_t lora_parameter_count(const ScoringModel& model) {
  std::size_t n = 0;
  for (const auto& [name, t] : model.parameters()) {
    if (peft_detail::is_lora(name)) n += t.size();
  }
  return n;
}

inline std::size_t adapter_parameter_count(const ScoringModel& model) {
  std::size_t n = 0;
  for (const auto& [name, t] : model.parameters()) {
    if (peft_detail::is_adapter(name)) n += t.size();
  }
  return n;
}

// FLOPs of one eval-mode forward pass of the given token sequence, measured
// by the tape's per-op accounting.
inline std::uint64_t forward_flops(const ScoringModel& model,
                                   std::span<const int> ids) {
  Tape tape(false);
  model.score(tape, ids);
  return tape.flops();
}

}  // namespace lorb

#endif  // LORB_PEFT_HPP_
