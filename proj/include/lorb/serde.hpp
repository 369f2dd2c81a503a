#ifndef LORB_SERDE_HPP_
#define LORB_SERDE_HPP_

#include <string>
#include <vector>

#include "json.hpp"
#include "lorb/encoder.hpp"
#include "lorb/synth.hpp"

namespace lorb {

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"layers", c.layers},          {"model_dim", c.model_dim},
       {"heads", c.heads},            {"ffn_dim", c.ffn_dim},
       {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("model_dim").get_to(c.model_dim);
  j.at("heads").get_to(c.heads);
  j.at("ffn_dim").get_to(c.ffn_dim);
  j.at("max_seq_len").get_to(c.max_seq_len);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const LoraConfig& c) {
  std::vector<std::string> targets;
  for (TargetMatrix t : c.targets) targets.push_back(target_short_name(t));
  j = {{"rank", c.rank},
       {"alpha", c.alpha},
       {"dropout", c.dropout},
       {"targets", targets}};
}

inline void from_json(const nlohmann::json& j, LoraConfig& c) {
  j.at("rank").get_to(c.rank);
  j.at("alpha").get_to(c.alpha);
  j.at("dropout").get_to(c.dropout);
  c.targets.clear();
  for (const auto& t : j.at("targets")) {
    c.targets.push_back(parse_target(t.get<std::string>()));
  }
}

inline void to_json(nlohmann::json& j, const AdapterConfig& c) {
  j = {{"bottleneck", c.bottleneck}};
}

inline void from_json(const nlohmann::json& j, AdapterConfig& c) {
  j.at("bottleneck").get_to(c.bottleneck);
}

inline void to_json(nlohmann::json& j, const AdaptationConfig& c) {
  j = {{"method", method_name(c.method)},
       {"lora", c.lora},
       {"adapter", c.adapter}};
}

inline void from_json(const nlohmann::json& j, AdaptationConfig& c) {
  c.method = parse_method(j.at("method").get<std::string>());
  j.at("lora").get_to(c.lora);
  j.at("adapter").get_to(c.adapter);
}

inline void to_json(nlohmann::json& j, const ChannelConfig& c) {
  j = {{"sub_rate", c.sub_rate},       {"del_rate", c.del_rate},
       {"ins_rate", c.ins_rate},       {"nbest", c.nbest},
       {"score_noise", c.score_noise}, {"domain", c.domain},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ChannelConfig& c) {
  j.at("sub_rate").get_to(c.sub_rate);
  j.at("del_rate").get_to(c.del_rate);
  j.at("ins_rate").get_to(c.ins_rate);
  j.at("nbest").get_to(c.nbest);
  j.at("score_noise").get_to(c.score_noise);
  j.at("domain").get_to(c.domain);
  j.at("seed").get_to(c.seed);
}

}  // namespace lorb

#endif  // LORB_SERDE_HPP_
