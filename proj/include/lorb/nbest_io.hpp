#ifndef LORB_NBEST_IO_HPP_
#define LORB_NBEST_IO_HPP_

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorb/nbest.hpp"

namespace lorb {

// N-best interchange format: UTF-8 JSON Lines, one utterance per line:
//   {"utt_id": string, "ref": string, "hyps": [{"text": string, "score": number}, ...]}
// Scores are first-pass negative log likelihoods.

inline NBestList parse_nbest_line(const std::string& line, std::size_t lineno) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(strcat("line ", lineno, ": malformed JSON: ", e.what()));
  }
  auto need = [&](const char* field) -> const nlohmann::json& {
    if (!j.contains(field)) {
      throw ParseError(strcat("line ", lineno, ": missing field \"", field,
                              "\""));
    }
    return j.at(field);
  };
  NBestList list;
  if (!need("utt_id").is_string()) {
    throw ParseError(strcat("line ", lineno, ": field \"utt_id\" must be a string"));
  }
  list.utt_id = j.at("utt_id").get<std::string>();
  if (!need("ref").is_string()) {
    throw ParseError(strcat("line ", lineno, ": field \"ref\" must be a string"));
  }
  list.reference = split_words(j.at("ref").get<std::string>());
  const nlohmann::json& hyps = need("hyps");
  if (!hyps.is_array() || hyps.empty()) {
    throw ParseError(strcat("line ", lineno,
                            ": field \"hyps\" must be a non-empty array"));
  }
  for (const auto& h : hyps) {
    if (!h.contains("text") || !h.at("text").is_string()) {
      throw ParseError(strcat("line ", lineno,
                              ": hypothesis missing field \"text\""));
    }
    if (!h.contains("score") || !h.at("score").is_number()) {
      throw ParseError(strcat("line ", lineno,
                              ": hypothesis missing field \"score\""));
    }
    Hypothesis hyp;
    hyp.words = split_words(h.at("text").get<std::string>());
    hyp.first_pass_score = h.at("score").get<double>();
    list.hypotheses.push_back(std::move(hyp));
  }
  validate_nbest(list);
  fill_word_errors(list);
  return list;
}

inline Dataset load_nbest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(strcat("cannot open N-best file: ", path));
  Dataset data;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    NBestList list = parse_nbest_line(line, lineno);
    if (!seen.insert(list.utt_id).second) {
      throw ParseError(strcat("line ", lineno, ": duplicate utterance id '",
                              list.utt_id, "'"));
    }
    data.push_back(std::move(list));
  }
  return data;
}

inline nlohmann::json nbest_to_json(const NBestList& list) {
  nlohmann::json hyps = nlohmann::json::array();
  for (const Hypothesis& h : list.hypotheses) {
    hyps.push_back({{"text", h.text()}, {"score", h.first_pass_score}});
  }
  return {{"utt_id", list.utt_id},
          {"ref", join_words(list.reference)},
          {"hyps", hyps}};
}

inline void save_nbest(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(strcat("cannot write N-best file: ", path));
  for (const NBestList& list : data) out << nbest_to_json(list).dump() << "\n";
}

}  // namespace lorb

#endif  // LORB_NBEST_IO_HPP_
