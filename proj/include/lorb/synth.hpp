#ifndef LORB_SYNTH_HPP_
#define LORB_SYNTH_HPP_

#include <map>
#include <string>
#include <vector>

#include "lorb/errors.hpp"
#include "lorb/nbest.hpp"
#include "lorb/rng.hpp"

namespace lorb {

// Synthetic first-pass channel: references come from a per-domain template
// grammar; hypotheses are the reference corrupted by i.i.d. word-level edit
// noise; the first-pass score is the corruption count plus Gaussian noise,
// so better hypotheses tend to score lower. Everything is a pure function
// of (config, num_utts).
struct ChannelConfig {
  double sub_rate = 0.1;
  double del_rate = 0.03;
  double ins_rate = 0.03;
  std::size_t nbest = 4;
  double score_noise = 0.3;
  std::string domain = "assistant-commands";
  std::uint64_t seed = 0;
};

namespace synth_detail {

struct Grammar {
  // Patterns reference slots as "<name>"; slot values may be multi-word.
  std::vector<std::string> patterns;
  std::map<std::string, std::vector<std::string>> slots;
  // Union of all words, used as the substitution/insertion pool.
  Words pool;
};

inline Grammar build_grammar(const std::string& domain) {
  Grammar g;
  if (domain == "assistant-commands") {
    g.patterns = {
        "turn <onoff> the <device>",
        "turn the <device> <onoff> please",
        "set a timer for <number> minutes",
        "set an alarm for <number> in the morning",
        "play some <genre> music",
        "play <genre> music in the <room>",
        "what is the weather like <day>",
        "will it rain <day>",
        "add <item> to the shopping list",
        "remove <item> from the list",
        "turn the volume <updown>",
        "remind me to <task> <day>",
        "how long is the timer",
        "stop the music in the <room>",
    };
    g.slots = {
        {"onoff", {"on", "off"}},
        {"device", {"lights", "fan", "heater", "thermostat", "speaker", "television"}},
        {"number", {"five", "ten", "fifteen", "twenty", "thirty", "seven"}},
        {"genre", {"jazz", "rock", "classical", "electronic", "folk", "blues"}},
        {"room", {"kitchen", "bedroom", "office", "garage", "hallway"}},
        {"day", {"today", "tomorrow", "tonight", "this evening"}},
        {"item", {"milk", "eggs", "bread", "coffee", "apples", "butter"}},
        {"updown", {"up", "down"}},
        {"task", {"stretch", "call mom", "water the plants", "check the oven"}},
    };
  } else if (domain == "entity-rich") {
    g.patterns = {
        "play <track> by <artist>",
        "who wrote <track>",
        "queue the album <album>",
        "play the album <album> by <artist>",
        "skip to the next <unit>",
        "tell me about <figure>",
        "when was <figure> born",
        "how tall is <landmark>",
        "add <artist> to my favorites",
        "what year did <artist> release <track>",
        "show me concerts by <artist>",
    };
    g.slots = {
        {"artist", {"nova quartet", "silver harbor", "elena marsh",
                    "the gilded owls", "cassius reed", "lumen tide"}},
        {"track", {"midnight chronicles", "paper lanterns", "ember waltz",
                   "glass horizon", "salt and cedar", "violet static"}},
        {"album", {"northern arcade", "tidal ink", "the hollow year",
                   "gardens of rust"}},
        {"figure", {"ada lovelace", "isaac newton", "marie curie",
                    "alan turing", "emmy noether"}},
        {"landmark", {"angel falls", "mount rainier", "the eiffel tower",
                      "table mountain"}},
        {"unit", {"track", "song", "chapter"}},
    };
  } else {
    throw ConfigError(strcat("unknown domain template '", domain, "'"));
  }
  std::map<std::string, bool> seen;
  auto note = [&](const std::string& w) {
    if (!seen[w]) {
      seen[w] = true;
      g.pool.push_back(w);
    }
  };
  for (const std::string& p : g.patterns) {
    for (const std::string& w : split_words(p)) {
      if (w.front() != '<') note(w);
    }
  }
  for (const auto& [name, values] : g.slots) {
    for (const std::string& v : values) {
      for (const std::string& w : split_words(v)) note(w);
    }
  }
  return g;
}

inline Words fill_pattern(const Grammar& g, RngStream& rng) {
  const std::string& pattern =
      g.patterns[rng.next_below(g.patterns.size())];
  Words out;
  for (const std::string& tok : split_words(pattern)) {
    if (tok.front() == '<' && tok.back() == '>') {
      const std::string name = tok.substr(1, tok.size() - 2);
      auto it = g.slots.find(name);
      if (it == g.slots.end()) {
        throw ConfigError(strcat("grammar slot '", name, "' undefined"));
      }
      const std::string& value =
          it->second[rng.next_below(it->second.size())];
      for (const std::string& w : split_words(value)) out.push_back(w);
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

// Applies i.i.d. edit noise; returns the corrupted words and the number of
// corruption operations performed.
inline std::pair<Words, int> corrupt(const Words& ref, const ChannelConfig& cfg,
                                     const Grammar& g, RngStream& rng) {
  Words out;
  int edits = 0;
  for (const std::string& w : ref) {
    const double r = rng.uniform();
    if (r < cfg.sub_rate) {
      out.push_back(g.pool[rng.next_below(g.pool.size())]);
      ++edits;
    } else if (r < cfg.sub_rate + cfg.del_rate) {
      ++edits;  // deleted
    } else {
      out.push_back(w);
    }
    if (rng.uniform() < cfg.ins_rate) {
      out.push_back(g.pool[rng.next_below(g.pool.size())]);
      ++edits;
    }
  }
  return {out, edits};
}

}  // namespace synth_detail

inline Dataset synthesize_corpus(const ChannelConfig& cfg, std::size_t num_utts) {
  if (num_utts < 1) throw ConfigError("synthesize_corpus: num_utts must be >= 1");
  if (cfg.nbest < 1) throw ConfigError("synthesize_corpus: nbest must be >= 1");
  for (double rate : {cfg.sub_rate, cfg.del_rate, cfg.ins_rate}) {
    if (rate < 0.0 || rate >= 1.0) {
      throw ConfigError(strcat("synthesize_corpus: rates must lie in [0,1), got ",
                               rate));
    }
  }
  const synth_detail::Grammar grammar = synth_detail::build_grammar(cfg.domain);
  RngStream root(cfg.seed);
  Dataset data;
  data.reserve(num_utts);
  for (std::size_t u = 0; u < num_utts; ++u) {
    RngStream utt_rng = root.split(u);
    NBestList list;
    list.utt_id = strcat(cfg.domain, "-", u);
    RngStream ref_rng = utt_rng.split(0);
    list.reference = synth_detail::fill_pattern(grammar, ref_rng);
    for (std::size_t i = 0; i < cfg.nbest; ++i) {
      RngStream hyp_rng = utt_rng.split(i + 1);
      auto [words, edits] =
          synth_detail::corrupt(list.reference, cfg, grammar, hyp_rng);
      Hypothesis hyp;
      hyp.words = std::move(words);
      hyp.first_pass_score =
          static_cast<double>(edits) +
          (cfg.score_noise > 0.0 ? hyp_rng.normal(0.0, cfg.score_noise) : 0.0);
      list.hypotheses.push_back(std::move(hyp));
    }
    fill_word_errors(list);
    data.push_back(std::move(list));
  }
  return data;
}

// Every word any grammar can emit; handy for building a shared vocabulary.
inline std::vector<Words> domain_reference_corpus(const std::string& domain) {
  const synth_detail::Grammar g = synth_detail::build_grammar(domain);
  return {g.pool};
}

}  // namespace lorb

#endif  // LORB_SYNTH_HPP_
