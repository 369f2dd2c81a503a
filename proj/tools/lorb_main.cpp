// lorb: second-pass N-best rescoring with parameter-efficient adaptation.
//
// Subcommands: synth, pretrain, train, rescore, eval, compare,
// sweep-stability, sweep-scale, sweep-beta. Defaults live in one JSON config
// file; precedence is flags > file > built-ins. Every command writes a
// manifest into --out and is a pure function of (inputs, flags, seed).
// Exit codes: 0 success, 1 divergence, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lorb/lorb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
  return {
      {"seed", 0},
      {"vocab_cap", 400},
      {"encoder",
       {{"layers", 4},
        {"model_dim", 64},
        {"heads", 4},
        {"ffn_dim", 128},
        {"max_seq_len", 32},
        {"vocab_size", 0},  // set from the built vocabulary
        {"seed", 0}}},      // set from the master seed
      {"channel",
       {{"sub_rate", 0.25},
        {"del_rate", 0.05},
        {"ins_rate", 0.05},
        {"nbest", 4},
        {"score_noise", 0.5},
        {"domain", "assistant-commands"},  // overridden per synth domain
        {"seed", 0}}},
      {"synth",
       {{"domains", {"assistant-commands", "entity-rich"}},
        {"train_utts", 300},
        {"dev_utts", 80},
        {"test_utts", 150}}},
      {"pretrain", {{"steps", 400}, {"lr", 1e-3}}},
      {"train",
       {{"method", "lora"},
        {"rank", 8},
        {"alpha", 32.0},
        {"lora_dropout", 0.01},
        {"targets", "q,v"},
        {"adapter_bottleneck", 0},
        {"lr", 1e-3},
        {"warmup", 50},
        {"max_steps", 300},
        {"batch_utterances", 8},
        {"nbest_depth", 4},
        {"beta", 1.0},
        {"lambda", 0.01},
        {"patience", 5},
        {"eval_every", 50}}},
      {"eval", {{"beta", 1.0}, {"beta_grid", {0.0, 0.25, 0.5, 1.0, 2.0}}}},
  };
}

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<int> rank;
  std::optional<double> alpha;
  std::optional<double> lora_dropout;
  std::optional<std::string> targets;
  std::optional<double> beta;
  std::optional<double> lambda;
  std::optional<double> lr;
  std::optional<int> warmup;
  std::optional<int> max_steps;
  std::optional<int> patience;
  int jobs = 1;
  std::string out;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f, bool needs_out = true) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--method", f.method, "adaptation method: ft,lora,bitfit,adapter");
  cmd->add_option("--rank", f.rank, "LoRA rank");
  cmd->add_option("--alpha", f.alpha, "LoRA alpha");
  cmd->add_option("--lora-dropout", f.lora_dropout, "LoRA branch dropout rate");
  cmd->add_option("--targets", f.targets, "LoRA targets, e.g. q,v or q,k,v,f1,f2");
  cmd->add_option("--beta", f.beta, "second-pass interpolation weight");
  cmd->add_option("--lambda", f.lambda, "correlation regularizer weight");
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--warmup", f.warmup, "linear warmup steps");
  cmd->add_option("--max-steps", f.max_steps, "training step budget");
  cmd->add_option("--patience", f.patience, "early-stop patience (evals)");
  cmd->add_option("--jobs", f.jobs, "parallel workers for sweep cells");
  auto* out = cmd->add_option("--out", f.out, "output directory");
  if (needs_out) out->required();
}

json resolve_config(const CommonFlags& f, lorb::RunManifest& manifest) {
  json cfg = default_config();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw lorb::IoError(lorb::strcat("cannot open config: ", f.config_path));
    json user;
    try {
      in >> user;
    } catch (const json::exception& e) {
      throw lorb::ParseError(lorb::strcat("config ", f.config_path, ": ", e.what()));
    }
    cfg.merge_patch(user);
    manifest.add_input(f.config_path);
  }
  if (f.seed) cfg["seed"] = *f.seed;
  if (f.method) cfg["train"]["method"] = *f.method;
  if (f.rank) cfg["train"]["rank"] = *f.rank;
  if (f.alpha) cfg["train"]["alpha"] = *f.alpha;
  if (f.lora_dropout) cfg["train"]["lora_dropout"] = *f.lora_dropout;
  if (f.targets) cfg["train"]["targets"] = *f.targets;
  if (f.beta) {
    cfg["train"]["beta"] = *f.beta;
    cfg["eval"]["beta"] = *f.beta;
  }
  if (f.lambda) cfg["train"]["lambda"] = *f.lambda;
  if (f.lr) cfg["train"]["lr"] = *f.lr;
  if (f.warmup) cfg["train"]["warmup"] = *f.warmup;
  if (f.max_steps) cfg["train"]["max_steps"] = *f.max_steps;
  if (f.patience) cfg["train"]["patience"] = *f.patience;
  return cfg;
}

std::vector<lorb::TargetMatrix> parse_targets_csv(const std::string& csv) {
  std::vector<lorb::TargetMatrix> targets;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) targets.push_back(lorb::parse_target(item));
  }
  if (targets.empty()) {
    throw lorb::ConfigError("targets: expected a comma-separated list");
  }
  return targets;
}

lorb::AdaptationConfig adaptation_from_config(const json& train) {
  lorb::AdaptationConfig ad;
  ad.method = lorb::parse_method(train.at("method").get<std::string>());
  ad.lora.rank = train.at("rank").get<int>();
  ad.lora.alpha = train.at("alpha").get<double>();
  ad.lora.dropout = train.at("lora_dropout").get<double>();
  ad.lora.targets = parse_targets_csv(train.at("targets").get<std::string>());
  ad.adapter.bottleneck = train.at("adapter_bottleneck").get<int>();
  return ad;
}

lorb::TrainConfig train_config_from_json(const json& cfg) {
  const json& t = cfg.at("train");
  lorb::TrainConfig tc;
  tc.method = adaptation_from_config(t);
  tc.lr = t.at("lr").get<double>();
  tc.warmup_steps = t.at("warmup").get<int>();
  tc.max_steps = t.at("max_steps").get<int>();
  tc.batch_utterances = t.at("batch_utterances").get<int>();
  tc.nbest_depth = t.at("nbest_depth").get<int>();
  tc.beta = t.at("beta").get<double>();
  tc.lambda = t.at("lambda").get<double>();
  tc.patience = t.at("patience").get<int>();
  tc.eval_every = t.at("eval_every").get<int>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  if (tc.warmup_steps > tc.max_steps) tc.warmup_steps = tc.max_steps;
  return tc;
}

lorb::Vocabulary vocab_from_datasets(const std::vector<lorb::Dataset>& sets,
                                     std::size_t cap) {
  std::vector<lorb::Words> corpus;
  for (const lorb::Dataset& data : sets) {
    for (const lorb::NBestList& list : data) {
      corpus.push_back(list.reference);
      for (const lorb::Hypothesis& h : list.hypotheses) corpus.push_back(h.words);
    }
  }
  return lorb::Vocabulary::build(corpus, cap);
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw lorb::IoError(lorb::strcat("cannot write ", path.string()));
  out << content;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

void finalize_manifest(lorb::RunManifest& manifest, const fs::path& out_dir,
                       const Timer& timer) {
  manifest.stamp_time();
  manifest.wall_clock_seconds = timer.seconds();
  manifest.write(out_dir);
  lorb::log_info(lorb::strcat(manifest.command, ": wrote ", out_dir.string(),
                              " in ", manifest.wall_clock_seconds, " s"));
}

// ---- synth -----------------------------------------------------------------

int cmd_synth(const CommonFlags& flags) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "synth";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  const json& synth = cfg.at("synth");
  const std::vector<std::pair<std::string, int>> splits = {
      {"train", synth.at("train_utts").get<int>()},
      {"dev", synth.at("dev_utts").get<int>()},
      {"test", synth.at("test_utts").get<int>()}};
  for (const auto& domain : synth.at("domains")) {
    const std::string name = domain.get<std::string>();
    for (const auto& [split, count] : splits) {
      lorb::ChannelConfig ch = cfg.at("channel").get<lorb::ChannelConfig>();
      ch.domain = name;
      ch.seed = manifest.seed ^ lorb::fnv1a(name + ":" + split);
      const lorb::Dataset data =
          lorb::synthesize_corpus(ch, static_cast<std::size_t>(count));
      const std::string fname = name + "." + split + ".jsonl";
      lorb::save_nbest((out_dir / fname).string(), data);
      manifest.outputs.push_back(fname);
    }
  }
  finalize_manifest(manifest, out_dir, timer);
  return 0;
}

// ---- pretrain --------------------------------------------------------------

int cmd_pretrain(const CommonFlags& flags, const std::vector<std::string>& data,
                 const std::string& dev_path) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "pretrain";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  std::vector<lorb::Dataset> sets;
  lorb::Dataset mixture;
  for (const std::string& path : data) {
    manifest.add_input(path);
    sets.push_back(lorb::load_nbest(path));
    for (const lorb::NBestList& list : sets.back()) mixture.push_back(list);
  }
  manifest.add_input(dev_path);
  const lorb::Dataset dev = lorb::load_nbest(dev_path);

  const lorb::Vocabulary vocab =
      vocab_from_datasets(sets, cfg.at("vocab_cap").get<std::size_t>());
  lorb::EncoderConfig ec = cfg.at("encoder").get<lorb::EncoderConfig>();
  ec.vocab_size = static_cast<int>(vocab.size());
  ec.seed = manifest.seed;
  lorb::ScoringModel model = lorb::ScoringModel::init(ec);

  const int steps = flags.max_steps.value_or(
      cfg.at("pretrain").at("steps").get<int>());
  const double lr =
      flags.lr.value_or(cfg.at("pretrain").at("lr").get<double>());
  lorb::TrainResult result =
      lorb::pretrain_proxy(model, vocab, mixture, dev, steps, manifest.seed, lr);

  lorb::save_checkpoint((out_dir / "base.ckpt").string(), result.model, vocab);
  write_text(out_dir / "train_report.json",
             lorb::train_report_json(result.report).dump(2) + "\n");
  write_text(out_dir / "curve.csv", lorb::train_report_csv(result.report));
  manifest.outputs = {"base.ckpt", "train_report.json", "curve.csv"};
  finalize_manifest(manifest, out_dir, timer);
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const CommonFlags& flags, const std::string& base_path,
              const std::string& train_path, const std::string& dev_path) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "train";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  manifest.add_input(base_path);
  manifest.add_input(train_path);
  manifest.add_input(dev_path);
  lorb::Checkpoint ck = lorb::load_checkpoint(base_path);
  const lorb::Dataset train_data = lorb::load_nbest(train_path);
  const lorb::Dataset dev_data = lorb::load_nbest(dev_path);
  const lorb::TrainConfig tc = train_config_from_json(cfg);

  lorb::TrainResult result =
      lorb::train(ck.model, ck.vocab, train_data, dev_data, tc);

  lorb::save_checkpoint((out_dir / "adapted.ckpt").string(), result.model,
                        ck.vocab);
  json report = lorb::train_report_json(result.report);
  report["trainable_fraction"] = lorb::trainable_fraction(result.model);
  report["method"] = lorb::method_name(tc.method.method);
  write_text(out_dir / "train_report.json", report.dump(2) + "\n");
  write_text(out_dir / "curve.csv", lorb::train_report_csv(result.report));
  manifest.outputs = {"adapted.ckpt", "train_report.json", "curve.csv"};
  finalize_manifest(manifest, out_dir, timer);
  if (result.report.diverged) {
    lorb::log_error(lorb::strcat("training diverged at step ",
                                 result.report.diverged_step));
    return 1;
  }
  return 0;
}

// ---- rescore ----------------------------------------------------------------

int cmd_rescore(const CommonFlags& flags, const std::string& base_path,
                const std::string& nbest_path) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "rescore";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  manifest.add_input(base_path);
  manifest.add_input(nbest_path);
  const lorb::Checkpoint ck = lorb::load_checkpoint(base_path);
  const lorb::Dataset data = lorb::load_nbest(nbest_path);
  const double beta = cfg.at("eval").at("beta").get<double>();

  const auto s_l = lorb::second_pass_scores(ck.model, ck.vocab, data);
  std::ofstream out(out_dir / "rescored.jsonl", std::ios::binary);
  if (!out) throw lorb::IoError("cannot write rescored.jsonl");
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> combined;
    for (std::size_t j = 0; j < data[i].hypotheses.size(); ++j) {
      combined.push_back(lorb::combine_scores(
          data[i].hypotheses[j].first_pass_score, s_l[i][j],
          lorb::RescoreParams{beta}));
    }
    const std::size_t best = lorb::select_best(combined);
    out << json{{"utt_id", data[i].utt_id},
                {"best_index", best},
                {"best_text", data[i].hypotheses[best].text()},
                {"combined_scores", combined}}
               .dump()
        << "\n";
  }
  out.close();
  manifest.outputs = {"rescored.jsonl"};
  finalize_manifest(manifest, out_dir, timer);
  return 0;
}

// ---- eval ---------------------------------------------------------------------

int cmd_eval(const CommonFlags& flags, const std::string& base_path,
             const std::vector<std::string>& data_paths,
             const std::string& baseline_path) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "eval";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  manifest.add_input(base_path);
  const lorb::Checkpoint ck = lorb::load_checkpoint(base_path);
  std::optional<lorb::Checkpoint> baseline;
  if (!baseline_path.empty()) {
    manifest.add_input(baseline_path);
    baseline = lorb::load_checkpoint(baseline_path);
  }
  const double beta = cfg.at("eval").at("beta").get<double>();

  lorb::EvalReport report;
  report.baseline_name = baseline_path.empty() ? "" : baseline_path;
  report.trainable_fraction = lorb::trainable_fraction(ck.model);
  report.config_digest = manifest.digest();
  for (const std::string& path : data_paths) {
    manifest.add_input(path);
    const lorb::Dataset data = lorb::load_nbest(path);
    const lorb::WerResult wr =
        lorb::evaluate_model_wer(ck.model, ck.vocab, data, beta);
    lorb::DomainEval de;
    de.domain = fs::path(path).stem().string();
    de.wer = wr.wer;
    de.errors = wr.errors;
    de.ref_words = wr.ref_words;
    if (baseline) {
      const double base_wer =
          lorb::evaluate_model_wer(baseline->model, baseline->vocab, data, beta)
              .wer;
      de.werr_vs_base = lorb::relative_wer_improvement(base_wer, de.wer);
    }
    report.domains.push_back(de);
  }
  write_text(out_dir / "eval_report.json",
             lorb::eval_report_json(report).dump(2) + "\n");
  const std::string table = lorb::eval_report_table(report);
  write_text(out_dir / "eval_report.txt", table);
  std::cout << table;
  manifest.outputs = {"eval_report.json", "eval_report.txt"};
  finalize_manifest(manifest, out_dir, timer);
  return 0;
}

// ---- compare -------------------------------------------------------------------

std::vector<std::pair<std::string, std::string>> parse_named_paths(
    const std::vector<std::string>& specs, const char* flag) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw lorb::ConfigError(
          lorb::strcat(flag, ": expected name=path, got '", spec, "'"));
    }
    out.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
  }
  return out;
}

std::vector<lorb::AdaptationConfig> parse_methods_csv(
    const std::string& csv, const lorb::AdaptationConfig& tmpl) {
  std::vector<lorb::AdaptationConfig> methods;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    lorb::AdaptationConfig m = tmpl;
    m.method = lorb::parse_method(item);
    methods.push_back(m);
  }
  if (methods.empty()) throw lorb::ConfigError("methods: empty list");
  return methods;
}

int cmd_compare(const CommonFlags& flags, const std::string& base_path,
                const std::string& target_train, const std::string& target_dev,
                const std::vector<std::string>& test_specs,
                const std::string& methods_csv) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "compare";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  manifest.add_input(base_path);
  manifest.add_input(target_train);
  manifest.add_input(target_dev);
  const lorb::Checkpoint ck = lorb::load_checkpoint(base_path);
  const lorb::TrainConfig tc = train_config_from_json(cfg);

  std::vector<lorb::DomainData> domains;
  const auto named = parse_named_paths(test_specs, "--test");
  for (std::size_t i = 0; i < named.size(); ++i) {
    manifest.add_input(named[i].second);
    lorb::DomainData d;
    d.name = named[i].first;
    d.test = lorb::load_nbest(named[i].second);
    if (i == 0) {
      d.train = lorb::load_nbest(target_train);
      d.dev = lorb::load_nbest(target_dev);
    }
    domains.push_back(std::move(d));
  }
  const auto methods = parse_methods_csv(methods_csv, tc.method);

  const lorb::CompareReport report = lorb::compare_methods(
      ck.model, ck.vocab, domains, 0, methods, tc, flags.jobs);
  write_text(out_dir / "compare_report.json",
             lorb::compare_report_json(report).dump(2) + "\n");
  const std::string table = lorb::compare_report_table(report);
  write_text(out_dir / "compare_report.txt", table);
  std::cout << table;
  manifest.outputs = {"compare_report.json", "compare_report.txt"};
  finalize_manifest(manifest, out_dir, timer);
  return 0;
}

// ---- sweeps --------------------------------------------------------------------

int cmd_sweep_stability(const CommonFlags& flags, const std::string& base_path,
                        const std::string& target_train,
                        const std::string& target_dev,
                        const std::string& target_test,
                        const std::string& nontarget_test,
                        const std::vector<int>& warmups,
                        const std::vector<double>& lrs,
                        const std::string& methods_csv) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "sweep-stability";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  for (const std::string& p :
       {base_path, target_train, target_dev, target_test, nontarget_test}) {
    manifest.add_input(p);
  }
  const lorb::Checkpoint ck = lorb::load_checkpoint(base_path);
  const lorb::TrainConfig tc = train_config_from_json(cfg);
  lorb::DomainData target;
  target.name = "target";
  target.train = lorb::load_nbest(target_train);
  target.dev = lorb::load_nbest(target_dev);
  target.test = lorb::load_nbest(target_test);
  const lorb::Dataset nontarget = lorb::load_nbest(nontarget_test);
  const auto methods = parse_methods_csv(methods_csv, tc.method);

  const lorb::StabilityReport report =
      lorb::stability_sweep(ck.model, ck.vocab, target, nontarget, warmups,
                            lrs, methods, tc, flags.jobs);
  write_text(out_dir / "stability_report.json",
             lorb::stability_report_json(report).dump(2) + "\n");
  manifest.outputs = {"stability_report.json"};
  finalize_manifest(manifest, out_dir, timer);
  return 0;
}

int cmd_sweep_scale(const CommonFlags& flags, const std::string& base_path,
                    const std::string& target_train,
                    const std::string& target_dev,
                    const std::string& target_test,
                    const std::vector<std::size_t>& sizes,
                    const std::string& methods_csv) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "sweep-scale";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  for (const std::string& p : {base_path, target_train, target_dev, target_test}) {
    manifest.add_input(p);
  }
  const lorb::Checkpoint ck = lorb::load_checkpoint(base_path);
  const lorb::TrainConfig tc = train_config_from_json(cfg);
  lorb::DomainData target;
  target.name = "target";
  target.train = lorb::load_nbest(target_train);
  target.dev = lorb::load_nbest(target_dev);
  target.test = lorb::load_nbest(target_test);
  const auto methods = parse_methods_csv(methods_csv, tc.method);

  const lorb::ScalingReport report = lorb::scaling_sweep(
      ck.model, ck.vocab, target, sizes, methods, tc, flags.jobs);
  write_text(out_dir / "scaling_report.json",
             lorb::scaling_report_json(report).dump(2) + "\n");
  write_text(out_dir / "scaling_curves.csv", lorb::scaling_report_csv(report));
  manifest.outputs = {"scaling_report.json", "scaling_curves.csv"};
  finalize_manifest(manifest, out_dir, timer);
  return 0;
}

int cmd_sweep_beta(const CommonFlags& flags, const std::string& base_path,
                   const std::string& dev_path, std::vector<double> grid) {
  Timer timer;
  lorb::RunManifest manifest;
  manifest.command = "sweep-beta";
  const json cfg = resolve_config(flags, manifest);
  manifest.resolved_config = cfg;
  manifest.seed = cfg.at("seed").get<std::uint64_t>();
  const fs::path out_dir(flags.out);
  fs::create_directories(out_dir);

  manifest.add_input(base_path);
  manifest.add_input(dev_path);
  const lorb::Checkpoint ck = lorb::load_checkpoint(base_path);
  const lorb::Dataset dev = lorb::load_nbest(dev_path);
  if (grid.empty()) {
    grid = cfg.at("eval").at("beta_grid").get<std::vector<double>>();
  }
  const lorb::BetaSweepResult result =
      lorb::sweep_beta(ck.model, ck.vocab, dev, grid);
  json jgrid = json::array();
  for (const auto& [beta, wer] : result.grid) {
    jgrid.push_back({{"beta", beta}, {"wer", wer}});
  }
  write_text(out_dir / "beta_sweep.json",
             json{{"best_beta", result.best_beta},
                  {"best_wer", result.best_wer},
                  {"grid", jgrid}}
                 .dump(2) +
                 "\n");
  std::cout << "best beta " << result.best_beta << " (dev WER "
            << result.best_wer << ")\n";
  manifest.outputs = {"beta_sweep.json"};
  finalize_manifest(manifest, out_dir, timer);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lorb: discriminative second-pass N-best rescoring with "
               "parameter-efficient adaptation"};
  app.require_subcommand(1);

  CommonFlags synth_f;
  auto* synth = app.add_subcommand("synth", "generate synthetic N-best datasets");
  add_common_flags(synth, synth_f);

  CommonFlags pre_f;
  std::vector<std::string> pre_data;
  std::string pre_dev;
  auto* pretrain = app.add_subcommand("pretrain", "proxy-pretrain a base model");
  add_common_flags(pretrain, pre_f);
  pretrain->add_option("--data", pre_data, "training JSONL files (mixture)")
      ->required();
  pretrain->add_option("--dev", pre_dev, "dev JSONL file")->required();

  CommonFlags train_f;
  std::string train_base, train_train, train_dev;
  auto* train_cmd = app.add_subcommand("train", "adapt a base checkpoint");
  add_common_flags(train_cmd, train_f);
  train_cmd->add_option("--base", train_base, "base checkpoint")->required();
  train_cmd->add_option("--train", train_train, "training JSONL")->required();
  train_cmd->add_option("--dev", train_dev, "dev JSONL")->required();

  CommonFlags rescore_f;
  std::string rescore_base, rescore_nbest;
  auto* rescore = app.add_subcommand("rescore", "rescore an N-best file");
  add_common_flags(rescore, rescore_f);
  rescore->add_option("--base", rescore_base, "checkpoint")->required();
  rescore->add_option("--nbest", rescore_nbest, "N-best JSONL")->required();

  CommonFlags eval_f;
  std::string eval_base, eval_baseline;
  std::vector<std::string> eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate WER per domain");
  add_common_flags(eval_cmd, eval_f);
  eval_cmd->add_option("--base", eval_base, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--data", eval_data, "test JSONL files")->required();
  eval_cmd->add_option("--baseline", eval_baseline,
                       "checkpoint WERR is measured against");

  CommonFlags cmp_f;
  std::string cmp_base, cmp_train, cmp_dev, cmp_methods = "ft,lora";
  std::vector<std::string> cmp_tests;
  auto* compare = app.add_subcommand("compare", "method comparison harness");
  add_common_flags(compare, cmp_f);
  compare->add_option("--base", cmp_base, "base checkpoint")->required();
  compare->add_option("--target-train", cmp_train, "target-domain train JSONL")
      ->required();
  compare->add_option("--target-dev", cmp_dev, "target-domain dev JSONL")
      ->required();
  compare
      ->add_option("--test", cmp_tests,
                   "name=path test sets; first entry is the target domain")
      ->required();
  compare->add_option("--methods", cmp_methods, "comma list of methods");

  CommonFlags st_f;
  std::string st_base, st_train, st_dev, st_test, st_nontarget;
  std::string st_methods = "ft,lora";
  std::vector<int> st_warmups = {50, 200};
  std::vector<double> st_lrs = {1e-2, 1e-4};
  auto* stab = app.add_subcommand("sweep-stability",
                                  "warmup x lr robustness grid");
  add_common_flags(stab, st_f);
  stab->add_option("--base", st_base, "base checkpoint")->required();
  stab->add_option("--target-train", st_train, "")->required();
  stab->add_option("--target-dev", st_dev, "")->required();
  stab->add_option("--target-test", st_test, "")->required();
  stab->add_option("--nontarget-test", st_nontarget, "")->required();
  stab->add_option("--warmups", st_warmups, "warmup grid");
  stab->add_option("--lrs", st_lrs, "learning-rate grid");
  stab->add_option("--methods", st_methods, "comma list of methods");

  CommonFlags sc_f;
  std::string sc_base, sc_train, sc_dev, sc_test, sc_methods = "lora,ft";
  std::vector<std::size_t> sc_sizes;
  auto* scale = app.add_subcommand("sweep-scale", "data-scaling curves");
  add_common_flags(scale, sc_f);
  scale->add_option("--base", sc_base, "base checkpoint")->required();
  scale->add_option("--target-train", sc_train, "")->required();
  scale->add_option("--target-dev", sc_dev, "")->required();
  scale->add_option("--target-test", sc_test, "")->required();
  scale->add_option("--sizes", sc_sizes, "ascending subset sizes")->required();
  scale->add_option("--methods", sc_methods, "comma list of methods");

  CommonFlags sb_f;
  std::string sb_base, sb_dev;
  std::vector<double> sb_grid;
  auto* sbeta = app.add_subcommand("sweep-beta", "tune the interpolation weight");
  add_common_flags(sbeta, sb_f);
  sbeta->add_option("--base", sb_base, "checkpoint")->required();
  sbeta->add_option("--dev", sb_dev, "dev JSONL")->required();
  sbeta->add_option("--grid", sb_grid, "beta grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_f);
    if (pretrain->parsed()) return cmd_pretrain(pre_f, pre_data, pre_dev);
    if (train_cmd->parsed())
      return cmd_train(train_f, train_base, train_train, train_dev);
    if (rescore->parsed())
      return cmd_rescore(rescore_f, rescore_base, rescore_nbest);
    if (eval_cmd->parsed())
      return cmd_eval(eval_f, eval_base, eval_data, eval_baseline);
    if (compare->parsed())
      return cmd_compare(cmp_f, cmp_base, cmp_train, cmp_dev, cmp_tests,
                         cmp_methods);
    if (stab->parsed())
      return cmd_sweep_stability(st_f, st_base, st_train, st_dev, st_test,
                                 st_nontarget, st_warmups, st_lrs, st_methods);
    if (scale->parsed())
      return cmd_sweep_scale(sc_f, sc_base, sc_train, sc_dev, sc_test,
                             sc_sizes, sc_methods);
    if (sbeta->parsed()) return cmd_sweep_beta(sb_f, sb_base, sb_dev, sb_grid);
  } catch (const lorb::NumericError& e) {
    lorb::log_error(e.what());
    return 1;
  } catch (const std::exception& e) {
    lorb::log_error(e.what());
    return 2;
  }
  return 2;
}
