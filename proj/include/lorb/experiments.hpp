#ifndef LORB_EXPERIMENTS_HPP_
#define LORB_EXPERIMENTS_HPP_

#include <atomic>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lorb/trainer.hpp"

namespace lorb {

struct DomainData {
  std::string name;
  Dataset train;
  Dataset dev;
  Dataset test;
};

// Runs fn(i) for i in [0, count) on up to `jobs` threads. Each cell owns its
// models and tapes; results are written into index-addressed slots, so the
// output is independent of scheduling.
inline void parallel_for(std::size_t count, int jobs,
                         const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
  pool.reserve(n);
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

// ---- method comparison ------------------------------------------------------

struct CompareRow {
  std::string method;
  double trainable_fraction = 1.0;
  std::vector<double> wer;   // per domain, order matches report.domains
  std::vector<double> werr;  // vs the unadapted base
  bool diverged = false;
  int best_step = 0;
};

struct CompareReport {
  std::vector<std::string> domains;
  std::size_t target_index = 0;
  std::vector<double> base_wer;  // unadapted baseline per domain
  std::vector<CompareRow> rows;
};

inline nlohmann::json compare_report_json(const CompareReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const CompareRow& row : r.rows) {
    rows.push_back({{"method", row.method},
                    {"trainable_fraction", row.trainable_fraction},
                    {"wer", row.wer},
                    {"werr_vs_base", row.werr},
                    {"diverged", row.diverged},
                    {"best_step", row.best_step}});
  }
  return {{"domains", r.domains},
          {"target", r.domains.at(r.target_index)},
          {"base_wer", r.base_wer},
          {"rows", rows}};
}

inline std::string compare_report_table(const CompareReport& r) {
  std::ostringstream oss;
  oss << std::left << std::setw(10) << "method" << std::right << std::setw(12)
      << "trainable%";
  for (const std::string& d : r.domains) oss << std::setw(20) << d;
  oss << "\n";
  oss << std::left << std::setw(10) << "base" << std::right << std::setw(12)
      << "-";
  for (double wer : r.base_wer) {
    oss << std::setw(14) << std::fixed << std::setprecision(4) << wer
        << " (WER)";
  }
  oss << "\n";
  for (const CompareRow& row : r.rows) {
    oss << std::left << std::setw(10) << row.method << std::right
        << std::setw(11) << std::fixed << std::setprecision(3)
        << row.trainable_fraction * 100.0 << "%";
    for (double werr : row.werr) {
      oss << std::setw(14) << std::setprecision(2) << werr * 100.0 << "% WERR";
    }
    oss << "\n";
  }
  return oss.str();
}

// Adapts the base on the target domain with each method, then evaluates on
// every domain's test set; WERR is measured against the unadapted base.
inline CompareReport compare_methods(const ScoringModel& base,
                                     const Vocabulary& vocab,
                                     const std::vector<DomainData>& domains,
                                     std::size_t target_index,
                                     const std::vector<AdaptationConfig>& methods,
                                     const TrainConfig& train_cfg,
                                     int jobs = 1) {
  if (domains.size() < 2) {
    throw ConfigError("compare_methods: needs a target and at least one "
                      "non-target domain");
  }
  if (target_index >= domains.size()) {
    throw ConfigError("compare_methods: target index out of range");
  }
  CompareReport report;
  report.target_index = target_index;
  for (const DomainData& d : domains) {
    report.domains.push_back(d.name);
    report.base_wer.push_back(
        evaluate_model_wer(base, vocab, d.test, train_cfg.beta).wer);
  }
  report.rows.resize(methods.size());
  parallel_for(methods.size(), jobs, [&](std::size_t mi) {
    TrainConfig cfg = train_cfg;
    cfg.method = methods[mi];
    TrainResult res = train(base, vocab, domains[target_index].train,
                            domains[target_index].dev, cfg);
    CompareRow row;
    row.method = method_name(methods[mi].method);
    row.trainable_fraction = trainable_fraction(res.model);
    row.diverged = res.report.diverged;
    row.best_step = res.report.best_step;
    for (std::size_t di = 0; di < domains.size(); ++di) {
      const double wer =
          evaluate_model_wer(res.model, vocab, domains[di].test, cfg.beta).wer;
      row.wer.push_back(wer);
      row.werr.push_back(relative_wer_improvement(report.base_wer[di], wer));
    }
    report.rows[mi] = std::move(row);
  });
  return report;
}

// ---- stability sweep ---------------------------------------------------------

struct StabilityCell {
  int warmup = 0;
  double lr = 0.0;
  bool diverged = false;
  double target_werr = 0.0;
  double nontarget_werr = 0.0;
};

struct StabilityGrid {
  std::string method;
  std::vector<StabilityCell> cells;
  // Spread (max - min) over non-diverged cells; absent if all cells diverged.
  std::optional<double> target_spread;
  std::optional<double> nontarget_spread;
  int divergences = 0;
};

struct StabilityReport {
  std::vector<StabilityGrid> grids;
};

inline nlohmann::json stability_report_json(const StabilityReport& r) {
  nlohmann::json grids = nlohmann::json::array();
  for (const StabilityGrid& g : r.grids) {
    nlohmann::json cells = nlohmann::json::array();
    for (const StabilityCell& c : g.cells) {
      cells.push_back({{"warmup", c.warmup},
                       {"lr", c.lr},
                       {"diverged", c.diverged},
                       {"target_werr", c.target_werr},
                       {"nontarget_werr", c.nontarget_werr}});
    }
    nlohmann::json jg = {{"method", g.method},
                         {"cells", cells},
                         {"divergences", g.divergences}};
    jg["target_spread"] =
        g.target_spread ? nlohmann::json(*g.target_spread) : nlohmann::json();
    jg["nontarget_spread"] = g.nontarget_spread
                                 ? nlohmann::json(*g.nontarget_spread)
                                 : nlohmann::json();
    grids.push_back(jg);
  }
  return {{"grids", grids}};
}

// Trains each method once per (warmup, lr) cell and records WERR on the
// target and one non-target test set, flagging NaN aborts instead of failing.
inline StabilityReport stability_sweep(const ScoringModel& base,
                                       const Vocabulary& vocab,
                                       const DomainData& target,
                                       const Dataset& nontarget_test,
                                       const std::vector<int>& warmups,
                                       const std::vector<double>& lrs,
                                       const std::vector<AdaptationConfig>& methods,
                                       const TrainConfig& train_cfg,
                                       int jobs = 1) {
  if (warmups.empty() || lrs.empty()) {
    throw ConfigError("stability_sweep: empty grid");
  }
  const double base_target =
      evaluate_model_wer(base, vocab, target.test, train_cfg.beta).wer;
  const double base_nontarget =
      evaluate_model_wer(base, vocab, nontarget_test, train_cfg.beta).wer;

  StabilityReport report;
  report.grids.resize(methods.size());
  struct CellSpec { std::size_t method; std::size_t cell; int warmup; double lr; };
  std::vector<CellSpec> specs;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    report.grids[mi].method = method_name(methods[mi].method);
    report.grids[mi].cells.resize(warmups.size() * lrs.size());
    std::size_t cell = 0;
    for (int w : warmups) {
      for (double lr : lrs) specs.push_back({mi, cell++, w, lr});
    }
  }
  parallel_for(specs.size(), jobs, [&](std::size_t si) {
    const CellSpec& spec = specs[si];
    TrainConfig cfg = train_cfg;
    cfg.method = methods[spec.method];
    cfg.warmup_steps = std::min(spec.warmup, cfg.max_steps);
    cfg.lr = spec.lr;
    TrainResult res =
        train(base, vocab, target.train, target.dev, cfg);
    StabilityCell cell;
    cell.warmup = spec.warmup;
    cell.lr = spec.lr;
    cell.diverged = res.report.diverged;
    if (!cell.diverged) {
      cell.target_werr = relative_wer_improvement(
          base_target,
          evaluate_model_wer(res.model, vocab, target.test, cfg.beta).wer);
      cell.nontarget_werr = relative_wer_improvement(
          base_nontarget,
          evaluate_model_wer(res.model, vocab, nontarget_test, cfg.beta).wer);
    }
    report.grids[spec.method].cells[spec.cell] = cell;
  });
  for (StabilityGrid& g : report.grids) {
    double tmin = 0, tmax = 0, nmin = 0, nmax = 0;
    bool any = false;
    for (const StabilityCell& c : g.cells) {
      if (c.diverged) {
        ++g.divergences;
        continue;
      }
      if (!any) {
        tmin = tmax = c.target_werr;
        nmin = nmax = c.nontarget_werr;
        any = true;
      } else {
        tmin = std::min(tmin, c.target_werr);
        tmax = std::max(tmax, c.target_werr);
        nmin = std::min(nmin, c.nontarget_werr);
        nmax = std::max(nmax, c.nontarget_werr);
      }
    }
    if (any) {
      g.target_spread = tmax - tmin;
      g.nontarget_spread = nmax - nmin;
    }
  }
  return report;
}

// ---- data-scaling sweep --------------------------------------------------------

struct ScalingPoint {
  std::size_t size = 0;
  double wer = 0.0;
  bool diverged = false;
};

struct ScalingCurve {
  std::string method;
  std::vector<ScalingPoint> points;
};

struct ScalingReport {
  std::vector<ScalingCurve> curves;
};

inline nlohmann::json scaling_report_json(const ScalingReport& r) {
  nlohmann::json curves = nlohmann::json::array();
  for (const ScalingCurve& c : r.curves) {
    nlohmann::json pts = nlohmann::json::array();
    for (const ScalingPoint& p : c.points) {
      pts.push_back({{"size", p.size}, {"wer", p.wer}, {"diverged", p.diverged}});
    }
    curves.push_back({{"method", c.method}, {"points", pts}});
  }
  return {{"curves", curves}};
}

inline std::string scaling_report_csv(const ScalingReport& r) {
  std::ostringstream oss;
  oss << "method,size,wer,diverged\n";
  for (const ScalingCurve& c : r.curves) {
    for (const ScalingPoint& p : c.points) {
      oss << c.method << "," << p.size << "," << p.wer << "," << p.diverged
          << "\n";
    }
  }
  return oss.str();
}

// Trains each method on nested subsets of the target training data (prefixes
// of one seeded shuffle) and reports test WER per size.
inline ScalingReport scaling_sweep(const ScoringModel& base,
                                   const Vocabulary& vocab,
                                   const DomainData& target,
                                   const std::vector<std::size_t>& sizes,
                                   const std::vector<AdaptationConfig>& methods,
                                   const TrainConfig& train_cfg, int jobs = 1) {
  if (sizes.empty()) throw ConfigError("scaling_sweep: empty size list");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) {
      throw ConfigError("scaling_sweep: sizes must be strictly ascending");
    }
  }
  if (sizes.back() > target.train.size()) {
    throw ConfigError(strcat("scaling_sweep: size ", sizes.back(),
                             " exceeds dataset size ", target.train.size()));
  }
  std::vector<std::size_t> order(target.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream rng(train_cfg.seed ^ 0x5ca1eull);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.next_below(i)]);
  }

  ScalingReport report;
  report.curves.resize(methods.size());
  struct PointSpec { std::size_t method; std::size_t size_index; };
  std::vector<PointSpec> specs;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    report.curves[mi].method = method_name(methods[mi].method);
    report.curves[mi].points.resize(sizes.size());
    for (std::size_t si = 0; si < sizes.size(); ++si) specs.push_back({mi, si});
  }
  parallel_for(specs.size(), jobs, [&](std::size_t i) {
    const PointSpec& spec = specs[i];
    Dataset subset;
    for (std::size_t k = 0; k < sizes[spec.size_index]; ++k) {
      subset.push_back(target.train[order[k]]);
    }
    TrainConfig cfg = train_cfg;
    cfg.method = methods[spec.method];
    TrainResult res = train(base, vocab, subset, target.dev, cfg);
    ScalingPoint p;
    p.size = sizes[spec.size_index];
    p.diverged = res.report.diverged;
    p.wer = evaluate_model_wer(res.model, vocab, target.test, cfg.beta).wer;
    report.curves[spec.method].points[spec.size_index] = p;
  });
  return report;
}

}  // namespace lorb

#endif  // LORB_EXPERIMENTS_HPP_
