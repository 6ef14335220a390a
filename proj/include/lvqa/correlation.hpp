#pragma once

// Rank agreement between a metric and human judgments: seeded random
// grouping, group-level scores, Spearman's rho and Kendall's tau-b averaged
// over seeds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lvqa/error.hpp"
#include "lvqa/scoring.hpp"

namespace lvqa {

struct Grouping {
  std::uint64_t seed = 0;
  int n_groups = 0;
  std::map<std::string, int> assignment;
  std::vector<std::vector<std::string>> groups;
};

/// Sorts ids, shuffles them with a seeded mt19937_64 and deals them
/// round-robin, so group sizes differ by at most one.
inline Grouping group_items(std::vector<std::string> ids, int n_groups, std::uint64_t seed) {
  if (n_groups < 2) throw ConfigError("need at least 2 groups");
  if (static_cast<size_t>(n_groups) > ids.size())
    throw ConfigError(std::to_string(n_groups) + " groups requested for " + std::to_string(ids.size()) + " items");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("duplicate item id in grouping input");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  Grouping g;
  g.seed = seed;
  g.n_groups = n_groups;
  g.groups.resize(n_groups);
  for (size_t k = 0; k < ids.size(); ++k) {
    const int group = static_cast<int>(k % n_groups);
    g.assignment[ids[k]] = group;
    g.groups[group].push_back(ids[k]);
  }
  return g;
}

/// 1-based ranks, ascending; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DegenerateInputError("score vectors differ in length (" + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()) + ")");
  if (a.size() < 2) throw DegenerateInputError("rank correlation needs at least 2 observations");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(a) || constant(b)) throw DegenerateInputError("rank correlation of a constant vector is undefined");
}

}  // namespace detail

/// Pearson correlation of average ranks.
inline double spearman_rho(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b);
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;  // mean rank survives averaging of ties
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean, db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return sab / std::sqrt(saa * sbb);
}

/// Kendall's tau-b.
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b);
  const size_t n = a.size();
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const bool ta = a[i] == a[j], tb = b[i] == b[j];
      if (ta) ++ties_a;
      if (tb) ++ties_b;
      if (ta || tb) continue;
      if ((a[i] < a[j]) == (b[i] < b[j])) ++concordant;
      else ++discordant;
    }
  }
  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return static_cast<double>(concordant - discordant) / std::sqrt((n0 - ties_a) * (n0 - ties_b));
}

/// Per-item scores on one side of a correlation. Scalars aggregate to the
/// group mean; confusion counts pool into a micro-averaged measure.
class ScoreTable {
 public:
  static ScoreTable scalars(std::map<std::string, double> values) {
    ScoreTable t;
    t.scalars_ = std::move(values);
    return t;
  }
  static ScoreTable counts(std::map<std::string, ConfusionCounts> values, Measure measure = Measure::kF1) {
    ScoreTable t;
    t.pooled_ = true;
    t.counts_ = std::move(values);
    t.measure_ = measure;
    return t;
  }

  bool pooled() const { return pooled_; }
  size_t size() const { return pooled_ ? counts_.size() : scalars_.size(); }

  std::set<std::string> ids() const {
    std::set<std::string> out;
    if (pooled_) for (const auto& [k, v] : counts_) out.insert(k);
    else for (const auto& [k, v] : scalars_) out.insert(k);
    return out;
  }

  double group_score(const std::vector<std::string>& members) const {
    if (pooled_) {
      ConfusionCounts c;
      for (const auto& id : members) c += counts_.at(id);
      return or_zero(report_from_counts(c, Scope::kGroup).get(measure_));
    }
    double sum = 0.0;
    for (const auto& id : members) sum += scalars_.at(id);
    return sum / static_cast<double>(members.size());
  }

 private:
  bool pooled_ = false;
  std::map<std::string, double> scalars_;
  std::map<std::string, ConfusionCounts> counts_;
  Measure measure_ = Measure::kF1;
};

struct SeedCorrelation {
  std::uint64_t seed = 0;
  double rho = 0.0;
  double tau = 0.0;
};

struct CorrelationResult {
  double spearman_rho = 0.0;
  double kendall_tau = 0.0;
  std::vector<SeedCorrelation> per_seed;
  int n_seeds = 0;
  int n_groups = 0;
};

inline const std::vector<std::uint64_t> kDefaultSeeds{0, 1, 2, 3, 4};
inline constexpr int kDefaultGroups = 25;

inline CorrelationResult correlate(const ScoreTable& metric, const ScoreTable& human, int n_groups,
                                   std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  const auto metric_ids = metric.ids(), human_ids = human.ids();
  if (metric_ids != human_ids) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(metric_ids.begin(), metric_ids.end(), human_ids.begin(), human_ids.end(),
                                  std::back_inserter(diff));
    std::string list;
    for (size_t i = 0; i < diff.size() && i < 20; ++i) list += (i ? ", " : "") + diff[i];
    if (diff.size() > 20) list += ", ...";
    throw AlignmentError("item ids differ between metric and human scores (" + std::to_string(diff.size()) +
                         "): " + list);
  }
  CorrelationResult out;
  out.n_groups = n_groups;
  const std::vector<std::string> ids(metric_ids.begin(), metric_ids.end());
  for (auto seed : seeds) {
    const Grouping g = group_items(ids, n_groups, seed);
    std::vector<double> m, h;
    for (const auto& members : g.groups) {
      m.push_back(metric.group_score(members));
      h.push_back(human.group_score(members));
    }
    out.per_seed.push_back({seed, spearman_rho(m, h), kendall_tau(m, h)});
  }
  out.n_seeds = static_cast<int>(out.per_seed.size());
  for (const auto& s : out.per_seed) {
    out.spearman_rho += s.rho;
    out.kendall_tau += s.tau;
  }
  out.spearman_rho /= out.n_seeds;
  out.kendall_tau /= out.n_seeds;
  return out;
}

inline nlohmann::json to_json(const CorrelationResult& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : r.per_seed) per.push_back({{"seed", s.seed}, {"rho", s.rho}, {"tau", s.tau}});
  return {{"per_seed", per}, {"mean_rho", r.spearman_rho}, {"mean_tau", r.kendall_tau}, {"n_groups", r.n_groups},
          {"n_seeds", r.n_seeds}};
}

}  // namespace lvqa
