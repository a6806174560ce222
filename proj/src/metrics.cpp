#include "retrainaudit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace retrainaudit::metrics {

Stat auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw InternalError("auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += (y != 0);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return Stat::undefined("single-class");

  // Rank-sum with average ranks for ties.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // ranks i+1 .. j+1 share the average rank
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                      static_cast<double>(n_pos + 1);
  return Stat::of(u / (static_cast<double>(n_pos) * static_cast<double>(n_neg)));
}

GroupAuc group_auc_and_gap(std::span<const double> scores,
                           std::span<const int> labels,
                           std::span<const GroupId> groups) {
  if (scores.size() != groups.size())
    throw InternalError("group_auc_and_gap: groups length mismatch");
  std::vector<double> sa, sb;
  std::vector<int> la, lb;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (groups[i] == kGroupA) {
      sa.push_back(scores[i]);
      la.push_back(labels[i]);
    } else if (groups[i] == kGroupB) {
      sb.push_back(scores[i]);
      lb.push_back(labels[i]);
    }
  }
  GroupAuc out;
  out.auc_a = sa.empty() ? Stat::undefined("empty-group") : auc(sa, la);
  out.auc_b = sb.empty() ? Stat::undefined("empty-group") : auc(sb, lb);
  if (out.auc_a.defined() && out.auc_b.defined())
    out.gap = Stat::of(std::abs(out.auc_a.value() - out.auc_b.value()));
  else
    out.gap = Stat::undefined("group-auc-undefined");
  return out;
}

std::vector<Stat> delta_series(std::span<const Stat> series) {
  std::vector<Stat> out;
  for (std::size_t t = 1; t < series.size(); ++t) {
    if (series[t].defined() && series[t - 1].defined())
      out.push_back(Stat::of(series[t].value() - series[t - 1].value()));
    else
      out.push_back(Stat::undefined("adjacent-undefined"));
  }
  return out;
}

Stat eo_gap(std::span<const int> preds, std::span<const int> labels,
            std::span<const GroupId> groups) {
  long tp[2] = {0, 0}, pos[2] = {0, 0};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const GroupId g = groups[i];
    if (g != kGroupA && g != kGroupB) continue;
    if (labels[i] != 0) {
      ++pos[g];
      if (preds[i] != 0) ++tp[g];
    }
  }
  if (pos[0] == 0 || pos[1] == 0) return Stat::undefined("no-positives");
  const double tpr_a = static_cast<double>(tp[0]) / static_cast<double>(pos[0]);
  const double tpr_b = static_cast<double>(tp[1]) / static_cast<double>(pos[1]);
  return Stat::of(std::abs(tpr_a - tpr_b));
}

Stat dp_gap(std::span<const int> preds, std::span<const GroupId> groups) {
  long n[2] = {0, 0}, p1[2] = {0, 0};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const GroupId g = groups[i];
    if (g != kGroupA && g != kGroupB) continue;
    ++n[g];
    if (preds[i] != 0) ++p1[g];
  }
  if (n[0] == 0 || n[1] == 0) return Stat::undefined("empty-group");
  const double ra = static_cast<double>(p1[0]) / static_cast<double>(n[0]);
  const double rb = static_cast<double>(p1[1]) / static_cast<double>(n[1]);
  return Stat::of(std::abs(ra - rb));
}

double self_consistency(int n_ones, int n_replicas) {
  if (n_replicas < 2) throw InternalError("self_consistency needs B >= 2");
  const double b = n_replicas;
  const double n1 = n_ones;
  const double n0 = b - n1;
  return (n0 * (n0 - 1.0) + n1 * (n1 - 1.0)) / (b * (b - 1.0));
}

double self_consistency(std::span<const int> replica_preds) {
  int n1 = 0;
  for (int p : replica_preds) n1 += (p != 0);
  return self_consistency(n1, static_cast<int>(replica_preds.size()));
}

Stat wasserstein1(std::span<const double> sample_a,
                  std::span<const double> sample_b) {
  if (sample_a.empty() || sample_b.empty())
    return Stat::undefined("empty-sample");
  std::vector<double> a(sample_a.begin(), sample_a.end());
  std::vector<double> b(sample_b.begin(), sample_b.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Integrate |F_a^{-1}(p) - F_b^{-1}(p)| over p in (0,1): sweep the merged
  // quantile grid {i/n} U {j/m}. Breakpoints are compared as exact rationals.
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::size_t i = 0, j = 0;
  double p = 0.0, total = 0.0;
  while (i < n && j < m) {
    const unsigned long long lhs = static_cast<unsigned long long>(i + 1) * m;
    const unsigned long long rhs = static_cast<unsigned long long>(j + 1) * n;
    const double q = lhs <= rhs ? static_cast<double>(i + 1) / static_cast<double>(n)
                                : static_cast<double>(j + 1) / static_cast<double>(m);
    total += (q - p) * std::abs(a[i] - b[j]);
    p = q;
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return Stat::of(total);
}

Stat overall_arbitrariness(std::span<const double> sc_values) {
  if (sc_values.empty()) return Stat::undefined("empty");
  const double mean =
      std::accumulate(sc_values.begin(), sc_values.end(), 0.0) /
      static_cast<double>(sc_values.size());
  return Stat::of(1.0 - mean);
}

TemporalSc temporal_sc(std::span<const Stat> sc_series) {
  TemporalSc out;
  double sum = 0.0;
  int count = 0;
  const Stat* first = nullptr;
  const Stat* last = nullptr;
  for (const Stat& s : sc_series) {
    if (!s.defined()) continue;
    sum += s.value();
    ++count;
    if (!first) first = &s;
    last = &s;
  }
  if (count == 0) {
    out.tsc = Stat::undefined("no-defined-phases");
    out.delta_tsc = Stat::undefined("no-defined-phases");
    return out;
  }
  out.tsc = Stat::of(sum / count);
  out.delta_tsc = Stat::of(first->value() - last->value());
  return out;
}

FlipStats flip_stats(std::span<const std::optional<int>> pred_series) {
  FlipStats out;
  int flips = 0, evaluated = 0;
  for (std::size_t t = 0; t + 1 < pred_series.size(); ++t) {
    if (pred_series[t].has_value() && pred_series[t + 1].has_value()) {
      const int f = (*pred_series[t] != *pred_series[t + 1]) ? 1 : 0;
      out.flips.push_back(Stat::of(f));
      flips += f;
      ++evaluated;
    } else {
      out.flips.push_back(Stat::undefined("masked-transition"));
    }
  }
  if (evaluated == 0)
    out.flip_fraction = Stat::undefined(
        pred_series.size() < 2 ? "single-phase" : "all-transitions-masked");
  else
    out.flip_fraction =
        Stat::of(static_cast<double>(flips) / static_cast<double>(evaluated));
  return out;
}

std::vector<Stat> population_flip_rate(
    std::span<const std::vector<std::optional<int>>> series) {
  if (series.empty()) return {};
  const std::size_t phases = series.front().size();
  std::vector<Stat> out;
  for (std::size_t t = 0; t + 1 < phases; ++t) {
    long flips = 0, n = 0;
    for (const auto& s : series) {
      if (s[t].has_value() && s[t + 1].has_value()) {
        ++n;
        flips += (*s[t] != *s[t + 1]) ? 1 : 0;
      }
    }
    out.push_back(n == 0
                      ? Stat::undefined("no-evaluated-instances")
                      : Stat::of(static_cast<double>(flips) /
                                 static_cast<double>(n)));
  }
  return out;
}

bool unstable_by_flips(double mean_flip_fraction) {
  return mean_flip_fraction > 0.20;
}

double least_squares_slope(std::span<const double> y) {
  const std::size_t n = y.size();
  if (n < 2) return 0.0;
  const double mean_x = 0.5 * static_cast<double>(n - 1);
  double mean_y = 0.0;
  for (double v : y) mean_y += v;
  mean_y /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - mean_x;
    sxy += dx * (y[i] - mean_y);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

bool unstable_by_tsc(std::span<const double> mean_sc_per_phase) {
  if (mean_sc_per_phase.empty()) return false;
  const double min_sc =
      *std::min_element(mean_sc_per_phase.begin(), mean_sc_per_phase.end());
  if (min_sc < 0.75) return true;
  return least_squares_slope(mean_sc_per_phase) < 0.0;
}

Multiplicity multiplicity(std::span<const std::vector<std::int8_t>> pred_vectors) {
  Multiplicity out;
  const std::size_t m = pred_vectors.size();
  if (m == 0) {
    out.dr = Stat::undefined("no-models");
    return out;
  }
  const std::size_t n = pred_vectors.front().size();
  for (const auto& v : pred_vectors)
    if (v.size() != n) throw InternalError("multiplicity: ragged prediction vectors");

  std::set<std::vector<std::int8_t>> distinct(pred_vectors.begin(),
                                              pred_vectors.end());
  out.dpr = static_cast<int>(distinct.size());

  if (m < 2) {
    out.dr = Stat::undefined("single-model");
    return out;
  }
  if (n == 0) {
    out.dr = Stat::undefined("no-instances");
    return out;
  }
  double sum = 0.0;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t q = p + 1; q < m; ++q) {
      long mismatch = 0;
      for (std::size_t i = 0; i < n; ++i)
        mismatch += (pred_vectors[p][i] != pred_vectors[q][i]) ? 1 : 0;
      sum += static_cast<double>(mismatch) / static_cast<double>(n);
    }
  }
  const double pairs = 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
  out.dr = Stat::of(sum / pairs);
  return out;
}

}  // namespace retrainaudit::metrics
