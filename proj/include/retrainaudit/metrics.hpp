#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "retrainaudit/common.hpp"

namespace retrainaudit::metrics {

// Binary protected-group label for one instance. kNoGroup marks patients
// whose attribute value is missing; they are excluded from disparity
// computations but not from anything else.
using GroupId = std::int8_t;
inline constexpr GroupId kGroupA = 0;
inline constexpr GroupId kGroupB = 1;
inline constexpr GroupId kNoGroup = -1;

// ROC AUC in Mann-Whitney form: the fraction of (positive, negative) pairs
// ranked correctly, ties counted 1/2. Undefined when either class is absent.
Stat auc(std::span<const double> scores, std::span<const int> labels);

struct GroupAuc {
  Stat auc_a;
  Stat auc_b;
  Stat gap;  // |AUC_A - AUC_B|; undefined if either side is
};
GroupAuc group_auc_and_gap(std::span<const double> scores,
                           std::span<const int> labels,
                           std::span<const GroupId> groups);

// Consecutive differences of a per-phase series; undefined entries poison
// both adjacent deltas.
std::vector<Stat> delta_series(std::span<const Stat> series);

// Equal-opportunity gap |TPR_A - TPR_B|. Undefined when a group has no
// positives.
Stat eo_gap(std::span<const int> preds, std::span<const int> labels,
            std::span<const GroupId> groups);

// Demographic-parity gap |P(pred=1|A) - P(pred=1|B)|. Undefined when a
// group is empty.
Stat dp_gap(std::span<const int> preds, std::span<const GroupId> groups);

// Unbiased pairwise-agreement self-consistency over B replica predictions:
// [N0(N0-1) + N1(N1-1)] / (B(B-1)). Raw value, no clamping; it may dip
// below 0.5 at small B. Throws InternalError when B < 2.
double self_consistency(int n_ones, int n_replicas);
double self_consistency(std::span<const int> replica_preds);

// Exact 1-D Wasserstein-1 distance between two empirical distributions
// (uniform weights). Undefined when either sample is empty.
Stat wasserstein1(std::span<const double> sample_a,
                  std::span<const double> sample_b);

// Overall arbitrariness at one phase: 1 - mean self-consistency.
Stat overall_arbitrariness(std::span<const double> sc_values);

struct TemporalSc {
  Stat tsc;        // mean of the defined SC entries
  Stat delta_tsc;  // first defined SC minus last defined SC
};
// SC series of one instance across phases; entries may be undefined
// (instance abstained or not evaluated at that phase).
TemporalSc temporal_sc(std::span<const Stat> sc_series);

struct FlipStats {
  // One entry per transition t -> t+1. Undefined when either side has no
  // prediction (abstained phases break the chain).
  std::vector<Stat> flips;
  Stat flip_fraction;  // flips / evaluated transitions
};
// Prediction series of one instance across phases; nullopt = no prediction.
FlipStats flip_stats(std::span<const std::optional<int>> pred_series);

// Population flip rate at each transition t -> t+1: mean of the defined
// per-instance flip indicators. series[i] is instance i's prediction series.
std::vector<Stat> population_flip_rate(
    std::span<const std::vector<std::optional<int>>> series);

// Patient-level instability criteria. Thresholds are strict: flips must
// exceed 0.20, min SC must fall below 0.75, and the fitted slope must be
// negative.
bool unstable_by_flips(double mean_flip_fraction);
bool unstable_by_tsc(std::span<const double> mean_sc_per_phase);

// Least-squares slope of y against x = 0..n-1. Zero for n < 2.
double least_squares_slope(std::span<const double> y);

struct Multiplicity {
  int dpr = 0;  // number of distinct full prediction vectors
  Stat dr;      // expected pairwise disagreement; undefined when M < 2
};
// One prediction vector per model; all vectors must have equal length.
Multiplicity multiplicity(std::span<const std::vector<std::int8_t>> pred_vectors);

}  // namespace retrainaudit::metrics
