#pragma once

// Scoring and subject-wise validation: confusion metrics, ROC / AUC,
// threshold selection, 3-window smoothing, two-fold search fitness, and
// leave-one-subject-out evaluation.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsfuse/genome.hpp"
#include "tsfuse/network.hpp"
#include "tsfuse/signal.hpp"

namespace tsfuse {

struct Confusion {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion_counts(const std::vector<int>& predicted,
                           const std::vector<int>& actual);

// Ratios with an empty denominator are absent rather than zero.
struct ClassMetrics {
  Confusion counts;
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

ClassMetrics classification_metrics(const std::vector<int>& predicted,
                                    const std::vector<int>& actual);

struct RocPoint {
  double threshold = 0;  // call positive when score >= threshold
  double fpr = 0;
  double tpr = 0;
};

// Sweep starts above every score (+infinity) and then visits each distinct
// score in descending order.  Needs both classes present.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels);

// Trapezoidal area under the curve above.
double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels);

// Threshold maximizing TPR - FPR; ties resolve to the higher threshold.
double optimal_cutoff(const std::vector<double>& scores,
                      const std::vector<int>& labels);

// Each interior point becomes the majority of the surrounding three input
// points; the first and last are copied through.
std::vector<int> majority_smooth(const std::vector<int>& labels);

// Subjects sorted by id, then dealt alternately into two folds; returns
// indices into the input vector.
std::array<std::vector<int>, 2> two_fold_split(
    const std::vector<std::string>& subject_ids);

struct FitnessSettings {
  TrainSpec train;  // seed is ignored; per-genome seeds are derived inside
  StructureOverrides overrides;
  int score_batch = 1024;
};

// Decodes the genome, trains cold on each fold in turn, and averages the
// held-out AUC of the two folds (scores concatenated across the fold's
// subjects, no smoothing).
double tfcv_fitness(
    const Genome& genome,
    const std::vector<std::shared_ptr<const PreparedSubject>>& subjects,
    const FitnessSettings& settings, std::uint64_t master_seed);

// One leave-one-subject-out cycle: a network trained cold on every other
// subject plus the threshold picked on those training subjects' raw scores.
struct LooCycle {
  int test_index = -1;
  FusionNetF net;
  double threshold = 0;
};

LooCycle train_loo_cycle(
    const ModelConfig& cfg,
    const std::vector<std::shared_ptr<const PreparedSubject>>& subjects,
    int test_index, const FitnessSettings& settings,
    std::uint64_t master_seed);

struct CycleResult {
  std::string subject_id;
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> auc;  // raw scores, before smoothing
  double threshold = 0;
  std::vector<double> raw_scores;
  std::vector<int> predictions;  // after smoothing
};

// Scores one prepared subject with a trained network: thresholded calls are
// smoothed and compared against the labels; AUC uses the raw scores.
CycleResult evaluate_subject(FusionNetF& net, double threshold,
                             const std::shared_ptr<const PreparedSubject>& s,
                             int score_batch = 1024);

struct LooSummary {
  std::vector<CycleResult> cycles;

  std::string cycles_csv() const;
  nlohmann::ordered_json aggregate_json() const;
};

LooSummary loo_evaluate(
    const ModelConfig& cfg,
    const std::vector<std::shared_ptr<const PreparedSubject>>& subjects,
    const FitnessSettings& settings, std::uint64_t master_seed);

// Permutation control: same epochs, labels shuffled in place.
std::shared_ptr<const PreparedSubject> shuffle_subject_labels(
    const PreparedSubject& s, std::uint64_t seed);

}  // namespace tsfuse
