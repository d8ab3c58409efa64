#include "tsfuse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tsfuse/common.hpp"

namespace tsfuse {

namespace {

void check_binary(const std::vector<int>& values, const char* what) {
  for (int v : values)
    if (v != 0 && v != 1)
      throw DataError(std::string(what) + " must be 0 or 1");
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

Confusion confusion_counts(const std::vector<int>& predicted,
                           const std::vector<int>& actual) {
  if (predicted.size() != actual.size())
    throw DataError("prediction and label counts differ");
  check_binary(predicted, "predictions");
  check_binary(actual, "labels");
  Confusion c;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    if (actual[k] == 1)
      predicted[k] == 1 ? ++c.tp : ++c.fn;
    else
      predicted[k] == 1 ? ++c.fp : ++c.tn;
  }
  return c;
}

ClassMetrics classification_metrics(const std::vector<int>& predicted,
                                    const std::vector<int>& actual) {
  ClassMetrics m;
  m.counts = confusion_counts(predicted, actual);
  const auto& c = m.counts;
  const std::int64_t total = c.tp + c.tn + c.fp + c.fn;
  if (total > 0)
    m.accuracy = static_cast<double>(c.tp + c.tn) / total;
  if (c.tp + c.fn > 0)
    m.sensitivity = static_cast<double>(c.tp) / (c.tp + c.fn);
  if (c.tn + c.fp > 0)
    m.specificity = static_cast<double>(c.tn) / (c.tn + c.fp);
  return m;
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DataError("score and label counts differ");
  if (scores.empty()) throw DataError("cannot build a ROC curve of nothing");
  check_binary(labels, "labels");
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("scores must be finite");

  std::int64_t pos = 0, neg = 0;
  for (int y : labels) y == 1 ? ++pos : ++neg;
  if (pos == 0 || neg == 0)
    throw DataError("ROC needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  std::vector<RocPoint> out;
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::int64_t tp = 0, fp = 0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double threshold = scores[order[k]];
    while (k < order.size() && scores[order[k]] == threshold) {
      labels[order[k]] == 1 ? ++tp : ++fp;
      ++k;
    }
    out.push_back({threshold, static_cast<double>(fp) / neg,
                   static_cast<double>(tp) / pos});
  }
  return out;
}

double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  const auto curve = roc_curve(scores, labels);
  double area = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k)
    area += (curve[k].fpr - curve[k - 1].fpr) *
            (curve[k].tpr + curve[k - 1].tpr) / 2.0;
  return area;
}

double optimal_cutoff(const std::vector<double>& scores,
                      const std::vector<int>& labels) {
  const auto curve = roc_curve(scores, labels);
  double best_j = -std::numeric_limits<double>::infinity();
  double best_threshold = curve.front().threshold;
  for (const auto& p : curve) {
    const double j = p.tpr - p.fpr;
    if (j > best_j) {  // first (highest-threshold) point wins ties
      best_j = j;
      best_threshold = p.threshold;
    }
  }
  return best_threshold;
}

std::vector<int> majority_smooth(const std::vector<int>& labels) {
  check_binary(labels, "labels");
  std::vector<int> out = labels;
  for (std::size_t k = 1; k + 1 < labels.size(); ++k) {
    const int votes = labels[k - 1] + labels[k] + labels[k + 1];
    out[k] = votes >= 2 ? 1 : 0;
  }
  return out;
}

std::array<std::vector<int>, 2> two_fold_split(
    const std::vector<std::string>& subject_ids) {
  if (subject_ids.size() < 2)
    throw DataError("two folds need at least two subjects");
  std::vector<int> order(subject_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (subject_ids[a] != subject_ids[b])
      return subject_ids[a] < subject_ids[b];
    return a < b;
  });
  std::array<std::vector<int>, 2> folds;
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    folds[pos % 2].push_back(order[pos]);
  return folds;
}

double tfcv_fitness(
    const Genome& genome,
    const std::vector<std::shared_ptr<const PreparedSubject>>& subjects,
    const FitnessSettings& settings, std::uint64_t master_seed) {
  const ModelConfig cfg = decode_genome(genome);
  std::vector<std::string> ids;
  ids.reserve(subjects.size());
  for (const auto& s : subjects) ids.push_back(s->id);
  const auto folds = two_fold_split(ids);

  double auc_sum = 0.0;
  for (int held = 0; held < 2; ++held) {
    std::vector<std::shared_ptr<const PreparedSubject>> train_subjects;
    for (int idx : folds[1 - held]) train_subjects.push_back(subjects[idx]);
    const TrainingSet train_set = make_training_set(train_subjects, cfg);

    FusionNetF net(cfg, kSamplesPerEpoch, settings.overrides);
    TrainSpec spec = settings.train;
    spec.seed = derive_seed(master_seed, seed_role::kFitness,
                            static_cast<std::uint64_t>(genome.key()),
                            static_cast<std::uint64_t>(held));
    train_network(net, train_set, spec);

    std::vector<double> scores;
    std::vector<int> labels;
    for (int idx : folds[held]) {
      const auto& subject = subjects[idx];
      const TrainingSet one = make_training_set({subject}, cfg);
      const auto part_scores =
          score_windows(net, one.parts[0], one.slots[0], settings.score_batch);
      scores.insert(scores.end(), part_scores.begin(), part_scores.end());
      for (auto lab : subject->labels) labels.push_back(lab);
    }
    auc_sum += roc_auc(scores, labels);
  }
  return auc_sum / 2.0;
}

LooCycle train_loo_cycle(
    const ModelConfig& cfg,
    const std::vector<std::shared_ptr<const PreparedSubject>>& subjects,
    int test_index, const FitnessSettings& settings,
    std::uint64_t master_seed) {
  if (subjects.size() < 2)
    throw DataError("leave-one-out needs at least two subjects");
  if (test_index < 0 || test_index >= static_cast<int>(subjects.size()))
    throw ConfigError("test_index out of range");

  std::vector<std::shared_ptr<const PreparedSubject>> train_subjects;
  for (int idx = 0; idx < static_cast<int>(subjects.size()); ++idx)
    if (idx != test_index) train_subjects.push_back(subjects[idx]);
  const TrainingSet train_set = make_training_set(train_subjects, cfg);

  LooCycle cycle{test_index,
                 FusionNetF(cfg, kSamplesPerEpoch, settings.overrides), 0.0};
  TrainSpec spec = settings.train;
  spec.seed = derive_seed(master_seed, seed_role::kCycle,
                          static_cast<std::uint64_t>(test_index));
  train_network(cycle.net, train_set, spec);

  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& subject : train_subjects) {
    const TrainingSet one = make_training_set({subject}, cfg);
    const auto part_scores = score_windows(cycle.net, one.parts[0],
                                           one.slots[0], settings.score_batch);
    scores.insert(scores.end(), part_scores.begin(), part_scores.end());
    for (auto lab : subject->labels) labels.push_back(lab);
  }
  cycle.threshold = optimal_cutoff(scores, labels);
  return cycle;
}

CycleResult evaluate_subject(FusionNetF& net, double threshold,
                             const std::shared_ptr<const PreparedSubject>& s,
                             int score_batch) {
  const TrainingSet one = make_training_set({s}, net.config());
  CycleResult r;
  r.subject_id = s->id;
  r.threshold = threshold;
  r.raw_scores =
      score_windows(net, one.parts[0], one.slots[0], score_batch);

  std::vector<int> calls(r.raw_scores.size());
  for (std::size_t k = 0; k < r.raw_scores.size(); ++k)
    calls[k] = r.raw_scores[k] >= threshold ? 1 : 0;
  r.predictions = majority_smooth(calls);

  std::vector<int> labels;
  labels.reserve(s->labels.size());
  for (auto lab : s->labels) labels.push_back(lab);

  const ClassMetrics m = classification_metrics(r.predictions, labels);
  r.accuracy = m.accuracy;
  r.sensitivity = m.sensitivity;
  r.specificity = m.specificity;
  bool has_both = false;
  {
    std::int64_t pos = 0, neg = 0;
    for (int y : labels) y == 1 ? ++pos : ++neg;
    has_both = pos > 0 && neg > 0;
  }
  if (has_both) r.auc = roc_auc(r.raw_scores, labels);
  return r;
}

LooSummary loo_evaluate(
    const ModelConfig& cfg,
    const std::vector<std::shared_ptr<const PreparedSubject>>& subjects,
    const FitnessSettings& settings, std::uint64_t master_seed) {
  LooSummary summary;
  for (int idx = 0; idx < static_cast<int>(subjects.size()); ++idx) {
    LooCycle cycle =
        train_loo_cycle(cfg, subjects, idx, settings, master_seed);
    summary.cycles.push_back(evaluate_subject(
        cycle.net, cycle.threshold, subjects[idx], settings.score_batch));
  }
  return summary;
}

std::string LooSummary::cycles_csv() const {
  std::string out = "subject_id,accuracy,sensitivity,specificity,auc,threshold\n";
  auto cell = [](const std::optional<double>& v) {
    return v ? format_number(*v) : std::string();
  };
  for (const auto& c : cycles) {
    out += c.subject_id;
    out += ',';
    out += cell(c.accuracy);
    out += ',';
    out += cell(c.sensitivity);
    out += ',';
    out += cell(c.specificity);
    out += ',';
    out += cell(c.auc);
    out += ',';
    out += format_number(c.threshold);
    out += '\n';
  }
  return out;
}

nlohmann::ordered_json LooSummary::aggregate_json() const {
  auto aggregate = [](const std::vector<double>& values) {
    nlohmann::ordered_json j;
    if (values.empty()) return j;  // null
    const double n = static_cast<double>(values.size());
    const double mean =
        std::accumulate(values.begin(), values.end(), 0.0) / n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd = values.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    j["mean"] = mean;
    j["std"] = sd;
    j["min"] = *lo;
    j["max"] = *hi;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.4f +/- %.4f (%.4f - %.4f)", mean, sd,
                  *lo, *hi);
    j["text"] = buf;
    return j;
  };

  auto collect = [&](auto member) {
    std::vector<double> values;
    for (const auto& c : cycles)
      if (c.*member) values.push_back(*(c.*member));
    return values;
  };

  nlohmann::ordered_json j;
  j["cycles"] = static_cast<int>(cycles.size());
  j["accuracy"] = aggregate(collect(&CycleResult::accuracy));
  j["sensitivity"] = aggregate(collect(&CycleResult::sensitivity));
  j["specificity"] = aggregate(collect(&CycleResult::specificity));
  j["auc"] = aggregate(collect(&CycleResult::auc));
  return j;
}

std::shared_ptr<const PreparedSubject> shuffle_subject_labels(
    const PreparedSubject& s, std::uint64_t seed) {
  auto copy = std::make_shared<PreparedSubject>(s);
  Rng rng(derive_seed(seed, seed_role::kLabelShuffle));
  auto& labels = copy->labels;
  for (std::size_t i = labels.size(); i > 1; --i)
    std::swap(labels[i - 1], labels[rng.below(i)]);
  return copy;
}

}  // namespace tsfuse
