#include "tsfuse/metaheuristics.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "tsfuse/common.hpp"

namespace tsfuse {

double decayed_rate(int step, double start, double decay, double floor_value) {
  if (step < 0) throw ConfigError("schedule step must be >= 0");
  const double value = start - start * (step / 5) * decay;
  return std::max(value, floor_value);
}

double mutation_rate(int step, double start, double decay,
                     double floor_value) {
  return decayed_rate(step, start, decay, floor_value);
}

double inertia_weight(int step, double start, double decay,
                      double floor_value) {
  return decayed_rate(step, start, decay, floor_value);
}

double expected_mutations(double rate, int population, int genome_bits) {
  return rate * (population - 2) * genome_bits;
}

double population_diversity(const std::vector<Genome>& members) {
  const int z = static_cast<int>(members.size());
  if (z < 2) return 0.0;
  std::int64_t sum = 0;
  for (int locus = 0; locus < kGenomeBits; ++locus) {
    std::int64_t ones = 0;
    for (const auto& g : members) ones += g.bits[locus];
    sum += ones * (z - ones);
  }
  return 2.0 * static_cast<double>(sum) /
         (static_cast<double>(z) * (z - 1) * kGenomeBits);
}

int tournament_select(int population, Rng& rng, TournamentStats* stats) {
  if (population < 2) throw ConfigError("tournament needs population >= 2");
  int i = 0, j = 0;
  do {
    i = static_cast<int>(rng.below(static_cast<std::uint64_t>(population)));
    j = static_cast<int>(rng.below(static_cast<std::uint64_t>(population)));
    if (stats != nullptr) {
      ++stats->pair_draws;
      if (i == stats->watched_index || j == stats->watched_index)
        ++stats->draws_with_watched;
    }
  } while (i == j);
  if (stats != nullptr) ++stats->tournaments;
  return std::min(i, j);
}

Genome two_point_crossover(const Genome& a, const Genome& b, Rng& rng) {
  int lo = static_cast<int>(rng.below(kGenomeBits));
  int hi = static_cast<int>(rng.below(kGenomeBits));
  if (lo > hi) std::swap(lo, hi);
  Genome child = a;
  for (int locus = lo; locus <= hi; ++locus) child.bits[locus] = b.bits[locus];
  return child;
}

void mutate(Genome& g, double rate, Rng& rng) {
  for (int locus = 0; locus < kGenomeBits; ++locus)
    if (rng.uniform01() < rate) g.bits[locus] ^= 1;
}

double velocity_step(double v, int x, int p, int l, double w, double c1,
                     double c2, double r1, double r2) {
  return w * v + c1 * r1 * (p - x) + c2 * r2 * (l - x);
}

int position_step(double v, double u) {
  const double gate = 1.0 / (1.0 + std::exp(-v));
  return u < gate ? 1 : 0;
}

namespace {

Genome random_genome(Rng& rng) {
  Genome g{};
  for (int locus = 0; locus < kGenomeBits; ++locus)
    g.bits[locus] = rng.uniform01() < 0.5 ? 1 : 0;
  return g;
}

// Scores every not-yet-cached genome exactly once.  Work items are fixed
// before the threads start and results land in per-item slots, so the
// outcome does not depend on the worker count.
class ScoreBook {
 public:
  explicit ScoreBook(const FitnessFn& fn, int jobs)
      : fn_(fn), jobs_(std::max(1, jobs)) {}

  void ensure(const std::vector<Genome>& candidates) {
    std::vector<Genome> todo;
    std::unordered_set<std::uint16_t> seen;
    for (const auto& g : candidates) {
      const auto key = g.key();
      if (cache_.count(key) > 0 || !seen.insert(key).second) continue;
      todo.push_back(g);
    }
    if (todo.empty()) return;

    std::vector<double> results(todo.size(), 0.0);
    std::vector<std::exception_ptr> errors(todo.size());
    if (jobs_ == 1 || todo.size() == 1) {
      for (std::size_t idx = 0; idx < todo.size(); ++idx) {
        try {
          results[idx] = fn_(todo[idx]);
        } catch (...) {
          errors[idx] = std::current_exception();
        }
      }
    } else {
      std::atomic<std::size_t> next{0};
      auto worker = [&]() {
        for (;;) {
          const std::size_t idx = next.fetch_add(1);
          if (idx >= todo.size()) return;
          try {
            results[idx] = fn_(todo[idx]);
          } catch (...) {
            errors[idx] = std::current_exception();
          }
        }
      };
      std::vector<std::thread> pool;
      const int count =
          std::min<int>(jobs_, static_cast<int>(todo.size()));
      pool.reserve(count);
      for (int k = 0; k < count; ++k) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    for (std::size_t idx = 0; idx < todo.size(); ++idx)
      if (errors[idx]) std::rethrow_exception(errors[idx]);
    for (std::size_t idx = 0; idx < todo.size(); ++idx)
      cache_.emplace(todo[idx].key(), results[idx]);
  }

  double score(const Genome& g) const {
    const auto it = cache_.find(g.key());
    if (it == cache_.end()) throw RunError("genome was never scored");
    return it->second;
  }

  std::int64_t distinct() const {
    return static_cast<std::int64_t>(cache_.size());
  }

 private:
  const FitnessFn& fn_;
  int jobs_;
  std::unordered_map<std::uint16_t, double> cache_;
};

// Descending fitness; equal scores fall back to the packed bits so the
// ordering is reproducible.
void sort_desc(std::vector<Genome>& members, const ScoreBook& book) {
  std::sort(members.begin(), members.end(),
            [&](const Genome& a, const Genome& b) {
              const double fa = book.score(a), fb = book.score(b);
              if (fa != fb) return fa > fb;
              return a.key() < b.key();
            });
}

}  // namespace

SearchLog run_ga(const GaConfig& cfg, const FitnessFn& fitness,
                 std::uint64_t seed, int jobs) {
  if (cfg.population < 3) throw ConfigError("GA population must be >= 3");
  if (cfg.max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (cfg.patience_limit < 1) throw ConfigError("patience_limit must be >= 1");
  if (cfg.crossover_prob < 0.0 || cfg.crossover_prob > 1.0)
    throw ConfigError("crossover_prob must be in [0, 1]");

  const auto started = std::chrono::steady_clock::now();
  const int z = cfg.population;
  Rng rng(derive_seed(seed, seed_role::kOptimizer, std::uint64_t{1}));
  ScoreBook book(fitness, jobs);

  std::vector<Genome> pop;
  pop.reserve(z);
  for (int k = 0; k < z; ++k) pop.push_back(random_genome(rng));
  book.ensure(pop);
  sort_desc(pop, book);

  SearchLog log;
  log.algo = "ga";
  log.stop_cause = "max_steps";
  double best_fit = -std::numeric_limits<double>::infinity();
  Genome best{};
  int patience = 0;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    const double rate = mutation_rate(step, cfg.mutation_start,
                                      cfg.mutation_decay, cfg.mutation_floor);
    std::vector<Genome> offspring;
    offspring.reserve(z - 2);
    for (int k = 0; k < z - 2; ++k) {
      const int first = tournament_select(z, rng);
      Genome child;
      if (rng.uniform01() < cfg.crossover_prob) {
        int second = first;
        while (second == first) second = tournament_select(z, rng);
        child = two_point_crossover(pop[first], pop[second], rng);
      } else {
        child = pop[first];
      }
      mutate(child, rate, rng);
      offspring.push_back(child);
    }
    book.ensure(offspring);

    std::vector<Genome> merged = pop;
    merged.insert(merged.end(), offspring.begin(), offspring.end());
    sort_desc(merged, book);

    std::vector<Genome> next;
    next.reserve(z);
    next.push_back(pop[0]);  // elites survive untouched
    next.push_back(pop[1]);
    for (int k = 0; k < z - 2; ++k) next.push_back(merged[k]);
    sort_desc(next, book);
    pop = std::move(next);

    const double step_best = book.score(pop[0]);
    if (step_best > best_fit) {
      best_fit = step_best;
      best = pop[0];
      patience = 0;
    } else {
      ++patience;
    }
    log.steps.push_back({step, best_fit, best, population_diversity(pop),
                         rate, patience});
    if (patience >= cfg.patience_limit) {
      log.stop_cause = "patience";
      break;
    }
  }

  log.best_genome = best;
  log.best_fitness = best_fit;
  log.distinct_evaluations = book.distinct();
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return log;
}

SearchLog run_pso(const PsoConfig& cfg, const FitnessFn& fitness,
                  std::uint64_t seed, int jobs) {
  if (cfg.population < 1) throw ConfigError("PSO population must be >= 1");
  if (cfg.max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (cfg.patience_limit < 1) throw ConfigError("patience_limit must be >= 1");

  const auto started = std::chrono::steady_clock::now();
  const int z = cfg.population;
  Rng rng(derive_seed(seed, seed_role::kOptimizer, std::uint64_t{2}));
  ScoreBook book(fitness, jobs);

  std::vector<Genome> x;
  x.reserve(z);
  for (int k = 0; k < z; ++k) x.push_back(random_genome(rng));
  std::vector<std::array<double, kGenomeBits>> v(z);
  for (int k = 0; k < z; ++k)
    for (int d = 0; d < kGenomeBits; ++d) v[k][d] = rng.uniform(-1.0, 1.0);

  book.ensure(x);
  std::vector<Genome> pbest = x;
  std::vector<double> pfit(z);
  for (int k = 0; k < z; ++k) pfit[k] = book.score(x[k]);

  // Ring neighborhood: the best personal best among {k-1, k, k+1}, self
  // included; score ties go to the lowest particle index.
  auto ring_best = [&](int k) {
    const int ids[3] = {(k - 1 + z) % z, k, (k + 1) % z};
    int best_id = ids[0];
    for (int c = 1; c < 3; ++c) {
      const int id = ids[c];
      if (pfit[id] > pfit[best_id] ||
          (pfit[id] == pfit[best_id] && id < best_id))
        best_id = id;
    }
    return best_id;
  };
  std::vector<Genome> lbest(z);
  for (int k = 0; k < z; ++k) lbest[k] = pbest[ring_best(k)];

  SearchLog log;
  log.algo = "pso";
  log.stop_cause = "max_steps";
  double best_fit = -std::numeric_limits<double>::infinity();
  Genome best{};
  int patience = 0;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    // The weight trails the step counter by one, so the first update still
    // runs at the start value.
    const double w = inertia_weight(step - 1, cfg.inertia_start,
                                    cfg.inertia_decay, cfg.inertia_floor);
    for (int k = 0; k < z; ++k) {
      for (int d = 0; d < kGenomeBits; ++d) {
        const double r1 = rng.uniform01();
        const double r2 = rng.uniform01();
        v[k][d] = velocity_step(v[k][d], x[k].bits[d], pbest[k].bits[d],
                                lbest[k].bits[d], w, cfg.c1, cfg.c2, r1, r2);
        x[k].bits[d] =
            static_cast<std::uint8_t>(position_step(v[k][d], rng.uniform01()));
      }
    }
    book.ensure(x);
    for (int k = 0; k < z; ++k) {
      const double fit = book.score(x[k]);
      if (fit > pfit[k]) {
        pfit[k] = fit;
        pbest[k] = x[k];
      }
    }
    for (int k = 0; k < z; ++k) lbest[k] = pbest[ring_best(k)];

    int arg_best = 0;
    for (int k = 1; k < z; ++k)
      if (pfit[k] > pfit[arg_best]) arg_best = k;
    if (pfit[arg_best] > best_fit) {
      best_fit = pfit[arg_best];
      best = pbest[arg_best];
      patience = 0;
    } else {
      ++patience;
    }
    log.steps.push_back({step, best_fit, best, population_diversity(x), w,
                         patience});
    if (patience >= cfg.patience_limit) {
      log.stop_cause = "patience";
      break;
    }
  }

  log.best_genome = best;
  log.best_fitness = best_fit;
  log.distinct_evaluations = book.distinct();
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return log;
}

std::string search_steps_jsonl(const SearchLog& log) {
  std::string out;
  for (const auto& s : log.steps) {
    nlohmann::ordered_json line;
    line["step"] = s.step;
    line["best_fitness"] = s.best_fitness;
    line["best_genome"] = genome_to_string(s.best_genome);
    line["diversity"] = s.diversity;
    line["rate"] = s.rate;
    line["patience"] = s.patience;
    out += line.dump();
    out += '\n';
  }
  return out;
}

nlohmann::ordered_json search_summary_json(const SearchLog& log) {
  nlohmann::ordered_json j;
  j["algo"] = log.algo;
  j["best_genome"] = genome_to_string(log.best_genome);
  j["best_fitness"] = log.best_fitness;
  j["steps"] = static_cast<int>(log.steps.size());
  j["stop_cause"] = log.stop_cause;
  j["distinct_evaluations"] = log.distinct_evaluations;
  return j;
}

}  // namespace tsfuse
