#pragma once

// Binary search over the 15-bit configuration space: a generational GA
// (tournament selection, two-point crossover, step-decaying mutation, two
// elites) and a discrete binary PSO (decaying inertia, ring topology).
//
// Both runners cache fitness by genome so no configuration is scored twice,
// evaluate newly seen genomes with a configurable number of worker threads,
// and produce identical logs regardless of the thread count.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsfuse/genome.hpp"
#include "tsfuse/rng.hpp"

namespace tsfuse {

// Step-shaped decay: start - start * floor(step / 5) * decay, never below
// the floor.  The GA mutation rate reads it at the current step number; the
// PSO inertia weight reads it at (iteration - 1).
double decayed_rate(int step, double start, double decay, double floor_value);

double mutation_rate(int step, double start = 0.2, double decay = 0.3,
                     double floor_value = 0.01);
double inertia_weight(int step, double start = 0.9, double decay = 0.09,
                      double floor_value = 0.4);

// Mean mutated-bit count for one generation of offspring (two elite slots
// are exempt from mutation).
double expected_mutations(double rate, int population,
                          int genome_bits = kGenomeBits);

// Mean pairwise Hamming distance over all member pairs, normalized to [0,1].
double population_diversity(const std::vector<Genome>& members);

struct TournamentStats {
  int watched_index = 0;
  std::int64_t tournaments = 0;
  std::int64_t pair_draws = 0;           // attempts, including discarded ties
  std::int64_t draws_with_watched = 0;   // attempts containing watched_index
};

// Two member indices of a descending-sorted population are drawn with
// replacement, redrawing while they collide; the better-ranked (lower) index
// wins.  stats, when given, instruments every draw attempt.
int tournament_select(int population, Rng& rng,
                      TournamentStats* stats = nullptr);

// Child takes a's bits outside the drawn cut span [lo, hi] and b's inside.
Genome two_point_crossover(const Genome& a, const Genome& b, Rng& rng);

// One velocity component: w*v + c1*r1*(p - x) + c2*r2*(l - x).  The runner
// draws r1 and r2 fresh for every bit of every particle.
double velocity_step(double v, int x, int p, int l, double w, double c1,
                     double c2, double r1, double r2);

// One gated position draw: 1 iff u < sigmoid(v).
int position_step(double v, double u);

// Flips each locus independently with the given probability.
void mutate(Genome& g, double rate, Rng& rng);

using FitnessFn = std::function<double(const Genome&)>;

struct GaConfig {
  int population = 15;
  int max_steps = 20;
  int patience_limit = 14;
  double crossover_prob = 0.9;
  double mutation_start = 0.2;
  double mutation_decay = 0.3;
  double mutation_floor = 0.01;
};

struct PsoConfig {
  int population = 15;
  int max_steps = 20;
  int patience_limit = 14;
  double c1 = 0.6;
  double c2 = 0.3;
  double inertia_start = 0.9;
  double inertia_decay = 0.09;
  double inertia_floor = 0.4;
};

struct StepRecord {
  int step = 0;            // 1-based
  double best_fitness = 0;
  Genome best_genome{};
  double diversity = 0;
  double rate = 0;         // mutation rate (GA) or inertia weight (PSO)
  int patience = 0;        // consecutive steps without strict improvement
};

struct SearchLog {
  std::string algo;
  std::vector<StepRecord> steps;
  std::string stop_cause;  // "max_steps" or "patience"
  Genome best_genome{};
  double best_fitness = 0;
  std::int64_t distinct_evaluations = 0;
  double wall_seconds = 0;  // console reporting only, never serialized
};

SearchLog run_ga(const GaConfig& cfg, const FitnessFn& fitness,
                 std::uint64_t seed, int jobs = 1);
SearchLog run_pso(const PsoConfig& cfg, const FitnessFn& fitness,
                  std::uint64_t seed, int jobs = 1);

// One JSON object per line, one line per step.
std::string search_steps_jsonl(const SearchLog& log);
nlohmann::ordered_json search_summary_json(const SearchLog& log);

}  // namespace tsfuse
