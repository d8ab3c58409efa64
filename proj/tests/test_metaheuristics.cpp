#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsfuse/common.hpp"
#include "tsfuse/metaheuristics.hpp"

using namespace tsfuse;

namespace {

int popcount(const Genome& g) {
  int n = 0;
  for (auto b : g.bits) n += b;
  return n;
}

double onemax(const Genome& g) { return popcount(g) / 15.0; }

Genome make_genome(std::uint32_t key) {
  Genome g{};
  for (int locus = 0; locus < kGenomeBits; ++locus)
    g.bits[locus] = (key >> (kGenomeBits - 1 - locus)) & 1;
  return g;
}

}  // namespace

TEST_CASE("decay schedules follow the stepped closed form") {
  for (int step = 0; step <= 50; ++step) {
    const double m = std::max(0.2 - 0.2 * (step / 5) * 0.3, 0.01);
    CHECK(mutation_rate(step) == m);
    const double w = std::max(0.9 - 0.9 * (step / 5) * 0.09, 0.4);
    CHECK(inertia_weight(step) == w);
  }
  CHECK(mutation_rate(0) == 0.2);
  CHECK(mutation_rate(19) == doctest::Approx(0.02));
  CHECK(mutation_rate(20) == 0.01);
  CHECK(mutation_rate(500) == 0.01);
  CHECK(inertia_weight(0) == 0.9);
  CHECK(inertia_weight(34) == doctest::Approx(0.9 - 0.9 * 6 * 0.09));
  CHECK(inertia_weight(35) == 0.4);
  CHECK(inertia_weight(500) == 0.4);
  CHECK_THROWS_AS(decayed_rate(-1, 0.2, 0.3, 0.01), ConfigError);
}

TEST_CASE("expected mutation count per generation") {
  CHECK(expected_mutations(0.2, 15) == doctest::Approx(39.0).epsilon(1e-12));
  CHECK(expected_mutations(0.01, 15) ==
        doctest::Approx(0.01 * 13 * 15).epsilon(1e-12));
}

TEST_CASE("tournament replays the documented draw sequence") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng used(seed), mirror(seed);
    const int got = tournament_select(15, used);
    int i = 0, j = 0;
    do {
      i = static_cast<int>(mirror.below(15));
      j = static_cast<int>(mirror.below(15));
    } while (i == j);
    CHECK(got == std::min(i, j));
  }
  Rng r(1);
  CHECK_THROWS_AS(tournament_select(1, r), ConfigError);
}

TEST_CASE("tournament attempt frequency approaches 29/210") {
  Rng rng(1234);
  TournamentStats stats;
  stats.watched_index = 4;
  for (int k = 0; k < 100000; ++k) tournament_select(15, rng, &stats);
  CHECK(stats.tournaments == 100000);
  CHECK(stats.pair_draws >= stats.tournaments);
  const double freq = static_cast<double>(stats.draws_with_watched) /
                      static_cast<double>(stats.tournaments);
  CHECK(std::abs(freq - 29.0 / 210.0) < 0.01);
}

TEST_CASE("tournament winners favor better ranks") {
  Rng rng(5);
  std::vector<int> wins(15, 0);
  const int n = 150000;
  for (int k = 0; k < n; ++k) ++wins[tournament_select(15, rng)];
  // P(winner = k) = 2 (z - 1 - k) / (z (z - 1)) for the sorted population.
  for (int k = 0; k < 15; ++k) {
    const double expect = 2.0 * (14 - k) / (15.0 * 14.0);
    CHECK(std::abs(wins[k] / static_cast<double>(n) - expect) < 0.01);
  }
  CHECK(wins[14] == 0);
}

TEST_CASE("crossover copies a contiguous span from the second parent") {
  Genome zeros{}, ones{};
  for (auto& b : ones.bits) b = 1;
  Rng rng(8);
  for (int k = 0; k < 500; ++k) {
    const Genome child = two_point_crossover(zeros, ones, rng);
    int transitions = 0;
    for (int locus = 1; locus < kGenomeBits; ++locus)
      transitions += child.bits[locus] != child.bits[locus - 1];
    CHECK(popcount(child) >= 1);  // the span is never empty
    CHECK(transitions <= 2);
  }
}

TEST_CASE("crossover replays the documented cut draws") {
  Rng a(99), b(99), pm(7);
  Genome p1 = make_genome(0x552a), p2 = make_genome(0x2d53);
  for (int k = 0; k < 200; ++k) {
    const Genome child = two_point_crossover(p1, p2, a);
    int lo = static_cast<int>(b.below(kGenomeBits));
    int hi = static_cast<int>(b.below(kGenomeBits));
    if (lo > hi) std::swap(lo, hi);
    for (int locus = 0; locus < kGenomeBits; ++locus) {
      const bool inside = locus >= lo && locus <= hi;
      CHECK(child.bits[locus] == (inside ? p2 : p1).bits[locus]);
    }
    // Fresh random parents for the next round.
    p1 = make_genome(static_cast<std::uint32_t>(pm.below(1u << 15)));
    p2 = make_genome(static_cast<std::uint32_t>(pm.below(1u << 15)));
  }
}

TEST_CASE("mutation flips each locus independently") {
  Rng a(31), b(31);
  Genome g = make_genome(0x1e7b);
  const Genome before = g;
  mutate(g, 0.3, a);
  for (int locus = 0; locus < kGenomeBits; ++locus) {
    const bool flip = b.uniform01() < 0.3;
    CHECK(g.bits[locus] == (before.bits[locus] ^ (flip ? 1 : 0)));
  }
}

TEST_CASE("long-run mutation counts sit inside three sigma") {
  Rng rng(424242);
  const double rate = 0.2;
  const int genomes = 2000;
  std::int64_t flips = 0;
  for (int k = 0; k < genomes; ++k) {
    Genome g{};
    mutate(g, rate, rng);
    flips += popcount(g);
  }
  const double mean = genomes * 15.0 * rate;
  const double sigma = std::sqrt(genomes * 15.0 * rate * (1.0 - rate));
  CHECK(std::abs(flips - mean) <= 3.0 * sigma);
}

TEST_CASE("diversity equals the brute-force pairwise mean") {
  Rng rng(6);
  for (int round = 0; round < 200; ++round) {
    const int z = 2 + static_cast<int>(rng.below(19));
    std::vector<Genome> pop;
    for (int k = 0; k < z; ++k)
      pop.push_back(make_genome(static_cast<std::uint32_t>(rng.below(1u << 15))));

    std::int64_t hamming_total = 0;
    for (int i = 0; i < z; ++i)
      for (int j = i + 1; j < z; ++j)
        for (int locus = 0; locus < kGenomeBits; ++locus)
          hamming_total += pop[i].bits[locus] != pop[j].bits[locus];
    const double brute =
        2.0 * static_cast<double>(hamming_total) /
        (static_cast<double>(z) * (z - 1) * kGenomeBits);
    CHECK(population_diversity(pop) == brute);
  }
}

TEST_CASE("diversity endpoints") {
  std::vector<Genome> same(5, make_genome(0x1234));
  CHECK(population_diversity(same) == 0.0);
  Genome zeros{}, ones{};
  for (auto& b : ones.bits) b = 1;
  CHECK(population_diversity({zeros, ones}) == 1.0);
  CHECK(population_diversity({zeros}) == 0.0);
}

TEST_CASE("the genetic search solves onemax and never rescores a genome") {
  std::map<std::uint32_t, int> calls;
  const FitnessFn counted = [&](const Genome& g) {
    ++calls[g.key()];
    return onemax(g);
  };
  GaConfig cfg;
  const SearchLog log = run_ga(cfg, counted, 3);

  CHECK(log.algo == "ga");
  CHECK(log.best_fitness == 1.0);
  CHECK(popcount(log.best_genome) == 15);
  for (const auto& [key, n] : calls) CHECK(n == 1);
  CHECK(log.distinct_evaluations == static_cast<std::int64_t>(calls.size()));
  CHECK(log.distinct_evaluations <=
        15 * (static_cast<std::int64_t>(log.steps.size()) + 1));

  for (std::size_t k = 0; k < log.steps.size(); ++k) {
    CHECK(log.steps[k].step == static_cast<int>(k) + 1);
    CHECK(log.steps[k].rate == mutation_rate(log.steps[k].step));
    if (k > 0)
      CHECK(log.steps[k].best_fitness >= log.steps[k - 1].best_fitness);
  }
}

TEST_CASE("the genetic search stops on stalled patience") {
  const FitnessFn flat = [](const Genome&) { return 0.5; };
  GaConfig cfg;
  cfg.patience_limit = 3;
  const SearchLog log = run_ga(cfg, flat, 1);
  CHECK(log.stop_cause == "patience");
  CHECK(log.steps.size() == 4u);  // one improving step, then three stalls
  CHECK(log.steps.back().patience == 3);
  CHECK(log.best_fitness == 0.5);
}

TEST_CASE("the genetic search repeats itself and ignores the worker count") {
  GaConfig cfg;
  cfg.max_steps = 8;
  const SearchLog a = run_ga(cfg, onemax, 17, 1);
  const SearchLog b = run_ga(cfg, onemax, 17, 4);
  CHECK(search_steps_jsonl(a) == search_steps_jsonl(b));
  CHECK(search_summary_json(a) == search_summary_json(b));
  const SearchLog c = run_ga(cfg, onemax, 18, 1);
  CHECK(search_steps_jsonl(a) != search_steps_jsonl(c));
}

TEST_CASE("the swarm search matches a step-by-step replay") {
  const int z = 4, steps = 3;
  PsoConfig cfg;
  cfg.population = z;
  cfg.max_steps = steps;
  const std::uint64_t seed = 29;
  const SearchLog log = run_pso(cfg, onemax, seed);

  // Replay with an independent implementation of the published update.
  Rng rng(derive_seed(seed, seed_role::kOptimizer, std::uint64_t{2}));
  std::vector<Genome> x(z);
  for (int k = 0; k < z; ++k)
    for (int d = 0; d < kGenomeBits; ++d)
      x[k].bits[d] = rng.uniform01() < 0.5 ? 1 : 0;
  std::vector<std::array<double, kGenomeBits>> v(z);
  for (int k = 0; k < z; ++k)
    for (int d = 0; d < kGenomeBits; ++d) v[k][d] = rng.uniform(-1.0, 1.0);

  std::vector<Genome> pbest = x;
  std::vector<double> pfit(z);
  for (int k = 0; k < z; ++k) pfit[k] = onemax(x[k]);
  auto ring = [&](int k) {
    int best = (k - 1 + z) % z;
    for (int id : {k, (k + 1) % z})
      if (pfit[id] > pfit[best] || (pfit[id] == pfit[best] && id < best))
        best = id;
    return best;
  };
  std::vector<Genome> lbest(z);
  for (int k = 0; k < z; ++k) lbest[k] = pbest[ring(k)];

  double best_fit = -1.0;
  Genome best{};
  for (int step = 1; step <= steps; ++step) {
    const double w = inertia_weight(step - 1);
    for (int k = 0; k < z; ++k)
      for (int d = 0; d < kGenomeBits; ++d) {
        const double r1 = rng.uniform01();
        const double r2 = rng.uniform01();
        v[k][d] = w * v[k][d] + 0.6 * r1 * (pbest[k].bits[d] - x[k].bits[d]) +
                  0.3 * r2 * (lbest[k].bits[d] - x[k].bits[d]);
        const double gate = 1.0 / (1.0 + std::exp(-v[k][d]));
        x[k].bits[d] = rng.uniform01() < gate ? 1 : 0;
      }
    for (int k = 0; k < z; ++k) {
      const double fit = onemax(x[k]);
      if (fit > pfit[k]) {
        pfit[k] = fit;
        pbest[k] = x[k];
      }
    }
    for (int k = 0; k < z; ++k) lbest[k] = pbest[ring(k)];
    for (int k = 0; k < z; ++k)
      if (pfit[k] > best_fit) {
        best_fit = pfit[k];
        best = pbest[k];
      }

    REQUIRE(static_cast<int>(log.steps.size()) >= step);
    const StepRecord& rec = log.steps[step - 1];
    CHECK(rec.step == step);
    CHECK(rec.rate == w);
    CHECK(rec.best_fitness == best_fit);
    CHECK(rec.best_genome == best);
    CHECK(rec.diversity == population_diversity(x));
  }
  CHECK(log.best_fitness == best_fit);
}

TEST_CASE("velocity step arithmetic") {
  // Attraction terms vanish when the position already matches both bests.
  CHECK(velocity_step(0.7, 1, 1, 1, 0.9, 0.6, 0.3, 0.33, 0.77) ==
        0.9 * 0.7);
  CHECK(velocity_step(-1.2, 0, 0, 0, 0.4, 0.6, 0.3, 0.5, 0.5) == 0.4 * -1.2);
  CHECK(velocity_step(0.0, 0, 1, 1, 0.9, 0.6, 0.3, 1.0, 1.0) == 0.6 + 0.3);
  CHECK(velocity_step(5.0, 1, 0, 1, 0.0, 0.0, 0.0, 0.9, 0.9) == 0.0);
}

TEST_CASE("the position gate is a sigmoid coin") {
  Rng rng(5);
  const int draws = 10000;
  auto freq = [&](double v) {
    int ones = 0;
    for (int t = 0; t < draws; ++t) ones += position_step(v, rng.uniform01());
    return static_cast<double>(ones) / draws;
  };
  CHECK(freq(100.0) > 0.999);
  CHECK(freq(0.0) == doctest::Approx(0.5).epsilon(0.04));
  CHECK(freq(-100.0) < 0.001);
}

TEST_CASE("the swarm search stops on stalled patience") {
  const FitnessFn flat = [](const Genome&) { return 0.5; };
  PsoConfig cfg;
  cfg.patience_limit = 3;
  const SearchLog log = run_pso(cfg, flat, 1);
  CHECK(log.stop_cause == "patience");
  CHECK(log.steps.size() == 4u);  // one improving step, then three stalls
  CHECK(log.steps.back().patience == 3);
  CHECK(log.best_fitness == 0.5);
}

TEST_CASE("zeroed coefficients leave fair-coin resampling") {
  // With no inertia and no attraction every velocity is 0, so each bit is
  // redrawn through sigmoid(0) = 0.5 and the swarm never collapses.
  PsoConfig cfg;
  cfg.c1 = 0.0;
  cfg.c2 = 0.0;
  cfg.inertia_start = 0.0;
  cfg.inertia_floor = 0.0;
  cfg.max_steps = 8;
  const SearchLog log = run_pso(cfg, onemax, 11);
  REQUIRE(log.steps.size() >= 4u);
  for (const StepRecord& rec : log.steps) {
    CHECK(rec.diversity > 0.35);
    CHECK(rec.diversity < 0.65);
  }
}

TEST_CASE("the swarm search repeats itself and ignores the worker count") {
  PsoConfig cfg;
  cfg.max_steps = 8;
  std::map<std::uint32_t, int> calls;
  const FitnessFn counted = [&](const Genome& g) {
    ++calls[g.key()];
    return onemax(g);
  };
  const SearchLog a = run_pso(cfg, counted, 23, 1);
  for (const auto& [key, n] : calls) CHECK(n == 1);
  CHECK(a.distinct_evaluations == static_cast<std::int64_t>(calls.size()));

  const SearchLog b = run_pso(cfg, onemax, 23, 4);
  CHECK(search_steps_jsonl(a) == search_steps_jsonl(b));
  CHECK(search_summary_json(a) == search_summary_json(b));
}

TEST_CASE("step logs serialize every field and no timings") {
  GaConfig cfg;
  cfg.max_steps = 3;
  const SearchLog log = run_ga(cfg, onemax, 2);
  const std::string jsonl = search_steps_jsonl(log);

  std::istringstream is(jsonl);
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("step"));
    CHECK(j.contains("best_fitness"));
    CHECK(j.contains("best_genome"));
    CHECK(j.contains("diversity"));
    CHECK(j.contains("rate"));
    CHECK(j.contains("patience"));
    CHECK_FALSE(j.contains("wall_seconds"));
    CHECK(j["best_genome"].get<std::string>().size() == 15u);
    ++lines;
  }
  CHECK(lines == static_cast<int>(log.steps.size()));

  const auto summary = search_summary_json(log);
  CHECK(summary["algo"] == "ga");
  CHECK(summary["steps"] == static_cast<int>(log.steps.size()));
  CHECK_FALSE(summary.contains("wall_seconds"));
  CHECK(log.wall_seconds >= 0.0);
}

TEST_CASE("search configuration is validated") {
  const FitnessFn f = onemax;
  GaConfig ga;
  ga.population = 2;
  CHECK_THROWS_AS(run_ga(ga, f, 1), ConfigError);
  ga.population = 15;
  ga.crossover_prob = 1.5;
  CHECK_THROWS_AS(run_ga(ga, f, 1), ConfigError);
  PsoConfig pso;
  pso.population = 0;
  CHECK_THROWS_AS(run_pso(pso, f, 1), ConfigError);
  pso.population = 15;
  pso.max_steps = 0;
  CHECK_THROWS_AS(run_pso(pso, f, 1), ConfigError);
}
