#include "tsfuse/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "tsfuse/common.hpp"

namespace fs = std::filesystem;

namespace tsfuse {

namespace {

const nlohmann::json* find_object(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return nullptr;
  const auto& sub = j.at(key);
  if (!sub.is_object())
    throw ConfigError(std::string(key) + " must be an object");
  return &sub;
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("bad value for ") + key);
  }
}

void read_synth(const nlohmann::json& j, DatasetSpec& out) {
  read_field(j, "subjects", out.synth_subjects);
  read_field(j, "duration_s", out.synth.duration_s);
  read_field(j, "prevalence", out.synth.prevalence);
  read_field(j, "sample_rate_hz", out.synth.sample_rate_hz);
  read_field(j, "burst_amplitude", out.synth.burst_amplitude);
  read_field(j, "gain_lo", out.synth.gain_lo);
  read_field(j, "gain_hi", out.synth.gain_hi);
  read_field(j, "band_lo_hz", out.synth.band_lo_hz);
  read_field(j, "band_hi_hz", out.synth.band_hi_hz);
  read_field(j, "background_cutoff", out.synth.background_cutoff);
  read_field(j, "white_level", out.synth.white_level);
  read_field(j, "run_lo_s", out.synth.run_lo_s);
  read_field(j, "run_hi_s", out.synth.run_hi_s);
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw DataError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

FitnessSettings fitness_settings(const ExperimentConfig& cfg) {
  FitnessSettings s;
  s.train = cfg.train;
  s.overrides = cfg.overrides;
  s.score_batch = cfg.train.batch_size;
  return s;
}

void ensure_out_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir + ": " + ec.message());
}

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be an object");
  ExperimentConfig cfg;

  if (const auto* d = find_object(j, "dataset")) {
    read_field(*d, "manifests", cfg.dataset.manifests);
    read_field(*d, "manifest_index", cfg.dataset.manifest_index);
    read_field(*d, "shuffle_labels", cfg.dataset.shuffle_labels);
    if (const auto* s = find_object(*d, "synth")) read_synth(*s, cfg.dataset);
  }

  if (const auto* m = find_object(j, "model")) {
    if (m->contains("genome") && m->contains("config"))
      throw ConfigError("model takes either a genome or a config, not both");
    if (m->contains("genome")) {
      std::string text;
      read_field(*m, "genome", text);
      cfg.genome = genome_from_string(text);
    }
    if (m->contains("config")) cfg.model = config_from_json(m->at("config"));
  }

  if (const auto* o = find_object(j, "overrides")) {
    read_field(*o, "lstm_shape", cfg.overrides.lstm_shape);
    read_field(*o, "dense_size", cfg.overrides.dense_size);
  }

  if (const auto* t = find_object(j, "train")) {
    read_field(*t, "learning_rate", cfg.train.learning_rate);
    read_field(*t, "batch_size", cfg.train.batch_size);
    read_field(*t, "max_epochs", cfg.train.max_epochs);
    if (t->contains("class_weights")) {
      std::array<double, 2> w{};
      read_field(*t, "class_weights", w);
      if (w[0] <= 0 || w[1] <= 0)
        throw ConfigError("class_weights must be positive");
      cfg.train.class_weights = w;
    }
  }

  if (const auto* g = find_object(j, "ga")) {
    read_field(*g, "population", cfg.ga.population);
    read_field(*g, "max_steps", cfg.ga.max_steps);
    read_field(*g, "patience_limit", cfg.ga.patience_limit);
    read_field(*g, "crossover_prob", cfg.ga.crossover_prob);
    read_field(*g, "mutation_start", cfg.ga.mutation_start);
    read_field(*g, "mutation_decay", cfg.ga.mutation_decay);
    read_field(*g, "mutation_floor", cfg.ga.mutation_floor);
  }

  if (const auto* p = find_object(j, "pso")) {
    read_field(*p, "population", cfg.pso.population);
    read_field(*p, "max_steps", cfg.pso.max_steps);
    read_field(*p, "patience_limit", cfg.pso.patience_limit);
    read_field(*p, "c1", cfg.pso.c1);
    read_field(*p, "c2", cfg.pso.c2);
    read_field(*p, "inertia_start", cfg.pso.inertia_start);
    read_field(*p, "inertia_decay", cfg.pso.inertia_decay);
    read_field(*p, "inertia_floor", cfg.pso.inertia_floor);
  }

  if (const auto* r = find_object(j, "robustness")) {
    read_field(*r, "snr_grid_db", cfg.robustness.snr_grid_db);
    read_field(*r, "channel_loss", cfg.robustness.channel_loss);
    for (double v : cfg.robustness.snr_grid_db)
      if (!std::isfinite(v)) throw ConfigError("snr_grid_db must be finite");
    if (cfg.robustness.snr_grid_db.empty())
      throw ConfigError("snr_grid_db must not be empty");
  }

  if (!j.contains("seed")) throw ConfigError("seed is required");
  read_field(j, "seed", cfg.seed);
  read_field(j, "out_dir", cfg.out_dir);
  read_field(j, "jobs", cfg.jobs);
  if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (cfg.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

ModelConfig resolve_model(const ExperimentConfig& cfg) {
  if (cfg.model) return *cfg.model;
  if (cfg.genome) return decode_genome(*cfg.genome);
  throw ConfigError("a model.genome or model.config is required");
}

std::vector<std::shared_ptr<const PreparedSubject>> load_dataset(
    const ExperimentConfig& cfg) {
  const DatasetSpec& d = cfg.dataset;
  const bool from_files = !d.manifests.empty() || !d.manifest_index.empty();
  if (d.synth_subjects > 0 && from_files)
    throw ConfigError("dataset: choose synthesis or manifests, not both");

  std::vector<std::shared_ptr<const PreparedSubject>> subjects;
  if (d.synth_subjects > 0) {
    for (int k = 0; k < d.synth_subjects; ++k) {
      char id[16];
      std::snprintf(id, sizeof(id), "s%03d", k + 1);
      const auto rec = synth_recording(
          id, d.synth,
          derive_seed(cfg.seed, seed_role::kSynth,
                      static_cast<std::uint64_t>(k)));
      subjects.push_back(
          std::make_shared<const PreparedSubject>(prepare_subject(rec)));
    }
  } else if (from_files) {
    std::vector<std::string> paths = d.manifests;
    if (!d.manifest_index.empty()) {
      std::ifstream is(d.manifest_index);
      if (!is) throw DataError("cannot read " + d.manifest_index);
      const fs::path base = fs::path(d.manifest_index).parent_path();
      std::string line;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        fs::path p(line);
        if (p.is_relative()) p = base / p;
        paths.push_back(p.string());
      }
    }
    if (paths.empty()) throw DataError("manifest index lists no datasets");
    for (const auto& path : paths)
      subjects.push_back(std::make_shared<const PreparedSubject>(
          prepare_subject(load_recording(path))));
  } else {
    throw ConfigError("no dataset configured");
  }

  if (d.shuffle_labels) {
    for (std::size_t k = 0; k < subjects.size(); ++k)
      subjects[k] = shuffle_subject_labels(
          *subjects[k], derive_seed(cfg.seed, seed_role::kLabelShuffle,
                                    static_cast<std::uint64_t>(k)));
  }
  return subjects;
}

OutDirLock::OutDirLock(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw RunError("cannot create " + out_dir + ": " + ec.message());
  const std::string path = (fs::path(out_dir) / ".lock").string();
  fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
  if (fd_ < 0) throw RunError("cannot open lock file " + path);
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw RunError("another run is using " + out_dir);
  }
}

OutDirLock::~OutDirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

void run_synth(const ExperimentConfig& cfg) {
  if (cfg.dataset.synth_subjects < 1)
    throw ConfigError("synth needs dataset.synth.subjects > 0");
  ensure_out_dir(cfg.out_dir);
  const fs::path base = fs::path(cfg.out_dir) / "dataset";
  std::string index;
  for (int k = 0; k < cfg.dataset.synth_subjects; ++k) {
    char id[16];
    std::snprintf(id, sizeof(id), "s%03d", k + 1);
    const auto rec = synth_recording(
        id, cfg.dataset.synth,
        derive_seed(cfg.seed, seed_role::kSynth,
                    static_cast<std::uint64_t>(k)));
    save_recording(rec, (base / id).string());
    index += std::string(id) + "/manifest.json\n";
    double positives = 0;
    for (const auto label : rec.labels) positives += label;
    std::printf("%s: prevalence %.4f\n", id,
                rec.labels.empty() ? 0.0
                                   : positives /
                                         static_cast<double>(rec.labels.size()));
  }
  write_text((base / "manifests.txt").string(), index);
  std::printf("wrote %d subjects under %s\n", cfg.dataset.synth_subjects,
              base.string().c_str());
}

void run_optimize(const ExperimentConfig& cfg,
                  const std::vector<std::string>& algos) {
  ensure_out_dir(cfg.out_dir);
  const auto subjects = load_dataset(cfg);
  const FitnessSettings settings = fitness_settings(cfg);
  const FitnessFn fitness = [&](const Genome& g) {
    return tfcv_fitness(g, subjects, settings, cfg.seed);
  };

  for (const auto& algo : algos) {
    SearchLog log;
    if (algo == "ga")
      log = run_ga(cfg.ga, fitness, cfg.seed, cfg.jobs);
    else if (algo == "pso")
      log = run_pso(cfg.pso, fitness, cfg.seed, cfg.jobs);
    else
      throw ConfigError("unknown optimizer: " + algo);

    const fs::path out(cfg.out_dir);
    write_text((out / (algo + "_steps.jsonl")).string(),
               search_steps_jsonl(log));
    write_text((out / (algo + "_summary.json")).string(),
               search_summary_json(log).dump(2) + "\n");
    write_text((out / (algo + "_best_config.json")).string(),
               config_to_json(decode_genome(log.best_genome)).dump(2) + "\n");
    std::printf("%s: best fitness %.6f, %zu steps, %lld networks (%.1f s)\n",
                algo.c_str(), log.best_fitness, log.steps.size(),
                static_cast<long long>(log.distinct_evaluations),
                log.wall_seconds);
  }
}

void run_evaluate(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  const ModelConfig model = resolve_model(cfg);
  const auto subjects = load_dataset(cfg);
  const LooSummary summary =
      loo_evaluate(model, subjects, fitness_settings(cfg), cfg.seed);

  const fs::path out(cfg.out_dir);
  write_text((out / "loo_cycles.csv").string(), summary.cycles_csv());
  write_text((out / "loo_aggregate.json").string(),
             summary.aggregate_json().dump(2) + "\n");
  const auto agg = summary.aggregate_json();
  std::printf("evaluated %zu cycles, auc %s\n", summary.cycles.size(),
              agg["auc"].is_null()
                  ? "n/a"
                  : agg["auc"]["text"].get<std::string>().c_str());
}

std::vector<LossScenario> channel_loss_scenarios(int num_slots) {
  if (num_slots < 2)
    throw ConfigError("channel-loss scenarios need at least two slots");
  std::vector<LossScenario> out;
  std::vector<int> identity(num_slots);
  for (int k = 0; k < num_slots; ++k) identity[k] = k;
  out.push_back({"baseline", identity});
  for (int lost = 0; lost < num_slots; ++lost)
    for (int repl = 0; repl < num_slots; ++repl) {
      if (repl == lost) continue;
      std::vector<int> src = identity;
      src[lost] = repl;
      out.push_back({"lose_ch" + std::to_string(lost) + "_use_ch" +
                         std::to_string(repl),
                     src});
    }
  for (int survivor = 0; survivor < num_slots; ++survivor)
    out.push_back({"only_ch" + std::to_string(survivor),
                   std::vector<int>(num_slots, survivor)});
  return out;
}

void run_robustness(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  const ModelConfig model = resolve_model(cfg);
  if (cfg.robustness.channel_loss && model.channels.size() != 3)
    throw ConfigError("the channel-loss suite needs a three-channel model");
  const auto subjects = load_dataset(cfg);
  const FitnessSettings settings = fitness_settings(cfg);

  std::vector<LossScenario> scenarios;
  if (cfg.robustness.channel_loss) {
    scenarios = channel_loss_scenarios(
        static_cast<int>(subjects[0]->channel_names.size()));
  } else {
    std::vector<int> identity(subjects[0]->channel_names.size());
    for (std::size_t k = 0; k < identity.size(); ++k)
      identity[k] = static_cast<int>(k);
    scenarios.push_back({"baseline", identity});
  }

  struct Row {
    std::string subject_id;
    std::string key;
    std::optional<double> auc;
  };
  std::vector<Row> scenario_rows, snr_rows;
  std::map<std::string, std::vector<double>> scenario_aucs;
  std::map<std::string, std::vector<double>> scenario_deltas;
  std::vector<std::vector<double>> snr_aucs(cfg.robustness.snr_grid_db.size());

  for (int idx = 0; idx < static_cast<int>(subjects.size()); ++idx) {
    LooCycle cycle =
        train_loo_cycle(model, subjects, idx, settings, cfg.seed);
    const auto& test = subjects[idx];

    std::optional<double> baseline_auc;
    for (const auto& scenario : scenarios) {
      auto variant = std::make_shared<const PreparedSubject>(
          substitute_channels(*test, scenario.source_slot));
      const auto res = evaluate_subject(cycle.net, cycle.threshold, variant,
                                        settings.score_batch);
      scenario_rows.push_back({test->id, scenario.name, res.auc});
      if (res.auc) {
        scenario_aucs[scenario.name].push_back(*res.auc);
        if (scenario.name == "baseline") baseline_auc = res.auc;
        if (baseline_auc && scenario.name != "baseline")
          scenario_deltas[scenario.name].push_back(*res.auc - *baseline_auc);
      }
    }

    for (std::size_t li = 0; li < cfg.robustness.snr_grid_db.size(); ++li) {
      const double snr = cfg.robustness.snr_grid_db[li];
      Rng noise_rng(derive_seed(cfg.seed, seed_role::kNoise,
                                static_cast<std::uint64_t>(idx),
                                static_cast<std::uint64_t>(li)));
      auto variant = std::make_shared<const PreparedSubject>(
          with_awgn(*test, snr, noise_rng));
      const auto res = evaluate_subject(cycle.net, cycle.threshold, variant,
                                        settings.score_batch);
      snr_rows.push_back({test->id, format_number(snr), res.auc});
      if (res.auc) snr_aucs[li].push_back(*res.auc);
    }
  }

  std::string scen_csv = "subject_id,scenario,auc\n";
  for (const auto& r : scenario_rows) {
    scen_csv += r.subject_id + "," + r.key + "," +
                (r.auc ? format_number(*r.auc) : std::string()) + "\n";
  }
  std::string snr_csv = "subject_id,snr_db,auc\n";
  for (const auto& r : snr_rows) {
    snr_csv += r.subject_id + "," + r.key + "," +
               (r.auc ? format_number(*r.auc) : std::string()) + "\n";
  }

  nlohmann::ordered_json summary;
  summary["cycles"] = static_cast<int>(subjects.size());
  nlohmann::ordered_json scen_json;
  for (const auto& scenario : scenarios) {
    nlohmann::ordered_json entry;
    const auto it = scenario_aucs.find(scenario.name);
    if (it != scenario_aucs.end() && !it->second.empty())
      entry["median_auc"] = median(it->second);
    if (scenario.name != "baseline") {
      const auto dit = scenario_deltas.find(scenario.name);
      if (dit != scenario_deltas.end() && !dit->second.empty())
        entry["median_delta"] = median(dit->second);
    }
    scen_json[scenario.name] = entry;
  }
  summary["scenarios"] = scen_json;

  std::vector<double> lose_one_deltas, lose_two_deltas;
  for (const auto& [name, deltas] : scenario_deltas) {
    auto& sink = name.rfind("only_", 0) == 0 ? lose_two_deltas
                                             : lose_one_deltas;
    sink.insert(sink.end(), deltas.begin(), deltas.end());
  }
  if (!lose_one_deltas.empty())
    summary["lose_one_median_delta"] = median(lose_one_deltas);
  if (!lose_two_deltas.empty())
    summary["lose_two_median_delta"] = median(lose_two_deltas);
  if (!lose_one_deltas.empty() && !lose_two_deltas.empty())
    summary["loss_ordering_ok"] = std::abs(median(lose_one_deltas)) <
                                  std::abs(median(lose_two_deltas));

  nlohmann::ordered_json snr_json = nlohmann::ordered_json::array();
  std::optional<double> med_lo, med_mid, med_hi;
  for (std::size_t li = 0; li < cfg.robustness.snr_grid_db.size(); ++li) {
    nlohmann::ordered_json entry;
    entry["snr_db"] = cfg.robustness.snr_grid_db[li];
    if (!snr_aucs[li].empty()) {
      const double m = median(snr_aucs[li]);
      entry["median_auc"] = m;
      if (cfg.robustness.snr_grid_db[li] == -20.0) med_lo = m;
      if (cfg.robustness.snr_grid_db[li] == 0.0) med_mid = m;
      if (cfg.robustness.snr_grid_db[li] == 20.0) med_hi = m;
    }
    snr_json.push_back(entry);
  }
  summary["snr"] = snr_json;
  if (med_lo && med_mid && med_hi)
    summary["snr_ordering_ok"] = *med_hi >= *med_mid && *med_mid >= *med_lo;

  const fs::path out(cfg.out_dir);
  write_text((out / "robustness_scenarios.csv").string(), scen_csv);
  write_text((out / "robustness_snr.csv").string(), snr_csv);
  write_text((out / "robustness_summary.json").string(),
             summary.dump(2) + "\n");
  std::printf("robustness: %zu scenarios x %zu cycles, %zu noise levels\n",
              scenarios.size(), subjects.size(),
              cfg.robustness.snr_grid_db.size());
}

namespace {

// Parses a steps JSONL file into (step -> {fitness, diversity}).
struct StepSeries {
  std::map<int, std::pair<double, double>> by_step;
};

StepSeries parse_steps(const std::string& text) {
  StepSeries out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw DataError("malformed steps line: " + line);
    }
    out.by_step[j.at("step").get<int>()] = {
        j.at("best_fitness").get<double>(), j.at("diversity").get<double>()};
  }
  return out;
}

// Minimal CSV reader for the files this tool writes itself.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

void run_report(const ExperimentConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  const std::string ga_steps = (out / "ga_steps.jsonl").string();
  const std::string pso_steps = (out / "pso_steps.jsonl").string();
  const std::string scen_csv = (out / "robustness_scenarios.csv").string();
  const std::string snr_csv = (out / "robustness_snr.csv").string();

  const bool has_ga = fs::exists(ga_steps);
  const bool has_pso = fs::exists(pso_steps);
  const bool has_scen = fs::exists(scen_csv);
  const bool has_snr = fs::exists(snr_csv);
  if (!has_ga && !has_pso && !has_scen && !has_snr)
    throw DataError(
        "missing artifacts: ga_steps.jsonl, pso_steps.jsonl, "
        "robustness_scenarios.csv, robustness_snr.csv");

  const fs::path report = out / "report";
  std::error_code ec;
  fs::create_directories(report, ec);
  if (ec) throw DataError("cannot create " + report.string());

  std::vector<std::string> sources, written;
  if (has_ga || has_pso) {
    StepSeries ga, pso;
    if (has_ga) {
      ga = parse_steps(read_text(ga_steps));
      sources.push_back("ga_steps.jsonl");
    }
    if (has_pso) {
      pso = parse_steps(read_text(pso_steps));
      sources.push_back("pso_steps.jsonl");
    }
    int max_step = 0;
    for (const auto& [s, v] : ga.by_step) max_step = std::max(max_step, s);
    for (const auto& [s, v] : pso.by_step) max_step = std::max(max_step, s);

    std::string header = "step";
    if (has_ga) header += ",ga";
    if (has_pso) header += ",pso";
    std::string fitness = header + "\n", diversity = header + "\n";
    for (int s = 1; s <= max_step; ++s) {
      std::string frow = std::to_string(s), drow = std::to_string(s);
      if (has_ga) {
        const auto it = ga.by_step.find(s);
        frow += it != ga.by_step.end()
                    ? "," + format_number(it->second.first)
                    : ",";
        drow += it != ga.by_step.end()
                    ? "," + format_number(it->second.second)
                    : ",";
      }
      if (has_pso) {
        const auto it = pso.by_step.find(s);
        frow += it != pso.by_step.end()
                    ? "," + format_number(it->second.first)
                    : ",";
        drow += it != pso.by_step.end()
                    ? "," + format_number(it->second.second)
                    : ",";
      }
      fitness += frow + "\n";
      diversity += drow + "\n";
    }
    write_text((report / "fitness_vs_step.csv").string(), fitness);
    write_text((report / "diversity_vs_step.csv").string(), diversity);
    written.push_back("fitness_vs_step.csv");
    written.push_back("diversity_vs_step.csv");
  }

  if (has_scen) {
    sources.push_back("robustness_scenarios.csv");
    const auto rows = parse_csv(read_text(scen_csv));
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> groups;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() < 3) throw DataError("malformed robustness_scenarios.csv");
      const std::string& name = rows[r][1];
      if (groups.find(name) == groups.end()) order.push_back(name);
      if (!rows[r][2].empty()) groups[name].push_back(std::stod(rows[r][2]));
      else groups[name];
    }
    std::string csv = "scenario,median_auc\n";
    for (const auto& name : order) {
      csv += name + ",";
      if (!groups[name].empty()) csv += format_number(median(groups[name]));
      csv += "\n";
    }
    write_text((report / "auc_vs_scenario.csv").string(), csv);
    written.push_back("auc_vs_scenario.csv");
  }

  if (has_snr) {
    sources.push_back("robustness_snr.csv");
    const auto rows = parse_csv(read_text(snr_csv));
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> groups;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() < 3) throw DataError("malformed robustness_snr.csv");
      const std::string& level = rows[r][1];
      if (groups.find(level) == groups.end()) order.push_back(level);
      if (!rows[r][2].empty()) groups[level].push_back(std::stod(rows[r][2]));
      else groups[level];
    }
    std::string csv = "snr_db,median_auc\n";
    for (const auto& level : order) {
      csv += level + ",";
      if (!groups[level].empty()) csv += format_number(median(groups[level]));
      csv += "\n";
    }
    write_text((report / "auc_vs_snr.csv").string(), csv);
    written.push_back("auc_vs_snr.csv");
  }

  nlohmann::ordered_json summary;
  summary["sources"] = sources;
  summary["written"] = written;
  write_text((report / "summary.json").string(), summary.dump(2) + "\n");
  std::printf("report: %zu figure files from %zu sources\n", written.size(),
              sources.size());
}

}  // namespace tsfuse
