#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <fcntl.h>
#include <sys/file.h>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(TSFUSE_CLI_PATH) + " " + args + " 2>&1";
  std::FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult res;
  char buf[512];
  while (std::fgets(buf, sizeof(buf), pipe) != nullptr) res.output += buf;
  const int status = pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("tsfuse_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string synth_config(const fs::path& out, int subjects) {
  return "{\n"
         "  \"dataset\": {\"synth\": {\"subjects\": " +
         std::to_string(subjects) +
         ", \"duration_s\": 120}},\n"
         "  \"seed\": 7,\n"
         "  \"out_dir\": \"" + out.string() + "\"\n"
         "}\n";
}

std::string tiny_model_config(const fs::path& out, const std::string& genome,
                              const std::string& dataset_body) {
  return "{\n"
         "  \"dataset\": " + dataset_body + ",\n"
         "  \"model\": {\"genome\": \"" + genome + "\"},\n"
         "  \"overrides\": {\"lstm_shape\": 2, \"dense_size\": 0},\n"
         "  \"train\": {\"max_epochs\": 1, \"batch_size\": 64},\n"
         "  \"ga\": {\"population\": 3, \"max_steps\": 1, \"patience_limit\": 1},\n"
         "  \"pso\": {\"population\": 3, \"max_steps\": 1, \"patience_limit\": 1},\n"
         "  \"robustness\": {\"snr_grid_db\": [0]},\n"
         "  \"seed\": 7,\n"
         "  \"out_dir\": \"" + out.string() + "\"\n"
         "}\n";
}

}  // namespace

TEST_CASE("help exits cleanly") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("synth --help").code == 0);
}

TEST_CASE("parse failures exit with the config code") {
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("frobnicate --config x.json").code == 2);
  CHECK(run_cli("synth").code == 2);  // --config is required
  CHECK(run_cli("synth --config cfg.json --bogus-flag 1").code == 2);
}

TEST_CASE("config file problems exit with the config code") {
  const fs::path dir = scratch("badcfg");
  write_file(dir / "broken.json", "{ nope");
  CHECK(run_cli("synth --config " + (dir / "broken.json").string()).code == 2);

  write_file(dir / "noseed.json",
             "{\"dataset\": {\"synth\": {\"subjects\": 1}}, \"out_dir\": \"" +
                 (dir / "out").string() + "\"}");
  const auto res = run_cli("synth --config " + (dir / "noseed.json").string());
  CHECK(res.code == 2);
  CHECK(res.output.find("seed") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("synthesis writes a loadable dataset and reports prevalence") {
  const fs::path dir = scratch("synth");
  const fs::path out = dir / "out";
  write_file(dir / "cfg.json", synth_config(out, 2));

  const auto res = run_cli("synth --config " + (dir / "cfg.json").string());
  CHECK(res.code == 0);
  CHECK(res.output.find("prevalence") != std::string::npos);
  CHECK(fs::exists(out / "dataset" / "manifests.txt"));
  CHECK(fs::exists(out / "dataset" / "s001" / "manifest.json"));
  CHECK(fs::exists(out / "dataset" / "s002" / "manifest.json"));
  CHECK(fs::exists(out / "dataset" / "s001" / "labels.txt"));

  // Same seed, fresh directory: byte-identical dataset.
  const fs::path out2 = dir / "out2";
  write_file(dir / "cfg2.json", synth_config(out2, 2));
  CHECK(run_cli("synth --config " + (dir / "cfg2.json").string()).code == 0);
  CHECK(read_file(out / "dataset" / "s001" / "manifest.json") ==
        read_file(out2 / "dataset" / "s001" / "manifest.json"));
  CHECK(read_file(out / "dataset" / "s001" / "labels.txt") ==
        read_file(out2 / "dataset" / "s001" / "labels.txt"));

  // A different master seed changes the signals.
  const fs::path out3 = dir / "out3";
  write_file(dir / "cfg3.json", synth_config(out3, 2));
  CHECK(run_cli("synth --config " + (dir / "cfg3.json").string() +
                " --seed 8")
            .code == 0);
  CHECK(read_file(out / "dataset" / "s001" / "labels.txt") !=
        read_file(out3 / "dataset" / "s001" / "labels.txt"));
  fs::remove_all(dir);
}

TEST_CASE("evaluation consumes a manifest index and reruns identically") {
  const fs::path dir = scratch("eval");
  const fs::path data = dir / "data";
  write_file(dir / "synth.json", synth_config(data, 3));
  REQUIRE(run_cli("synth --config " + (dir / "synth.json").string()).code == 0);

  const std::string dataset_body =
      "{\"manifest_index\": \"" + (data / "dataset" / "manifests.txt").string() +
      "\"}";
  const fs::path out = dir / "out";
  write_file(dir / "eval.json",
             tiny_model_config(out, "000000000000000", dataset_body));

  CHECK(run_cli("evaluate --config " + (dir / "eval.json").string()).code == 0);
  const std::string cycles = read_file(out / "loo_cycles.csv");
  const std::string agg = read_file(out / "loo_aggregate.json");
  CHECK(cycles.find("s001") != std::string::npos);
  CHECK(cycles.find("s003") != std::string::npos);

  CHECK(run_cli("evaluate --config " + (dir / "eval.json").string()).code == 0);
  CHECK(read_file(out / "loo_cycles.csv") == cycles);
  CHECK(read_file(out / "loo_aggregate.json") == agg);
  fs::remove_all(dir);
}

TEST_CASE("a missing dataset file is a data error") {
  const fs::path dir = scratch("missing");
  const std::string dataset_body =
      "{\"manifests\": [\"" + (dir / "nowhere" / "manifest.json").string() +
      "\"]}";
  write_file(dir / "cfg.json",
             tiny_model_config(dir / "out", "000000000000000", dataset_body));
  CHECK(run_cli("evaluate --config " + (dir / "cfg.json").string()).code == 3);
  fs::remove_all(dir);
}

TEST_CASE("optimization logs are independent of the worker count") {
  const fs::path dir = scratch("opt");
  const std::string dataset_body =
      "{\"synth\": {\"subjects\": 2, \"duration_s\": 120}}";
  const fs::path out1 = dir / "o1";
  const fs::path out2 = dir / "o2";
  write_file(dir / "c1.json",
             tiny_model_config(out1, "000000000000000", dataset_body));
  write_file(dir / "c2.json",
             tiny_model_config(out2, "000000000000000", dataset_body));

  CHECK(run_cli("optimize --config " + (dir / "c1.json").string() +
                " --algo ga --jobs 1")
            .code == 0);
  CHECK(run_cli("optimize --config " + (dir / "c2.json").string() +
                " --algo ga --jobs 2")
            .code == 0);
  CHECK(fs::exists(out1 / "ga_steps.jsonl"));
  CHECK(fs::exists(out1 / "ga_summary.json"));
  CHECK(fs::exists(out1 / "ga_best_config.json"));
  CHECK_FALSE(fs::exists(out1 / "pso_steps.jsonl"));
  CHECK(read_file(out1 / "ga_steps.jsonl") ==
        read_file(out2 / "ga_steps.jsonl"));
  CHECK(read_file(out1 / "ga_summary.json") ==
        read_file(out2 / "ga_summary.json"));
  CHECK(read_file(out1 / "ga_best_config.json") ==
        read_file(out2 / "ga_best_config.json"));
  fs::remove_all(dir);
}

TEST_CASE("robustness needs all three channels for the loss suite") {
  const fs::path dir = scratch("rob2ch");
  const std::string dataset_body =
      "{\"synth\": {\"subjects\": 3, \"duration_s\": 120}}";
  write_file(dir / "cfg.json",
             tiny_model_config(dir / "out", "000000000000000", dataset_body));
  const auto res =
      run_cli("robustness --config " + (dir / "cfg.json").string());
  CHECK(res.code == 2);
  CHECK(res.output.find("three-channel") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("robustness and report cover the full artifact flow") {
  const fs::path dir = scratch("robflow");
  const std::string dataset_body =
      "{\"synth\": {\"subjects\": 3, \"duration_s\": 120}}";
  const fs::path out = dir / "out";
  write_file(dir / "cfg.json",
             tiny_model_config(out, "110000100111001", dataset_body));

  CHECK(run_cli("optimize --config " + (dir / "cfg.json").string() +
                " --algo both")
            .code == 0);
  CHECK(run_cli("robustness --config " + (dir / "cfg.json").string()).code ==
        0);
  const std::string scen = read_file(out / "robustness_scenarios.csv");
  CHECK(scen.find("baseline") != std::string::npos);
  CHECK(scen.find("only_ch2") != std::string::npos);
  // 1 header + 3 subjects x 10 scenarios.
  CHECK(std::count(scen.begin(), scen.end(), '\n') == 31);
  const std::string snr = read_file(out / "robustness_snr.csv");
  CHECK(std::count(snr.begin(), snr.end(), '\n') == 4);

  CHECK(run_cli("report --config " + (dir / "cfg.json").string()).code == 0);
  const std::string fitness = read_file(out / "report" / "fitness_vs_step.csv");
  const std::string diversity =
      read_file(out / "report" / "diversity_vs_step.csv");
  CHECK(fitness.substr(0, fitness.find('\n')) == "step,ga,pso");
  CHECK(diversity.substr(0, diversity.find('\n')) == "step,ga,pso");
  CHECK(fs::exists(out / "report" / "auc_vs_snr.csv"));
  CHECK(fs::exists(out / "report" / "auc_vs_scenario.csv"));

  // Regeneration is idempotent.
  CHECK(run_cli("report --config " + (dir / "cfg.json").string()).code == 0);
  CHECK(read_file(out / "report" / "fitness_vs_step.csv") == fitness);
  fs::remove_all(dir);
}

TEST_CASE("reporting an empty directory is a data error naming the gaps") {
  const fs::path dir = scratch("emptyreport");
  const std::string dataset_body =
      "{\"synth\": {\"subjects\": 2, \"duration_s\": 120}}";
  write_file(dir / "cfg.json",
             tiny_model_config(dir / "out", "000000000000000", dataset_body));
  const auto res = run_cli("report --config " + (dir / "cfg.json").string());
  CHECK(res.code == 3);
  CHECK(res.output.find("ga_steps.jsonl") != std::string::npos);
  CHECK(res.output.find("robustness_snr.csv") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("a bad snr grid is rejected before any work") {
  const fs::path dir = scratch("badsnr");
  const std::string dataset_body =
      "{\"synth\": {\"subjects\": 3, \"duration_s\": 120}}";
  write_file(dir / "cfg.json",
             tiny_model_config(dir / "out", "110000100111001", dataset_body));
  CHECK(run_cli("robustness --config " + (dir / "cfg.json").string() +
                " --snr-grid 0,abc")
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("a held output directory refuses a second run") {
  const fs::path dir = scratch("lock");
  const fs::path out = dir / "out";
  fs::create_directories(out);
  const int fd = ::open((out / ".lock").c_str(), O_CREAT | O_RDWR, 0644);
  REQUIRE(fd >= 0);
  REQUIRE(::flock(fd, LOCK_EX | LOCK_NB) == 0);

  write_file(dir / "cfg.json", synth_config(out, 1));
  const auto res = run_cli("synth --config " + (dir / "cfg.json").string());
  CHECK(res.code == 4);
  CHECK(res.output.find("another run") != std::string::npos);

  ::flock(fd, LOCK_UN);
  ::close(fd);
  CHECK(run_cli("synth --config " + (dir / "cfg.json").string()).code == 0);
  fs::remove_all(dir);
}
