#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cssl/config.hpp"
#include "cssl/errors.hpp"
#include "cssl/logging.hpp"
#include "cssl/metrics.hpp"
#include "cssl/ntrf.hpp"
#include "cssl/replay.hpp"
#include "cssl/stream.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(cssl::ErrorKind kind) {
  switch (kind) {
    case cssl::ErrorKind::kConfig:
      return kExitConfig;
    case cssl::ErrorKind::kData:
    case cssl::ErrorKind::kStorage:
    case cssl::ErrorKind::kInput:
      return kExitData;
    case cssl::ErrorKind::kNumeric:
      return kExitNumeric;
    default:
      return 1;
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cssl::ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string hash_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(cssl::fnv1a64(text)));
  return buf;
}

std::string artifact_header(const std::string& hash) {
  return std::string("cssl ") + cssl::kArtifactVersion + " config_hash=" + hash;
}

// Outputs of every task after the first get ".<task>" before the extension.
fs::path task_path(const fs::path& base, std::size_t task) {
  if (task == 0) return base;
  fs::path p = base;
  p.replace_filename(base.stem().string() + "." + std::to_string(task) + base.extension().string());
  return p;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cssl::StorageError("cannot write '" + path.string() + "'");
  return out;
}

struct RunArgs {
  fs::path config;
  std::optional<std::uint64_t> seed;
  fs::path log, checkpoint, buffer_snapshot, predictions;
};

int cmd_run(const RunArgs& args) {
  const std::string text = read_text(args.config);
  cssl::RunConfig config = cssl::parse_config_text(text, args.config.parent_path(), args.config.string());
  if (args.seed) config.stream.seed = *args.seed;
  if (!args.log.empty()) config.output.log = args.log;
  if (!args.checkpoint.empty()) config.output.checkpoint = args.checkpoint;
  if (!args.buffer_snapshot.empty()) config.output.buffer_snapshot = args.buffer_snapshot;
  if (!args.predictions.empty()) config.output.predictions = args.predictions;
  auto tasks = cssl::load_datasets(config);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!config.output.log.empty()) {
    log_file = open_out(config.output.log);
    log = &log_file;
  }
  auto result = cssl::run(config.stream, tasks, *log, text);

  auto& state = result.state;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (!config.output.checkpoint.empty()) {
      state.net.activate(t);
      cssl::save_checkpoint(task_path(config.output.checkpoint, t), state.net.params());
    }
    if (!config.output.buffer_snapshot.empty()) {
      state.buffers[t].save_snapshot(task_path(config.output.buffer_snapshot, t));
    }
  }
  if (!config.output.predictions.empty()) {
    const std::string header = artifact_header(hash_hex(text));
    std::map<std::size_t, const cssl::MetricsRecord*> last;
    for (const auto& rec : result.records) last[rec.task] = &rec;
    for (const auto& [t, rec] : last) {
      auto out = open_out(task_path(config.output.predictions, t));
      out << "# " << header << " task=" << t << " t=" << rec->t << "\npred,conf,label\n";
      char row[64];
      for (std::size_t i = 0; i < rec->eval.labels.size(); ++i) {
        std::snprintf(row, sizeof row, "%d,%.17g,%d\n", rec->eval.predicted[i], rec->eval.confidence[i],
                      rec->eval.labels[i]);
        out << row;
      }
    }
  }
  const auto& final_rec = result.records.back();
  std::fprintf(stderr, "done: %llu examples, final top-%zu accuracy %.4f on task %zu\n",
               static_cast<unsigned long long>(state.counters.t), final_rec.eval.topk.begin()->first,
               final_rec.eval.topk.begin()->second, final_rec.task);
  return 0;
}

int cmd_eval(const fs::path& predictions, std::size_t bins, std::size_t classes) {
  const auto preds = cssl::load_predictions_csv(predictions);
  if (preds.empty()) throw cssl::DataError("predictions file '" + predictions.string() + "' has no rows");
  std::vector<int> predicted, labels;
  std::size_t hits = 0, invalid = 0;
  int top = 0;
  for (const auto& p : preds) {
    predicted.push_back(p.predicted);
    labels.push_back(p.label);
    if (p.label < 0) throw cssl::DataError("negative label in '" + predictions.string() + "'");
    if (p.predicted == p.label) ++hits;
    if (p.predicted < 0) ++invalid;
    top = std::max({top, p.label, p.predicted});
  }
  if (classes == 0) classes = static_cast<std::size_t>(top) + 1;
  json j;
  j["count"] = preds.size();
  j["accuracy"] = static_cast<double>(hits) / static_cast<double>(preds.size());
  j["ece"] = cssl::ece(preds, bins);
  j["ece_bins"] = bins;
  j["invalid_predictions"] = invalid;
  if (invalid == 0) {
    j["confusion"] = cssl::confusion(predicted, labels, classes);
  } else {
    j["confusion"] = nullptr;
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_sweep(const fs::path& config_path, std::optional<std::uint64_t> seed, const fs::path& out_dir,
              std::size_t workers, bool strict) {
  const std::string text = read_text(config_path);
  cssl::RunConfig config = cssl::parse_config_text(text, config_path.parent_path(), config_path.string());
  auto probe = config.ntrf;
  if (seed) probe.base_seed = *seed;
  if (workers > 0) probe.workers = workers;
  probe.validate();
  const auto report = cssl::ntrf_sweep(probe);
  const std::string hash = hash_hex(text);
  fs::create_directories(out_dir);
  cssl::write_sweep_csv(out_dir / "ntrf_sweep.csv", report, artifact_header(hash));
  cssl::write_sweep_summary(out_dir / "ntrf_summary.json", report, probe, hash);
  for (const auto& t : report.trends) {
    const char* status = !t.passed ? "RECORD" : (*t.passed ? "PASS" : "FAIL");
    std::printf("%-6s %s: %s\n", status, t.name.c_str(), t.detail.c_str());
  }
  return strict && !report.all_passed() ? 1 : 0;
}

const char* policy_name(cssl::EvictionPolicy p) {
  switch (p) {
    case cssl::EvictionPolicy::kClassBalanced:
      return "class_balanced";
    case cssl::EvictionPolicy::kUniformRandom:
      return "uniform_random";
    case cssl::EvictionPolicy::kReservoir:
      return "reservoir";
  }
  return "?";
}

int cmd_inspect(const fs::path& snapshot) {
  const auto buffer = cssl::ReplayBuffer::load_snapshot(snapshot);
  buffer.check_invariants();
  json j;
  j["entries"] = buffer.size();
  j["capacity"] = buffer.capacity();
  j["policy"] = policy_name(buffer.policy());
  j["quantize_bits"] = buffer.codec().bits;
  j["area_ratio"] = buffer.codec().area_ratio;
  j["seen"] = buffer.seen_count();
  json hist = json::object();
  for (const auto& [label, n] : buffer.class_counts()) hist[std::to_string(label)] = n;
  j["class_histogram"] = hist;
  j["payload_bytes"] = buffer.payload_bytes();
  j["footprint_bytes"] = buffer.memory_footprint();
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning with a replay buffer on streaming data"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

  RunArgs run_args;
  std::uint64_t seed_value = 0;
  auto* run = app.add_subcommand("run", "Stream the configured datasets and write the metrics log");
  run->add_option("-c,--config", run_args.config, "Config file")->required()->check(CLI::ExistingFile);
  auto* run_seed = run->add_option("--seed", seed_value, "Override the run seed");
  run->add_option("--log", run_args.log, "Metrics log path (stdout when unset)");
  run->add_option("--checkpoint", run_args.checkpoint, "Final network checkpoint");
  run->add_option("--buffer-snapshot", run_args.buffer_snapshot, "Final replay buffer snapshot");
  run->add_option("--predictions", run_args.predictions, "Final test predictions CSV");

  fs::path pred_path;
  std::size_t bins = cssl::kDefaultEceBins, classes = 0;
  auto* eval = app.add_subcommand("eval", "Recompute metrics from a predictions CSV");
  eval->add_option("predictions", pred_path, "pred,conf,label CSV")->required();
  eval->add_option("--bins", bins, "ECE bins")->check(CLI::PositiveNumber);
  eval->add_option("--classes", classes, "Class count for the confusion matrix");

  fs::path sweep_config, out_dir = ".";
  std::size_t workers = 0;
  bool strict = false;
  auto* sweep = app.add_subcommand("ntrf-sweep", "Run the neighbourhood probe grid");
  sweep->add_option("-c,--config", sweep_config, "Config file")->required()->check(CLI::ExistingFile);
  auto* sweep_seed = sweep->add_option("--seed", seed_value, "Override the base seed");
  sweep->add_option("-o,--out-dir", out_dir, "Directory for ntrf_sweep.csv and ntrf_summary.json");
  sweep->add_option("-j,--workers", workers, "Worker threads");
  sweep->add_flag("--strict", strict, "Exit 1 when an asserted trend fails");

  fs::path snapshot;
  auto* inspect = app.add_subcommand("inspect-buffer", "Summarise a replay buffer snapshot");
  inspect->add_option("snapshot", snapshot, "Snapshot file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  cssl::set_log_level(verbose ? cssl::LogLevel::kDebug : quiet ? cssl::LogLevel::kWarning : cssl::LogLevel::kInfo);

  try {
    if (*run) {
      if (*run_seed) run_args.seed = seed_value;
      return cmd_run(run_args);
    }
    if (*eval) return cmd_eval(pred_path, bins, classes);
    if (*sweep) return cmd_sweep(sweep_config, *sweep_seed ? std::optional(seed_value) : std::nullopt, out_dir, workers, strict);
    if (*inspect) return cmd_inspect(snapshot);
  } catch (const cssl::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
