#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cssl/augment.hpp"
#include "cssl/codec.hpp"
#include "cssl/example.hpp"
#include "cssl/netcore.hpp"
#include "cssl/replay.hpp"
#include "cssl/rng.hpp"

namespace cssl {

enum class EtaKind { kConstant, kPerClassLinear };

struct EtaSchedule {
  EtaKind kind = EtaKind::kConstant;
  double eta = 0.05;
  double eta_hi = 0.1;
  double eta_lo = 0.001;
  friend bool operator==(const EtaSchedule&, const EtaSchedule&) = default;
};

// Constant: eta. Per-class: eta_hi + (eta_lo - eta_hi) * progress, progress clamped to [0, 1].
double schedule_eta(const EtaSchedule& schedule, double class_progress);

enum class Ordering { kIid, kClassIid, kInstance, kClassInstance };

// full/split: B replay samples for every past task, or B in total shared between them.
// sep/sum: one update per past task, or a single update with trunk gradients summed.
enum class MultitaskReplay { kFullSep, kFullSum, kSplitSep, kSplitSum };

struct StreamConfig {
  Mode mode = Mode::kPractical;
  std::size_t m = 64;
  std::size_t L = 3;
  EtaSchedule eta;
  std::size_t replay_samples = 16;  // B
  std::size_t capacity = 200;       // C, per task
  Codec codec;
  EvictionPolicy eviction = EvictionPolicy::kClassBalanced;
  AugPolicy augment;
  Ordering ordering = Ordering::kClassIid;
  std::size_t eval_every = 0;  // 0: only the final testing event
  std::vector<std::size_t> topk{1};
  std::size_t ece_bins = 15;
  std::uint64_t seed = 0;
  std::filesystem::path init_checkpoint;  // empty: random initialisation
  MultitaskReplay multitask_replay = MultitaskReplay::kFullSep;
  bool cross_task_replay = true;
  double input_scale = 1.0;  // applied to features right before the forward pass
  std::vector<double> offline_acc;
  bool log_wall_time = false;
  struct Pretrain {
    std::size_t examples = 0;  // taken from the head of the first task's ordered stream
    std::size_t epochs = 1;
    double eta = 0.05;
    bool reenter = false;  // whether pretraining examples are streamed again afterwards
    friend bool operator==(const Pretrain&, const Pretrain&) = default;
  } pretrain;

  void validate() const;
  friend bool operator==(const StreamConfig&, const StreamConfig&) = default;
};

struct TaskData {
  std::string name;
  std::size_t num_classes = 0;
  std::vector<Example> train;
  std::vector<Example> test;
};

// One trunk shared by every task and one output matrix per task. The active
// task's head lives in params().layers.back(); the others are parked.
class TaskHeadSet {
 public:
  TaskHeadSet() = default;
  TaskHeadSet(NetworkParams params, const std::vector<std::size_t>& head_sizes, std::uint64_t seed);

  NetworkParams& params() noexcept { return params_; }
  const NetworkParams& params() const noexcept { return params_; }
  std::size_t active() const noexcept { return active_; }
  std::size_t num_tasks() const noexcept { return heads_.size(); }
  void activate(std::size_t task);
  const Matrix& head(std::size_t task) const;

 private:
  NetworkParams params_;
  std::vector<Matrix> heads_;  // slot of the active task is empty
  std::size_t active_ = 0;
};

struct StreamCounters {
  std::uint64_t t = 0;
  std::uint64_t new_gradients = 0;
  std::uint64_t replay_gradients = 0;
  std::uint64_t skipped_updates = 0;
  std::uint64_t cross_task_updates = 0;
};

struct StreamState {
  TaskHeadSet net;
  std::vector<ReplayBuffer> buffers;
  std::vector<std::size_t> num_classes;
  std::vector<std::map<int, std::size_t>> class_seen;
  std::vector<std::map<int, std::size_t>> class_sizes;
  std::vector<bool> task_seen;
  bool per_class_schedule = false;
  Rng sample_rng;
  Rng aug_rng;
  PerturbationTracker tracker;
  StreamCounters counters;
  double loss_sum = 0.0;  // loss of each new example before its update
};

// Throws ConfigError for an incompatible checkpoint or task set, before any state exists.
StreamState initialize(const StreamConfig& config, const std::vector<TaskData>& tasks);

struct StepResult {
  bool updated = true;
  double eta = 0.0;
  double loss = 0.0;
};

StepResult step(const StreamConfig& config, StreamState& state, const Example& example);

std::vector<std::size_t> order_indices(const std::vector<Example>& examples, Ordering ordering, Rng& rng);
std::vector<Example> order_stream(const std::vector<Example>& examples, Ordering ordering, std::uint64_t seed);

struct EvalResult {
  std::size_t count = 0;
  std::size_t nonfinite = 0;  // rows whose output overflowed
  std::map<std::size_t, double> topk;
  double ece = 0.0;
  std::map<int, double> class_acc;
  std::vector<int> predicted;  // -1 for non-finite rows
  std::vector<double> confidence;
  std::vector<int> labels;
};

// Test examples whose label is in `seen` only; params must carry the task's head.
EvalResult evaluate(const NetworkParams& params, const std::vector<Example>& test, const std::vector<int>& seen,
                    const StreamConfig& config);

struct MetricsRecord {
  std::uint64_t t = 0;
  std::size_t event = 0;
  std::size_t task = 0;
  std::vector<int> seen_classes;
  EvalResult eval;
  std::optional<double> wall_ms;
};

struct RunResult {
  std::vector<MetricsRecord> records;
  std::optional<double> omega;
  std::vector<std::vector<int>> class_order;  // per task, labels by first appearance
  double avg_train_loss = 0.0;
  StreamState state;
};

struct RunHooks {
  std::function<void(const StreamState&)> after_step;
};

std::uint64_t fnv1a64(std::string_view text);
inline constexpr const char* kArtifactVersion = "1.0.0";

// Streams every task in sequence and writes the JSON-lines log to `log`: a header
// line, one line per (testing event, seen task), then a summary line. A failing
// run writes an "aborted" line, flushes and rethrows.
RunResult run(const StreamConfig& config, std::vector<TaskData> tasks, std::ostream& log,
              const std::string& config_text = {}, const RunHooks& hooks = {});

}  // namespace cssl
