#include "cssl/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "cssl/errors.hpp"
#include "cssl/logging.hpp"
#include "cssl/metrics.hpp"

namespace cssl {
namespace {

constexpr std::uint64_t kOrderStream = 0x0de4;
constexpr std::uint64_t kSampleStream = 0x5a3b;
constexpr std::uint64_t kAugStream = 0xa06;
constexpr std::uint64_t kBufferStream = 0xb0f;
constexpr std::uint64_t kHeadStream = 0x4ead;
constexpr std::uint64_t kPretrainStream = 0x9e7;

bool class_style(Ordering o) { return o == Ordering::kClassIid || o == Ordering::kClassInstance; }

std::vector<double> scaled(std::span<const double> x, double scale) {
  std::vector<double> out(x.begin(), x.end());
  if (scale != 1.0) {
    for (double& v : out) v *= scale;
  }
  return out;
}

Target target_for(Mode mode, std::vector<double> soft) {
  if (mode == Mode::kTheory) {
    // soft = one-hot over {0, 1}; label 1 is the positive class.
    return BinaryLabel{soft.size() > 1 && soft[1] > soft[0] ? 1 : -1};
  }
  return SoftLabel{std::move(soft)};
}

bool all_finite(const GradientSet& g) {
  for (const auto& w : g.layers) {
    for (double v : w.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// Gradient of the summed loss over an augmented batch; returns the loss of row 0.
double batch_gradient(const StreamConfig& config, const NetworkParams& params, SoftLabeledBatch batch,
                      GradientSet& acc) {
  double first_loss = 0.0;
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    const auto x = scaled(batch.inputs[i], config.input_scale);
    const auto trace = forward(params, x);
    const Target target = target_for(config.mode, std::move(batch.labels[i]));
    if (i == 0) first_loss = loss(trace.output, target);
    const auto g = output_gradient(trace.output, target);
    accumulate_gradient(params, trace, g, acc);
  }
  return first_loss;
}

std::size_t head_classes(const StreamConfig& config, std::size_t num_classes) {
  return config.mode == Mode::kTheory ? 1 : num_classes;
}

void pretrain(const StreamConfig& config, StreamState& state, const std::vector<Example>& examples) {
  if (examples.empty()) return;
  Rng rng = make_rng(config.seed, kPretrainStream);
  std::vector<std::size_t> order(examples.size());
  auto& params = state.net.params();
  const std::size_t nc = state.num_classes[0];
  for (std::size_t epoch = 0; epoch < config.pretrain.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const auto& e = examples[i];
      GradientSet g = GradientSet::zeros_like(params);
      SoftLabeledBatch b;
      b.inputs.push_back(e.features);
      b.labels.push_back(one_hot(e.label, nc));
      batch_gradient(config, params, std::move(b), g);
      try {
        apply_update(params, g, config.pretrain.eta);
      } catch (const NumericError& err) {
        log_warning(std::string("pretraining update skipped: ") + err.what());
      }
    }
  }
  for (const auto& e : examples) state.class_seen[0][e.label];
  state.task_seen[0] = true;
}

nlohmann::ordered_json record_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["type"] = "eval";
  j["t"] = r.t;
  j["event"] = r.event;
  j["task"] = r.task;
  auto acc = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.eval.topk) acc[std::to_string(k)] = v;
  j["acc_topk"] = acc;
  j["seen_classes"] = r.seen_classes;
  j["n_eval"] = r.eval.count;
  j["nonfinite"] = r.eval.nonfinite;
  if (r.eval.count > 0) {
    j["ece"] = r.eval.ece;
  } else {
    j["ece"] = nullptr;
  }
  auto cls = nlohmann::ordered_json::object();
  for (const auto& [c, v] : r.eval.class_acc) cls[std::to_string(c)] = v;
  j["class_acc"] = cls;
  if (r.wall_ms) {
    j["wall_ms"] = *r.wall_ms;
  } else {
    j["wall_ms"] = nullptr;
  }
  return j;
}

}  // namespace

double schedule_eta(const EtaSchedule& schedule, double class_progress) {
  if (schedule.kind == EtaKind::kConstant) return schedule.eta;
  const double p = std::clamp(class_progress, 0.0, 1.0);
  return schedule.eta_hi + (schedule.eta_lo - schedule.eta_hi) * p;
}

void StreamConfig::validate() const {
  if (m < 1) throw ConfigError("m must be >= 1");
  if (L < 2) throw ConfigError("L must be >= 2");
  if (capacity < 1) throw ConfigError("capacity must be >= 1");
  if (eta.kind == EtaKind::kConstant && !(eta.eta > 0.0)) throw ConfigError("eta must be > 0");
  if (eta.kind == EtaKind::kPerClassLinear && !(eta.eta_hi > 0.0 && eta.eta_lo > 0.0)) {
    throw ConfigError("eta_hi and eta_lo must be > 0");
  }
  if (topk.empty()) throw ConfigError("topk must list at least one k");
  for (auto k : topk) {
    if (k < 1) throw ConfigError("topk entries must be >= 1");
  }
  if (ece_bins < 1) throw ConfigError("ece_bins must be >= 1");
  if (!(input_scale > 0.0)) throw ConfigError("input_scale must be > 0");
  for (double a : offline_acc) {
    if (!(a > 0.0)) throw ConfigError("offline accuracies must be > 0");
  }
  if (pretrain.examples > 0 && !(pretrain.eta > 0.0)) throw ConfigError("pretrain eta must be > 0");
  codec.validate();
  augment.validate();
}

TaskHeadSet::TaskHeadSet(NetworkParams params, const std::vector<std::size_t>& head_sizes, std::uint64_t seed)
    : params_(std::move(params)) {
  if (head_sizes.empty()) throw ConfigError("at least one task head is required");
  if (head_sizes[0] != params_.dims.K) throw ConfigError("first head size does not match the network");
  Rng rng = make_rng(seed, kHeadStream);
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(params_.dims.m)));
  heads_.resize(head_sizes.size());
  for (std::size_t t = 1; t < head_sizes.size(); ++t) {
    Matrix w(head_sizes[t], params_.dims.m);
    for (double& v : w.data()) v = dist(rng);
    heads_[t] = std::move(w);
  }
}

void TaskHeadSet::activate(std::size_t task) {
  if (task >= heads_.size()) throw StateError("no head for task " + std::to_string(task));
  if (task == active_) return;
  std::swap(params_.layers.back(), heads_[active_]);
  std::swap(params_.layers.back(), heads_[task]);
  active_ = task;
  params_.dims.K = params_.layers.back().rows();
}

const Matrix& TaskHeadSet::head(std::size_t task) const {
  if (task >= heads_.size()) throw StateError("no head for task " + std::to_string(task));
  return task == active_ ? params_.layers.back() : heads_[task];
}

StreamState initialize(const StreamConfig& config, const std::vector<TaskData>& tasks) {
  config.validate();
  if (tasks.empty()) throw ConfigError("no datasets configured");
  std::size_t d = 0;
  for (const auto& task : tasks) {
    if (task.train.empty()) throw ConfigError("dataset '" + task.name + "' has no training examples");
    if (d == 0) d = task.train.front().features.size();
    for (const auto* split : {&task.train, &task.test}) {
      for (const auto& e : *split) {
        if (e.features.size() != d) throw ConfigError("dataset '" + task.name + "' has inconsistent input size");
        if (e.label < 0 || static_cast<std::size_t>(e.label) >= task.num_classes) {
          throw ConfigError("dataset '" + task.name + "' has a label outside [0, " +
                            std::to_string(task.num_classes) + ")");
        }
      }
    }
  }
  if (config.mode == Mode::kTheory) {
    if (tasks.size() != 1) throw ConfigError("theory mode streams a single task");
    if (tasks[0].num_classes != 2) throw ConfigError("theory mode needs exactly two classes");
  }
  const NetworkDims dims{d, config.m, config.L, head_classes(config, tasks[0].num_classes)};
  NetworkParams params;
  if (config.init_checkpoint.empty()) {
    params = init_params(dims, config.seed, config.mode);
  } else {
    try {
      params = load_checkpoint(config.init_checkpoint);
    } catch (const Error& err) {
      throw ConfigError(std::string("cannot use checkpoint: ") + err.what());
    }
    if (!(params.dims == dims)) {
      throw ConfigError("checkpoint dimensions (d=" + std::to_string(params.dims.d) + ", m=" +
                        std::to_string(params.dims.m) + ", L=" + std::to_string(params.dims.L) + ", K=" +
                        std::to_string(params.dims.K) + ") do not match the configured network");
    }
    if (params.mode != config.mode) throw ConfigError("checkpoint was written for a different mode");
  }
  std::vector<std::size_t> heads;
  for (const auto& task : tasks) heads.push_back(head_classes(config, task.num_classes));

  StreamState s;
  s.net = TaskHeadSet(std::move(params), heads, config.seed);
  s.sample_rng = make_rng(config.seed, kSampleStream);
  s.aug_rng = make_rng(config.seed, kAugStream);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    s.buffers.emplace_back(config.capacity, config.codec, config.eviction,
                           derive_seed(config.seed, kBufferStream + t));
    s.num_classes.push_back(tasks[t].num_classes);
    std::map<int, std::size_t> sizes;
    for (const auto& e : tasks[t].train) ++sizes[e.label];
    s.class_sizes.push_back(std::move(sizes));
  }
  s.class_seen.resize(tasks.size());
  s.task_seen.assign(tasks.size(), false);
  s.per_class_schedule = config.eta.kind == EtaKind::kPerClassLinear && class_style(config.ordering);
  if (config.eta.kind == EtaKind::kPerClassLinear && !s.per_class_schedule) {
    log_info("ordering has no class runs; per-class learning rate falls back to constant eta");
  }
  return s;
}

StepResult step(const StreamConfig& config, StreamState& state, const Example& example) {
  const auto task = static_cast<std::size_t>(example.task_id);
  if (example.task_id < 0 || task >= state.buffers.size()) {
    throw InputError("example has task id " + std::to_string(example.task_id) + " without a head");
  }
  state.net.activate(task);
  auto& params = state.net.params();
  const std::size_t nc = state.num_classes[task];

  StepResult result;
  if (!std::all_of(example.features.begin(), example.features.end(), [](double v) { return std::isfinite(v); })) {
    result.updated = false;
    ++state.counters.skipped_updates;
    log_warning("update skipped at t=" + std::to_string(state.counters.t + 1) + ": non-finite input");
    ++state.counters.t;
    return result;
  }
  auto& seen = state.class_seen[task][example.label];
  if (state.per_class_schedule) {
    const std::size_t size = state.class_sizes[task][example.label];
    const double progress = size > 1 ? static_cast<double>(seen) / static_cast<double>(size - 1) : 0.0;
    result.eta = schedule_eta(config.eta, progress);
  } else {
    result.eta = config.eta.eta;
  }

  // (1)-(2) replay draw and batch assembly
  std::vector<Example> batch{example};
  auto& buffer = state.buffers[task];
  if (!buffer.empty() && config.replay_samples > 0) {
    auto replay = buffer.sample(config.replay_samples, state.sample_rng);
    batch.insert(batch.end(), std::make_move_iterator(replay.begin()), std::make_move_iterator(replay.end()));
  }
  // (3) augmentation
  auto aug = augment_pipeline(batch, config.augment, config.mode == Mode::kTheory ? 2 : nc, config.mode,
                              state.aug_rng, state.tracker);
  // (4) one combined update
  GradientSet grad = GradientSet::zeros_like(params);
  result.loss = batch_gradient(config, params, std::move(aug), grad);
  state.loss_sum += result.loss;
  state.counters.new_gradients += 1;
  state.counters.replay_gradients += batch.size() - 1;
  try {
    apply_update(params, grad, result.eta);
  } catch (const NumericError& err) {
    result.updated = false;
    ++state.counters.skipped_updates;
    log_warning("update skipped at t=" + std::to_string(state.counters.t + 1) + ": " + err.what());
  }
  // (5)-(6) store, evicting when full
  buffer.store(example);
  ++seen;
  state.task_seen[task] = true;

  // (7) replay-only updates for earlier tasks
  std::vector<std::size_t> past;
  for (std::size_t p = 0; p < state.buffers.size(); ++p) {
    if (p != task && state.task_seen[p] && !state.buffers[p].empty()) past.push_back(p);
  }
  if (config.cross_task_replay && !past.empty() && config.replay_samples > 0) {
    const bool split = config.multitask_replay == MultitaskReplay::kSplitSep ||
                       config.multitask_replay == MultitaskReplay::kSplitSum;
    const bool sum = config.multitask_replay == MultitaskReplay::kFullSum ||
                     config.multitask_replay == MultitaskReplay::kSplitSum;
    std::vector<std::pair<std::size_t, GradientSet>> pending;
    for (std::size_t i = 0; i < past.size(); ++i) {
      const std::size_t p = past[i];
      std::size_t count = config.replay_samples;
      if (split) {
        count = config.replay_samples / past.size() + (i < config.replay_samples % past.size() ? 1 : 0);
      }
      if (count == 0) continue;
      state.net.activate(p);
      auto& pp = state.net.params();
      auto replay = state.buffers[p].sample(count, state.sample_rng);
      auto paug = augment_pipeline(replay, config.augment, state.num_classes[p], config.mode, state.aug_rng,
                                   state.tracker);
      GradientSet g = GradientSet::zeros_like(pp);
      batch_gradient(config, pp, std::move(paug), g);
      state.counters.replay_gradients += count;
      if (!sum) {
        try {
          apply_update(pp, g, result.eta);
          ++state.counters.cross_task_updates;
        } catch (const NumericError& err) {
          ++state.counters.skipped_updates;
          log_warning(std::string("cross-task update skipped: ") + err.what());
        }
      } else {
        pending.emplace_back(p, std::move(g));
      }
    }
    if (!pending.empty()) {
      const bool ok = std::all_of(pending.begin(), pending.end(), [](const auto& pg) { return all_finite(pg.second); });
      if (!ok) {
        ++state.counters.skipped_updates;
        log_warning("cross-task update skipped: non-finite gradient");
      } else {
        auto& pp = state.net.params();
        const std::size_t trunk = pp.layers.size() - 1;
        for (std::size_t l = 0; l < trunk; ++l) {
          if (!pp.trainable[l]) continue;
          Matrix total(pp.layers[l].rows(), pp.layers[l].cols());
          for (const auto& [p, g] : pending) total.axpy(1.0, g.layers[l]);
          pp.layers[l].axpy(-result.eta, total);
        }
        for (const auto& [p, g] : pending) {
          state.net.activate(p);
          auto& hp = state.net.params();
          if (hp.trainable.back()) hp.layers.back().axpy(-result.eta, g.layers.back());
        }
        ++state.counters.cross_task_updates;
      }
    }
    state.net.activate(task);
  }
  // (8)
  ++state.counters.t;
  return result;
}

std::vector<std::size_t> order_indices(const std::vector<Example>& examples, Ordering ordering, Rng& rng) {
  std::vector<std::size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (ordering == Ordering::kIid) {
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
  }
  const bool needs_groups = ordering == Ordering::kInstance || ordering == Ordering::kClassInstance;
  if (needs_groups) {
    for (const auto& e : examples) {
      if (!e.group_id) throw ConfigError("instance orderings need a group id on every example");
    }
  }
  // Buckets keep first-appearance order before shuffling so the result depends only on rng.
  auto bucket = [](const std::vector<std::size_t>& items, auto key) {
    std::vector<std::vector<std::size_t>> out;
    std::map<std::int64_t, std::size_t> slot;
    for (std::size_t i : items) {
      const auto k = key(i);
      auto [it, fresh] = slot.try_emplace(k, out.size());
      if (fresh) out.emplace_back();
      out[it->second].push_back(i);
    }
    return out;
  };
  auto by_class = [&](std::size_t i) { return static_cast<std::int64_t>(examples[i].label); };
  auto by_group = [&](std::size_t i) { return *examples[i].group_id; };

  std::vector<std::size_t> out;
  out.reserve(idx.size());
  if (ordering == Ordering::kClassIid) {
    auto classes = bucket(idx, by_class);
    std::shuffle(classes.begin(), classes.end(), rng);
    for (auto& c : classes) {
      std::shuffle(c.begin(), c.end(), rng);
      out.insert(out.end(), c.begin(), c.end());
    }
  } else if (ordering == Ordering::kInstance) {
    auto groups = bucket(idx, by_group);
    std::shuffle(groups.begin(), groups.end(), rng);
    for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  } else {
    auto classes = bucket(idx, by_class);
    std::shuffle(classes.begin(), classes.end(), rng);
    for (const auto& c : classes) {
      auto groups = bucket(c, by_group);
      std::shuffle(groups.begin(), groups.end(), rng);
      for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
    }
  }
  return out;
}

std::vector<Example> order_stream(const std::vector<Example>& examples, Ordering ordering, std::uint64_t seed) {
  Rng rng = make_rng(seed, kOrderStream);
  const auto idx = order_indices(examples, ordering, rng);
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(examples[i]);
  return out;
}

EvalResult evaluate(const NetworkParams& params, const std::vector<Example>& test, const std::vector<int>& seen,
                    const StreamConfig& config) {
  EvalResult r;
  const std::set<int> seen_set(seen.begin(), seen.end());
  std::vector<std::vector<double>> logits;
  std::vector<Prediction> preds;
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;
  for (const auto& e : test) {
    if (!seen_set.count(e.label)) continue;
    const auto trace = forward(params, scaled(e.features, config.input_scale));
    Prediction p;
    p.label = e.label;
    std::vector<double> scores;
    const bool finite = std::all_of(trace.output.begin(), trace.output.end(), [](double v) { return std::isfinite(v); });
    if (!finite) {
      // A diverged model still gets scored: the row counts as a confident miss.
      ++r.nonfinite;
      p.predicted = -1;
      p.confidence = 1.0;
      scores.assign(config.mode == Mode::kTheory ? 2 : trace.output.size(), 1.0);
      scores[static_cast<std::size_t>(e.label)] = 0.0;
    } else if (config.mode == Mode::kTheory) {
      const double z = trace.output[0];
      const double pos = 1.0 / (1.0 + std::exp(-z));
      p.predicted = z > 0.0 ? 1 : 0;
      p.confidence = std::max(pos, 1.0 - pos);
      scores = {-z, z};
    } else {
      const auto probs = softmax(trace.output);
      const auto best = std::max_element(probs.begin(), probs.end());
      p.predicted = static_cast<int>(best - probs.begin());
      p.confidence = std::clamp(*best, 0.0, 1.0);
      scores = trace.output;
    }
    auto& pc = per_class[e.label];
    ++pc.second;
    if (p.predicted == p.label) ++pc.first;
    preds.push_back(p);
    logits.push_back(std::move(scores));
    r.predicted.push_back(p.predicted);
    r.confidence.push_back(p.confidence);
    r.labels.push_back(p.label);
  }
  r.count = preds.size();
  if (r.count == 0) return r;
  const std::size_t width = logits.front().size();
  for (auto k : config.topk) {
    r.topk[k] = topk_accuracy(logits, r.labels, std::min(k, width));
  }
  r.ece = ece(preds, config.ece_bins);
  for (const auto& [c, hits] : per_class) {
    r.class_acc[c] = static_cast<double>(hits.first) / static_cast<double>(hits.second);
  }
  return r;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunResult run(const StreamConfig& config, std::vector<TaskData> tasks, std::ostream& log,
              const std::string& config_text, const RunHooks& hooks) {
  using json = nlohmann::ordered_json;
  {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(config_text)));
    json h;
    h["type"] = "header";
    h["version"] = kArtifactVersion;
    h["config_hash"] = hash;
    h["seed"] = config.seed;
    h["config"] = config_text;
    log << h.dump() << '\n';
  }
  try {
    StreamState state = initialize(config, tasks);
    RunResult result;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      for (auto& e : tasks[t].train) e.task_id = static_cast<int>(t);
      for (auto& e : tasks[t].test) e.task_id = static_cast<int>(t);
      if (config.mode == Mode::kTheory) {
        for (const auto& e : tasks[t].train) check_unit_norm(e);
      }
    }

    std::vector<std::vector<Example>> streams;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      streams.push_back(order_stream(tasks[t].train, config.ordering, derive_seed(config.seed, t)));
    }
    if (config.pretrain.examples > 0) {
      const std::size_t n = std::min(config.pretrain.examples, streams[0].size());
      std::vector<Example> head(streams[0].begin(), streams[0].begin() + static_cast<std::ptrdiff_t>(n));
      pretrain(config, state, head);
      if (!config.pretrain.reenter) streams[0].erase(streams[0].begin(), streams[0].begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::size_t total = 0;
    for (const auto& s : streams) total += s.size();
    const std::size_t events =
        config.eval_every == 0 ? 1 : total / config.eval_every + (total % config.eval_every != 0 || total == 0 ? 1 : 0);
    if (!config.offline_acc.empty() && config.offline_acc.size() != events) {
      throw ConfigError("offline_acc lists " + std::to_string(config.offline_acc.size()) +
                        " accuracies but the run has " + std::to_string(events) + " testing events");
    }

    result.class_order.resize(tasks.size());
    std::vector<std::set<int>> order_seen(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      for (const auto& [c, n] : state.class_seen[t]) {
        if (order_seen[t].insert(c).second) result.class_order[t].push_back(c);
      }
    }
    const auto start = std::chrono::steady_clock::now();
    std::vector<double> alpha;
    std::size_t event = 0;
    auto testing_event = [&]() {
      double acc_sum = 0.0;
      std::size_t acc_n = 0;
      const std::size_t current = state.net.active();
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (!state.task_seen[t]) continue;
        MetricsRecord rec;
        rec.t = state.counters.t;
        rec.event = event;
        rec.task = t;
        for (const auto& [c, n] : state.class_seen[t]) rec.seen_classes.push_back(c);
        state.net.activate(t);
        rec.eval = evaluate(state.net.params(), tasks[t].test, rec.seen_classes, config);
        if (config.log_wall_time) {
          rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        }
        if (rec.eval.count > 0) {
          acc_sum += rec.eval.topk.begin()->second;
          ++acc_n;
        }
        log << record_json(rec).dump() << '\n';
        result.records.push_back(std::move(rec));
      }
      state.net.activate(current);
      alpha.push_back(acc_n > 0 ? acc_sum / static_cast<double>(acc_n) : 0.0);
      ++event;
    };

    for (std::size_t t = 0; t < streams.size(); ++t) {
      for (const auto& e : streams[t]) {
        if (order_seen[t].insert(e.label).second) result.class_order[t].push_back(e.label);
        step(config, state, e);
        if (hooks.after_step) hooks.after_step(state);
        if (config.eval_every > 0 && state.counters.t % config.eval_every == 0) testing_event();
      }
    }
    if (config.eval_every == 0 || state.counters.t % config.eval_every != 0 || state.counters.t == 0) {
      testing_event();
    }
    if (!config.offline_acc.empty()) result.omega = omega_all(alpha, config.offline_acc);
    const auto n_new = state.counters.new_gradients;
    result.avg_train_loss = n_new > 0 ? state.loss_sum / static_cast<double>(n_new) : 0.0;

    json s;
    s["type"] = "summary";
    s["examples"] = state.counters.t;
    s["new_gradients"] = n_new;
    s["replay_gradients"] = state.counters.replay_gradients;
    s["skipped_updates"] = state.counters.skipped_updates;
    s["events"] = event;
    s["avg_train_loss"] = result.avg_train_loss;
    s["xi_sup_sq"] = state.tracker.sup_sq_norm;
    if (result.omega) {
      s["omega_all"] = *result.omega;
    } else {
      s["omega_all"] = nullptr;
    }
    s["class_order"] = result.class_order;
    log << s.dump() << '\n';
    log.flush();
    result.state = std::move(state);
    return result;
  } catch (const std::exception& err) {
    json a;
    a["type"] = "aborted";
    a["error"] = err.what();
    log << a.dump() << '\n';
    log.flush();
    throw;
  }
}

}  // namespace cssl
