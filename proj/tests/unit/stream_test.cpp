#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

#include "cssl/data.hpp"
#include "cssl/errors.hpp"
#include "cssl/logging.hpp"
#include "cssl/stream.hpp"

using namespace cssl;

namespace {

TaskData blobs(std::size_t classes, std::size_t per_class, std::uint64_t seed, std::size_t d = 6) {
  SyntheticSpec s;
  s.d = d;
  s.classes = classes;
  s.per_class = per_class;
  s.test_per_class = 10;
  s.seed = seed;
  auto data = gen_synthetic(s);
  return {"blobs", classes, std::move(data.train), std::move(data.test)};
}

StreamConfig small_config() {
  StreamConfig c;
  c.m = 16;
  c.L = 3;
  c.eta.eta = 0.02;
  c.replay_samples = 3;
  c.capacity = 10;
  c.seed = 5;
  return c;
}

std::vector<Example> tagged(std::vector<int> labels, std::vector<std::int64_t> groups = {}) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto e = Example::vector({static_cast<double>(i)}, labels[i]);
    if (!groups.empty()) e.group_id = groups[i];
    out.push_back(e);
  }
  return out;
}

std::vector<nlohmann::json> lines(const std::string& log) {
  std::vector<nlohmann::json> out;
  std::istringstream in(log);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_SUITE("stream") {
  TEST_CASE("learning rate schedules") {
    EtaSchedule per{EtaKind::kPerClassLinear, 0.05, 0.1, 0.001};
    CHECK(schedule_eta(per, 0.0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(schedule_eta(per, 1.0) == doctest::Approx(0.001).epsilon(1e-15));
    CHECK(schedule_eta(per, 0.5) == doctest::Approx(0.0505).epsilon(1e-15));
    CHECK(schedule_eta(per, 1.7) == doctest::Approx(0.001).epsilon(1e-15));
    EtaSchedule constant{EtaKind::kConstant, 0.03, 0.1, 0.001};
    CHECK(schedule_eta(constant, 0.4) == 0.03);
  }

  TEST_CASE("stream orderings") {
    SUBCASE("iid is a permutation") {
      const auto ex = tagged({0, 1, 2, 0, 1, 2, 0, 1, 2, 3});
      const auto out = order_stream(ex, Ordering::kIid, 4);
      CHECK(std::is_permutation(out.begin(), out.end(), ex.begin(), ex.end()));
      CHECK(order_stream(ex, Ordering::kIid, 4) == out);
    }
    SUBCASE("class iid keeps every class in one run") {
      std::vector<int> labels;
      for (int i = 0; i < 60; ++i) labels.push_back(i % 5);
      const auto out = order_stream(tagged(labels), Ordering::kClassIid, 9);
      std::set<int> closed;
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (i > 0 && out[i].label != out[i - 1].label) closed.insert(out[i - 1].label);
        CHECK_FALSE(closed.count(out[i].label));
      }
    }
    SUBCASE("instance orderings keep groups intact and in order") {
      std::vector<int> labels;
      std::vector<std::int64_t> groups;
      for (int i = 0; i < 48; ++i) {
        labels.push_back(i / 16);
        groups.push_back(i / 4);
      }
      const auto ex = tagged(labels, groups);
      for (auto ord : {Ordering::kInstance, Ordering::kClassInstance}) {
        const auto out = order_stream(ex, ord, 2);
        CHECK(std::is_permutation(out.begin(), out.end(), ex.begin(), ex.end()));
        std::set<std::int64_t> closed;
        for (std::size_t i = 0; i < out.size(); ++i) {
          if (i > 0 && out[i].group_id != out[i - 1].group_id) closed.insert(*out[i - 1].group_id);
          CHECK_FALSE(closed.count(*out[i].group_id));
          if (i > 0 && out[i].group_id == out[i - 1].group_id) CHECK(out[i].features[0] > out[i - 1].features[0]);
        }
        if (ord == Ordering::kClassInstance) {
          std::set<int> done;
          for (std::size_t i = 1; i < out.size(); ++i) {
            if (out[i].label != out[i - 1].label) done.insert(out[i - 1].label);
            CHECK_FALSE(done.count(out[i].label));
          }
        }
      }
      CHECK_THROWS_AS(order_stream(tagged({0, 1}), Ordering::kInstance, 0), ConfigError);
    }
  }

  TEST_CASE("initialisation") {
    const std::vector<TaskData> tasks{blobs(3, 20, 1)};
    auto config = small_config();
    const auto a = initialize(config, tasks);
    const auto b = initialize(config, tasks);
    CHECK(a.net.params() == b.net.params());
    CHECK(a.counters.t == 0);
    CHECK(a.buffers.at(0).empty());

    const auto dir = oracle::temp_dir("init");
    auto p = init_params({6, 16, 3, 3}, 77, Mode::kPractical);
    save_checkpoint(dir / "w.ckpt", p);
    config.init_checkpoint = dir / "w.ckpt";
    CHECK(initialize(config, tasks).net.params() == p);

    save_checkpoint(dir / "bad.ckpt", init_params({7, 16, 3, 3}, 77, Mode::kPractical));
    config.init_checkpoint = dir / "bad.ckpt";
    CHECK_THROWS_AS(initialize(config, tasks), ConfigError);
    config.init_checkpoint = dir / "missing.ckpt";
    CHECK_THROWS_AS(initialize(config, tasks), ConfigError);

    auto theory = small_config();
    theory.mode = Mode::kTheory;
    CHECK_THROWS_AS(initialize(theory, tasks), ConfigError);
  }

  TEST_CASE("a step without replay is a plain gradient step") {
    const std::vector<TaskData> tasks{blobs(3, 20, 2)};
    auto config = small_config();
    config.replay_samples = 0;
    auto state = initialize(config, tasks);
    const auto w0 = state.net.params();
    const auto& x = tasks[0].train[7];
    step(config, state, x);
    auto expected = w0;
    apply_update(expected, backward(w0, forward(w0, x.features), ClassLabel{x.label}), config.eta.eta);
    CHECK(state.net.params() == expected);
    CHECK(state.buffers[0].size() == 1);
  }

  TEST_CASE("first theory step follows the update rule with an empty replay sum") {
    SyntheticSpec s;
    s.kind = SyntheticKind::kTwoClassMargin;
    s.classes = 2;
    s.d = 8;
    s.per_class = 10;
    s.lambda_sep = 0.01;
    s.seed = 3;
    auto data = gen_synthetic(s);
    const std::vector<TaskData> tasks{{"margin", 2, data.train, data.test}};
    auto config = small_config();
    config.mode = Mode::kTheory;
    config.m = 32;
    auto state = initialize(config, tasks);
    const auto w0 = state.net.params();
    for (const auto& x : tasks[0].train) {
      if (x.label != 0) continue;
      step(config, state, x);
      auto expected = w0;
      apply_update(expected, backward(w0, forward(w0, x.features), BinaryLabel{-1}), config.eta.eta);
      CHECK(state.net.params() == expected);
      break;
    }
  }

  TEST_CASE("a replay step applies minus eta times the summed gradients") {
    const std::vector<TaskData> tasks{blobs(4, 15, 3)};
    auto config = small_config();
    config.replay_samples = 5;
    auto state = initialize(config, tasks);
    const auto stream = order_stream(tasks[0].train, Ordering::kIid, 1);
    for (std::size_t i = 0; i < 12; ++i) step(config, state, stream[i]);

    const auto w0 = state.net.params();
    auto rng = state.sample_rng;
    const auto replay = state.buffers[0].sample(5, rng);
    const auto& x = stream[12];
    auto total = GradientSet::zeros_like(w0);
    std::vector<Example> batch{x};
    batch.insert(batch.end(), replay.begin(), replay.end());
    for (const auto& e : batch) {
      const auto g = backward(w0, forward(w0, e.features), ClassLabel{e.label});
      for (std::size_t l = 0; l < g.layers.size(); ++l) total.layers[l].axpy(1.0, g.layers[l]);
    }
    step(config, state, x);
    const auto& w1 = state.net.params();
    for (std::size_t l = 0; l < w0.layers.size(); ++l) {
      for (std::size_t i = 0; i < w0.layers[l].size(); ++i) {
        const double expect = w0.layers[l].data()[i] - config.eta.eta * total.layers[l].data()[i];
        CHECK(w1.layers[l].data()[i] == doctest::Approx(expect).epsilon(1e-14));
      }
    }
    CHECK(state.counters.new_gradients == 13);
    CHECK(state.counters.replay_gradients == 12 * 5);
  }

  TEST_CASE("buffer grows by one per step until full") {
    const std::vector<TaskData> tasks{blobs(2, 20, 4)};
    auto config = small_config();
    auto state = initialize(config, tasks);
    for (std::size_t t = 0; t < 25; ++t) {
      step(config, state, tasks[0].train[t]);
      CHECK(state.buffers[0].size() == std::min<std::size_t>(t + 1, config.capacity));
    }
  }

  TEST_CASE("non-finite updates are skipped and the state kept") {
    set_log_level(LogLevel::kError);
    const std::vector<TaskData> tasks{blobs(2, 10, 5)};
    auto config = small_config();
    auto state = initialize(config, tasks);
    auto bad = tasks[0].train[0];
    bad.features[0] = std::numeric_limits<double>::quiet_NaN();
    const auto before = state.net.params();
    const auto r = step(config, state, bad);
    CHECK_FALSE(r.updated);
    CHECK(state.net.params() == before);
    CHECK(state.counters.skipped_updates == 1);
    CHECK(state.counters.t == 1);
    set_log_level(LogLevel::kInfo);
  }

  TEST_CASE("per-class schedule uses the position inside the class") {
    const std::vector<TaskData> tasks{blobs(2, 5, 6)};
    auto config = small_config();
    config.eta = {EtaKind::kPerClassLinear, 0.05, 0.1, 0.001};
    auto state = initialize(config, tasks);
    const auto stream = order_stream(tasks[0].train, Ordering::kClassIid, 0);
    std::vector<double> etas;
    for (const auto& e : stream) etas.push_back(step(config, state, e).eta);
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t j = 0; j < 5; ++j) CHECK(etas[k * 5 + j] == doctest::Approx(0.1 - 0.099 * j / 4.0).epsilon(1e-14));
    }
    config.ordering = Ordering::kIid;
    set_log_level(LogLevel::kWarning);
    CHECK_FALSE(initialize(config, tasks).per_class_schedule);
    set_log_level(LogLevel::kInfo);
  }

  TEST_CASE("cross-task replay never touches the current head") {
    const std::vector<TaskData> tasks{blobs(3, 10, 7), blobs(2, 10, 8)};
    for (auto mode : {MultitaskReplay::kFullSep, MultitaskReplay::kFullSum, MultitaskReplay::kSplitSep,
                      MultitaskReplay::kSplitSum}) {
      auto config = small_config();
      config.multitask_replay = mode;
      auto state = initialize(config, tasks);
      for (const auto& e : tasks[0].train) step(config, state, e);
      auto second = tasks[1].train[0];
      second.task_id = 1;
      auto with = state;
      auto without = state;
      auto off = config;
      off.cross_task_replay = false;
      step(config, with, second);
      step(off, without, second);
      CHECK(with.net.head(1) == without.net.head(1));
      CHECK_FALSE(with.net.head(0) == without.net.head(0));
      CHECK(without.net.head(0) == state.net.head(0));
      CHECK_FALSE(with.net.params().layers[1] == without.net.params().layers[1]);
      CHECK(with.counters.replay_gradients - without.counters.replay_gradients == config.replay_samples);
    }
  }

  TEST_CASE("split replay divides the samples between past tasks") {
    const std::vector<TaskData> tasks{blobs(2, 6, 9), blobs(2, 6, 10), blobs(2, 6, 11)};
    auto config = small_config();
    config.replay_samples = 5;
    config.multitask_replay = MultitaskReplay::kSplitSep;
    auto state = initialize(config, tasks);
    for (std::size_t t = 0; t < 2; ++t) {
      for (auto e : tasks[t].train) {
        e.task_id = static_cast<int>(t);
        step(config, state, e);
      }
    }
    auto e = tasks[2].train[0];
    e.task_id = 2;
    const auto before = state.counters;
    step(config, state, e);
    CHECK(state.counters.replay_gradients - before.replay_gradients == 5);
    CHECK(state.counters.cross_task_updates - before.cross_task_updates == 2);
  }

  TEST_CASE("evaluation over seen classes") {
    const std::vector<TaskData> tasks{blobs(4, 10, 12)};
    auto config = small_config();
    config.topk = {1, 2};
    auto state = initialize(config, tasks);
    const auto r = evaluate(state.net.params(), tasks[0].test, {0, 2}, config);
    CHECK(r.count == 20);
    for (int y : r.labels) CHECK((y == 0 || y == 2));
    CHECK(r.topk.at(2) >= r.topk.at(1));
    CHECK(r.class_acc.size() == 2);
    CHECK(r.confidence.size() == 20);
    CHECK(evaluate(state.net.params(), tasks[0].test, {}, config).count == 0);

    auto broken = state.net.params();
    broken.layers[1](0, 0) = std::numeric_limits<double>::infinity();
    broken.layers[1](1, 0) = -std::numeric_limits<double>::infinity();
    const auto nf = evaluate(broken, tasks[0].test, {0, 1, 2, 3}, config);
    CHECK(nf.nonfinite > 0);
    CHECK(std::isfinite(nf.ece));
  }

  TEST_CASE("run log structure and counters") {
    const std::vector<TaskData> tasks{blobs(3, 20, 13)};
    auto config = small_config();
    std::ostringstream log;
    const auto result = run(config, tasks, log, "seed = 5\n");
    const auto rows = lines(log.str());
    REQUIRE(rows.size() == 3);
    CHECK(rows[0]["type"] == "header");
    CHECK(rows[0]["version"] == kArtifactVersion);
    CHECK(rows[0]["config"] == "seed = 5\n");
    CHECK(rows[1]["type"] == "eval");
    CHECK(rows[1]["t"] == 60);
    CHECK(rows[1]["wall_ms"].is_null());
    CHECK(rows[2]["type"] == "summary");
    CHECK(rows[2]["examples"] == 60);
    CHECK(rows[2]["new_gradients"] == 60);
    CHECK(result.records.size() == 1);
    CHECK(result.class_order[0].size() == 3);
  }

  TEST_CASE("testing events follow the cadence and feed omega") {
    const std::vector<TaskData> tasks{blobs(2, 25, 14)};
    auto config = small_config();
    config.eval_every = 20;
    config.offline_acc = {0.5, 0.5, 0.5};
    std::ostringstream log;
    const auto result = run(config, tasks, log);
    REQUIRE(result.records.size() == 3);
    CHECK(result.records[0].t == 20);
    CHECK(result.records[2].t == 50);
    double sum = 0;
    for (const auto& r : result.records) sum += r.eval.topk.at(1) / 0.5;
    CHECK(*result.omega == doctest::Approx(sum / 3).epsilon(1e-12));

    config.offline_acc = {0.5};
    std::ostringstream log2;
    CHECK_THROWS_AS(run(config, tasks, log2), ConfigError);
    CHECK(lines(log2.str()).back()["type"] == "aborted");
  }

  TEST_CASE("runs are byte-identical for the same seed") {
    const std::vector<TaskData> tasks{blobs(3, 20, 15), blobs(2, 15, 16)};
    auto config = small_config();
    config.eval_every = 17;
    config.augment.mix.enabled = true;
    std::ostringstream a, b, c;
    run(config, tasks, a);
    run(config, tasks, b);
    CHECK(a.str() == b.str());
    config.seed = 6;
    run(config, tasks, c);
    CHECK_FALSE(a.str() == c.str());
  }

  TEST_CASE("a failing run flushes an aborted line") {
    const std::vector<TaskData> tasks{blobs(2, 10, 17)};
    auto config = small_config();
    std::ostringstream log;
    RunHooks hooks;
    hooks.after_step = [](const StreamState& s) {
      if (s.counters.t == 5) throw std::runtime_error("stop");
    };
    CHECK_THROWS_AS(run(config, tasks, log, "", hooks), std::runtime_error);
    const auto rows = lines(log.str());
    CHECK(rows.front()["type"] == "header");
    CHECK(rows.back()["type"] == "aborted");
    CHECK(rows.back()["error"] == "stop");
  }

  TEST_CASE("pretraining examples leave the stream unless re-entered") {
    const std::vector<TaskData> tasks{blobs(2, 10, 18)};
    auto config = small_config();
    config.pretrain.examples = 6;
    config.pretrain.epochs = 2;
    std::ostringstream log;
    CHECK(run(config, tasks, log).state.counters.t == 14);
    config.pretrain.reenter = true;
    CHECK(run(config, tasks, log).state.counters.t == 20);
  }
}
