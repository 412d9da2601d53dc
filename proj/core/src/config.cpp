#include "cssl/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <variant>

#include "cssl/errors.hpp"
#include "cssl/logging.hpp"

namespace cssl {
namespace {

struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<bool, double, std::string, Array> v;
  std::string raw;  // numeric literal as written
};

struct Entry {
  std::size_t line = 0;
  Value value;
  bool used = false;
};

struct Section {
  std::size_t line = 0;
  std::map<std::string, Entry> entries;
};

class Parser {
 public:
  Parser(std::string_view text, std::string_view source) : text_(text), source_(source) {}

  std::vector<std::pair<std::string, Section>> parse() {
    std::vector<std::pair<std::string, Section>> sections;
    sections.emplace_back("", Section{});
    std::set<std::string> names{""};
    std::size_t start = 0;
    while (start <= text_.size()) {
      const auto end = text_.find('\n', start);
      line_ = text_.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
      ++lineno_;
      pos_ = 0;
      skip_ws();
      if (!at_end() && peek() != '#') {
        if (peek() == '[') {
          ++pos_;
          const auto close = line_.find(']', pos_);
          if (close == std::string_view::npos) fail("unterminated section header");
          std::string name(trim(line_.substr(pos_, close - pos_)));
          pos_ = close + 1;
          expect_line_end();
          if (name.empty()) fail("empty section name");
          if (!names.insert(name).second) fail("duplicate section [" + name + "]");
          sections.emplace_back(name, Section{lineno_, {}});
        } else {
          std::string key = parse_key();
          skip_ws();
          if (at_end() || peek() != '=') fail("expected '=' after key '" + key + "'");
          ++pos_;
          skip_ws();
          Value v = parse_value();
          expect_line_end();
          auto& sec = sections.back().second;
          if (sec.entries.count(key)) fail("duplicate key '" + key + "'");
          sec.entries.emplace(key, Entry{lineno_, std::move(v), false});
        }
      }
      if (end == std::string_view::npos) break;
      start = end + 1;
    }
    return sections;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(std::string(source_) + ":" + std::to_string(lineno_) + ": " + msg);
  }
  bool at_end() const { return pos_ >= line_.size(); }
  char peek() const { return line_[pos_]; }
  void skip_ws() {
    while (!at_end() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) ++pos_;
  }
  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }
  void expect_line_end() {
    skip_ws();
    if (!at_end() && peek() != '#') fail("unexpected text after value");
  }
  std::string parse_key() {
    const auto b = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '.')) ++pos_;
    if (b == pos_) fail("expected a key");
    return std::string(line_.substr(b, pos_ - b));
  }
  Value parse_value() {
    if (at_end()) fail("missing value");
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') {
      ++pos_;
      Array items;
      skip_ws();
      if (!at_end() && peek() == ']') {
        ++pos_;
        return Value{items, {}};
      }
      while (true) {
        skip_ws();
        items.push_back(parse_value());
        skip_ws();
        if (at_end()) fail("unterminated array");
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        if (peek() == ']') {
          ++pos_;
          break;
        }
        fail("expected ',' or ']' in array");
      }
      return Value{std::move(items), {}};
    }
    const auto b = pos_;
    while (!at_end() && peek() != ',' && peek() != ']' && peek() != '#' && peek() != ' ' && peek() != '\t' &&
           peek() != '\r') {
      ++pos_;
    }
    const std::string word(line_.substr(b, pos_ - b));
    if (word == "true") return Value{true, word};
    if (word == "false") return Value{false, word};
    double d = 0.0;
    const auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), d);
    if (ec != std::errc() || ptr != word.data() + word.size() || word.empty()) {
      fail("cannot parse value '" + word + "' (strings need double quotes)");
    }
    return Value{d, word};
  }
  Value parse_string() {
    ++pos_;
    std::string out;
    while (true) {
      if (at_end()) fail("unterminated string");
      const char c = peek();
      ++pos_;
      if (c == '"') break;
      if (c == '\\') {
        if (at_end()) fail("unterminated escape");
        const char e = peek();
        ++pos_;
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unknown escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    return Value{std::move(out), {}};
  }

  std::string_view text_;
  std::string_view source_;
  std::string_view line_;
  std::size_t lineno_ = 0;
  std::size_t pos_ = 0;
};

class Reader {
 public:
  Reader(Section& section, std::string name, std::string_view source, const std::filesystem::path& base)
      : sec_(section), name_(std::move(name)), source_(source), base_(base) {}

  [[noreturn]] void fail(const Entry& e, const std::string& msg) const {
    throw ConfigError(std::string(source_) + ":" + std::to_string(e.line) + ": " + msg);
  }
  Entry* find(const std::string& key) {
    auto it = sec_.entries.find(key);
    if (it == sec_.entries.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }
  double number(const Entry& e, const std::string& key) const {
    if (!std::holds_alternative<double>(e.value.v)) fail(e, "'" + key + "' must be a number");
    const double d = std::get<double>(e.value.v);
    if (!std::isfinite(d)) fail(e, "'" + key + "' must be finite");
    return d;
  }
  std::uint64_t integer(const Entry& e, const std::string& key) const {
    const double d = number(e, key);
    if (d < 0 || d != std::floor(d) || e.value.raw.find_first_of(".eE") != std::string::npos) {
      fail(e, "'" + key + "' must be a nonnegative integer");
    }
    std::uint64_t out = 0;
    const auto& raw = e.value.raw;
    const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), out);
    if (ec != std::errc() || ptr != raw.data() + raw.size()) fail(e, "'" + key + "' is out of range");
    return out;
  }

  void get(const std::string& key, double& out) {
    if (auto* e = find(key)) out = number(*e, key);
  }
  void get(const std::string& key, std::size_t& out) {
    if (auto* e = find(key)) out = static_cast<std::size_t>(integer(*e, key));
  }
  void get_u64(const std::string& key, std::uint64_t& out) {
    if (auto* e = find(key)) out = integer(*e, key);
  }
  void get(const std::string& key, int& out) {
    if (auto* e = find(key)) out = static_cast<int>(integer(*e, key));
  }
  void get(const std::string& key, bool& out) {
    if (auto* e = find(key)) {
      if (!std::holds_alternative<bool>(e->value.v)) fail(*e, "'" + key + "' must be true or false");
      out = std::get<bool>(e->value.v);
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto* e = find(key)) {
      if (!std::holds_alternative<std::string>(e->value.v)) fail(*e, "'" + key + "' must be a quoted string");
      out = std::get<std::string>(e->value.v);
    }
  }
  void get_path(const std::string& key, std::filesystem::path& out) {
    std::string s;
    if (find(key) == nullptr) return;
    get(key, s);
    out = resolve(s);
  }
  std::filesystem::path resolve(const std::string& s) const {
    if (s.empty()) return {};
    std::filesystem::path p(s);
    if (p.is_relative() && !base_.empty()) p = base_ / p;
    return p.lexically_normal();
  }
  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    auto* e = find(key);
    if (!e) return;
    if (!std::holds_alternative<Array>(e->value.v)) fail(*e, "'" + key + "' must be an array");
    out.clear();
    for (const auto& item : std::get<Array>(e->value.v)) {
      Entry tmp{e->line, item, true};
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(number(tmp, key));
      } else {
        out.push_back(static_cast<T>(integer(tmp, key)));
      }
    }
  }
  template <typename Enum>
  void get_enum(const std::string& key, Enum& out, std::initializer_list<std::pair<const char*, Enum>> names) {
    auto* e = find(key);
    if (!e) return;
    std::string s;
    get(key, s);
    std::string allowed;
    for (const auto& [n, v] : names) {
      if (s == n) {
        out = v;
        return;
      }
      allowed += std::string(allowed.empty() ? "" : ", ") + n;
    }
    fail(*e, "'" + key + "' must be one of: " + allowed);
  }
  void finish() const {
    for (const auto& [k, e] : sec_.entries) {
      if (!e.used) {
        fail(e, "unknown key '" + k + "'" + (name_.empty() ? std::string() : " in [" + name_ + "]"));
      }
    }
  }

 private:
  Section& sec_;
  std::string name_;
  std::string_view source_;
  std::filesystem::path base_;
};

const std::initializer_list<std::pair<const char*, Mode>> kModes{{"theory", Mode::kTheory},
                                                                 {"practical", Mode::kPractical}};
const std::initializer_list<std::pair<const char*, Ordering>> kOrderings{
    {"iid", Ordering::kIid},
    {"class_iid", Ordering::kClassIid},
    {"instance", Ordering::kInstance},
    {"class_instance", Ordering::kClassInstance}};
const std::initializer_list<std::pair<const char*, EtaKind>> kSchedules{{"constant", EtaKind::kConstant},
                                                                        {"per_class_linear", EtaKind::kPerClassLinear}};
const std::initializer_list<std::pair<const char*, EvictionPolicy>> kEvictions{
    {"class_balanced", EvictionPolicy::kClassBalanced},
    {"uniform_random", EvictionPolicy::kUniformRandom},
    {"reservoir", EvictionPolicy::kReservoir}};
const std::initializer_list<std::pair<const char*, MultitaskReplay>> kMultitask{
    {"full_sep", MultitaskReplay::kFullSep},
    {"full_sum", MultitaskReplay::kFullSum},
    {"split_sep", MultitaskReplay::kSplitSep},
    {"split_sum", MultitaskReplay::kSplitSum}};
const std::initializer_list<std::pair<const char*, PerturbGenerator>> kGenerators{
    {"sphere", PerturbGenerator::kSphere}, {"gaussian_clip", PerturbGenerator::kGaussianClip}};
const std::initializer_list<std::pair<const char*, DataFormat>> kFormats{
    {"idx", DataFormat::kIdx}, {"csv", DataFormat::kCsv}, {"synthetic", DataFormat::kSynthetic}};
const std::initializer_list<std::pair<const char*, Normalization>> kNormalizations{
    {"none", Normalization::kNone}, {"unit_norm", Normalization::kUnitNorm}, {"divide_255", Normalization::kDivide255}};
const std::initializer_list<std::pair<const char*, FeatureKind>> kKinds{{"real", FeatureKind::kReal},
                                                                        {"pixels", FeatureKind::kPixels}};
const std::initializer_list<std::pair<const char*, SyntheticKind>> kSynthKinds{
    {"sphere_blobs", SyntheticKind::kSphereBlobs}, {"two_class_margin", SyntheticKind::kTwoClassMargin}};

template <typename Enum>
const char* name_of(Enum v, std::initializer_list<std::pair<const char*, Enum>> names) {
  for (const auto& [n, e] : names) {
    if (e == v) return n;
  }
  return "?";
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

template <typename T>
std::string list(const std::vector<T>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_same_v<T, double>) {
      out += num(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out + "]";
}

std::string b(bool v) { return v ? "true" : "false"; }

void read_dataset(Reader& r, DatasetManifest& ds) {
  r.get_enum("format", ds.format, kFormats);
  r.get("classes", ds.num_classes);
  r.get_enum("normalization", ds.normalization, kNormalizations);
  r.get_path("train_images", ds.train_images);
  r.get_path("train_labels", ds.train_labels);
  r.get_path("test_images", ds.test_images);
  r.get_path("test_labels", ds.test_labels);
  r.get_path("train_csv", ds.train_csv);
  r.get_path("test_csv", ds.test_csv);
  r.get("has_group", ds.has_group);
  r.get_enum("feature_kind", ds.feature_kind, kKinds);
  std::vector<std::size_t> shape;
  if (auto* e = r.find("shape")) {
    r.get_list("shape", shape);
    if (shape.size() != 3 || shape[0] == 0 || shape[1] == 0 || shape[2] == 0) {
      r.fail(*e, "'shape' must be [height, width, channels] with positive entries");
    }
    ds.shape = {shape[0], shape[1], shape[2]};
  }
  auto& s = ds.synthetic;
  r.get_enum("kind", s.kind, kSynthKinds);
  r.get("d", s.d);
  r.get("per_class", s.per_class);
  r.get("test_per_class", s.test_per_class);
  r.get("lambda_sep", s.lambda_sep);
  r.get("noise", s.noise);
  r.get("mean_cos", s.mean_cos);
  r.get("margin", s.margin);
  r.get("groups_per_class", s.groups_per_class);
  r.get("max_attempts", s.max_attempts);
  if (r.find("seed")) {
    std::uint64_t seed = 0;
    r.get_u64("seed", seed);
    ds.seed = seed;
  }
  if (ds.format == DataFormat::kSynthetic) {
    if (ds.num_classes == 0) ds.num_classes = s.kind == SyntheticKind::kTwoClassMargin ? 2 : s.classes;
    s.classes = ds.num_classes;
  }
}

}  // namespace

RunConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir, std::string_view source) {
  Parser parser(text, source);
  auto sections = parser.parse();
  RunConfig cfg;
  auto& st = cfg.stream;
  for (auto& [name, sec] : sections) {
    Reader r(sec, name, source, base_dir);
    if (name.empty()) {
      r.get_u64("seed", st.seed);
      r.get_enum("mode", st.mode, kModes);
      r.get_enum("ordering", st.ordering, kOrderings);
      r.get("eval_every", st.eval_every);
      r.get_list("topk", st.topk);
      r.get("ece_bins", st.ece_bins);
      r.get_list("offline_acc", st.offline_acc);
      r.get("log_wall_time", st.log_wall_time);
      r.get_path("init_checkpoint", st.init_checkpoint);
    } else if (name == "network") {
      r.get("m", st.m);
      r.get("L", st.L);
    } else if (name == "optim") {
      r.get_enum("schedule", st.eta.kind, kSchedules);
      r.get("eta", st.eta.eta);
      r.get("eta_hi", st.eta.eta_hi);
      r.get("eta_lo", st.eta.eta_lo);
    } else if (name == "replay") {
      r.get("B", st.replay_samples);
      r.get("capacity", st.capacity);
      r.get_enum("eviction", st.eviction, kEvictions);
      r.get("bits", st.codec.bits);
      r.get("area_ratio", st.codec.area_ratio);
      r.get_enum("multitask", st.multitask_replay, kMultitask);
      r.get("cross_task", st.cross_task_replay);
    } else if (name == "augment") {
      auto& a = st.augment;
      r.get("crop", a.crop.enabled);
      r.get("crop_pad", a.crop.pad);
      r.get("hflip", a.hflip.enabled);
      r.get("hflip_p", a.hflip.p);
      r.get("mix", a.mix.enabled);
      r.get("alpha_mixup", a.mix.alpha_mixup);
      r.get("alpha_cutmix", a.mix.alpha_cutmix);
      r.get("p_mixup", a.mix.p_mixup);
      r.get_path("oplist", cfg.oplist_path);
      r.get("perturb", a.theory_perturb.enabled);
      r.get("perturb_budget", a.theory_perturb.budget);
      r.get_enum("perturb_generator", a.theory_perturb.generator, kGenerators);
    } else if (name == "pretrain") {
      r.get("examples", st.pretrain.examples);
      r.get("epochs", st.pretrain.epochs);
      r.get("eta", st.pretrain.eta);
      r.get("reenter", st.pretrain.reenter);
    } else if (name == "output") {
      r.get_path("log", cfg.output.log);
      r.get_path("checkpoint", cfg.output.checkpoint);
      r.get_path("buffer_snapshot", cfg.output.buffer_snapshot);
      r.get_path("predictions", cfg.output.predictions);
    } else if (name == "ntrf") {
      auto& n = cfg.ntrf;
      r.get_list("m_sweep", n.m_sweep);
      r.get_list("drift_m_sweep", n.drift_m_sweep);
      r.get_list("L_sweep", n.L_sweep);
      r.get("seeds", n.seeds);
      r.get_u64("base_seed", n.base_seed);
      r.get("omega", n.omega);
      r.get("R", n.R);
      r.get("delta", n.delta);
      r.get("n", n.n);
      r.get("B", n.B);
      r.get("capacity", n.capacity);
      r.get("kappa", n.kappa);
      r.get("lambda_sep", n.lambda_sep);
      r.get("d", n.d);
      r.get("inputs", n.inputs);
      r.get("xi_sq", n.xi_sq);
      r.get("workers", n.workers);
    } else if (name.rfind("dataset.", 0) == 0 && name.size() > 8) {
      DatasetManifest ds;
      ds.name = name.substr(8);
      read_dataset(r, ds);
      cfg.datasets.push_back(std::move(ds));
    } else {
      throw ConfigError(std::string(source) + ":" + std::to_string(sec.line) + ": unknown section [" + name + "]");
    }
    r.finish();
  }
  if (!cfg.oplist_path.empty()) {
    try {
      st.augment.oplist = load_oplist(cfg.oplist_path);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& err) {
      throw ConfigError(std::string(source) + ": cannot read augmentation policy: " + err.what());
    }
  }
  try {
    st.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(std::string(source) + ": " + err.what());
  }
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path(), path.string());
}

std::string dump_config(const RunConfig& cfg) {
  const auto& st = cfg.stream;
  std::ostringstream o;
  o << "seed = " << st.seed << '\n';
  o << "mode = " << quote(name_of(st.mode, kModes)) << '\n';
  o << "ordering = " << quote(name_of(st.ordering, kOrderings)) << '\n';
  o << "eval_every = " << st.eval_every << '\n';
  o << "topk = " << list(st.topk) << '\n';
  o << "ece_bins = " << st.ece_bins << '\n';
  o << "offline_acc = " << list(st.offline_acc) << '\n';
  o << "log_wall_time = " << b(st.log_wall_time) << '\n';
  o << "init_checkpoint = " << quote(st.init_checkpoint.string()) << '\n';
  o << "\n[network]\nm = " << st.m << "\nL = " << st.L << '\n';
  o << "\n[optim]\nschedule = " << quote(name_of(st.eta.kind, kSchedules)) << "\neta = " << num(st.eta.eta)
    << "\neta_hi = " << num(st.eta.eta_hi) << "\neta_lo = " << num(st.eta.eta_lo) << '\n';
  o << "\n[replay]\nB = " << st.replay_samples << "\ncapacity = " << st.capacity
    << "\neviction = " << quote(name_of(st.eviction, kEvictions)) << "\nbits = " << st.codec.bits
    << "\narea_ratio = " << num(st.codec.area_ratio) << "\nmultitask = " << quote(name_of(st.multitask_replay, kMultitask))
    << "\ncross_task = " << b(st.cross_task_replay) << '\n';
  const auto& a = st.augment;
  o << "\n[augment]\ncrop = " << b(a.crop.enabled) << "\ncrop_pad = " << a.crop.pad << "\nhflip = " << b(a.hflip.enabled)
    << "\nhflip_p = " << num(a.hflip.p) << "\nmix = " << b(a.mix.enabled) << "\nalpha_mixup = " << num(a.mix.alpha_mixup)
    << "\nalpha_cutmix = " << num(a.mix.alpha_cutmix) << "\np_mixup = " << num(a.mix.p_mixup)
    << "\noplist = " << quote(cfg.oplist_path.string()) << "\nperturb = " << b(a.theory_perturb.enabled)
    << "\nperturb_budget = " << num(a.theory_perturb.budget)
    << "\nperturb_generator = " << quote(name_of(a.theory_perturb.generator, kGenerators)) << '\n';
  o << "\n[pretrain]\nexamples = " << st.pretrain.examples << "\nepochs = " << st.pretrain.epochs
    << "\neta = " << num(st.pretrain.eta) << "\nreenter = " << b(st.pretrain.reenter) << '\n';
  o << "\n[output]\nlog = " << quote(cfg.output.log.string()) << "\ncheckpoint = " << quote(cfg.output.checkpoint.string())
    << "\nbuffer_snapshot = " << quote(cfg.output.buffer_snapshot.string())
    << "\npredictions = " << quote(cfg.output.predictions.string()) << '\n';
  const auto& n = cfg.ntrf;
  o << "\n[ntrf]\nm_sweep = " << list(n.m_sweep) << "\ndrift_m_sweep = " << list(n.drift_m_sweep)
    << "\nL_sweep = " << list(n.L_sweep) << "\nseeds = " << n.seeds << "\nbase_seed = " << n.base_seed
    << "\nomega = " << num(n.omega) << "\nR = " << num(n.R) << "\ndelta = " << num(n.delta) << "\nn = " << n.n
    << "\nB = " << n.B << "\ncapacity = " << n.capacity << "\nkappa = " << num(n.kappa)
    << "\nlambda_sep = " << num(n.lambda_sep) << "\nd = " << n.d << "\ninputs = " << n.inputs
    << "\nxi_sq = " << num(n.xi_sq) << "\nworkers = " << n.workers << '\n';
  for (const auto& ds : cfg.datasets) {
    const auto& s = ds.synthetic;
    o << "\n[dataset." << ds.name << "]\nformat = " << quote(name_of(ds.format, kFormats))
      << "\nclasses = " << ds.num_classes << "\nnormalization = " << quote(name_of(ds.normalization, kNormalizations))
      << "\ntrain_images = " << quote(ds.train_images.string()) << "\ntrain_labels = " << quote(ds.train_labels.string())
      << "\ntest_images = " << quote(ds.test_images.string()) << "\ntest_labels = " << quote(ds.test_labels.string())
      << "\ntrain_csv = " << quote(ds.train_csv.string()) << "\ntest_csv = " << quote(ds.test_csv.string())
      << "\nhas_group = " << b(ds.has_group) << "\nfeature_kind = " << quote(name_of(ds.feature_kind, kKinds)) << '\n';
    if (!(ds.shape == ImageShape{})) {
      o << "shape = [" << ds.shape.height << ", " << ds.shape.width << ", " << ds.shape.channels << "]\n";
    }
    o << "kind = " << quote(name_of(s.kind, kSynthKinds)) << "\nd = " << s.d << "\nper_class = " << s.per_class
      << "\ntest_per_class = " << s.test_per_class << "\nlambda_sep = " << num(s.lambda_sep) << "\nnoise = " << num(s.noise)
      << "\nmargin = " << num(s.margin) << "\nmean_cos = " << num(s.mean_cos) << "\ngroups_per_class = " << s.groups_per_class
      << "\nmax_attempts = " << s.max_attempts << '\n';
    if (ds.seed) o << "seed = " << *ds.seed << '\n';
  }
  return o.str();
}

std::vector<TaskData> load_datasets(RunConfig& config) {
  if (config.datasets.empty()) throw ConfigError("no [dataset.<name>] section configured");
  std::vector<TaskData> tasks;
  std::optional<Normalization> scale_rule;
  for (const auto& ds : config.datasets) {
    TaskData task;
    task.name = ds.name;
    task.num_classes = ds.num_classes;
    if (ds.num_classes == 0) throw ConfigError("dataset '" + ds.name + "' needs 'classes'");
    auto need = [&](const std::filesystem::path& p, const char* key) {
      if (p.empty()) throw ConfigError("dataset '" + ds.name + "' needs '" + key + "'");
      if (!std::filesystem::exists(p)) throw DataError("dataset '" + ds.name + "': missing file '" + p.string() + "'");
    };
    switch (ds.format) {
      case DataFormat::kSynthetic: {
        SyntheticSpec spec = ds.synthetic;
        spec.classes = ds.num_classes;
        spec.seed = ds.seed.value_or(config.stream.seed);
        auto data = gen_synthetic(spec);
        task.train = std::move(data.train);
        task.test = std::move(data.test);
        break;
      }
      case DataFormat::kIdx:
        need(ds.train_images, "train_images");
        need(ds.train_labels, "train_labels");
        task.train = load_idx(ds.train_images, ds.train_labels);
        if (!ds.test_images.empty()) {
          need(ds.test_labels, "test_labels");
          task.test = load_idx(ds.test_images, ds.test_labels);
        }
        break;
      case DataFormat::kCsv: {
        need(ds.train_csv, "train_csv");
        CsvOptions opt{ds.num_classes, ds.has_group, ds.feature_kind, ds.shape};
        task.train = load_csv(ds.train_csv, opt);
        if (!ds.test_csv.empty()) task.test = load_csv(ds.test_csv, opt);
        break;
      }
    }
    if (task.train.empty()) throw DataError("dataset '" + ds.name + "' has no training examples");
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (const auto* split : {&task.train, &task.test}) {
      for (const auto& e : *split) {
        if (e.label < 0 || static_cast<std::size_t>(e.label) >= ds.num_classes) {
          throw DataError("dataset '" + ds.name + "': label " + std::to_string(e.label) + " outside [0, " +
                          std::to_string(ds.num_classes) + ")");
        }
      }
    }
    for (const auto& e : task.train) ++counts[static_cast<std::size_t>(e.label)];
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) {
        throw DataError("dataset '" + ds.name + "': class " + std::to_string(c) + " has no training examples");
      }
    }
    if (ds.normalization == Normalization::kUnitNorm) {
      normalize_unit(task.train);
      normalize_unit(task.test);
    }
    const auto rule = ds.normalization == Normalization::kDivide255 ? Normalization::kDivide255 : Normalization::kNone;
    if (scale_rule && *scale_rule != rule) {
      throw ConfigError("divide_255 must be used by every dataset of a run or by none");
    }
    scale_rule = rule;
    tasks.push_back(std::move(task));
  }
  config.stream.input_scale = scale_rule == Normalization::kDivide255 ? 1.0 / 255.0 : 1.0;
  return tasks;
}

}  // namespace cssl
