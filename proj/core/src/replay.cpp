#include "cssl/replay.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "cssl/errors.hpp"
#include "cssl/logging.hpp"

namespace cssl {

std::size_t capacity_for_budget(std::size_t budget_bytes, const ImageShape& shape, FeatureKind kind,
                                const Codec& codec) {
  const std::size_t per = encoded_payload_bytes(shape, kind, codec);
  if (per == 0) throw ConfigError("examples encode to zero bytes");
  const std::size_t n = budget_bytes / per;
  if (n < 1) throw ConfigError("byte budget is smaller than a single encoded example");
  return n;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, Codec codec, EvictionPolicy policy, std::uint64_t seed)
    : capacity_(capacity), codec_(codec), policy_(policy), rng_(make_rng(seed, 0x2e91)) {
  if (capacity_ < 1) throw ConfigError("replay capacity must be at least 1");
  codec_.validate();
}

void ReplayBuffer::link(std::size_t index) {
  auto& list = members_[entries_[index].label];
  position_[index] = list.size();
  list.push_back(index);
}

void ReplayBuffer::unlink(std::size_t index) {
  const int label = entries_[index].label;
  auto it = members_.find(label);
  auto& list = it->second;
  const std::size_t p = position_[index];
  const std::size_t moved = list.back();
  list[p] = moved;
  position_[moved] = p;
  list.pop_back();
  if (list.empty()) members_.erase(it);
}

void ReplayBuffer::remove_at(std::size_t index) {
  unlink(index);
  const std::size_t last = entries_.size() - 1;
  if (index != last) {
    entries_[index] = std::move(entries_[last]);
    position_[index] = position_[last];
    members_[entries_[index].label][position_[index]] = index;
  }
  entries_.pop_back();
  position_.pop_back();
}

StoreOutcome ReplayBuffer::store(const Example& example) {
  StoredExample encoded;
  try {
    encoded = encode(example, codec_);
  } catch (const StorageError& e) {
    log_warning(std::string("dropping example from replay buffer: ") + e.what());
    return StoreOutcome::kDropped;
  }
  ++seen_count_;

  if (policy_ == EvictionPolicy::kReservoir && entries_.size() >= capacity_) {
    const auto slot = std::uniform_int_distribution<std::uint64_t>(0, seen_count_ - 1)(rng_);
    if (slot >= capacity_) return StoreOutcome::kRejected;
    const auto index = static_cast<std::size_t>(slot);
    unlink(index);
    entries_[index] = std::move(encoded);
    link(index);
    return StoreOutcome::kReplaced;
  }

  entries_.push_back(std::move(encoded));
  position_.push_back(0);
  link(entries_.size() - 1);

  bool evicted = false;
  while (entries_.size() > capacity_) {
    if (policy_ == EvictionPolicy::kUniformRandom) {
      evict_uniform(rng_);
    } else {
      evict_class_balanced(rng_);
    }
    evicted = true;
  }
  return evicted ? StoreOutcome::kStoredAfterEviction : StoreOutcome::kStored;
}

Eviction ReplayBuffer::evict_class_balanced(Rng& rng) {
  if (entries_.empty()) throw StateError("cannot evict from an empty replay buffer");
  std::size_t most = 0;
  std::vector<int> tied;
  for (const auto& [label, list] : members_) {
    if (list.size() > most) {
      most = list.size();
      tied.assign(1, label);
    } else if (list.size() == most) {
      tied.push_back(label);
    }
  }
  const int label = tied.size() == 1 ? tied.front() : tied[uniform_index(rng, tied.size())];
  const auto& list = members_.at(label);
  const std::size_t index = list[uniform_index(rng, list.size())];
  remove_at(index);
  return {index, label};
}

Eviction ReplayBuffer::evict_uniform(Rng& rng) {
  if (entries_.empty()) throw StateError("cannot evict from an empty replay buffer");
  const std::size_t index = uniform_index(rng, entries_.size());
  const int label = entries_[index].label;
  remove_at(index);
  return {index, label};
}

std::vector<Example> ReplayBuffer::sample(std::size_t count, Rng& rng) const {
  std::vector<Example> out;
  if (entries_.empty() || count == 0) return out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(decode(entries_[uniform_index(rng, entries_.size())]));
  return out;
}

std::map<int, std::size_t> ReplayBuffer::class_counts() const {
  std::map<int, std::size_t> counts;
  for (const auto& [label, list] : members_) counts[label] = list.size();
  return counts;
}

std::size_t ReplayBuffer::payload_bytes() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.payload_bytes();
  return total;
}

void ReplayBuffer::check_invariants() const {
  if (position_.size() != entries_.size()) throw StateError("position index size mismatch");
  std::map<int, std::size_t> recount;
  for (const auto& e : entries_) ++recount[e.label];
  std::size_t total = 0;
  for (const auto& [label, list] : members_) {
    if (list.empty()) throw StateError("empty class list retained");
    if (recount[label] != list.size()) throw StateError("class count mismatch for label " + std::to_string(label));
    for (std::size_t p = 0; p < list.size(); ++p) {
      const std::size_t idx = list[p];
      if (idx >= entries_.size() || entries_[idx].label != label || position_[idx] != p) {
        throw StateError("class index corrupted for label " + std::to_string(label));
      }
    }
    total += list.size();
  }
  if (total != entries_.size()) throw StateError("class counts do not sum to buffer size");
  if (entries_.size() > capacity_) throw StateError("buffer exceeds capacity");
}

bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
  return a.capacity_ == b.capacity_ && a.codec_ == b.codec_ && a.policy_ == b.policy_ &&
         a.rng_ == b.rng_ && a.seen_count_ == b.seen_count_ && a.entries_ == b.entries_ &&
         a.members_ == b.members_ && a.position_ == b.position_;
}

namespace {

void write_shape(detail::ByteWriter& w, const ImageShape& s) {
  w.uint<std::uint64_t>(s.height);
  w.uint<std::uint64_t>(s.width);
  w.uint<std::uint64_t>(s.channels);
}

ImageShape read_shape(detail::ByteReader& r) {
  ImageShape s;
  s.height = r.uint<std::uint64_t>();
  s.width = r.uint<std::uint64_t>();
  s.channels = r.uint<std::uint64_t>();
  return s;
}

constexpr std::int64_t kNoGroup = std::numeric_limits<std::int64_t>::min();

}  // namespace

void ReplayBuffer::save_snapshot(const std::filesystem::path& path) const {
  detail::ByteWriter w;
  w.magic("CSSLRBUF");
  w.uint<std::uint32_t>(kSnapshotVersion);
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(policy_));
  w.uint<std::uint64_t>(capacity_);
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(codec_.bits));
  w.f64(codec_.area_ratio);
  w.uint<std::uint64_t>(seen_count_);
  std::ostringstream rng_state;
  rng_state << rng_;
  w.str(rng_state.str());
  const auto counts = class_counts();
  w.uint<std::uint64_t>(counts.size());
  for (const auto& [label, n] : counts) {
    w.i64(label);
    w.uint<std::uint64_t>(n);
  }
  w.uint<std::uint64_t>(entries_.size());
  for (const auto& e : entries_) {
    w.i64(e.label);
    w.i64(e.task_id);
    w.i64(e.group_id.value_or(kNoGroup));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.kind));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.codec.bits));
    w.f64(e.codec.area_ratio);
    write_shape(w, e.original_shape);
    write_shape(w, e.stored_shape);
    if (const auto* real = std::get_if<std::vector<double>>(&e.payload)) {
      w.uint<std::uint8_t>(0);
      w.uint<std::uint64_t>(real->size());
      for (double v : *real) w.f64(v);
    } else {
      const auto& bytes = std::get<std::vector<std::uint8_t>>(e.payload);
      w.uint<std::uint8_t>(1);
      w.uint<std::uint64_t>(bytes.size());
      w.bytes(bytes.data(), bytes.size());
    }
  }
  w.write_file(path);
}

ReplayBuffer ReplayBuffer::load_snapshot(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  r.expect_magic("CSSLRBUF");
  const auto version = r.uint<std::uint32_t>();
  if (version != kSnapshotVersion) r.fail("unsupported snapshot version " + std::to_string(version));
  const auto policy = r.u8();
  if (policy > 2) r.fail("bad eviction policy");
  const auto capacity = r.uint<std::uint64_t>();
  Codec codec;
  codec.bits = r.u8();
  codec.area_ratio = r.f64();
  ReplayBuffer buf(static_cast<std::size_t>(capacity), codec, static_cast<EvictionPolicy>(policy), 0);
  buf.seen_count_ = r.uint<std::uint64_t>();
  std::istringstream rng_state(r.str());
  rng_state >> buf.rng_;
  if (!rng_state) r.fail("corrupt rng state");
  std::map<int, std::size_t> header_counts;
  const auto nclasses = r.uint<std::uint64_t>();
  for (std::uint64_t i = 0; i < nclasses; ++i) {
    const auto label = static_cast<int>(r.i64());
    header_counts[label] = r.uint<std::uint64_t>();
  }
  const auto n = r.uint<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    StoredExample e;
    e.label = static_cast<int>(r.i64());
    e.task_id = static_cast<int>(r.i64());
    const auto group = r.i64();
    if (group != kNoGroup) e.group_id = group;
    const auto kind = r.u8();
    if (kind > 1) r.fail("bad feature kind");
    e.kind = static_cast<FeatureKind>(kind);
    e.codec.bits = r.u8();
    e.codec.area_ratio = r.f64();
    e.original_shape = read_shape(r);
    e.stored_shape = read_shape(r);
    const auto tag = r.u8();
    const auto len = r.uint<std::uint64_t>();
    if (tag == 0) {
      r.need(len * 8);
      std::vector<double> v(len);
      for (double& x : v) x = r.f64();
      e.payload = std::move(v);
    } else if (tag == 1) {
      r.need(len);
      std::vector<std::uint8_t> v(len);
      r.bytes(v.data(), len);
      e.payload = std::move(v);
    } else {
      r.fail("bad payload tag");
    }
    buf.entries_.push_back(std::move(e));
    buf.position_.push_back(0);
    buf.link(buf.entries_.size() - 1);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last entry");
  if (buf.class_counts() != header_counts) r.fail("class histogram does not match entries");
  buf.check_invariants();
  return buf;
}

}  // namespace cssl
