#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "cssl/codec.hpp"
#include "cssl/example.hpp"
#include "cssl/rng.hpp"

namespace cssl {

enum class EvictionPolicy : std::uint8_t {
  // Remove a random member of the most populous class (ties broken uniformly).
  kClassBalanced = 0,
  // Remove a uniformly random entry.
  kUniformRandom = 1,
  // Classic reservoir sampling over the offered stream.
  kReservoir = 2,
};

enum class StoreOutcome { kStored, kStoredAfterEviction, kReplaced, kRejected, kDropped };

struct Eviction {
  std::size_t index = 0;
  int label = 0;
};

// Fixed per-entry bookkeeping charged by memory_footprint() on top of payload bytes
// (label, task id, group id and the two stored shapes).
inline constexpr std::size_t kEntryOverheadBytes = 64;

// Largest entry count whose payloads fit in `budget_bytes` for the given example geometry.
std::size_t capacity_for_budget(std::size_t budget_bytes, const ImageShape& shape, FeatureKind kind,
                                const Codec& codec);

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, Codec codec, EvictionPolicy policy, std::uint64_t seed);

  // Compresses and stores the example, then evicts while over capacity.
  // Codec failures drop the example with a logged warning instead of throwing.
  StoreOutcome store(const Example& example);

  Eviction evict_class_balanced(Rng& rng);
  Eviction evict_uniform(Rng& rng);

  // B draws uniformly with replacement; empty when the buffer is empty.
  std::vector<Example> sample(std::size_t count, Rng& rng) const;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t capacity() const noexcept { return capacity_; }
  EvictionPolicy policy() const noexcept { return policy_; }
  const Codec& codec() const noexcept { return codec_; }
  std::uint64_t seen_count() const noexcept { return seen_count_; }
  std::span<const StoredExample> entries() const noexcept { return entries_; }
  std::map<int, std::size_t> class_counts() const;

  std::size_t payload_bytes() const;
  std::size_t memory_footprint() const { return payload_bytes() + entries_.size() * kEntryOverheadBytes; }

  // Throws StateError if the per-class index disagrees with the entries.
  void check_invariants() const;

  // Header (magic, version, policy, capacity, codec, seen count, rng state,
  // class counts) followed by every stored entry.
  void save_snapshot(const std::filesystem::path& path) const;
  static ReplayBuffer load_snapshot(const std::filesystem::path& path);

  friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b);

 private:
  void link(std::size_t index);
  void unlink(std::size_t index);
  void remove_at(std::size_t index);

  std::size_t capacity_;
  Codec codec_;
  EvictionPolicy policy_;
  Rng rng_;
  std::uint64_t seen_count_ = 0;
  std::vector<StoredExample> entries_;
  // label -> entry indices; position_[i] locates entry i inside its class list.
  std::map<int, std::vector<std::size_t>> members_;
  std::vector<std::size_t> position_;
};

inline constexpr std::uint32_t kSnapshotVersion = 1;

}  // namespace cssl
