#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lct::toy {

enum class TaskKind { NeedleCopy, KeyValue, ValueTracking };

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view name);

/// Token layout shared by every synthetic task. Keys/variables and values use
/// disjoint alphabets; filler is drawn from the value alphabet.
struct Vocabulary {
  static constexpr int kBos = 0;
  static constexpr int kQuery = 1;
  static constexpr int kNeedle = 2;
  static constexpr int kAssign = 3;
  static constexpr int kSep = 4;
  static constexpr int kFirstContent = 5;

  int size = 64;

  int key_begin() const { return kFirstContent; }
  int key_end() const;
  int value_begin() const { return key_end(); }
  int value_end() const { return size; }
  int value_count() const { return value_end() - value_begin(); }
};

struct TaskOptions {
  int pairs = 4;          // key_value: stored pairs (distinct keys)
  int hops = 4;           // value_tracking: reassignments after the initial binding
  int updates = 0;        // key_value: later rebindings of the queried key; the latest wins
  bool shared_alphabet = false;  // key_value: keys, values and filler share one alphabet
  bool filler = true;     // false pads with kSep instead of random distractors
};

/// context + query is exactly `length` tokens; the model must emit `answer` next.
struct TaskExample {
  std::vector<int> context;
  std::vector<int> query;
  std::vector<int> answer;
  /// Every (query token, single-token answer) the context determines, including
  /// the asked one. Used for auxiliary training probes.
  std::vector<std::pair<int, int>> facts;

  std::vector<int> input() const;
  bool operator==(const TaskExample&) const = default;
};

/// Deterministic in (kind, length, seed, options). Throws LengthTooSmall below 16.
TaskExample gen_task(TaskKind kind, int length, std::uint64_t seed, int vocab = 64, const TaskOptions& options = {});

}  // namespace lct::toy
