#include "lct/toy/tasks.hpp"

#include <algorithm>

#include "lct/error.hpp"
#include "lct/toy/rng.hpp"

namespace lct::toy {

namespace {

int draw(Rng& rng, int begin, int end) { return rng.uniform_int(begin, end - 1); }

// Distinct tokens from [begin, end), in draw order.
std::vector<int> draw_distinct(Rng& rng, int begin, int end, int count) {
  std::vector<int> pool;
  for (int t = begin; t < end; ++t) pool.push_back(t);
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(pool.size() - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

// Places segments in order at uniformly random slots among filler tokens.
// Filler is drawn from `filler_pool`, or the value alphabet when it is empty.
std::vector<int> assemble(Rng& rng, const Vocabulary& vocab, const std::vector<std::vector<int>>& segments,
                          int body_len, bool filler, const std::vector<int>& filler_pool = {}) {
  int seg_tokens = 0;
  for (const auto& s : segments) seg_tokens += static_cast<int>(s.size());
  const int filler_count = body_len - seg_tokens;
  if (filler_count < 0) throw Error(ErrorKind::LengthTooSmall, "task segments do not fit the requested length");

  const int slots = filler_count + static_cast<int>(segments.size());
  auto chosen = draw_distinct(rng, 0, slots, static_cast<int>(segments.size()));
  std::sort(chosen.begin(), chosen.end());

  std::vector<int> body;
  body.reserve(static_cast<std::size_t>(body_len));
  std::size_t next_seg = 0;
  for (int slot = 0; slot < slots; ++slot) {
    if (next_seg < chosen.size() && chosen[next_seg] == slot) {
      const auto& s = segments[next_seg++];
      body.insert(body.end(), s.begin(), s.end());
    } else {
      if (!filler) {
        body.push_back(Vocabulary::kSep);
      } else if (!filler_pool.empty()) {
        body.push_back(filler_pool[static_cast<std::size_t>(rng.below(filler_pool.size()))]);
      } else {
        body.push_back(draw(rng, vocab.value_begin(), vocab.value_end()));
      }
    }
  }
  return body;
}

}  // namespace

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::NeedleCopy: return "needle_copy";
    case TaskKind::KeyValue: return "key_value";
    case TaskKind::ValueTracking: return "value_tracking";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  if (name == "needle_copy") return TaskKind::NeedleCopy;
  if (name == "key_value") return TaskKind::KeyValue;
  if (name == "value_tracking") return TaskKind::ValueTracking;
  throw Error(ErrorKind::InvalidConfig, "unknown task kind '" + std::string(name) + "'");
}

int Vocabulary::key_end() const { return kFirstContent + std::max(4, (size - kFirstContent) / 4); }

std::vector<int> TaskExample::input() const {
  std::vector<int> out = context;
  out.insert(out.end(), query.begin(), query.end());
  return out;
}

TaskExample gen_task(TaskKind kind, int length, std::uint64_t seed, int vocab_size, const TaskOptions& options) {
  if (length < 16) throw Error(ErrorKind::LengthTooSmall, "task length must be >= 16, got " + std::to_string(length));
  const Vocabulary vocab{vocab_size};
  if (vocab.value_count() < 2) throw Error(ErrorKind::InvalidConfig, "vocabulary too small for synthetic tasks");
  Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(kind) * 1000003ull + static_cast<std::uint64_t>(length));

  TaskExample ex;
  std::vector<std::vector<int>> segments;
  std::vector<int> filler_pool;
  switch (kind) {
    case TaskKind::NeedleCopy: {
      const int answer = draw(rng, vocab.value_begin(), vocab.value_end());
      segments.push_back({Vocabulary::kNeedle, answer});
      ex.query = {Vocabulary::kQuery, Vocabulary::kNeedle};
      ex.answer = {answer};
      ex.facts.emplace_back(Vocabulary::kNeedle, answer);
      break;
    }
    case TaskKind::KeyValue: {
      const int key_begin = options.shared_alphabet ? Vocabulary::kFirstContent : vocab.key_begin();
      const int key_end = options.shared_alphabet ? vocab.size : vocab.key_end();
      const int pairs = std::clamp(options.pairs, 1, std::min(vocab.key_end() - vocab.key_begin(), (key_end - key_begin) / 2));
      const auto keys = draw_distinct(rng, key_begin, key_end, pairs);
      std::vector<int> pool;  // values and filler: anything that is not a key of this example
      for (int t = options.shared_alphabet ? key_begin : vocab.value_begin(); t < vocab.size; ++t) {
        if (std::find(keys.begin(), keys.end(), t) == keys.end()) pool.push_back(t);
      }
      auto draw_value = [&] { return pool[static_cast<std::size_t>(rng.below(pool.size()))]; };
      if (options.shared_alphabet) filler_pool = pool;
      std::vector<int> values;
      for (int k : keys) {
        values.push_back(draw_value());
        segments.push_back({k, values.back()});
      }
      const auto target = rng.below(static_cast<std::uint64_t>(pairs));
      if (options.updates > 0) {
        // Interleave rebindings of the target key with the other pairs; the
        // binding that ends up last carries the answer.
        for (int u = 0; u < options.updates; ++u) segments.push_back({keys[target], 0});
        for (std::size_t i = segments.size(); i-- > 1;) {
          std::swap(segments[i], segments[static_cast<std::size_t>(rng.below(i + 1))]);
        }
        for (auto& seg : segments) {
          if (seg[0] == keys[target]) seg[1] = values[target] = draw_value();
        }
      }
      ex.query = {Vocabulary::kQuery, keys[target]};
      ex.answer = {values[target]};
      for (int i = 0; i < pairs; ++i) ex.facts.emplace_back(keys[static_cast<std::size_t>(i)], values[static_cast<std::size_t>(i)]);
      break;
    }
    case TaskKind::ValueTracking: {
      const int hops = std::clamp(options.hops, 1, vocab.key_end() - vocab.key_begin() - 1);
      const auto vars = draw_distinct(rng, vocab.key_begin(), vocab.key_end(), hops + 1);
      const int value = draw(rng, vocab.value_begin(), vocab.value_end());
      segments.push_back({vars[0], Vocabulary::kAssign, value, Vocabulary::kSep});
      for (int h = 1; h <= hops; ++h) {
        segments.push_back({vars[static_cast<std::size_t>(h)], Vocabulary::kAssign,
                            vars[static_cast<std::size_t>(h - 1)], Vocabulary::kSep});
      }
      ex.query = {Vocabulary::kQuery, vars.back()};
      ex.answer = {value};
      for (int v : vars) ex.facts.emplace_back(v, value);
      break;
    }
  }

  const int body_len = length - 1 - static_cast<int>(ex.query.size());
  ex.context.push_back(Vocabulary::kBos);
  const auto body = assemble(rng, vocab, segments, body_len, options.filler, filler_pool);
  ex.context.insert(ex.context.end(), body.begin(), body.end());
  return ex;
}

}  // namespace lct::toy
