#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "deeprnmt/nn.hpp"
#include "deeprnmt/rng.hpp"

namespace deeprnmt {

// Reserved token ids shared by all synthetic tasks.
constexpr int64_t kEosId = 0;
constexpr int64_t kUnkId = 1;
constexpr int64_t kFirstSymbolId = 2;

// Agreement-task vocabulary layout: two subject forms, two verb forms, the
// rest fillers.
constexpr int64_t kSubjectA = 2;
constexpr int64_t kSubjectB = 3;
constexpr int64_t kVerbA = 4;
constexpr int64_t kVerbB = 5;
constexpr int64_t kFirstFillerId = 6;

enum class TaskKind { Copy, Reverse, Agreement };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::Agreement: return "agreement";
  }
  return "?";
}

inline TaskKind task_kind_from(const std::string& s) {
  if (s == "copy") return TaskKind::Copy;
  if (s == "reverse") return TaskKind::Reverse;
  if (s == "agreement") return TaskKind::Agreement;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

struct SyntheticTask {
  TaskKind kind = TaskKind::Copy;
  int vocab = 22;
  int min_len = 1;
  int max_len = 10;
  // agreement: the verb sits exactly `distance` positions after the subject
  int min_distance = 1;
  int max_distance = 16;
};

struct Pair {
  std::vector<int64_t> source;
  std::vector<int64_t> target;
};

// Deterministic given the seed. Agreement pairs satisfy the form rule by
// construction: source = subject marker plus distance-1 fillers, target
// repeats the source and appends the agreeing verb form.
inline std::vector<Pair> generate(const SyntheticTask& task, int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
  if (task.vocab <= kFirstSymbolId)
    throw std::invalid_argument("generate: vocabulary too small for any symbol");
  if (task.kind == TaskKind::Agreement && task.vocab <= kFirstFillerId)
    throw std::invalid_argument("generate: agreement task needs filler ids, vocab too small");
  Rng rng(seed);
  std::vector<Pair> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Pair p;
    switch (task.kind) {
      case TaskKind::Copy:
      case TaskKind::Reverse: {
        int64_t len = rng.uniform_int(task.min_len, task.max_len);
        p.source.reserve(static_cast<size_t>(len));
        for (int64_t j = 0; j < len; ++j)
          p.source.push_back(rng.uniform_int(kFirstSymbolId, task.vocab - 1));
        p.target = p.source;
        if (task.kind == TaskKind::Reverse) std::reverse(p.target.begin(), p.target.end());
        break;
      }
      case TaskKind::Agreement: {
        int64_t d = rng.uniform_int(task.min_distance, task.max_distance);
        bool form_a = rng.uniform() < 0.5;
        p.source.push_back(form_a ? kSubjectA : kSubjectB);
        for (int64_t j = 1; j < d; ++j)
          p.source.push_back(rng.uniform_int(kFirstFillerId, task.vocab - 1));
        p.target = p.source;
        p.target.push_back(form_a ? kVerbA : kVerbB);
        break;
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct Batch {
  std::vector<std::vector<int64_t>> source;  // right-padded with kEosId
  std::vector<std::vector<int64_t>> target;
  std::vector<Mask> source_mask;
  std::vector<Mask> target_mask;
  int64_t target_tokens = 0;  // unmasked target positions
};

// Length-sorted bucketing with right padding; every pair appears exactly once.
inline std::vector<Batch> make_batches(std::vector<Pair> pairs, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch size must be >= 1");
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.source.size() != b.source.size()) return a.source.size() < b.source.size();
    return a.target.size() < b.target.size();
  });
  std::vector<Batch> out;
  for (size_t start = 0; start < pairs.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(pairs.size(), start + static_cast<size_t>(batch_size));
    Batch b;
    size_t max_src = 0, max_tgt = 0;
    for (size_t i = start; i < end; ++i) {
      max_src = std::max(max_src, pairs[i].source.size());
      max_tgt = std::max(max_tgt, pairs[i].target.size());
    }
    for (size_t i = start; i < end; ++i) {
      const Pair& p = pairs[i];
      std::vector<int64_t> src = p.source, tgt = p.target;
      Mask sm(p.source.size(), 1), tm(p.target.size(), 1);
      src.resize(max_src, kEosId);
      tgt.resize(max_tgt, kEosId);
      sm.resize(max_src, 0);
      tm.resize(max_tgt, 0);
      b.target_tokens += static_cast<int64_t>(p.target.size());
      b.source.push_back(std::move(src));
      b.target.push_back(std::move(tgt));
      b.source_mask.push_back(std::move(sm));
      b.target_mask.push_back(std::move(tm));
    }
    out.push_back(std::move(b));
  }
  return out;
}

// Appends the end-of-sequence id to every target; the training pipeline and
// scoring conventions include it as a predicted token.
inline void append_eos(std::vector<Pair>& pairs) {
  for (Pair& p : pairs) p.target.push_back(kEosId);
}

}  // namespace deeprnmt
