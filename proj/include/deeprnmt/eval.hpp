#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "deeprnmt/decoder.hpp"
#include "deeprnmt/tasks.hpp"

namespace deeprnmt {

// ---- beam decoding ----

struct DecodeResult {
  std::vector<int64_t> tokens;  // without the terminating eos
  double score = 0;             // total log prob / scored token count
};

namespace detail {

struct Hypothesis {
  std::vector<int64_t> tokens;
  double sum_lp = 0;
  DecoderState state;
  int64_t last_token = -1;  // -1: start of sequence
  bool ended = false;       // emitted eos
  int scored_tokens = 0;

  double normalized() const { return sum_lp / std::max(1, scored_tokens); }
};

inline bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.normalized() != b.normalized()) return a.normalized() > b.normalized();
  return a.tokens < b.tokens;  // deterministic tie-break by token ids
}

}  // namespace detail

// Length-normalized beam search; ends on eos or max_len, ties broken by
// token id. The greedy path is always part of the final pool, so the
// returned score never falls below the greedy score.
inline DecodeResult decode(const Model& m, const std::vector<int64_t>& source, int beam_size,
                           int max_len) {
  if (beam_size < 1 || max_len < 1)
    throw std::invalid_argument("decode: beam size and max length must be >= 1");
  Tape::Suspend no_grad;
  Mask mask(source.size(), 1);
  SourceAnnotations src = m.encoder.encode(source, mask);
  DecoderNet::Attended att = m.decoder.attend(src);

  using detail::Hypothesis;
  std::vector<Hypothesis> ongoing(1);
  ongoing[0].state = m.decoder.init_state(src);
  std::vector<Hypothesis> completed;

  const int64_t vocab = m.cfg.target_vocab;
  for (int step = 0; step < max_len && !ongoing.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(ongoing.size() * static_cast<size_t>(vocab));
    for (Hypothesis& h : ongoing) {
      Tensor prev = h.last_token < 0 ? m.decoder.start_embedding()
                                     : m.decoder.target_embedding(h.last_token);
      StepResult r = m.decoder.step(att, h.state, prev);
      Tensor lp = log_softmax(r.logits);
      for (int64_t v = 0; v < vocab; ++v) {
        Hypothesis next;
        next.tokens = h.tokens;
        next.tokens.push_back(v);
        next.sum_lp = h.sum_lp + static_cast<double>(lp.values()[static_cast<size_t>(v)]);
        next.scored_tokens = h.scored_tokens + 1;
        next.last_token = v;
        if (v == kEosId)
          next.ended = true;
        else
          next.state = r.next;
        candidates.push_back(std::move(next));
      }
    }
    // eos expansions compete for beam slots; a slot they win is retired
    std::sort(candidates.begin(), candidates.end(),
              [](const Hypothesis& a, const Hypothesis& b) {
                if (a.sum_lp != b.sum_lp) return a.sum_lp > b.sum_lp;
                return a.tokens < b.tokens;
              });
    if (static_cast<int>(candidates.size()) > beam_size)
      candidates.resize(static_cast<size_t>(beam_size));
    ongoing.clear();
    for (Hypothesis& h : candidates)
      (h.ended ? completed : ongoing).push_back(std::move(h));
  }
  for (Hypothesis& h : ongoing) completed.push_back(std::move(h));  // forced stop at max_len

  const Hypothesis* best = nullptr;
  for (const Hypothesis& h : completed)
    if (!best || detail::better(h, *best)) best = &h;
  if (!best) throw std::logic_error("decode: no hypothesis");

  DecodeResult out;
  out.tokens = best->tokens;
  if (best->ended) out.tokens.pop_back();
  out.score = best->normalized();
  if (beam_size > 1) {
    DecodeResult greedy = decode(m, source, 1, max_len);
    if (greedy.score > out.score ||
        (greedy.score == out.score && greedy.tokens < out.tokens))
      return greedy;
  }
  return out;
}

// ---- plain accuracy and a lightweight corpus BLEU ----

// Exact-position token match ratio over reference tokens.
inline double token_accuracy(const std::vector<std::vector<int64_t>>& hypotheses,
                             const std::vector<std::vector<int64_t>>& references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("token_accuracy: list lengths differ");
  int64_t match = 0, total = 0;
  for (size_t i = 0; i < references.size(); ++i) {
    total += static_cast<int64_t>(references[i].size());
    for (size_t j = 0; j < references[i].size(); ++j)
      if (j < hypotheses[i].size() && hypotheses[i][j] == references[i][j]) ++match;
  }
  if (total == 0) throw std::invalid_argument("token_accuracy: empty references");
  return static_cast<double>(match) / static_cast<double>(total);
}

// Corpus-level geometric mean of add-one smoothed modified n-gram precisions
// with a brevity penalty. A desk-scale quality proxy, not a replication of
// any particular BLEU tool.
inline double corpus_bleu_lite(const std::vector<std::vector<int64_t>>& hypotheses,
                               const std::vector<std::vector<int64_t>>& references,
                               int max_n = 4) {
  if (hypotheses.size() != references.size() || hypotheses.empty())
    throw std::invalid_argument("corpus_bleu_lite: need equal nonempty corpora");
  double log_prec = 0;
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<int64_t>(hypotheses[i].size());
    ref_len += static_cast<int64_t>(references[i].size());
  }
  for (int n = 1; n <= max_n; ++n) {
    int64_t matched = 0, total = 0;
    for (size_t i = 0; i < hypotheses.size(); ++i) {
      const auto& hyp = hypotheses[i];
      const auto& ref = references[i];
      if (static_cast<int>(hyp.size()) < n) continue;
      std::map<std::vector<int64_t>, int64_t> ref_counts;
      for (size_t j = 0; j + n <= ref.size(); ++j)
        ref_counts[std::vector<int64_t>(ref.begin() + j, ref.begin() + j + n)] += 1;
      std::map<std::vector<int64_t>, int64_t> hyp_counts;
      for (size_t j = 0; j + n <= hyp.size(); ++j)
        hyp_counts[std::vector<int64_t>(hyp.begin() + j, hyp.begin() + j + n)] += 1;
      for (const auto& [gram, count] : hyp_counts) {
        total += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched += std::min(count, it->second);
      }
    }
    log_prec += std::log(static_cast<double>(matched + 1) / static_cast<double>(total + 1));
  }
  double bleu = std::exp(log_prec / max_n);
  if (hyp_len < ref_len && hyp_len > 0)
    bleu *= std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bleu;
}

// ---- contrastive evaluation ----

struct ContrastiveItem {
  std::vector<int64_t> source;
  std::vector<int64_t> reference;
  std::vector<int64_t> contrastive;
  int distance = 1;  // subject-verb separation
  std::string category;
};

// Accuracy bucketed by distance 1..15 plus a single >=16 bucket.
struct DistanceBucketReport {
  static constexpr int kMaxBucket = 16;  // index 16 holds all distances >= 16
  std::array<int64_t, kMaxBucket + 1> count{};    // index 0 unused
  std::array<int64_t, kMaxBucket + 1> correct{};

  static int bucket_of(int distance) { return std::min(distance, kMaxBucket); }

  int64_t total_items() const {
    int64_t n = 0;
    for (int b = 1; b <= kMaxBucket; ++b) n += count[static_cast<size_t>(b)];
    return n;
  }
  int64_t total_correct() const {
    int64_t n = 0;
    for (int b = 1; b <= kMaxBucket; ++b) n += correct[static_cast<size_t>(b)];
    return n;
  }
  double accuracy(int bucket) const {
    return count[static_cast<size_t>(bucket)] == 0
               ? 0.0
               : static_cast<double>(correct[static_cast<size_t>(bucket)]) /
                     static_cast<double>(count[static_cast<size_t>(bucket)]);
  }
  double overall_accuracy() const {
    return total_items() == 0 ? 0.0
                              : static_cast<double>(total_correct()) /
                                    static_cast<double>(total_items());
  }
};

// An item counts as correct iff the reference outscores the contrastive
// variant strictly; ties are incorrect. Items are scored independently, so
// extra workers change neither results nor their order.
inline DistanceBucketReport contrastive_eval(const Model& m,
                                             const std::vector<ContrastiveItem>& items,
                                             int workers = 1) {
  if (items.empty()) throw std::invalid_argument("contrastive_eval: no items");
  // vocabulary bounds checked up front; worker threads must not throw
  for (size_t i = 0; i < items.size(); ++i) {
    auto check = [&](const std::vector<int64_t>& tokens, int64_t vocab, const char* what) {
      for (int64_t t : tokens)
        if (t < 0 || t >= vocab)
          throw std::out_of_range("item " + std::to_string(i + 1) + ": " + what + " token " +
                                  std::to_string(t) + " out of vocabulary");
    };
    check(items[i].source, m.cfg.source_vocab, "source");
    check(items[i].reference, m.cfg.target_vocab, "reference");
    check(items[i].contrastive, m.cfg.target_vocab, "contrastive");
  }
  std::vector<uint8_t> correct(items.size(), 0);
  auto score_range = [&](size_t lo, size_t hi) {
    Tape::Suspend no_grad;
    for (size_t i = lo; i < hi; ++i) {
      const ContrastiveItem& item = items[i];
      double ref = score_sequence(m, item.source, item.reference).total;
      double con = score_sequence(m, item.source, item.contrastive).total;
      correct[i] = ref > con ? 1 : 0;
    }
  };
  if (workers <= 1) {
    score_range(0, items.size());
  } else {
    const size_t n = items.size();
    const size_t w = std::min<size_t>(static_cast<size_t>(workers), n);
    std::vector<std::thread> threads;
    for (size_t t = 0; t < w; ++t) {
      size_t lo = n * t / w, hi = n * (t + 1) / w;
      threads.emplace_back(score_range, lo, hi);
    }
    for (auto& th : threads) th.join();
  }
  DistanceBucketReport report;
  for (size_t i = 0; i < items.size(); ++i) {
    int b = DistanceBucketReport::bucket_of(items[i].distance);
    report.count[static_cast<size_t>(b)] += 1;
    report.correct[static_cast<size_t>(b)] += correct[i];
  }
  return report;
}

// Contrastive items for the agreement task: the contrastive target flips the
// verb form, everything else identical.
inline std::vector<ContrastiveItem> generate_contrastive(const SyntheticTask& task, int n,
                                                         uint64_t seed) {
  if (task.kind != TaskKind::Agreement)
    throw std::invalid_argument("contrastive items are defined for the agreement task");
  std::vector<Pair> pairs = generate(task, n, seed);
  std::vector<ContrastiveItem> items;
  items.reserve(pairs.size());
  for (Pair& p : pairs) {
    ContrastiveItem item;
    item.distance = static_cast<int>(p.target.size()) - 1;  // subject at 0, verb at distance
    item.category = "subj-verb";
    item.source = std::move(p.source);
    item.reference = std::move(p.target);
    item.reference.push_back(kEosId);
    item.contrastive = item.reference;
    int64_t& verb = item.contrastive[item.contrastive.size() - 2];
    verb = verb == kVerbA ? kVerbB : kVerbA;
    items.push_back(std::move(item));
  }
  return items;
}

// ---- contrastive TSV files ----
// UTF-8, tab-separated columns: source, reference, contrastive, distance,
// category; tokens are space-separated ids.

namespace detail {

inline std::vector<int64_t> parse_tokens(const std::string& s, int lineno) {
  std::vector<int64_t> out;
  std::istringstream in(s);
  std::string piece;
  while (in >> piece) {
    try {
      size_t pos = 0;
      out.push_back(std::stoll(piece, &pos));
      if (pos != piece.size()) throw std::invalid_argument("");
    } catch (...) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": bad token '" + piece + "'");
    }
  }
  return out;
}

inline std::string join_tokens(const std::vector<int64_t>& tokens) {
  std::string s;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(tokens[i]);
  }
  return s;
}

}  // namespace detail

inline std::vector<ContrastiveItem> load_contrastive_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read contrastive file: " + path);
  std::vector<ContrastiveItem> items;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, '\t')) cols.push_back(col);
    if (cols.size() != 5)
      throw std::runtime_error("line " + std::to_string(lineno) + ": expected 5 columns, got " +
                               std::to_string(cols.size()));
    ContrastiveItem item;
    item.source = detail::parse_tokens(cols[0], lineno);
    item.reference = detail::parse_tokens(cols[1], lineno);
    item.contrastive = detail::parse_tokens(cols[2], lineno);
    try {
      item.distance = std::stoi(cols[3]);
    } catch (...) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": bad distance '" + cols[3] +
                               "'");
    }
    item.category = cols[4];
    if (item.distance < 1)
      throw std::runtime_error("line " + std::to_string(lineno) + ": distance must be >= 1");
    if (item.reference == item.contrastive)
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": reference equals contrastive");
    items.push_back(std::move(item));
  }
  return items;
}

inline void save_contrastive_tsv(const std::vector<ContrastiveItem>& items,
                                 const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write contrastive file: " + path);
  for (const ContrastiveItem& item : items)
    out << detail::join_tokens(item.source) << '\t' << detail::join_tokens(item.reference) << '\t'
        << detail::join_tokens(item.contrastive) << '\t' << item.distance << '\t' << item.category
        << '\n';
}

// Two-column plot data (distance, accuracy); the >=16 bucket is written at
// x = 16. Buckets without items are omitted.
inline void save_bucket_plot(const DistanceBucketReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write plot file: " + path);
  for (int b = 1; b <= DistanceBucketReport::kMaxBucket; ++b)
    if (report.count[static_cast<size_t>(b)] > 0)
      out << b << '\t' << report.accuracy(b) << '\n';
}

// Greedy-decodes every source and measures exact-position token accuracy
// against the raw (eos-free) targets.
inline double greedy_task_accuracy(const Model& m, const std::vector<Pair>& pairs) {
  std::vector<std::vector<int64_t>> hyps, refs;
  hyps.reserve(pairs.size());
  refs.reserve(pairs.size());
  for (const Pair& p : pairs) {
    int max_len = static_cast<int>(p.target.size()) + 2;
    hyps.push_back(decode(m, p.source, 1, max_len).tokens);
    refs.push_back(p.target);
  }
  return token_accuracy(hyps, refs);
}

}  // namespace deeprnmt
