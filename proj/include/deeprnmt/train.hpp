#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "deeprnmt/checkpoint.hpp"
#include "deeprnmt/decoder.hpp"
#include "deeprnmt/log.hpp"
#include "deeprnmt/tasks.hpp"

namespace deeprnmt {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Hyper {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real epsilon = Real(1e-8);
  Real clip_norm = Real(1.0);
  int batch_size = 32;
  int valid_every = 500;
  int patience = 10;
  int64_t max_steps = 5000;
  Real target_ce = Real(0);  // stop once validation CE drops below (0 = off)
  int data_size = 2048;
  int valid_size = 256;
};

// Mean per-token cross-entropy of one padded batch. Examples are processed
// in order and summed left to right, so batching is exact with respect to
// per-sentence evaluation.
inline Tensor batch_loss(const Model& m, const Batch& batch) {
  Tensor total;
  for (size_t ex = 0; ex < batch.source.size(); ++ex) {
    SourceAnnotations src = m.encoder.encode(batch.source[ex], batch.source_mask[ex]);
    DecoderNet::Attended att = m.decoder.attend(src);
    DecoderState state = m.decoder.init_state(src);
    Tensor prev = m.decoder.start_embedding();
    const auto& tgt = batch.target[ex];
    const auto& tmask = batch.target_mask[ex];
    for (size_t j = 0; j < tgt.size(); ++j) {
      if (!tmask[j]) continue;  // right padding: nothing real follows
      StepResult r = m.decoder.step(att, state, prev);
      Tensor lp = pick(log_softmax(r.logits), tgt[j]);
      total = total.defined() ? add(total, lp) : lp;
      state = std::move(r.next);
      prev = m.decoder.target_embedding(tgt[j]);
    }
  }
  if (batch.target_tokens == 0) throw std::invalid_argument("batch_loss: batch has no target tokens");
  return scale(total, Real(-1) / static_cast<Real>(batch.target_tokens));
}

// Scales all gradients by min(1, threshold / global_norm); direction is
// preserved. Returns the pre-clip global norm.
inline double clip_gradients(ParameterSet& params, Real threshold) {
  double sq = 0;
  for (const std::string& name : params.names()) {
    Tensor& t = params.at(name);
    if (!t.has_grad()) continue;
    for (Real g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  double norm = std::sqrt(sq);
  if (threshold > 0 && norm > static_cast<double>(threshold)) {
    Real s = static_cast<Real>(static_cast<double>(threshold) / norm);
    for (const std::string& name : params.names()) {
      Tensor& t = params.at(name);
      if (!t.has_grad()) continue;
      for (Real& g : t.grad()) g *= s;
    }
  }
  return norm;
}

struct AdamMoments {
  std::vector<Real> m, v;
};

// Optimizer and early-stopping bookkeeping for one training run.
struct TrainState {
  int64_t step = 0;
  std::unordered_map<std::string, AdamMoments> moments;
  Real best_valid_ce = std::numeric_limits<Real>::infinity();
  int bad_evaluations = 0;
  uint64_t seed = 0;
};

// Bias-corrected adaptive-moment update. Gradients are read from each
// parameter's accumulator and must be finite.
inline void optimizer_step(TrainState& state, ParameterSet& params, const Hyper& hyper) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const Real c1 = static_cast<Real>(1.0 / (1.0 - std::pow(static_cast<double>(hyper.beta1), t)));
  const Real c2 = static_cast<Real>(1.0 / (1.0 - std::pow(static_cast<double>(hyper.beta2), t)));
  for (const std::string& name : params.names()) {
    Tensor& p = params.at(name);
    AdamMoments& mom = state.moments[name];
    if (mom.m.empty()) {
      mom.m.assign(p.values().size(), Real(0));
      mom.v.assign(p.values().size(), Real(0));
    }
    const bool has = p.has_grad();
    auto& pv = p.values();
    for (size_t i = 0; i < pv.size(); ++i) {
      const Real g = has ? p.grad()[i] : Real(0);
      if (!std::isfinite(g))
        throw TrainError("non-finite gradient in tensor " + name + " at step " +
                         std::to_string(state.step));
      mom.m[i] = hyper.beta1 * mom.m[i] + (Real(1) - hyper.beta1) * g;
      mom.v[i] = hyper.beta2 * mom.v[i] + (Real(1) - hyper.beta2) * g * g;
      pv[i] -= hyper.lr * (mom.m[i] * c1) / (std::sqrt(mom.v[i] * c2) + hyper.epsilon);
    }
  }
}

// Mean per-token cross-entropy over a pair list, without building graphs.
inline double evaluate_ce(const Model& m, const std::vector<Pair>& pairs) {
  double total = 0;
  int64_t tokens = 0;
  for (const Pair& p : pairs) {
    SequenceScore s = score_sequence(m, p.source, p.target);
    total += static_cast<double>(s.total);
    tokens += static_cast<int64_t>(p.target.size());
  }
  return -total / static_cast<double>(tokens);
}

struct TrainLogEntry {
  int64_t step = 0;
  double train_ce = 0;
  double valid_ce = 0;
  double tokens_per_s = 0;
};

struct TrainResult {
  ModelConfig config;
  ParameterSet best_params;
  Real best_valid_ce = std::numeric_limits<Real>::infinity();
  int64_t steps = 0;
  std::vector<TrainLogEntry> log;
};

struct TrainPaths {
  std::string checkpoint;  // best model written here on every improvement
  std::string log;         // tab-separated step / train CE / valid CE / tokens per s
  std::string log_header;  // echoed verbatim into the log as comment lines
};

// Training loop with held-out evaluation every valid_every steps, patience
// early stopping on validation cross-entropy, and divergence detection.
inline TrainResult train(const ModelConfig& cfg_in, const SyntheticTask& task, const Hyper& hyper,
                         const TrainPaths* paths = nullptr) {
  ModelConfig cfg = validate(cfg_in);
  const uint64_t seed = cfg.seed;
  Model m(cfg, init_params(cfg, seed));

  std::vector<Pair> train_pairs = generate(task, hyper.data_size, seed_stream(seed, "train.data"));
  std::vector<Pair> valid_pairs = generate(task, hyper.valid_size, seed_stream(seed, "valid.data"));
  append_eos(train_pairs);
  append_eos(valid_pairs);
  std::vector<Batch> batches = make_batches(std::move(train_pairs), hyper.batch_size);

  std::ofstream log_file;
  if (paths && !paths->log.empty()) {
    log_file.open(paths->log, std::ios::trunc);
    if (!log_file) throw TrainError("cannot write training log: " + paths->log);
    // effective configuration, verbatim, as comment lines
    std::istringstream cfg_text(paths->log_header.empty() ? model_config_text(cfg)
                                                          : paths->log_header);
    std::string line;
    while (std::getline(cfg_text, line)) log_file << "# " << line << "\n";
  }

  TrainState state;
  state.seed = seed;
  TrainResult result;
  result.config = cfg;

  const double divergence_ce = 10.0 * std::log(static_cast<double>(cfg.target_vocab));
  Rng order_rng(seed_stream(seed, "batch.order"));
  std::vector<size_t> order(batches.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  double ce_accum = 0;
  int64_t ce_count = 0;
  int64_t tokens_since_eval = 0;
  auto last_eval = std::chrono::steady_clock::now();
  bool stop = false;

  auto evaluate = [&]() {
    const double valid_ce = evaluate_ce(m, valid_pairs);
    const auto now = std::chrono::steady_clock::now();
    double dt = std::chrono::duration<double>(now - last_eval).count();
    if (dt <= 0) dt = 1e-9;
    last_eval = now;
    TrainLogEntry entry{state.step, ce_count ? ce_accum / static_cast<double>(ce_count) : 0.0,
                        valid_ce, static_cast<double>(tokens_since_eval) / dt};
    ce_accum = 0;
    ce_count = 0;
    tokens_since_eval = 0;
    result.log.push_back(entry);
    if (log_file)
      log_file << entry.step << "\t" << entry.train_ce << "\t" << entry.valid_ce << "\t"
               << entry.tokens_per_s << "\n"
               << std::flush;
    log_info("step %lld train_ce %.4f valid_ce %.4f tokens/s %.0f",
             static_cast<long long>(entry.step), entry.train_ce, entry.valid_ce,
             entry.tokens_per_s);

    if (state.step > 100 && valid_ce > divergence_ce)
      throw TrainError("training diverged: validation cross-entropy " + std::to_string(valid_ce) +
                       " exceeds " + std::to_string(divergence_ce));
    if (valid_ce < static_cast<double>(state.best_valid_ce)) {
      state.best_valid_ce = static_cast<Real>(valid_ce);
      state.bad_evaluations = 0;
      result.best_params = clone_values(m.params);
      result.best_valid_ce = state.best_valid_ce;
      if (paths && !paths->checkpoint.empty()) save_checkpoint(m.params, cfg, paths->checkpoint);
    } else {
      state.bad_evaluations += 1;
      if (state.bad_evaluations > hyper.patience) stop = true;
    }
    if (hyper.target_ce > 0 && valid_ce < static_cast<double>(hyper.target_ce)) stop = true;
  };

  while (!stop && state.step < hyper.max_steps) {
    // deterministic batch order, reshuffled per epoch
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(order_rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (size_t bi : order) {
      const Batch& batch = batches[bi];
      Tape tape;
      {
        Tape::Scope scope(tape);
        Tensor loss = batch_loss(m, batch);
        ce_accum += static_cast<double>(loss.item());
        ce_count += 1;
        tape.backward(loss);
      }
      clip_gradients(m.params, hyper.clip_norm);
      optimizer_step(state, m.params, hyper);
      m.params.zero_grads();
      tokens_since_eval += batch.target_tokens;
      if (state.step % hyper.valid_every == 0) evaluate();
      if (stop || state.step >= hyper.max_steps) break;
    }
  }
  if (result.log.empty() || result.log.back().step != state.step) evaluate();

  result.steps = state.step;
  if (result.best_params.size() == 0) {
    result.best_params = clone_values(m.params);
    result.best_valid_ce = state.best_valid_ce;
  }
  return result;
}

}  // namespace deeprnmt
