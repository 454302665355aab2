#pragma once

#include <string>
#include <vector>

#include "deeprnmt/encoder.hpp"
#include "deeprnmt/model.hpp"

namespace deeprnmt {

// Recurrent decoder state: one vector per stack level, plus the base context
// cached by the most recent step (consumed by rGRU/crGRU inputs and by the
// output network).
struct DecoderState {
  std::vector<Tensor> level;
  Tensor base_context;
};

struct StepResult {
  DecoderState next;
  std::vector<Tensor> contexts;  // [0] = base context c_{j,1}
  Tensor logits;
};

class DecoderNet {
 public:
  DecoderNet(const ParameterSet& params, const ModelConfig& cfg) : cfg_(cfg) {
    const DecoderConfig& d = cfg.decoder;
    emb_ = params.at(cfg.tied_embeddings ? "emb.shared" : "emb.tgt");
    for (int k = 1; k <= d.stack_depth; ++k) {
      init_.push_back(AffineParams{params.at("dec.init.l" + std::to_string(k) + ".W"),
                                   params.at("dec.init.l" + std::to_string(k) + ".b")});
      cells_.push_back(detail::bind_cell(params, "dec.l" + std::to_string(k),
                                         d.transition_depths[static_cast<size_t>(k - 1)]));
    }
    att_.push_back(bind_attention(params, "dec.att.l1"));
    if (d.variant == CellVariant::Cgru)
      for (int k = 2; k <= d.stack_depth; ++k)
        att_.push_back(bind_attention(params, "dec.att.l" + std::to_string(k)));
    for (int i = 1; i <= d.output_depth; ++i) {
      std::string prefix = "dec.out.h" + std::to_string(i);
      out_.hidden.push_back(OutputLayerParams{
          AffineParams{params.at(prefix + ".W"), params.at(prefix + ".b")},
          detail::bind_ln(params, prefix + ".ln")});
    }
    out_.proj = AffineParams{params.at("dec.out.proj.W"), params.at("dec.out.proj.b")};
  }

  const ModelConfig& config() const { return cfg_; }

  Tensor target_embedding(int64_t token_id) const { return embed(emb_, token_id); }
  Tensor start_embedding() const { return Tensor::zeros({cfg_.decoder.embedding}); }

  // Source annotations with the per-attention-set projections cached, so a
  // sentence pays the annotation-side affine once per forward pass.
  struct Attended {
    const SourceAnnotations* src = nullptr;
    std::vector<Tensor> proj;
  };

  Attended attend(const SourceAnnotations& src) const {
    Attended a;
    a.src = &src;
    for (const AttentionParams& p : att_) a.proj.push_back(attention_project(p, src.annotations));
    return a;
  }

  // Every level's state starts as tanh(affine(mean of unmasked annotations)).
  DecoderState init_state(const SourceAnnotations& src) const {
    int64_t n = src.annotations.extent(0);
    int64_t count = 0;
    for (uint8_t m : src.mask) count += m;
    if (count == 0) throw std::invalid_argument("init_state: all source positions are masked");
    Tensor w = Tensor::zeros({n});
    for (int64_t i = 0; i < n; ++i)
      if (src.mask[static_cast<size_t>(i)])
        w.values()[static_cast<size_t>(i)] = Real(1) / static_cast<Real>(count);
    Tensor mean_ann = weighted_rows(w, src.annotations, src.mask);
    DecoderState st;
    for (const AffineParams& a : init_)
      st.level.push_back(tanh(add(matmul(mean_ann, a.W), a.b)));
    return st;
  }

  StepResult step(const Attended& att, const DecoderState& state, const Tensor& y_prev_emb) const {
    switch (cfg_.decoder.kind) {
      case DecoderKind::Baseline: return step_baseline(att, state, y_prev_emb);
      case DecoderKind::DeepTransition: return step_deep_transition(att, state, y_prev_emb);
      case DecoderKind::Stacked: return step_stacked(att, state, y_prev_emb);
      case DecoderKind::Bideep: return step_bideep(att, state, y_prev_emb);
    }
    throw std::logic_error("unknown decoder kind");
  }

  // Two GRU transitions per output word with the attention in between.
  StepResult step_baseline(const Attended& att, const DecoderState& state,
                           const Tensor& y_prev_emb) const {
    const auto& ts = cells_[0].transitions;
    Tensor s1 = gru_transition(ts[0], y_prev_emb, state.level[0]);
    AttentionResult ar = attend_at(att, 0, s1);
    Tensor s2 = gru_transition(ts[1], ar.context, s1);
    StepResult r;
    r.next.level = {s2};
    r.next.base_context = ar.context;
    r.contexts = {ar.context};
    r.logits = emit(s2, y_prev_emb, ar.context);
    return r;
  }

  // Baseline extended to transition depth L: transitions beyond the second
  // have no external input; the final state recurs to the next step.
  StepResult step_deep_transition(const Attended& att, const DecoderState& state,
                                  const Tensor& y_prev_emb) const {
    const auto& ts = cells_[0].transitions;
    Tensor s = gru_transition(ts[0], y_prev_emb, state.level[0]);
    AttentionResult ar = attend_at(att, 0, s);
    s = gru_transition(ts[1], ar.context, s);
    for (size_t t = 2; t < ts.size(); ++t) s = gru_transition(ts[t], Tensor(), s);
    StepResult r;
    r.next.level = {s};
    r.next.base_context = ar.context;
    r.contexts = {ar.context};
    r.logits = emit(s, y_prev_emb, ar.context);
    return r;
  }

  // Conditional base cell plus individually recurrent higher cells with
  // residual word states between levels.
  StepResult step_stacked(const Attended& att, const DecoderState& state,
                          const Tensor& y_prev_emb) const {
    const CellVariant variant = cfg_.decoder.variant;
    StepResult r;
    r.next.level.resize(state.level.size());

    const auto& base = cells_[0].transitions;
    Tensor base_s1 = gru_transition(base[0], y_prev_emb, state.level[0]);
    AttentionResult base_att = attend_at(att, 0, base_s1);
    Tensor base_s2 = gru_transition(base[1], base_att.context, base_s1);
    r.next.level[0] = base_s2;
    r.next.base_context = base_att.context;
    r.contexts = {base_att.context};
    Tensor word = base_s2;  // r_{j,1}

    for (size_t k = 1; k < cells_.size(); ++k) {
      const auto& ts = cells_[k].transitions;
      Tensor level_out;
      switch (variant) {
        case CellVariant::Gru: {
          Tensor s = gru_transition(ts[0], word, state.level[k]);
          r.next.level[k] = s;
          level_out = s;
          break;
        }
        case CellVariant::Rgru: {
          Tensor s = gru_transition(ts[0], concat(word, base_att.context), state.level[k]);
          r.next.level[k] = s;
          level_out = s;
          break;
        }
        case CellVariant::Cgru: {
          Tensor s1 = gru_transition(ts[0], word, state.level[k]);
          AttentionResult ak = attend_at(att, k, s1);
          r.contexts.push_back(ak.context);
          Tensor s2 = gru_transition(
              ts[1], ak.context, cfg_.decoder.cgru_state_from_base ? base_s1 : s1);
          r.next.level[k] = s1;  // the level's own recurrence runs through s1
          level_out = s2;
          break;
        }
        case CellVariant::Crgru: {
          Tensor s1 = gru_transition(ts[0], word, state.level[k]);
          Tensor s2 = gru_transition(
              ts[1], base_att.context, cfg_.decoder.cgru_state_from_base ? base_s1 : s1);
          r.next.level[k] = s1;
          level_out = s2;
          break;
        }
      }
      word = residual_combine(level_out, word);
    }
    r.logits = emit(word, y_prev_emb, base_att.context);
    return r;
  }

  // Stacked wiring with each level's cell replaced by a deep transition
  // cell; recurrence happens at whole-cell granularity.
  StepResult step_bideep(const Attended& att, const DecoderState& state,
                         const Tensor& y_prev_emb) const {
    const CellVariant variant = cfg_.decoder.variant;
    StepResult r;
    r.next.level.resize(state.level.size());

    const auto& base = cells_[0].transitions;
    Tensor v = gru_transition(base[0], y_prev_emb, state.level[0]);
    AttentionResult base_att = attend_at(att, 0, v);
    v = gru_transition(base[1], base_att.context, v);
    for (size_t t = 2; t < base.size(); ++t) v = gru_transition(base[t], Tensor(), v);
    r.next.level[0] = v;
    r.next.base_context = base_att.context;
    r.contexts = {base_att.context};
    Tensor word = v;

    for (size_t k = 1; k < cells_.size(); ++k) {
      const auto& ts = cells_[k].transitions;
      Tensor in;
      switch (variant) {
        case CellVariant::Gru: in = word; break;
        case CellVariant::Rgru: in = concat(word, base_att.context); break;
        case CellVariant::Cgru:
        case CellVariant::Crgru: in = word; break;
      }
      Tensor s = gru_transition(ts[0], in, state.level[k]);
      size_t t = 1;
      if (variant == CellVariant::Cgru) {
        AttentionResult ak = attend_at(att, k, s);
        r.contexts.push_back(ak.context);
        s = gru_transition(ts[1], ak.context, s);
        t = 2;
      } else if (variant == CellVariant::Crgru) {
        s = gru_transition(ts[1], base_att.context, s);
        t = 2;
      }
      for (; t < ts.size(); ++t) s = gru_transition(ts[t], Tensor(), s);
      r.next.level[k] = s;
      word = residual_combine(s, word);
    }
    r.logits = emit(word, y_prev_emb, base_att.context);
    return r;
  }

 private:
  AttentionParams bind_attention(const ParameterSet& ps, const std::string& prefix) const {
    AttentionParams p;
    p.W_state = ps.at(prefix + ".W_state");
    p.W_ann = ps.at(prefix + ".W_ann");
    p.b = ps.at(prefix + ".b");
    p.v = ps.at(prefix + ".v");
    p.ln_state = detail::bind_ln(ps, prefix + ".ln_state");
    p.ln_ann = detail::bind_ln(ps, prefix + ".ln_ann");
    return p;
  }

  AttentionResult attend_at(const Attended& att, size_t set, const Tensor& state) const {
    return attention_with(att_[set], att.proj[set], att.src->annotations, att.src->mask, state);
  }

  Tensor emit(const Tensor& state, const Tensor& y_prev_emb, const Tensor& context) const {
    return output_logits(out_, state, y_prev_emb, context, cfg_.output_inputs);
  }

  ModelConfig cfg_;
  Tensor emb_;
  std::vector<AffineParams> init_;
  std::vector<DtGruCellParams> cells_;
  std::vector<AttentionParams> att_;
  OutputNetParams out_;
};

// Bound encoder/decoder pair over one parameter set.
struct Model {
  ModelConfig cfg;
  ParameterSet params;
  EncoderNet encoder;
  DecoderNet decoder;

  Model(ModelConfig validated, ParameterSet ps)
      : cfg(validated),
        params(std::move(ps)),
        encoder(params, cfg),
        decoder(params, cfg) {}

  static Model fresh(const ModelConfig& cfg) {
    ModelConfig v = validate(cfg);
    return Model(v, init_params(v, v.seed));
  }
};

// Teacher-forced per-token log probabilities as graph nodes; feeding the gold
// previous token at each step.
inline std::vector<Tensor> score_tokens(const DecoderNet& dec, const DecoderNet::Attended& att,
                                        DecoderState state, const std::vector<int64_t>& target) {
  if (target.empty()) throw std::invalid_argument("score: empty target");
  const int64_t vocab = dec.config().target_vocab;
  std::vector<Tensor> out;
  out.reserve(target.size());
  Tensor prev = dec.start_embedding();
  for (int64_t y : target) {
    if (y < 0 || y >= vocab)
      throw std::out_of_range("score: token " + std::to_string(y) +
                              " out of range for target vocabulary of size " +
                              std::to_string(vocab));
    StepResult r = dec.step(att, state, prev);
    out.push_back(pick(log_softmax(r.logits), y));
    state = std::move(r.next);
    prev = dec.target_embedding(y);
  }
  return out;
}

struct SequenceScore {
  Real total = 0;
  std::vector<Real> per_token;
};

// Deterministic teacher-forced sequence score: sum over positions of
// log softmax(logits)[y_j].
inline SequenceScore score_sequence(const Model& m, const std::vector<int64_t>& source,
                                    const std::vector<int64_t>& target) {
  Mask mask(source.size(), 1);
  SourceAnnotations src = m.encoder.encode(source, mask);
  DecoderNet::Attended att = m.decoder.attend(src);
  std::vector<Tensor> lp = score_tokens(m.decoder, att, m.decoder.init_state(src), target);
  SequenceScore s;
  for (const Tensor& t : lp) {
    s.per_token.push_back(t.item());
    s.total += t.item();
  }
  return s;
}

}  // namespace deeprnmt
