#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deeprnmt/cells.hpp"
#include "deeprnmt/model.hpp"

namespace deeprnmt {

// Bidirectional source word states C plus the padding mask. Annotation row i
// is zero wherever mask[i] == 0; downstream consumers never read those rows.
struct SourceAnnotations {
  Tensor annotations;  // [N x annotation_width]
  Mask mask;
  // per-level word states kept only when requested (inspection/tests)
  std::vector<std::vector<Tensor>> level_states;
};

namespace detail {

inline std::optional<LayerNormParams> bind_ln(const ParameterSet& ps, const std::string& prefix) {
  if (!ps.contains(prefix + ".gain")) return std::nullopt;
  return LayerNormParams{ps.at(prefix + ".gain"), ps.at(prefix + ".bias")};
}

inline GruTransitionParams bind_transition(const ParameterSet& ps, const std::string& prefix) {
  GruTransitionParams p;
  if (ps.contains(prefix + ".W")) p.W = ps.at(prefix + ".W");
  p.U = ps.at(prefix + ".U");
  p.b = ps.at(prefix + ".b");
  p.ln_in = bind_ln(ps, prefix + ".ln_in");
  p.ln_state = bind_ln(ps, prefix + ".ln_state");
  return p;
}

inline DtGruCellParams bind_cell(const ParameterSet& ps, const std::string& prefix, int depth) {
  DtGruCellParams cell;
  for (int t = 1; t <= depth; ++t)
    cell.transitions.push_back(bind_transition(ps, prefix + ".t" + std::to_string(t)));
  return cell;
}

}  // namespace detail

// Direction schedule of a stacked bidirectional part: the first level runs
// in the part's starting direction, every following level flips.
inline bool level_runs_backward(bool part_starts_backward, int level) {
  return ((level % 2) == 1) == part_starts_backward;
}

// Runs one individually recurrent cell over the sequence in the given
// direction. Masked positions are skipped: the recurrent state carries
// through unchanged and the emitted word state is a zero vector, so padding
// can never leak into real states.
inline std::vector<Tensor> run_recurrent(const DtGruCellParams& cell,
                                         const std::vector<Tensor>& inputs, const Mask& mask,
                                         bool backward_dir, int64_t width) {
  const int64_t n = static_cast<int64_t>(inputs.size());
  std::vector<Tensor> out(static_cast<size_t>(n));
  Tensor zero = Tensor::zeros({width});
  Tensor state = Tensor::zeros({width});
  for (int64_t step = 0; step < n; ++step) {
    const int64_t i = backward_dir ? n - 1 - step : step;
    if (!mask[static_cast<size_t>(i)]) {
      out[static_cast<size_t>(i)] = zero;
      continue;
    }
    state = dtgru_cell(cell, inputs[static_cast<size_t>(i)], state);
    out[static_cast<size_t>(i)] = state;
  }
  return out;
}

// Encoder with parameters bound once; encode() may be called repeatedly and
// builds onto whichever tape is active.
class EncoderNet {
 public:
  EncoderNet(const ParameterSet& params, const ModelConfig& cfg)
      : cfg_(cfg),
        embedding_(params.at(cfg.tied_embeddings ? "emb.shared" : "emb.src")) {
    const EncoderConfig& e = cfg.encoder;
    int bidir_levels = e.stack_depth;
    if (e.kind == EncoderKind::Biunidirectional)
      bidir_levels = 1;
    else if (e.kind == EncoderKind::Mixed)
      bidir_levels = e.alt_layers;
    for (const char* part : {"fwd", "bwd"}) {
      auto& cells = *(std::string(part) == "fwd" ? &fwd_ : &bwd_);
      for (int l = 1; l <= bidir_levels; ++l)
        cells.push_back(detail::bind_cell(
            params, std::string("enc.") + part + ".l" + std::to_string(l),
            e.transition_depths[static_cast<size_t>(l - 1)]));
    }
    for (int l = bidir_levels + 1; l <= e.stack_depth; ++l)
      uni_.push_back(detail::bind_cell(params, "enc.uni.l" + std::to_string(l),
                                       e.transition_depths[static_cast<size_t>(l - 1)]));
  }

  SourceAnnotations encode(const std::vector<int64_t>& tokens, const Mask& mask,
                           bool keep_states = false) const {
    if (tokens.size() != mask.size())
      throw DimError("encode: token and mask lengths differ");
    bool any = false;
    for (uint8_t m : mask) any = any || m;
    if (tokens.empty() || !any) throw std::invalid_argument("encode: empty sentence");

    const int64_t n = static_cast<int64_t>(tokens.size());
    const int64_t h = cfg_.encoder.hidden;
    std::vector<Tensor> emb(static_cast<size_t>(n));
    Tensor zero_emb = Tensor::zeros({cfg_.encoder.embedding});
    for (int64_t i = 0; i < n; ++i)
      emb[static_cast<size_t>(i)] =
          mask[static_cast<size_t>(i)] ? embed(embedding_, tokens[static_cast<size_t>(i)])
                                       : zero_emb;

    SourceAnnotations out;
    out.mask = mask;

    // bidirectional part: one stack per direction, levels alternate
    auto run_part = [&](const std::vector<DtGruCellParams>& cells,
                        bool first_backward) -> std::vector<Tensor> {
      std::vector<Tensor> words = run_recurrent(cells[0], emb, mask, first_backward, h);
      if (keep_states) out.level_states.push_back(words);
      for (size_t l = 1; l < cells.size(); ++l) {
        const bool backward_dir = level_runs_backward(first_backward, static_cast<int>(l) + 1);
        std::vector<Tensor> states = run_recurrent(cells[l], words, mask, backward_dir, h);
        for (int64_t i = 0; i < n; ++i)
          if (mask[static_cast<size_t>(i)])
            words[static_cast<size_t>(i)] = residual_combine(states[static_cast<size_t>(i)],
                                                             words[static_cast<size_t>(i)]);
        if (keep_states) out.level_states.push_back(words);
      }
      return words;
    };

    std::vector<Tensor> fw = run_part(fwd_, /*first_backward=*/false);
    std::vector<Tensor> bw = run_part(bwd_, /*first_backward=*/true);

    std::vector<Tensor> words(static_cast<size_t>(n));
    Tensor zero_ann = Tensor::zeros({2 * h});
    for (int64_t i = 0; i < n; ++i)
      words[static_cast<size_t>(i)] =
          mask[static_cast<size_t>(i)]
              ? concat(fw[static_cast<size_t>(i)], bw[static_cast<size_t>(i)])
              : zero_ann;
    if (keep_states && !uni_.empty()) out.level_states.push_back(words);

    // forward-only levels at doubled width (biunidirectional / mixed)
    for (const DtGruCellParams& cell : uni_) {
      std::vector<Tensor> states = run_recurrent(cell, words, mask, /*backward_dir=*/false, 2 * h);
      for (int64_t i = 0; i < n; ++i)
        if (mask[static_cast<size_t>(i)])
          words[static_cast<size_t>(i)] =
              residual_combine(states[static_cast<size_t>(i)], words[static_cast<size_t>(i)]);
      if (keep_states) out.level_states.push_back(words);
    }

    out.annotations = stack_rows(words);
    return out;
  }

 private:
  ModelConfig cfg_;
  Tensor embedding_;
  std::vector<DtGruCellParams> fwd_, bwd_, uni_;
};

// ---- per-kind entry points ----

namespace detail {
inline SourceAnnotations encode_with(const ParameterSet& params, ModelConfig cfg,
                                     const std::vector<int64_t>& tokens, const Mask& mask,
                                     bool keep_states) {
  return EncoderNet(params, cfg).encode(tokens, mask, keep_states);
}
}  // namespace detail

inline SourceAnnotations encode_shallow(const ParameterSet& params, const ModelConfig& cfg,
                                        const std::vector<int64_t>& tokens, const Mask& mask,
                                        bool keep_states = false) {
  ModelConfig c = cfg;
  c.encoder.kind = EncoderKind::Shallow;
  c.encoder.stack_depth = 1;
  c.encoder.transition_depths = {1};
  return detail::encode_with(params, c, tokens, mask, keep_states);
}

inline SourceAnnotations encode_deep_transition(const ParameterSet& params,
                                                const ModelConfig& cfg,
                                                const std::vector<int64_t>& tokens,
                                                const Mask& mask, int transition_depth,
                                                bool keep_states = false) {
  ModelConfig c = cfg;
  c.encoder.kind = EncoderKind::DeepTransition;
  c.encoder.stack_depth = 1;
  c.encoder.transition_depths = {transition_depth};
  return detail::encode_with(params, c, tokens, mask, keep_states);
}

inline SourceAnnotations encode_alternating(const ParameterSet& params, const ModelConfig& cfg,
                                            const std::vector<int64_t>& tokens, const Mask& mask,
                                            int stack_depth, bool keep_states = false) {
  ModelConfig c = cfg;
  c.encoder.kind = EncoderKind::Alternating;
  c.encoder.stack_depth = stack_depth;
  c.encoder.transition_depths.assign(static_cast<size_t>(stack_depth), 1);
  return detail::encode_with(params, c, tokens, mask, keep_states);
}

inline SourceAnnotations encode_biunidirectional(const ParameterSet& params,
                                                 const ModelConfig& cfg,
                                                 const std::vector<int64_t>& tokens,
                                                 const Mask& mask, int stack_depth,
                                                 bool keep_states = false) {
  ModelConfig c = cfg;
  c.encoder.kind = EncoderKind::Biunidirectional;
  c.encoder.stack_depth = stack_depth;
  c.encoder.transition_depths.assign(static_cast<size_t>(stack_depth), 1);
  return detail::encode_with(params, c, tokens, mask, keep_states);
}

inline SourceAnnotations encode_bideep(const ParameterSet& params, const ModelConfig& cfg,
                                       const std::vector<int64_t>& tokens, const Mask& mask,
                                       int stack_depth, std::vector<int> transition_depths,
                                       bool keep_states = false) {
  ModelConfig c = cfg;
  c.encoder.kind = EncoderKind::Bideep;
  c.encoder.stack_depth = stack_depth;
  if (transition_depths.size() == 1)
    transition_depths.assign(static_cast<size_t>(stack_depth), transition_depths[0]);
  c.encoder.transition_depths = std::move(transition_depths);
  return detail::encode_with(params, c, tokens, mask, keep_states);
}

}  // namespace deeprnmt
