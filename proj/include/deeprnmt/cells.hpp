#pragma once

#include <optional>
#include <vector>

#include "deeprnmt/nn.hpp"
#include "deeprnmt/tensor.hpp"

namespace deeprnmt {

// One GRU transition block. The three gate packs are laid out along the 3H
// axis in the order update (z), reset (r), candidate. W is absent for
// transitions without an external input; the bias rides the state-side
// contribution so that it exists either way.
struct GruTransitionParams {
  Tensor W;  // [d_in x 3H], undefined when the transition has no input
  Tensor U;  // [H x 3H]
  Tensor b;  // [3H]
  std::optional<LayerNormParams> ln_in;     // over x*W
  std::optional<LayerNormParams> ln_state;  // over h*U + b

  bool has_input() const { return W.defined(); }
};

namespace detail {

// Fused gate arithmetic: z = sig(az), r = sig(ar),
// hcand = tanh(acx + r .* ach), h' = (1 - z) .* hcand + z .* h.
// ax may be undefined (treated as zero input contribution).
inline Tensor gru_gates(const Tensor& ax, const Tensor& ah, const Tensor& h) {
  const int64_t hd = h.extent(0);
  if (ah.extent(0) != 3 * hd || (ax.defined() && ax.extent(0) != 3 * hd))
    throw DimError("gru_gates: contribution shape " + shape_str(ah.shape()) +
                   " does not match state " + shape_str(h.shape()));
  const Real* axv = ax.defined() ? ax.values().data() : nullptr;
  const Real* ahv = ah.values().data();
  const Real* hv = h.values().data();

  Tensor out = Tensor::zeros({hd});
  Real* ov = out.values().data();
  std::vector<Real> zs(static_cast<size_t>(hd)), rs(static_cast<size_t>(hd)),
      cs(static_cast<size_t>(hd));
  for (int64_t j = 0; j < hd; ++j) {
    const Real az = (axv ? axv[j] : Real(0)) + ahv[j];
    const Real ar = (axv ? axv[hd + j] : Real(0)) + ahv[hd + j];
    const Real z = Real(1) / (Real(1) + std::exp(-az));
    const Real r = Real(1) / (Real(1) + std::exp(-ar));
    const Real c = std::tanh((axv ? axv[2 * hd + j] : Real(0)) + r * ahv[2 * hd + j]);
    zs[static_cast<size_t>(j)] = z;
    rs[static_cast<size_t>(j)] = r;
    cs[static_cast<size_t>(j)] = c;
    ov[j] = (Real(1) - z) * c + z * hv[j];
  }

  auto back = [hd, zs = std::move(zs), rs = std::move(rs), cs = std::move(cs)](Tape::Node& n) {
    const bool with_input = n.in.size() == 3;
    Tensor& ah2 = n.in[with_input ? 1 : 0];
    Tensor& h2 = n.in[with_input ? 2 : 1];
    const Real* g = n.out.data()->g.data();
    const Real* ahv2 = ah2.values().data();
    const Real* hv2 = h2.values().data();
    Real* gax = with_input && n.in[0].requires_grad() ? n.in[0].grad().data() : nullptr;
    Real* gah = ah2.requires_grad() ? ah2.grad().data() : nullptr;
    Real* gh = h2.requires_grad() ? h2.grad().data() : nullptr;
    for (int64_t j = 0; j < hd; ++j) {
      const Real z = zs[static_cast<size_t>(j)], r = rs[static_cast<size_t>(j)],
                 c = cs[static_cast<size_t>(j)];
      const Real gj = g[j];
      const Real dc = gj * (Real(1) - z);
      const Real dz = gj * (hv2[j] - c);
      const Real dpre_c = dc * (Real(1) - c * c);
      const Real dr = dpre_c * ahv2[2 * hd + j];
      const Real dpre_z = dz * z * (Real(1) - z);
      const Real dpre_r = dr * r * (Real(1) - r);
      if (gh) gh[j] += gj * z;
      if (gax) {
        gax[j] += dpre_z;
        gax[hd + j] += dpre_r;
        gax[2 * hd + j] += dpre_c;
      }
      if (gah) {
        gah[j] += dpre_z;
        gah[hd + j] += dpre_r;
        gah[2 * hd + j] += dpre_c * r;
      }
    }
  };
  if (ax.defined())
    deeprnmt::detail::record(out, "gru_gates", std::move(back), ax, ah, h);
  else
    deeprnmt::detail::record(out, "gru_gates", std::move(back), ah, h);
  return out;
}

}  // namespace detail

// Applies one GRU transition. Pass an undefined Tensor as x for transitions
// without an external input; x must be present exactly when W is.
inline Tensor gru_transition(const GruTransitionParams& p, const Tensor& x, const Tensor& h) {
  if (x.defined() != p.has_input())
    throw DimError(p.has_input() ? "gru_transition: transition expects an external input"
                                 : "gru_transition: transition takes no external input");
  Tensor ah = maybe_layer_norm(add(matmul(h, p.U), p.b), p.ln_state);
  Tensor ax;
  if (x.defined()) ax = maybe_layer_norm(matmul(x, p.W), p.ln_in);
  return detail::gru_gates(ax, ah, h);
}

// Multi-layer deep transition cell: the first transition consumes the
// external input, the rest feed forward on the state alone. Only the whole
// cell's final output recurs to the next time step.
struct DtGruCellParams {
  std::vector<GruTransitionParams> transitions;  // length = transition depth L

  int64_t depth() const { return static_cast<int64_t>(transitions.size()); }
};

inline Tensor dtgru_cell(const DtGruCellParams& p, const Tensor& in, const Tensor& state) {
  if (p.transitions.empty()) throw DimError("dtgru_cell: needs at least one transition");
  Tensor v = gru_transition(p.transitions[0], in, state);
  for (size_t t = 1; t < p.transitions.size(); ++t)
    v = gru_transition(p.transitions[t], Tensor(), v);
  return v;
}

// Residual connection between stack levels: elementwise sum.
inline Tensor residual_combine(const Tensor& h, const Tensor& w_below) {
  if (h.shape() != w_below.shape())
    throw DimError("residual_combine: shapes differ: " + shape_str(h.shape()) + " vs " +
                   shape_str(w_below.shape()));
  return add(h, w_below);
}

}  // namespace deeprnmt
