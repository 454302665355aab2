#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "deeprnmt/cells.hpp"
#include "deeprnmt/nn.hpp"
#include "deeprnmt/rng.hpp"
#include "deeprnmt/tensor.hpp"

namespace deeprnmt {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class EncoderKind { Shallow, DeepTransition, Alternating, Biunidirectional, Bideep, Mixed };
enum class DecoderKind { Baseline, DeepTransition, Stacked, Bideep };
enum class CellVariant { Gru, Rgru, Cgru, Crgru };

struct EncoderConfig {
  EncoderKind kind = EncoderKind::Shallow;
  int stack_depth = 1;  // D_s
  int alt_layers = 0;   // Mixed: alternating levels below
  int uni_layers = 0;   // Mixed: forward-only levels above
  std::vector<int> transition_depths = {1};  // per level; scalar broadcasts for bideep
  int hidden = 32;
  int embedding = 16;
};

struct DecoderConfig {
  DecoderKind kind = DecoderKind::Baseline;
  CellVariant variant = CellVariant::Gru;
  int stack_depth = 1;  // D_t
  std::vector<int> transition_depths = {2};  // normalized to one entry per level
  int output_depth = 1;
  int hidden = 32;
  int embedding = 16;
  // When set, the second transition of higher conditional cells reads the
  // base level's first-transition state instead of the level's own.
  bool cgru_state_from_base = false;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  int source_vocab = 22;
  int target_vocab = 22;
  bool layer_norm = false;
  bool tied_embeddings = false;
  OutputInputs output_inputs = OutputInputs::Full;
  uint64_t seed = 1;

  int annotation_width() const { return 2 * encoder.hidden; }
};

// ---- enum names ----

inline const char* to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::Shallow: return "shallow";
    case EncoderKind::DeepTransition: return "deep_transition";
    case EncoderKind::Alternating: return "alternating";
    case EncoderKind::Biunidirectional: return "biunidirectional";
    case EncoderKind::Bideep: return "bideep";
    case EncoderKind::Mixed: return "mixed";
  }
  return "?";
}

inline const char* to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::Baseline: return "baseline";
    case DecoderKind::DeepTransition: return "deep_transition";
    case DecoderKind::Stacked: return "stacked";
    case DecoderKind::Bideep: return "bideep";
  }
  return "?";
}

inline const char* to_string(CellVariant v) {
  switch (v) {
    case CellVariant::Gru: return "gru";
    case CellVariant::Rgru: return "rgru";
    case CellVariant::Cgru: return "cgru";
    case CellVariant::Crgru: return "crgru";
  }
  return "?";
}

// ---- validation ----

namespace detail {
inline void reject(const std::string& rule) { throw ConfigError("invalid config: " + rule); }
}  // namespace detail

// Checks every structural invariant and returns the normalized config with
// per-level transition depth lists made explicit. Throws ConfigError naming
// the violated rule.
inline ModelConfig validate(ModelConfig cfg) {
  using detail::reject;
  if (cfg.encoder.hidden < 1 || cfg.decoder.hidden < 1) reject("hidden size must be positive");
  if (cfg.encoder.embedding < 1 || cfg.decoder.embedding < 1)
    reject("embedding size must be positive");
  if (cfg.source_vocab < 3 || cfg.target_vocab < 3)
    reject("vocabulary must hold the two reserved ids plus at least one symbol");
  if (cfg.decoder.output_depth < 1) reject("output depth must be >= 1");
  if (cfg.tied_embeddings) {
    if (cfg.source_vocab != cfg.target_vocab)
      reject("tied embeddings require equal source and target vocabularies");
    if (cfg.encoder.embedding != cfg.decoder.embedding)
      reject("tied embeddings require equal source and target embedding sizes");
  }

  EncoderConfig& e = cfg.encoder;
  if (e.stack_depth < 1) reject("encoder stack depth must be >= 1");
  for (int d : e.transition_depths)
    if (d < 1) reject("encoder transition depths must be >= 1");
  auto uniform_one = [&](const char* kind) {
    for (int d : e.transition_depths)
      if (d != 1) reject(std::string(kind) + " encoder requires transition depth 1");
    e.transition_depths.assign(static_cast<size_t>(e.stack_depth), 1);
  };
  switch (e.kind) {
    case EncoderKind::Shallow:
      if (e.stack_depth != 1) reject("shallow encoder requires stack depth 1");
      uniform_one("shallow");
      break;
    case EncoderKind::DeepTransition:
      if (e.stack_depth != 1) reject("deep_transition encoder requires stack depth 1");
      if (e.transition_depths.size() != 1)
        reject("deep_transition encoder takes a single transition depth");
      break;
    case EncoderKind::Alternating:
      uniform_one("alternating");
      break;
    case EncoderKind::Biunidirectional:
      uniform_one("biunidirectional");
      break;
    case EncoderKind::Bideep:
      if (e.transition_depths.size() == 1)
        e.transition_depths.assign(static_cast<size_t>(e.stack_depth), e.transition_depths[0]);
      if (static_cast<int>(e.transition_depths.size()) != e.stack_depth)
        reject("bideep encoder transition depth list must have one entry per level (" +
               std::to_string(e.transition_depths.size()) + " given for depth " +
               std::to_string(e.stack_depth) + ")");
      break;
    case EncoderKind::Mixed:
      if (e.alt_layers < 1 || e.uni_layers < 1)
        reject("mixed encoder needs at least one alternating and one forward-only level");
      if (e.alt_layers + e.uni_layers != e.stack_depth)
        reject("mixed encoder level counts must sum to the stack depth");
      uniform_one("mixed");
      break;
  }

  DecoderConfig& d = cfg.decoder;
  if (d.stack_depth < 1) reject("decoder stack depth must be >= 1");
  for (int t : d.transition_depths)
    if (t < 1) reject("decoder transition depths must be >= 1");
  switch (d.kind) {
    case DecoderKind::Baseline:
      if (d.stack_depth != 1) reject("baseline decoder requires stack depth 1");
      if (d.transition_depths != std::vector<int>{2})
        reject("baseline decoder has transition depth exactly 2");
      break;
    case DecoderKind::DeepTransition:
      if (d.stack_depth != 1) reject("deep_transition decoder requires stack depth 1");
      if (d.transition_depths.size() != 1)
        reject("deep_transition decoder takes a single transition depth");
      if (d.transition_depths[0] < 2)
        reject("deep_transition decoder requires transition depth >= 2");
      break;
    case DecoderKind::Stacked: {
      // base is the two-transition conditional cell; higher depths follow the variant
      int high = (d.variant == CellVariant::Cgru || d.variant == CellVariant::Crgru) ? 2 : 1;
      std::vector<int> expect(static_cast<size_t>(d.stack_depth), high);
      expect[0] = 2;
      if (d.transition_depths != std::vector<int>{2} && d.transition_depths != expect)
        reject("stacked decoder transition depths are fixed by the cell variant");
      d.transition_depths = std::move(expect);
      break;
    }
    case DecoderKind::Bideep: {
      if (static_cast<int>(d.transition_depths.size()) != d.stack_depth)
        reject("bideep decoder transition depth list must have one entry per level (" +
               std::to_string(d.transition_depths.size()) + " given for depth " +
               std::to_string(d.stack_depth) + ")");
      if (d.transition_depths[0] < 2)
        reject("bideep decoder base level needs transition depth >= 2 to host the attention");
      if (d.variant == CellVariant::Cgru || d.variant == CellVariant::Crgru)
        for (size_t k = 1; k < d.transition_depths.size(); ++k)
          if (d.transition_depths[k] < 2)
            reject("conditional higher cells need transition depth >= 2 to consume the context");
      break;
    }
  }
  return cfg;
}

// ---- parameter set ----

class ParameterSet {
 public:
  void add(const std::string& name, Tensor t) {
    if (by_name_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    order_.push_back(name);
    by_name_.emplace(name, std::move(t));
  }

  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& name : order_) n += by_name_.at(name).numel();
    return n;
  }

  void zero_grads() {
    for (const auto& name : order_) by_name_.at(name).zero_grad();
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> by_name_;
};

// Deep copy of all parameter values (fresh tensors, no shared storage).
inline ParameterSet clone_values(const ParameterSet& params) {
  ParameterSet out;
  for (const std::string& name : params.names()) {
    const Tensor& t = params.at(name);
    out.add(name, Tensor::from(t.shape(), t.values(), true));
  }
  return out;
}

// ---- parameter plan ----

enum class InitKind { Orthogonal, UniformFanIn, Zero, One };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init;
};

namespace detail {

inline void plan_ln(std::vector<ParamSpec>& out, const std::string& prefix, int64_t d) {
  out.push_back({prefix + ".gain", {d}, InitKind::One});
  out.push_back({prefix + ".bias", {d}, InitKind::Zero});
}

// One GRU transition block at state width `h`, optional input width `in`
// (0 = no external input).
inline void plan_transition(std::vector<ParamSpec>& out, const std::string& prefix, int64_t in,
                            int64_t h, bool ln) {
  if (in > 0) out.push_back({prefix + ".W", {in, 3 * h}, InitKind::UniformFanIn});
  out.push_back({prefix + ".U", {h, 3 * h}, InitKind::Orthogonal});
  out.push_back({prefix + ".b", {3 * h}, InitKind::Zero});
  if (ln) {
    if (in > 0) plan_ln(out, prefix + ".ln_in", 3 * h);
    plan_ln(out, prefix + ".ln_state", 3 * h);
  }
}

inline void plan_attention(std::vector<ParamSpec>& out, const std::string& prefix, int64_t h_dec,
                           int64_t ann, int64_t a, bool ln) {
  out.push_back({prefix + ".W_state", {h_dec, a}, InitKind::UniformFanIn});
  out.push_back({prefix + ".W_ann", {ann, a}, InitKind::UniformFanIn});
  out.push_back({prefix + ".b", {a}, InitKind::Zero});
  out.push_back({prefix + ".v", {a}, InitKind::UniformFanIn});
  if (ln) {
    plan_ln(out, prefix + ".ln_state", a);
    plan_ln(out, prefix + ".ln_ann", a);
  }
}

}  // namespace detail

// The architecture's full parameter inventory in deterministic order. This is
// the single source of truth for allocation and checkpoint layout;
// count_params below arrives at the same totals by closed form.
inline std::vector<ParamSpec> parameter_plan(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  const int64_t He = cfg.encoder.hidden, Ee = cfg.encoder.embedding;
  const int64_t Hd = cfg.decoder.hidden, Ed = cfg.decoder.embedding;
  const int64_t ann = 2 * He;
  const int64_t A = Hd;  // attention hidden width
  const bool ln = cfg.layer_norm;

  if (cfg.tied_embeddings) {
    out.push_back({"emb.shared", {cfg.source_vocab, Ee}, InitKind::UniformFanIn});
  } else {
    out.push_back({"emb.src", {cfg.source_vocab, Ee}, InitKind::UniformFanIn});
    out.push_back({"emb.tgt", {cfg.target_vocab, Ed}, InitKind::UniformFanIn});
  }

  // encoder: bidirectional parts level by level, then forward-only levels
  const EncoderConfig& e = cfg.encoder;
  int bidir_levels = e.stack_depth, uni_levels = 0;
  if (e.kind == EncoderKind::Biunidirectional) {
    bidir_levels = 1;
    uni_levels = e.stack_depth - 1;
  } else if (e.kind == EncoderKind::Mixed) {
    bidir_levels = e.alt_layers;
    uni_levels = e.uni_layers;
  }
  for (const char* part : {"fwd", "bwd"}) {
    for (int l = 1; l <= bidir_levels; ++l) {
      int depth = e.transition_depths[static_cast<size_t>(l - 1)];
      for (int t = 1; t <= depth; ++t) {
        int64_t in = t > 1 ? 0 : (l == 1 ? Ee : He);
        detail::plan_transition(out,
                                std::string("enc.") + part + ".l" + std::to_string(l) + ".t" +
                                    std::to_string(t),
                                in, He, ln);
      }
    }
  }
  for (int l = bidir_levels + 1; l <= bidir_levels + uni_levels; ++l) {
    int depth = e.transition_depths[static_cast<size_t>(l - 1)];
    for (int t = 1; t <= depth; ++t) {
      int64_t in = t > 1 ? 0 : ann;
      detail::plan_transition(out, "enc.uni.l" + std::to_string(l) + ".t" + std::to_string(t), in,
                              ann, ln);
    }
  }

  // decoder
  const DecoderConfig& d = cfg.decoder;
  for (int k = 1; k <= d.stack_depth; ++k) {
    out.push_back({"dec.init.l" + std::to_string(k) + ".W", {ann, Hd}, InitKind::UniformFanIn});
    out.push_back({"dec.init.l" + std::to_string(k) + ".b", {Hd}, InitKind::Zero});
  }
  for (int k = 1; k <= d.stack_depth; ++k) {
    const int depth = d.transition_depths[static_cast<size_t>(k - 1)];
    const bool conditional =
        k == 1 || d.variant == CellVariant::Cgru || d.variant == CellVariant::Crgru;
    for (int t = 1; t <= depth; ++t) {
      int64_t in = 0;
      if (t == 1)
        in = k == 1 ? Ed : (d.variant == CellVariant::Rgru ? Hd + ann : Hd);
      else if (t == 2 && conditional)
        in = ann;  // context vector
      detail::plan_transition(
          out, "dec.l" + std::to_string(k) + ".t" + std::to_string(t), in, Hd, ln);
    }
  }
  detail::plan_attention(out, "dec.att.l1", Hd, ann, A, ln);
  if (d.variant == CellVariant::Cgru)
    for (int k = 2; k <= d.stack_depth; ++k)
      detail::plan_attention(out, "dec.att.l" + std::to_string(k), Hd, ann, A, ln);

  const int64_t O = Ed;  // output-network hidden width
  int64_t in0 = cfg.output_inputs == OutputInputs::Full ? Hd + Ed + ann : Hd;
  for (int i = 1; i <= d.output_depth; ++i) {
    std::string prefix = "dec.out.h" + std::to_string(i);
    out.push_back({prefix + ".W", {i == 1 ? in0 : O, O}, InitKind::UniformFanIn});
    out.push_back({prefix + ".b", {O}, InitKind::Zero});
    if (ln) detail::plan_ln(out, prefix + ".ln", O);
  }
  out.push_back({"dec.out.proj.W", {O, cfg.target_vocab}, InitKind::UniformFanIn});
  out.push_back({"dec.out.proj.b", {cfg.target_vocab}, InitKind::Zero});
  return out;
}

namespace detail {

// Orthogonalizes each rows x rows block along the columns of a [rows x cols]
// matrix via modified Gram-Schmidt with one re-orthogonalization pass.
inline void fill_orthogonal(std::vector<Real>& m, int64_t rows, int64_t cols, Rng& rng) {
  std::vector<double> block(static_cast<size_t>(rows * rows));
  for (int64_t b = 0; b < cols / rows; ++b) {
    for (auto& x : block) x = rng.normal();
    for (int64_t j = 0; j < rows; ++j) {
      for (int pass = 0; pass < 2; ++pass)
        for (int64_t p = 0; p < j; ++p) {
          double dot = 0;
          for (int64_t i = 0; i < rows; ++i) dot += block[static_cast<size_t>(i * rows + j)] *
                                                    block[static_cast<size_t>(i * rows + p)];
          for (int64_t i = 0; i < rows; ++i)
            block[static_cast<size_t>(i * rows + j)] -=
                dot * block[static_cast<size_t>(i * rows + p)];
        }
      double norm = 0;
      for (int64_t i = 0; i < rows; ++i)
        norm += block[static_cast<size_t>(i * rows + j)] * block[static_cast<size_t>(i * rows + j)];
      norm = std::sqrt(norm);
      if (norm < 1e-12) norm = 1;  // essentially impossible with Gaussian draws
      for (int64_t i = 0; i < rows; ++i) block[static_cast<size_t>(i * rows + j)] /= norm;
    }
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < rows; ++j)
        m[static_cast<size_t>(i * cols + b * rows + j)] =
            static_cast<Real>(block[static_cast<size_t>(i * rows + j)]);
  }
}

}  // namespace detail

// Materializes the plan. Each tensor draws from its own seed stream keyed by
// name, so values do not depend on plan order.
inline ParameterSet init_params(const ModelConfig& cfg, uint64_t seed) {
  ParameterSet params;
  for (const ParamSpec& spec : parameter_plan(cfg)) {
    Tensor t = Tensor::zeros(spec.shape, /*requires_grad=*/true);
    Rng rng(seed_stream(seed, spec.name));
    auto& v = t.values();
    switch (spec.init) {
      case InitKind::Zero:
        break;
      case InitKind::One:
        for (auto& x : v) x = Real(1);
        break;
      case InitKind::UniformFanIn: {
        int64_t fan_in = spec.shape.size() == 2 ? spec.shape[0] : spec.shape.back();
        Real a = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(fan_in)));
        for (auto& x : v) x = static_cast<Real>(rng.uniform(-a, a));
        break;
      }
      case InitKind::Orthogonal:
        detail::fill_orthogonal(v, spec.shape[0], spec.shape[1], rng);
        break;
    }
    params.add(spec.name, std::move(t));
  }
  return params;
}

inline ParameterSet init_params(const ModelConfig& cfg) { return init_params(cfg, cfg.seed); }

// ---- closed-form parameter counting ----

struct ParamCount {
  int64_t total = 0;
  std::map<std::string, int64_t> parts;

  void add(const std::string& part, int64_t n) {
    parts[part] += n;
    total += n;
  }
};

// Analytic scalar counts per component. Kept independent of parameter_plan:
// these are closed-form expressions in the config dimensions, and the test
// suite checks them against the allocated totals.
inline ParamCount count_params(const ModelConfig& cfg) {
  ParamCount c;
  const int64_t He = cfg.encoder.hidden, Ee = cfg.encoder.embedding;
  const int64_t Hd = cfg.decoder.hidden, Ed = cfg.decoder.embedding;
  const int64_t Vs = cfg.source_vocab, Vt = cfg.target_vocab;
  const int64_t ann = 2 * He, A = Hd, O = Ed;
  const int64_t ln = cfg.layer_norm ? 1 : 0;

  // one transition: 3h*(in + h + 1), plus 2*3h per layer-normalized contribution
  auto transition = [ln](int64_t in, int64_t h) {
    return 3 * h * (in + h + 1) + ln * (6 * h + (in > 0 ? 6 * h : 0));
  };
  auto attention_set = [&] { return Hd * A + ann * A + 2 * A + ln * 4 * A; };

  c.add("embeddings", cfg.tied_embeddings ? Vs * Ee : Vs * Ee + Vt * Ed);

  const EncoderConfig& e = cfg.encoder;
  int64_t enc = 0;
  switch (e.kind) {
    case EncoderKind::Shallow:
      enc = 2 * transition(Ee, He);
      break;
    case EncoderKind::DeepTransition:
      enc = 2 * (transition(Ee, He) + (e.transition_depths[0] - 1) * transition(0, He));
      break;
    case EncoderKind::Alternating:
      enc = 2 * (transition(Ee, He) + (e.stack_depth - 1) * transition(He, He));
      break;
    case EncoderKind::Biunidirectional:
      enc = 2 * transition(Ee, He) + (e.stack_depth - 1) * transition(ann, ann);
      break;
    case EncoderKind::Bideep:
      for (int l = 0; l < e.stack_depth; ++l)
        enc += 2 * (transition(l == 0 ? Ee : He, He) +
                    (e.transition_depths[static_cast<size_t>(l)] - 1) * transition(0, He));
      break;
    case EncoderKind::Mixed:
      enc = 2 * (transition(Ee, He) + (e.alt_layers - 1) * transition(He, He)) +
            e.uni_layers * transition(ann, ann);
      break;
  }
  c.add("encoder", enc);

  const DecoderConfig& d = cfg.decoder;
  c.add("decoder.init", d.stack_depth * (ann * Hd + Hd));

  int64_t cells = 0;
  for (int k = 1; k <= d.stack_depth; ++k) {
    const int depth = d.transition_depths[static_cast<size_t>(k - 1)];
    const bool conditional =
        k == 1 || d.variant == CellVariant::Cgru || d.variant == CellVariant::Crgru;
    const int64_t in1 = k == 1 ? Ed : (d.variant == CellVariant::Rgru ? Hd + ann : Hd);
    cells += transition(in1, Hd);
    if (depth >= 2) cells += transition(conditional ? ann : 0, Hd);
    cells += (depth - 2 > 0 ? depth - 2 : 0) * transition(0, Hd);
  }
  c.add("decoder.cells", cells);

  int64_t att_sets = 1 + (d.variant == CellVariant::Cgru ? d.stack_depth - 1 : 0);
  c.add("decoder.attention", att_sets * attention_set());

  int64_t in0 = cfg.output_inputs == OutputInputs::Full ? Hd + Ed + ann : Hd;
  int64_t outnet = in0 * O + O + (d.output_depth - 1) * (O * O + O) +
                   ln * d.output_depth * 2 * O + O * Vt + Vt;
  c.add("decoder.output", outnet);
  return c;
}

}  // namespace deeprnmt
