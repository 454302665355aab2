#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deeprnmt/decoder.hpp"
#include "deeprnmt/model.hpp"
#include "deeprnmt/tensor.hpp"

namespace deeprnmt {

struct GradCheckEntry {
  std::string name;
  double max_err = 0;  // worst |analytic - numeric| / max(1, |analytic|, |numeric|)
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst_err = 0;
  std::string worst_name;

  bool passed(double tolerance) const { return worst_err < tolerance; }
};

// Central-difference gradient check. `fn` must rebuild the scalar loss from
// the current leaf values on every call; the numeric side only ever runs it
// forward, so the check is independent of the backward rules it verifies.
inline GradCheckReport grad_check(const std::function<Tensor()>& fn,
                                  const std::vector<std::pair<std::string, Tensor>>& leaves,
                                  double eps = 1e-5) {
  for (auto& [name, t] : leaves) const_cast<Tensor&>(t).zero_grad();

  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = fn();
    tape.backward(loss);
  }
  std::vector<std::vector<Real>> analytic;
  analytic.reserve(leaves.size());
  for (auto& [name, t] : leaves)
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<Real>(t.values().size(), Real(0)));

  GradCheckReport report;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor t = leaves[li].second;
    GradCheckEntry entry{leaves[li].first, 0};
    auto& v = t.values();
    for (size_t i = 0; i < v.size(); ++i) {
      const Real saved = v[i];
      v[i] = saved + static_cast<Real>(eps);
      const double fp = fn().item();
      v[i] = saved - static_cast<Real>(eps);
      const double fm = fn().item();
      v[i] = saved;
      const double numeric = (fp - fm) / (2 * eps);
      const double a = analytic[li][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      entry.max_err = std::max(entry.max_err, std::abs(a - numeric) / denom);
    }
    if (entry.max_err > report.worst_err) {
      report.worst_err = entry.max_err;
      report.worst_name = entry.name;
    }
    report.entries.push_back(std::move(entry));
  }
  for (auto& [name, t] : leaves) const_cast<Tensor&>(t).zero_grad();
  return report;
}

// Moves every parameter to a generic position in weight space. Freshly
// initialized models sit at degenerate points (zero biases give zero-variance
// layer-norm inputs) where finite differences are ill-conditioned even though
// the analytic gradient is fine.
inline void randomize_params(ParameterSet& params, uint64_t seed, double scale = 0.5) {
  for (const std::string& name : params.names()) {
    Rng rng(seed_stream(seed, name));
    for (Real& x : params.at(name).values())
      x = static_cast<Real>(rng.uniform(-scale, scale));
  }
}

// Checks d(sum of log probs)/d(every parameter) of a teacher-forced scoring
// pass against finite differences.
inline GradCheckReport grad_check_model(Model& m, const std::vector<int64_t>& source,
                                        const std::vector<int64_t>& target, double eps = 1e-5) {
  auto fn = [&]() -> Tensor {
    Mask mask(source.size(), 1);
    SourceAnnotations src = m.encoder.encode(source, mask);
    DecoderNet::Attended att = m.decoder.attend(src);
    std::vector<Tensor> lp = score_tokens(m.decoder, att, m.decoder.init_state(src), target);
    Tensor total = lp[0];
    for (size_t i = 1; i < lp.size(); ++i) total = add(total, lp[i]);
    return total;
  };
  std::vector<std::pair<std::string, Tensor>> leaves;
  for (const std::string& name : m.params.names()) leaves.emplace_back(name, m.params.at(name));
  return grad_check(fn, leaves, eps);
}

}  // namespace deeprnmt
