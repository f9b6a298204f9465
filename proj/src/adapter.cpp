#include "trajkit/adapter.hpp"

#include <cmath>

namespace trajkit {

namespace {

void check_mask_shape(const SegmentMask& mask, const Tensor3& h) {
  if (mask.batch != h.b || mask.seq_len() != h.l)
    throw DimensionMismatch("mask is " + std::to_string(mask.batch) + "x" +
                            std::to_string(mask.seq_len()) + ", tensor is " +
                            std::to_string(h.b) + "x" + std::to_string(h.l));
}

void check_finite(const Tensor3& t, const char* what) {
  for (double x : t.v)
    if (!std::isfinite(x)) throw NonFinite(std::string(what) + " contains a non-finite value");
}

}  // namespace

Tensor3 modulation_delta(const SegmentMask& mask, const AdapterParams& params) {
  size_t dim = params.dim();
  for (const auto& g : params.gamma)
    if (g.size() != dim) throw DimensionMismatch("gamma channels disagree on dimension");
  Tensor3 delta(mask.batch, mask.seq_len(), dim);
  for (size_t b = 0; b < mask.batch; ++b) {
    for (size_t t = 0; t < mask.seq_len(); ++t) {
      for (size_t i = 0; i < 3; ++i) {
        if (!mask.at(b, t, i)) continue;
        for (size_t c = 0; c < dim; ++c) delta.at(b, t, c) += params.gamma[i][c];
      }
    }
  }
  return delta;
}

Tensor3 apply_modulation(const Tensor3& h_ffn, const Tensor3& delta) {
  if (!h_ffn.same_shape(delta))
    throw DimensionMismatch("h_ffn and delta shapes differ");
  Tensor3 out = h_ffn;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = h_ffn.v[i] * (1.0 + delta.v[i]);
  check_finite(out, "modulated output");
  return out;
}

Tensor3 modulate(const Tensor3& h_ffn, const SegmentMask& mask, const AdapterParams& params) {
  check_mask_shape(mask, h_ffn);
  if (params.dim() != h_ffn.d)
    throw DimensionMismatch("gamma dimension " + std::to_string(params.dim()) +
                            " does not match tensor dimension " + std::to_string(h_ffn.d));
  return apply_modulation(h_ffn, modulation_delta(mask, params));
}

Tensor3 layer_forward(const Tensor3& h_attn,
                      const std::function<Tensor3(const Tensor3&)>& norm,
                      const std::function<Tensor3(const Tensor3&)>& ffn,
                      const SegmentMask& mask, const AdapterParams& params) {
  Tensor3 h_ffn = ffn(norm(h_attn));
  if (!h_ffn.same_shape(h_attn))
    throw DimensionMismatch("ffn must preserve the input shape");
  Tensor3 mod = modulate(h_ffn, mask, params);
  Tensor3 out = h_attn;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += mod.v[i];
  check_finite(out, "layer output");
  return out;
}

ParameterStats parameter_stats(uint64_t layers, uint64_t dim, uint64_t ffn_mult,
                               uint64_t lora_rank) {
  ParameterStats s;
  s.layers = layers;
  s.dim = dim;
  s.adapter_per_layer = 3 * dim;
  s.adapter_params = s.adapter_per_layer * layers;
  // Gate, up and down projections: two dim x (mult*dim) plus one (mult*dim) x dim.
  s.ffn_params = 3 * ffn_mult * dim * dim * layers;
  s.lora_per_layer = 2 * lora_rank * dim;
  s.rho = s.ffn_params == 0 ? 0.0
                            : static_cast<double>(s.adapter_params) /
                                  static_cast<double>(s.ffn_params);
  return s;
}

double overhead_estimate(uint64_t batch, uint64_t seq_len, uint64_t text_len, uint64_t dim) {
  if (batch == 0 || seq_len == 0 || dim == 0) return 0.0;
  double num = static_cast<double>(batch) * static_cast<double>(seq_len) *
                   static_cast<double>(dim) +
               static_cast<double>(batch) * static_cast<double>(text_len);
  double den = static_cast<double>(batch) * static_cast<double>(seq_len) *
               static_cast<double>(dim) * static_cast<double>(dim);
  return num / den;
}

AdapterParams gamma_gradient(const Tensor3& grad_out, const Tensor3& h_ffn,
                             const SegmentMask& mask) {
  if (!grad_out.same_shape(h_ffn))
    throw DimensionMismatch("grad_out and h_ffn shapes differ");
  check_mask_shape(mask, h_ffn);
  AdapterParams g = AdapterParams::zeros(h_ffn.d);
  for (size_t b = 0; b < h_ffn.b; ++b)
    for (size_t t = 0; t < h_ffn.l; ++t)
      for (size_t i = 0; i < 3; ++i) {
        if (!mask.at(b, t, i)) continue;
        for (size_t c = 0; c < h_ffn.d; ++c)
          g.gamma[i][c] += grad_out.at(b, t, c) * h_ffn.at(b, t, c);
      }
  return g;
}

GradCheckResult gradient_check(const LossFn& loss, const Tensor3& h_ffn, const SegmentMask& mask,
                               const AdapterParams& params, double epsilon, double tolerance) {
  Tensor3 out = modulate(h_ffn, mask, params);
  Tensor3 grad_out = loss.grad(out);
  if (!grad_out.same_shape(out)) throw DimensionMismatch("loss gradient shape differs");
  AdapterParams analytic = gamma_gradient(grad_out, h_ffn, mask);

  GradCheckResult r;
  AdapterParams probe = params;
  for (size_t i = 0; i < 3; ++i) {
    for (size_t c = 0; c < h_ffn.d; ++c) {
      double saved = probe.gamma[i][c];
      probe.gamma[i][c] = saved + epsilon;
      double up = loss.value(modulate(h_ffn, mask, probe));
      probe.gamma[i][c] = saved - epsilon;
      double down = loss.value(modulate(h_ffn, mask, probe));
      probe.gamma[i][c] = saved;
      double numeric = (up - down) / (2.0 * epsilon);
      if (!std::isfinite(numeric)) throw NonFinite("finite-difference slope is non-finite");
      double a = analytic.gamma[i][c];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      double rel = std::fabs(a - numeric) / denom;
      if (rel > r.max_rel_error) r.max_rel_error = rel;
    }
  }
  r.passed = r.max_rel_error < tolerance;
  return r;
}

}  // namespace trajkit
