#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/react.hpp"

namespace trajkit {

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense batch x seq x dim tensor, row-major doubles.
struct Tensor3 {
  size_t b = 0, l = 0, d = 0;
  std::vector<double> v;

  Tensor3() = default;
  Tensor3(size_t b_, size_t l_, size_t d_, double fill = 0.0)
      : b(b_), l(l_), d(d_), v(b_ * l_ * d_, fill) {}

  double& at(size_t bi, size_t li, size_t di) { return v[(bi * l + li) * d + di]; }
  double at(size_t bi, size_t li, size_t di) const { return v[(bi * l + li) * d + di]; }
  bool same_shape(const Tensor3& o) const { return b == o.b && l == o.l && d == o.d; }
};

// Per-channel modulation vectors, one per reasoning segment kind.
struct AdapterParams {
  std::vector<double> gamma[3];  // 0 thought, 1 action, 2 action input

  static AdapterParams zeros(size_t dim) {
    AdapterParams p;
    for (auto& g : p.gamma) g.assign(dim, 0.0);
    return p;
  }
  size_t dim() const { return gamma[0].size(); }
};

// Delta[b,t,c] = sum_i mask[b,t,i] * gamma_i[c].
Tensor3 modulation_delta(const SegmentMask& mask, const AdapterParams& params);

// h_ffn ⊙ (1 + delta), elementwise.
Tensor3 apply_modulation(const Tensor3& h_ffn, const Tensor3& delta);

// Convenience: modulated FFN output for a mask and parameter set.
Tensor3 modulate(const Tensor3& h_ffn, const SegmentMask& mask, const AdapterParams& params);

// One transformer layer tail with the modulation applied inside the FFN
// residual branch: out = h_attn + modulate(ffn(norm(h_attn))).
Tensor3 layer_forward(const Tensor3& h_attn,
                      const std::function<Tensor3(const Tensor3&)>& norm,
                      const std::function<Tensor3(const Tensor3&)>& ffn,
                      const SegmentMask& mask, const AdapterParams& params);

// --- parameter accounting ---

struct ParameterStats {
  uint64_t layers = 0;
  uint64_t dim = 0;
  uint64_t adapter_params = 0;     // 3 * layers * dim
  uint64_t adapter_per_layer = 0;  // 3 * dim
  uint64_t ffn_params = 0;         // three dim x (mult*dim) matrices per layer
  uint64_t lora_per_layer = 0;     // 2 * rank * dim
  double rho = 0.0;                // adapter_params / ffn_params
};

ParameterStats parameter_stats(uint64_t layers, uint64_t dim, uint64_t ffn_mult = 4,
                               uint64_t lora_rank = 8);

// Relative cost of the mask-scatter bookkeeping next to the FFN matmuls:
// (B*L_seq*d + B*L_t) / (B*L_seq*d^2).
double overhead_estimate(uint64_t batch, uint64_t seq_len, uint64_t text_len, uint64_t dim);

// --- gradient check ---

struct LossFn {
  // Scalar loss over the modulated output.
  std::function<double(const Tensor3&)> value;
  // dLoss/dOutput at the same point.
  std::function<Tensor3(const Tensor3&)> grad;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  bool passed = false;
};

// Compares the analytic gamma gradient against central finite differences.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckResult gradient_check(const LossFn& loss, const Tensor3& h_ffn, const SegmentMask& mask,
                               const AdapterParams& params, double epsilon = 1e-5,
                               double tolerance = 1e-6);

// Analytic dLoss/dgamma given dLoss/dOutput. Exposed for tests.
AdapterParams gamma_gradient(const Tensor3& grad_out, const Tensor3& h_ffn,
                             const SegmentMask& mask);

}  // namespace trajkit
