#include <doctest.h>

#include <cmath>
#include <cstring>

#include "trajkit/adapter.hpp"
#include "trajkit/rng.hpp"

using namespace trajkit;

namespace {

SegmentMask make_mask(size_t batch, size_t seq_len, const std::vector<int>& channels) {
  SegmentMask m;
  m.batch = batch;
  m.visual_len = 0;
  m.text_len = seq_len;
  m.data.assign(batch * seq_len * 3, 0);
  for (size_t b = 0; b < batch; ++b)
    for (size_t t = 0; t < seq_len; ++t)
      if (channels[t] >= 0) m.set(b, t, static_cast<size_t>(channels[t]), 1);
  return m;
}

Tensor3 random_tensor(Rng& rng, size_t b, size_t l, size_t d, double scale = 1.0) {
  Tensor3 t(b, l, d);
  for (double& x : t.v) x = (rng.uniform() * 2.0 - 1.0) * scale;
  return t;
}

SegmentMask random_mask(Rng& rng, size_t b, size_t l) {
  std::vector<int> ch(l);
  for (size_t t = 0; t < l; ++t) ch[t] = static_cast<int>(rng.bounded(4)) - 1;  // -1..2
  return make_mask(b, l, ch);
}

AdapterParams random_params(Rng& rng, size_t d, double scale = 0.5) {
  AdapterParams p = AdapterParams::zeros(d);
  for (auto& g : p.gamma)
    for (double& x : g) x = (rng.uniform() * 2.0 - 1.0) * scale;
  return p;
}

bool bitwise_equal(const Tensor3& a, const Tensor3& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("delta scatters gamma by channel") {
  // tokens: thought, action, action-input, unmasked
  SegmentMask m = make_mask(1, 4, {0, 1, 2, -1});
  AdapterParams p = AdapterParams::zeros(2);
  p.gamma[0] = {0.1, 0.2};
  p.gamma[1] = {0.3, 0.4};
  p.gamma[2] = {0.5, 0.6};
  Tensor3 delta = modulation_delta(m, p);
  CHECK(delta.at(0, 0, 0) == 0.1);
  CHECK(delta.at(0, 0, 1) == 0.2);
  CHECK(delta.at(0, 1, 0) == 0.3);
  CHECK(delta.at(0, 1, 1) == 0.4);
  CHECK(delta.at(0, 2, 0) == 0.5);
  CHECK(delta.at(0, 2, 1) == 0.6);
  CHECK(delta.at(0, 3, 0) == 0.0);
  CHECK(delta.at(0, 3, 1) == 0.0);
}

TEST_CASE("modulation multiplies by one plus delta") {
  SegmentMask m = make_mask(1, 1, {1});
  AdapterParams p = AdapterParams::zeros(2);
  p.gamma[1] = {1.0, -0.5};
  Tensor3 h(1, 1, 2);
  h.at(0, 0, 0) = 3.0;
  h.at(0, 0, 1) = 4.0;
  Tensor3 out = modulate(h, m, p);
  CHECK(out.at(0, 0, 0) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(out.at(0, 0, 1) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("hand-checked single-token layer forward") {
  // Identity norm, ffn doubles its input, action-channel gamma of ones.
  SegmentMask m = make_mask(1, 1, {1});
  AdapterParams p = AdapterParams::zeros(2);
  p.gamma[1] = {1.0, 1.0};
  Tensor3 h(1, 1, 2);
  h.at(0, 0, 0) = 1.5;
  h.at(0, 0, 1) = -2.0;
  auto identity = [](const Tensor3& x) { return x; };
  auto doubler = [](const Tensor3& x) {
    Tensor3 y = x;
    for (double& v : y.v) v *= 2.0;
    return y;
  };
  // out = h + (2h) * (1 + 1) = h + 4h = 5h
  Tensor3 out = layer_forward(h, identity, doubler, m, p);
  CHECK(out.at(0, 0, 0) == doctest::Approx(7.5).epsilon(1e-15));
  CHECK(out.at(0, 0, 1) == doctest::Approx(-10.0).epsilon(1e-15));
}

TEST_CASE("zero gammas leave the layer output bitwise identical") {
  Rng rng(820);
  auto norm = [](const Tensor3& x) {
    // Per-token RMS-style scaling, nonlinear enough to be a real test.
    Tensor3 y = x;
    for (size_t b = 0; b < x.b; ++b)
      for (size_t t = 0; t < x.l; ++t) {
        double ss = 0.0;
        for (size_t c = 0; c < x.d; ++c) ss += x.at(b, t, c) * x.at(b, t, c);
        double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.d) + 1e-6);
        for (size_t c = 0; c < x.d; ++c) y.at(b, t, c) = x.at(b, t, c) * inv;
      }
    return y;
  };
  auto ffn = [](const Tensor3& x) {
    Tensor3 y = x;
    for (double& v : y.v) v = std::tanh(1.3 * v) + 0.25 * v;
    return y;
  };
  for (int iter = 0; iter < 50; ++iter) {
    size_t b = 1 + rng.bounded(3), l = 1 + rng.bounded(6), d = 1 + rng.bounded(8);
    Tensor3 h = random_tensor(rng, b, l, d, 2.0);
    SegmentMask m = random_mask(rng, b, l);
    AdapterParams zero = AdapterParams::zeros(d);
    Tensor3 adapted = layer_forward(h, norm, ffn, m, zero);

    Tensor3 plain = ffn(norm(h));
    for (size_t i = 0; i < plain.v.size(); ++i) plain.v[i] += h.v[i];
    CHECK(bitwise_equal(adapted, plain));

    // modulate with zero params is the identity on h_ffn, bitwise.
    Tensor3 hf = random_tensor(rng, b, l, d, 3.0);
    CHECK(bitwise_equal(modulate(hf, m, zero), hf));
  }
}

TEST_CASE("modulation is linear in gamma and local to masked tokens") {
  Rng rng(77);
  Tensor3 h = random_tensor(rng, 2, 5, 3);
  SegmentMask m = make_mask(2, 5, {0, -1, 1, 2, 0});
  AdapterParams p1 = random_params(rng, 3);
  AdapterParams p2 = random_params(rng, 3);
  AdapterParams sum = AdapterParams::zeros(3);
  for (int i = 0; i < 3; ++i)
    for (size_t c = 0; c < 3; ++c) sum.gamma[i][c] = p1.gamma[i][c] + p2.gamma[i][c];

  Tensor3 d1 = modulation_delta(m, p1);
  Tensor3 d2 = modulation_delta(m, p2);
  Tensor3 ds = modulation_delta(m, sum);
  for (size_t i = 0; i < ds.v.size(); ++i)
    CHECK(ds.v[i] == doctest::Approx(d1.v[i] + d2.v[i]).epsilon(1e-12));

  // Unmasked token (index 1) is never touched, whatever the params.
  Tensor3 out = modulate(h, m, p1);
  for (size_t b = 0; b < 2; ++b)
    for (size_t c = 0; c < 3; ++c) CHECK(out.at(b, 1, c) == h.at(b, 1, c));
}

TEST_CASE("empty batch is accepted") {
  SegmentMask m = make_mask(0, 3, {0, 1, 2});
  m.batch = 0;
  AdapterParams p = AdapterParams::zeros(4);
  Tensor3 h(0, 3, 4);
  Tensor3 out = modulate(h, m, p);
  CHECK(out.v.empty());
}

TEST_CASE("shape and finiteness guards") {
  SegmentMask m = make_mask(1, 2, {0, 1});
  AdapterParams p = AdapterParams::zeros(3);
  Tensor3 wrong_seq(1, 3, 3);
  CHECK_THROWS_AS(modulate(wrong_seq, m, p), DimensionMismatch);
  AdapterParams wrong_dim = AdapterParams::zeros(2);
  Tensor3 h(1, 2, 3);
  CHECK_THROWS_AS(modulate(h, m, wrong_dim), DimensionMismatch);
  Tensor3 bad = h;
  bad.at(0, 0, 0) = std::nan("");
  CHECK_THROWS_AS(modulate(bad, m, p), NonFinite);
}

TEST_CASE("analytic gamma gradient matches a hand derivation") {
  // Single token on the thought channel: dL/dgamma_0[c] = grad_out[c] * h_ffn[c].
  SegmentMask m = make_mask(1, 1, {0});
  Tensor3 h(1, 1, 2);
  h.at(0, 0, 0) = 2.0;
  h.at(0, 0, 1) = -3.0;
  Tensor3 g(1, 1, 2);
  g.at(0, 0, 0) = 0.5;
  g.at(0, 0, 1) = 4.0;
  AdapterParams grad = gamma_gradient(g, h, m);
  CHECK(grad.gamma[0][0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(grad.gamma[0][1] == doctest::Approx(-12.0).epsilon(1e-15));
  CHECK(grad.gamma[1][0] == 0.0);
  CHECK(grad.gamma[2][1] == 0.0);
}

TEST_CASE("finite differences confirm the gradient on random fixtures") {
  Rng rng(4242);
  LossFn loss;
  loss.value = [](const Tensor3& out) {
    double s = 0.0;
    for (double v : out.v) s += v * v;
    return 0.5 * s;
  };
  loss.grad = [](const Tensor3& out) { return out; };

  for (int iter = 0; iter < 5; ++iter) {
    size_t b = 1 + rng.bounded(2), l = 2 + rng.bounded(5), d = 2 + rng.bounded(3);
    Tensor3 h = random_tensor(rng, b, l, d);
    SegmentMask m = random_mask(rng, b, l);
    AdapterParams p = random_params(rng, d, 0.3);
    GradCheckResult r = gradient_check(loss, h, m, p);
    INFO("iter ", iter, " max_rel_error ", r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("gradient is zero for channels no token selects") {
  Rng rng(99);
  Tensor3 h = random_tensor(rng, 2, 4, 3);
  Tensor3 g = random_tensor(rng, 2, 4, 3);
  SegmentMask m = make_mask(2, 4, {0, 0, -1, 0});  // only thought tokens
  AdapterParams grad = gamma_gradient(g, h, m);
  for (size_t c = 0; c < 3; ++c) {
    CHECK(grad.gamma[1][c] == 0.0);
    CHECK(grad.gamma[2][c] == 0.0);
  }
}

TEST_CASE("parameter accounting at reference scale") {
  ParameterStats s = parameter_stats(32, 4096);
  CHECK(s.adapter_per_layer == 12288);
  CHECK(s.adapter_params == 393216);
  CHECK(s.ffn_params == 6442450944ULL);
  CHECK(s.rho == doctest::Approx(0.000061).epsilon(0.02));
  CHECK(std::fabs(s.rho - 1.0 / (4.0 * 4096.0)) < 1e-15);
  CHECK(s.lora_per_layer == 65536);
}

TEST_CASE("parameter accounting in the degenerate case") {
  ParameterStats s = parameter_stats(1, 1);
  CHECK(s.adapter_params == 3);
  CHECK(s.ffn_params == 12);
  CHECK(s.rho == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("runtime overhead estimate") {
  CHECK(overhead_estimate(1, 1, 0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  double base = overhead_estimate(8, 4096, 2048, 4096);
  CHECK(base == doctest::Approx(0.000244).epsilon(0.01));
  // Doubling the model width roughly halves the relative cost.
  double wide = overhead_estimate(8, 4096, 2048, 8192);
  CHECK(wide == doctest::Approx(base / 2.0).epsilon(0.01));
}
