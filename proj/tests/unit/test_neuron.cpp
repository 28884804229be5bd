#include "doctest.h"

#include <random>

#include "mfpsn/baseline.hpp"
#include "mfpsn/network.hpp"
#include "mfpsn/neuron.hpp"
#include "oracles.hpp"

using namespace mfpsn;

namespace {

NeuronConfig config(std::size_t C, std::size_t k, std::size_t d,
                    WeightSharing sharing = WeightSharing::ChannelWise,
                    bool quantized = false) {
  NeuronConfig cfg;
  cfg.channels = C;
  cfg.order = k;
  cfg.dilation = d;
  cfg.sharing = sharing;
  cfg.quantized = quantized;
  return cfg;
}

ThresholdParams unit_threshold(std::size_t C, double gamma, double beta) {
  ThresholdParams thr = ThresholdParams::initial(C);
  std::fill(thr.gamma.begin(), thr.gamma.end(), gamma);
  std::fill(thr.beta.begin(), thr.beta.end(), beta);
  std::fill(thr.running_var.begin(), thr.running_var.end(), 1.0 - thr.eps);
  return thr;
}

} // namespace

TEST_SUITE("neuron") {

TEST_CASE("sawtooth schedule") {
  CHECK(sawtooth_schedule(6) == std::vector<std::size_t>{1, 2, 3, 1, 2, 3});
  CHECK(sawtooth_schedule(1) == std::vector<std::size_t>{1});
  CHECK(sawtooth_schedule(4) == std::vector<std::size_t>{1, 2, 3, 1});
  CHECK_THROWS_AS(sawtooth_schedule(0), Error);
}

TEST_CASE("receptive field") {
  const std::vector<std::size_t> k3{2, 2, 2}, d1{1, 1, 1}, saw{1, 2, 3};
  CHECK(receptive_field(k3, d1) == 4);
  CHECK(receptive_field(k3, saw) == 7);
  const std::vector<std::size_t> one{1};
  CHECK(receptive_field(one, one) == 1);
  CHECK_THROWS_AS(receptive_field(k3, one), Error);
}

TEST_CASE("charge examples") {
  NeuronParams p{Matrix(1, 2, {0.5, 1.0})};
  CHECK(oracle::values(charge(oracle::series({1, 0, 1}), p, config(1, 2, 1))) ==
        std::vector<double>{1.0, 0.5, 1.0});
  NeuronParams id{Matrix(1, 1, std::vector<double>{1.0})};
  CHECK(oracle::values(charge(oracle::series({2, -3}), id, config(1, 1, 1))) ==
        std::vector<double>{2, -3});
  NeuronParams ones{Matrix(1, 2, {1.0, 1.0})};
  CHECK(oracle::values(charge(oracle::series({1, 2, 3, 4}), ones,
                              config(1, 2, 2))) ==
        std::vector<double>{1, 2, 4, 6});
  CHECK_THROWS_AS(charge(oracle::series({1, 2}), ones, config(2, 2, 1)), Error);
}

TEST_CASE("charge is independent of the engine") {
  std::mt19937_64 rng(21);
  const TensorD x = oracle::random_tensor(Shape{11, 2, 4, {}}, Layout::TimeLast, rng);
  const NeuronConfig cfg = config(4, 3, 2);
  NeuronParams p{oracle::random_matrix(4, 3, rng)};
  const TensorD ref = charge(x, p, cfg);
  for (EngineKind k : {EngineKind::MatMul, EngineKind::BlockedDirect})
    CHECK(oracle::max_rel_diff(charge(x, p, cfg, EngineChoice{k, 8}), ref) < 1e-12);
  const NeuronConfig qcfg = config(4, 3, 2, WeightSharing::ChannelWise, true);
  const TensorD q = charge(x, p, qcfg, EngineChoice{EngineKind::ShiftInt, 32});
  CHECK(oracle::values(q) ==
        oracle::values(charge(x, NeuronParams{dequantize(quantize_pow2(p.weights))},
                              cfg)));
}

TEST_CASE("shared weights reproduce the sliding PSN bit for bit") {
  std::mt19937_64 rng(22);
  for (int iter = 0; iter < 20; ++iter) {
    const TensorD x = oracle::random_tensor(Shape{9, 3, 5, {}}, Layout::TimeFirst, rng);
    NeuronParams p{oracle::random_matrix(1, 4, rng)};
    const TensorD h =
        charge(x, p, config(5, 4, 1, WeightSharing::SharedAcrossChannels));
    CHECK(oracle::values(h) == oracle::values(sliding_psn_charge(x, p.weights.values)));
  }
}

TEST_CASE("causality and channel independence") {
  std::mt19937_64 rng(23);
  const std::size_t T = 10, C = 3;
  const TensorD x = oracle::random_tensor(Shape{T, 1, C, {}}, Layout::TimeFirst, rng);
  const NeuronConfig cfg = config(C, 3, 2);
  NeuronParams p{oracle::random_matrix(C, 3, rng)};
  const TensorD base = charge(x, p, cfg);
  for (std::size_t tp = 0; tp < T; ++tp)
    for (std::size_t cp = 0; cp < C; ++cp) {
      TensorD y = x.clone();
      y.at(tp, 0, cp) += 1.0;
      const TensorD h = charge(y, p, cfg);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c)
          if (t < tp || c != cp)
            REQUIRE(h.at(t, 0, c) == base.at(t, 0, c));
    }
}

TEST_CASE("stacked receptive field bounds influence") {
  for (bool saw : {false, true}) {
    NetworkSpec spec;
    spec.input_channels = 1;
    spec.hidden_channels = 4;
    spec.classes = 2;
    spec.num_layers = 3;
    spec.order = 2;
    spec.quantized = false;
    spec.dilation = saw ? DilationSchedule::Sawtooth : DilationSchedule::Fixed;
    spec.init = WeightInit::Uniform;
    Network net = build_network(spec, 5);
    net.set_spike_mode(SpikeMode::Smooth);
    const std::vector<std::size_t> ks(3, 2);
    const auto ds = spec.dilations();
    const std::size_t rf = receptive_field(ks, ds);
    CHECK(rf == (saw ? 7u : 4u));

    // Running statistics make the inference forward pointwise in the batch.
    std::mt19937_64 rng(24);
    const std::size_t T = 12;
    const TensorD x = oracle::random_tensor(Shape{T, 1, 1, {}}, Layout::TimeFirst, rng);
    const TensorD y = net.forward(x, false);
    const std::size_t t = T - 1;
    for (std::size_t r = 0; r < T; ++r) {
      TensorD z = x.clone();
      z.at(t - r, 0, 0) += 0.5;
      const TensorD yz = net.forward(z, false);
      const bool changed = yz.at(t, 0, 0) != y.at(t, 0, 0);
      if (r >= rf)
        CHECK_FALSE(changed);
      else if (r == rf - 1)
        CHECK(changed);
    }
  }
}

TEST_CASE("fire examples") {
  ThresholdParams thr = unit_threshold(1, 1.0, 0.0);
  CHECK(oracle::values(fire(oracle::series({-1, 0, 2}), thr, false)) ==
        std::vector<double>{0, 1, 1});
  ThresholdParams thr2 = unit_threshold(1, 1.0, -1.0);
  CHECK(oracle::values(fire(oracle::series({0.5}), thr2, false)) ==
        std::vector<double>{0});
  CHECK(oracle::values(fire(oracle::series({-1e300, -1e200}), thr, false)) ==
        std::vector<double>{0, 0});
}

TEST_CASE("training fire uses batch statistics and updates running ones") {
  ThresholdParams thr = ThresholdParams::initial(1);
  thr.beta = {0.0};
  const TensorD h = oracle::series({1.0, 2.0, 3.0, 6.0});
  OpCounters c;
  const TensorD s = fire(h, thr, true, &c);
  // mean 3, biased var 3.5, unbiased 14/3
  CHECK(oracle::values(s) == std::vector<double>{0, 0, 1, 1});
  CHECK(thr.running_mean[0] == doctest::Approx(0.3));
  CHECK(thr.running_var[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
  CHECK(c.adds == 4);
  const ChannelStats st = channel_stats(h);
  CHECK(st.mean[0] == 3.0);
  CHECK(st.var[0] == 3.5);
  CHECK(st.count == 4);
}

TEST_CASE("fuse_bn examples") {
  ThresholdParams thr = unit_threshold(1, 1.0, 0.0);
  NeuronParams p{Matrix(1, 2, {0.3, -0.7})};
  const FusedParams f = fuse_bn(p, thr, config(1, 2, 1));
  CHECK(f.weights(0, 0) == doctest::Approx(0.3));
  CHECK(f.weights(0, 1) == doctest::Approx(-0.7));
  CHECK(f.bias[0] == 0.0);

  const std::vector<double> g{2.0}, b{0.0}, mu{1.0}, var{3.0};
  const FusedParams f2 = fuse_bn(Matrix(1, 2, {1.0, 1.0}), g, b, mu, var, 1.0);
  CHECK(f2.weights.values == std::vector<double>{1.0, 1.0});
  CHECK(f2.bias[0] == -1.0);
}

TEST_CASE("fused path reproduces charge then fire") {
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> u(0.2, 2.0), m(-0.5, 0.5);
  for (int iter = 0; iter < 20; ++iter) {
    const std::size_t C = 4;
    const NeuronConfig cfg = config(C, 3, 1 + iter % 3);
    NeuronParams p{oracle::random_matrix(C, 3, rng)};
    ThresholdParams thr = ThresholdParams::initial(C);
    for (std::size_t c = 0; c < C; ++c) {
      thr.gamma[c] = u(rng);
      thr.beta[c] = m(rng);
      thr.running_mean[c] = m(rng);
      thr.running_var[c] = u(rng);
    }
    const TensorD x = oracle::random_tensor(Shape{12, 3, C, {}}, Layout::TimeFirst, rng);
    const TensorD s1 = fire(charge(x, p, cfg), std::as_const(thr));
    const TensorD s2 = heaviside(charge(x, fuse_bn(p, thr, cfg), cfg));
    CHECK(oracle::values(s1) == oracle::values(s2));
    for (double v : s1.data())
      CHECK((v == 0.0 || v == 1.0));
  }
}

TEST_CASE("weight initialisation") {
  const auto lif = lif_kernel(3, 2.0);
  CHECK(lif == std::vector<double>{0.125, 0.25, 0.5});
  std::mt19937_64 rng(26);
  const NeuronParams p = init_neuron_params(config(3, 3, 1), WeightInit::LifKernel, rng);
  CHECK(p.weights.row(2)[2] == 0.5);
  const NeuronParams u = init_neuron_params(config(3, 4, 1), WeightInit::Uniform, rng);
  for (double v : u.weights.values)
    CHECK(std::abs(v) <= 0.5);
  CHECK_THROWS_AS(lif_kernel(2, 1.0), Error);
}

TEST_CASE("configuration validation") {
  CHECK_THROWS_AS(config(0, 2, 1).validate(), Error);
  CHECK_THROWS_AS(config(1, 0, 1).validate(), Error);
  CHECK_THROWS_AS(config(1, 2, 0).validate(), Error);
  ThresholdParams thr = ThresholdParams::initial(2);
  thr.running_var[1] = -1.0;
  CHECK_THROWS_AS(thr.validate(), Error);
  thr = ThresholdParams::initial(2);
  thr.eps = 0.0;
  CHECK_THROWS_AS(thr.validate(), Error);
}

} // TEST_SUITE
