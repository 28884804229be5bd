#include "doctest.h"

#include <random>

#include "mfpsn/baseline.hpp"
#include "mfpsn/neuron.hpp"
#include "oracles.hpp"

using namespace mfpsn;

TEST_SUITE("baseline") {

TEST_CASE("psn with identity weights thresholds the input") {
  const std::size_t T = 4;
  Matrix id(T, T);
  for (std::size_t i = 0; i < T; ++i)
    id(i, i) = 1.0;
  PSNParams p{id, std::vector<double>(T, 0.0)};
  const SpikeOutput out = psn_forward(oracle::series({-1.0, 0.0, 0.5, -0.1}), p);
  CHECK(oracle::values(out.spikes) == std::vector<double>{0, 1, 1, 0});
}

TEST_CASE("psn cumulative sum example") {
  Matrix lower(3, 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i <= t; ++i)
      lower(t, i) = 1.0;
  PSNParams p{lower, {0.5, 1.5, 2.5}};
  const SpikeOutput out = psn_forward(oracle::series({1, 1, 1}), p);
  CHECK(oracle::values(out.membrane) == std::vector<double>{1, 2, 3});
  CHECK(oracle::values(out.spikes) == std::vector<double>{1, 1, 1});
}

TEST_CASE("psn zero input and default threshold") {
  PSNParams p = PSNParams::with_default_threshold(Matrix(3, 3, 0.7));
  CHECK(p.threshold == std::vector<double>(3, 1.0));
  p.threshold = {-1.0, 0.0, 1.0};
  const SpikeOutput out = psn_forward(oracle::series({0, 0, 0}), p);
  CHECK(oracle::values(out.membrane) == std::vector<double>{0, 0, 0});
  CHECK(oracle::values(out.spikes) == std::vector<double>{1, 1, 0});
  CHECK_THROWS_AS(psn_forward(oracle::series({0, 0}), p), Error);
}

TEST_CASE("lif weight init") {
  const Matrix w = lif_weight_init(3, 2.0);
  CHECK(w.values ==
        std::vector<double>{0.5, 0, 0, 0.25, 0.5, 0, 0.125, 0.25, 0.5});
  const Matrix w8 = lif_weight_init(8, 3.0);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t i = 0; i < 8; ++i) {
      if (i == t)
        CHECK(w8(t, i) == doctest::Approx(1.0 / 3.0));
      if (i > t)
        CHECK(w8(t, i) == 0.0);
    }
  CHECK_THROWS_AS(lif_weight_init(3, 1.0), Error);
}

TEST_CASE("psn with lif weights equals the iterative lif charge") {
  std::mt19937_64 rng(31);
  for (double tau : {1.5, 2.0, 4.0}) {
    const std::size_t T = 16;
    const TensorD x = oracle::random_tensor(Shape{T, 1, 1, {}}, Layout::TimeFirst, rng);
    PSNParams p = PSNParams::with_default_threshold(lif_weight_init(T, tau));
    const auto h = oracle::values(psn_forward(x, p).membrane);
    const auto ref = oracle::lif_iterative(oracle::values(x), tau);
    for (std::size_t t = 0; t < T; ++t)
      CHECK(std::abs(h[t] - ref[t]) <= 1e-12 * std::max(1.0, std::abs(ref[t])));
  }
}

TEST_CASE("psn is acausal while the sliding psn is causal") {
  const std::size_t T = 5;
  Matrix full(T, T, 0.3);
  PSNParams p = PSNParams::with_default_threshold(full);
  TensorD x(Shape{T, 1, 1, {}}, Layout::TimeFirst);
  TensorD y = x.clone();
  y.at(T - 1, 0, 0) = 1.0;
  CHECK(psn_forward(x, p).membrane.at(0, 0, 0) !=
        psn_forward(y, p).membrane.at(0, 0, 0));
  const std::vector<double> w{0.2, 0.5};
  const TensorD a = sliding_psn_charge(x, w);
  const TensorD b = sliding_psn_charge(y, w);
  for (std::size_t t = 0; t + 1 < T; ++t)
    CHECK(a.at(t, 0, 0) == b.at(t, 0, 0));
}

TEST_CASE("sliding psn equals the shared channel-wise neuron") {
  std::mt19937_64 rng(32);
  for (int iter = 0; iter < 20; ++iter) {
    const TensorD x = oracle::random_tensor(Shape{8, 2, 3, {}}, Layout::TimeFirst, rng);
    const Matrix w = oracle::random_matrix(1, 3, rng);
    NeuronConfig cfg;
    cfg.channels = 3;
    cfg.order = 3;
    cfg.sharing = WeightSharing::SharedAcrossChannels;
    cfg.quantized = false;
    const TensorD h = charge(x, NeuronParams{w}, cfg);
    const SpikeOutput s = sliding_psn_forward(x, w.values, 0.1);
    CHECK(oracle::values(s.membrane) == oracle::values(h));
    for (std::size_t i = 0; i < h.numel(); ++i)
      CHECK(s.spikes.data()[i] == (h.data()[i] - 0.1 >= 0.0 ? 1.0 : 0.0));
  }
}

TEST_CASE("sliding psn with full-length kernel reproduces the last psn row") {
  std::mt19937_64 rng(33);
  const std::size_t T = 6;
  const Matrix full = lif_weight_init(T, 2.0);
  const TensorD x = oracle::random_tensor(Shape{T, 1, 1, {}}, Layout::TimeFirst, rng);
  const auto last = full.row(T - 1);
  const std::vector<double> w(last.begin(), last.end());
  const double psn = psn_forward(x, PSNParams::with_default_threshold(full))
                         .membrane.at(T - 1, 0, 0);
  CHECK(sliding_psn_charge(x, w).at(T - 1, 0, 0) == doctest::Approx(psn).epsilon(1e-14));
}

TEST_CASE("order-one sliding psn copies binary input") {
  const std::vector<double> w{1.0};
  const TensorD x = oracle::series({0, 1, 1, 0, 1});
  CHECK(oracle::values(sliding_psn_forward(x, w, 0.5).spikes) == oracle::values(x));
}

} // TEST_SUITE
