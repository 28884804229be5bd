#include "doctest.h"

#include <random>

#include "mfpsn/engines.hpp"
#include "mfpsn/parallel.hpp"
#include "mfpsn/train.hpp"
#include "oracles.hpp"

using namespace mfpsn;

namespace {

const std::vector<double> kNoBias;

TensorD direct(const TensorD &x, const Matrix &w, std::size_t d,
               OpCounters *c = nullptr) {
  return conv_forward_direct(x, w, kNoBias, d, c);
}

} // namespace

TEST_SUITE("engines") {

TEST_CASE("direct loop hand examples") {
  Matrix w(1, 2, {0.5, 1.0});
  CHECK(oracle::values(direct(oracle::series({1, 0, 1}), w, 1)) ==
        std::vector<double>{1.0, 0.5, 1.0});
  Matrix id(1, 1, {1.0});
  CHECK(oracle::values(direct(oracle::series({3, -1, 2}), id, 1)) ==
        std::vector<double>{3, -1, 2});
  Matrix ones(1, 2, {1.0, 1.0});
  CHECK(oracle::values(direct(oracle::series({1, 2, 3, 4}), ones, 2)) ==
        std::vector<double>{1, 2, 4, 6});
}

TEST_CASE("counters follow the closed form") {
  OpCounters c;
  direct(oracle::series({1, 2, 3, 4}), Matrix(1, 2, {1.0, 1.0}), 1, &c);
  CHECK(c.muls == 7);
  CHECK(c.adds == 7);
  for (std::size_t T = 1; T <= 12; ++T) {
    OpCounters ck;
    TensorD x(Shape{T, 1, 1, {}}, Layout::TimeFirst);
    direct(x, Matrix(1, T, 1.0), 1, &ck);
    CHECK(ck.muls == T * (T + 1) / 2);
  }
  OpCounters cb;
  const std::vector<double> bias{0.25};
  conv_forward_direct(oracle::series({1, 2, 3, 4}), Matrix(1, 2, 1.0), bias, 1,
                      &cb);
  CHECK(cb.adds == 7 + 4);
}

TEST_CASE("counter law over channels and batch") {
  for (std::size_t T = 1; T <= 10; ++T)
    for (std::size_t k = 1; k <= T; ++k) {
      OpCounters c;
      TensorD x(Shape{T, 3, 2, {}}, Layout::TimeLast);
      direct(x, Matrix(2, k, 0.5), 1, &c);
      // k (T + (1 - k)/2) = (2kT + k - k^2) / 2
      const std::uint64_t closed = (2 * k * T + k - k * k) / 2;
      CHECK(c.muls == closed * 6);
      CHECK(c.adds == c.muls);
      CHECK(in_range_taps(T, k, 1) == closed);
    }
}

TEST_CASE("toeplitz construction") {
  const std::vector<double> w{2.0, 3.0}; // w0, w1
  const Matrix a = toeplitz_matrix(w, 3, 1);
  CHECK(a.values == std::vector<double>{3, 0, 0, 2, 3, 0, 0, 2, 3});
  const std::vector<double> one{5.0};
  const Matrix id = toeplitz_matrix(one, 3, 2);
  CHECK(id.values == std::vector<double>{5, 0, 0, 0, 5, 0, 0, 0, 5});
  const Matrix dil = toeplitz_matrix(w, 4, 2);
  CHECK(dil(2, 0) == 2.0);
  CHECK(dil(2, 1) == 0.0);
  CHECK(dil(3, 1) == 2.0);
}

TEST_CASE("matmul caches tap structures") {
  std::mt19937_64 rng(5);
  const TensorD x = oracle::random_tensor(Shape{7, 1, 2, {}}, Layout::TimeFirst, rng);
  const Matrix w = oracle::random_matrix(2, 3, rng);
  conv_forward_matmul(x, w, kNoBias, 2);
  const std::size_t size = matmul_cache_size();
  conv_forward_matmul(x, oracle::random_matrix(2, 3, rng), kNoBias, 2);
  CHECK(matmul_cache_size() == size);
}

TEST_CASE("float engines agree with the oracle") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> T(1, 12), k(1, 5), d(1, 3), C(1, 5),
      N(1, 3);
  std::bernoulli_distribution tl(0.5), use_bias(0.5);
  for (int iter = 0; iter < 200; ++iter) {
    const Shape shape{T(rng), N(rng), C(rng), {}};
    const Layout layout = tl(rng) ? Layout::TimeLast : Layout::TimeFirst;
    const TensorD x = oracle::random_tensor(shape, layout, rng);
    const Matrix w = oracle::random_matrix(shape.C, k(rng), rng);
    std::vector<double> bias;
    if (use_bias(rng))
      bias = oracle::values(oracle::random_tensor(Shape{1, 1, shape.C, {}},
                                                  Layout::TimeFirst, rng));
    const std::size_t dd = d(rng);
    const TensorD ref = oracle::conv(x, w, bias, dd);
    CHECK(oracle::max_rel_diff(conv_forward_direct(x, w, bias, dd), ref) < 1e-12);
    CHECK(oracle::max_rel_diff(conv_forward_matmul(x, w, bias, dd), ref) < 1e-12);
    for (std::size_t b : kBlockSizes)
      CHECK(oracle::max_rel_diff(conv_forward_blocked(x, w, bias, dd, b), ref) <
            1e-12);
  }
}

TEST_CASE("matmul and blocked count like their traversal") {
  TensorD x(Shape{5, 2, 3, {}}, Layout::TimeFirst);
  OpCounters mm, bl, dl;
  conv_forward_matmul(x, Matrix(3, 2, 1.0), kNoBias, 1, &mm);
  conv_forward_blocked(x, Matrix(3, 2, 1.0), kNoBias, 1, 8, &bl);
  direct(x, Matrix(3, 2, 1.0), 1, &dl);
  CHECK(mm.muls == 25 * 6);
  CHECK(bl == dl);
}

TEST_CASE("layouts give the same logical result without copies") {
  std::mt19937_64 rng(7);
  const TensorD x = oracle::random_tensor(Shape{9, 2, 3, {2}}, Layout::TimeFirst, rng);
  const TensorD xt = convert_layout(x, Layout::TimeLast).tensor;
  const Matrix w = oracle::random_matrix(3, 3, rng);
  const auto before = tensor_copy_count();
  const TensorD a = direct(x, w, 2);
  const TensorD b = direct(xt, w, 2);
  const TensorD c = conv_forward_matmul(xt, w, kNoBias, 2);
  const TensorD e = conv_forward_blocked(xt, w, kNoBias, 2, 16);
  CHECK(tensor_copy_count() == before);
  CHECK(b.layout() == Layout::TimeLast);
  CHECK(oracle::logically_equal(a, b));
  CHECK(oracle::max_rel_diff(a, c) < 1e-12);
  CHECK(oracle::logically_equal(a, e));
}

TEST_CASE("shift weights match direct on dequantized weights bit for bit") {
  std::mt19937_64 rng(8);
  for (int iter = 0; iter < 50; ++iter) {
    const TensorD x = oracle::random_tensor(Shape{10, 2, 4, {}},
                                            iter % 2 ? Layout::TimeLast
                                                     : Layout::TimeFirst,
                                            rng);
    const ShiftWeights q = quantize_pow2(oracle::random_matrix(4, 3, rng, -2, 2));
    const std::vector<double> bias{0.5, -0.25, 1.0, 0.0};
    OpCounters cs, cd;
    const TensorD s = conv_forward_direct(x, q, bias, 2, &cs);
    const TensorD dq = conv_forward_direct(x, dequantize(q), bias, 2, &cd);
    CHECK(oracle::values(s) == oracle::values(dq));
    CHECK(cs.muls == 0);
    CHECK(cs.shifts == cd.muls);
    CHECK(cs.adds == cd.adds);
    const TensorD via = conv_forward(EngineChoice{EngineKind::ShiftInt, 32}, x,
                                     dequantize(q), bias, 2, nullptr, &q);
    CHECK(oracle::values(via) == oracle::values(s));
  }
}

TEST_CASE("integer carrier") {
  ShiftWeights q(1, 2);
  q.sign = {1, -1};
  q.exponent = {1, -1};
  TensorI x(Shape{3, 1, 1, {}}, Layout::TimeFirst, {4, 6, -3});
  OpCounters c;
  const TensorI y = conv_forward_shift_int(x, q, {}, 1, &c);
  // y[t] = 2 x[t-1] - floor(x[t] / 2)
  CHECK(y.at(0, 0, 0) == -2);
  CHECK(y.at(1, 0, 0) == 8 - 3);
  CHECK(y.at(2, 0, 0) == 12 + 2);
  CHECK(c.muls == 0);
  CHECK(c.shifts == 5);

  ShiftWeights big(1, 1);
  big.sign = {1};
  big.exponent = {15};
  SaturationCounter sat;
  TensorI huge(Shape{1, 1, 1, {}}, Layout::TimeFirst, {1 << 20});
  CHECK(conv_forward_shift_int(huge, big, {}, 1, nullptr, &sat).at(0, 0, 0) ==
        std::numeric_limits<std::int32_t>::max());
  CHECK(sat.saturations == 1);
}

TEST_CASE("backward input hand examples") {
  const TensorD g = oracle::series({2.0, 3.0});
  const TensorD gx1 = conv_backward_input(g, Matrix(1, 1, {4.0}), 1);
  CHECK(oracle::values(gx1) == std::vector<double>{8.0, 12.0});
  const TensorD gx2 = conv_backward_input(g, Matrix(1, 2, {5.0, 7.0}), 1);
  CHECK(gx2.at(0, 0, 0) == 7.0 * 2.0 + 5.0 * 3.0);
  CHECK(gx2.at(1, 0, 0) == 7.0 * 3.0);
}

TEST_CASE("backward weight and bias examples") {
  TensorD zeros(Shape{4, 2, 2, {}}, Layout::TimeFirst);
  std::mt19937_64 rng(9);
  const TensorD g = oracle::random_tensor(zeros.shape(), Layout::TimeFirst, rng);
  CHECK(conv_backward_weight(zeros, g, 3, 1).values ==
        std::vector<double>(6, 0.0));
  const Matrix single =
      conv_backward_weight(oracle::series({3.0}), oracle::series({-2.0}), 1, 1);
  CHECK(single(0, 0) == -6.0);

  TensorD ones = TensorD::generate(Shape{3, 2, 1, {}}, Layout::TimeLast,
                                   [](auto...) { return 1.0; });
  CHECK(conv_backward_bias(ones) == std::vector<double>{6.0});
  CHECK(conv_backward_bias(zeros) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("adjointness of forward and backward input") {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<std::size_t> T(1, 16), k(1, 8), d(1, 3), C(1, 4);
  for (int iter = 0; iter < 200; ++iter) {
    const Shape shape{T(rng), 2, C(rng), {}};
    const Layout layout = iter % 2 ? Layout::TimeLast : Layout::TimeFirst;
    const TensorD x = oracle::random_tensor(shape, layout, rng);
    const TensorD g = oracle::random_tensor(shape, layout, rng);
    const Matrix w = oracle::random_matrix(shape.C, k(rng), rng);
    const std::size_t dd = d(rng);
    const double lhs = oracle::inner(direct(x, w, dd), g);
    for (const TensorD &gx :
         {conv_backward_input(g, w, dd), conv_backward_input_matmul(g, w, dd),
          conv_backward_input_blocked(g, w, dd, 8)}) {
      const double rhs = oracle::inner(x, gx);
      CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(lhs)));
    }
    const Matrix gw = conv_backward_weight(x, g, w.cols, dd);
    const Matrix gwb = conv_backward_weight_blocked(x, g, w.cols, dd, 8);
    double lhs_w = 0.0;
    for (std::size_t e = 0; e < gw.size(); ++e) {
      lhs_w += gw.values[e] * w.values[e];
      CHECK(std::abs(gw.values[e] - gwb.values[e]) <=
            1e-12 * std::max(1.0, std::abs(gw.values[e])));
    }
    CHECK(std::abs(lhs - lhs_w) <= 1e-12 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("backward kernels match central differences") {
  std::mt19937_64 rng(15);
  for (int iter = 0; iter < 20; ++iter) {
    const Shape shape{6, 2, 3, {}};
    TensorD x = oracle::random_tensor(shape, Layout::TimeFirst, rng);
    const TensorD g = oracle::random_tensor(shape, Layout::TimeFirst, rng);
    Matrix w = oracle::random_matrix(3, 3, rng);
    std::vector<double> b{0.1, -0.2, 0.3};
    const std::size_t d = 1 + iter % 3;
    std::vector<double> gx(x.numel()), gw(w.size()), gb(3);
    const std::vector<ParamRef> params{
        {"x", x.data(), gx}, {"w", w.values, gw}, {"b", b, gb}};
    auto loss = [&] {
      return oracle::inner(conv_forward_direct(x, w, b, d), g);
    };
    auto grads = [&] {
      const TensorD ix = conv_backward_input(g, w, d);
      std::copy(ix.data().begin(), ix.data().end(), gx.begin());
      const Matrix iw = conv_backward_weight(x, g, 3, d);
      std::copy(iw.values.begin(), iw.values.end(), gw.begin());
      const std::vector<double> ib = conv_backward_bias(g);
      std::copy(ib.begin(), ib.end(), gb.begin());
    };
    FdOptions opt;
    opt.tol = 1e-6;
    const FdReport r = finite_diff_check(params, loss, grads, opt);
    CHECK_MESSAGE(r.passed, r.to_text());
  }
}

TEST_CASE("results do not depend on the thread count") {
  std::mt19937_64 rng(16);
  const TensorD x = oracle::random_tensor(Shape{20, 3, 8, {}}, Layout::TimeFirst, rng);
  const Matrix w = oracle::random_matrix(8, 4, rng);
  OpCounters c1, c4;
  const TensorD a = direct(x, w, 2, &c1);
  const TensorD ba = conv_forward_blocked(x, w, kNoBias, 2, 8);
  set_num_threads(4);
  const TensorD b = direct(x, w, 2, &c4);
  const TensorD bb = conv_forward_blocked(x, w, kNoBias, 2, 8);
  set_num_threads(1);
  CHECK(oracle::values(a) == oracle::values(b));
  CHECK(oracle::values(ba) == oracle::values(bb));
  CHECK(c1 == c4);
}

TEST_CASE("errors") {
  TensorD x(Shape{3, 1, 2, {}}, Layout::TimeFirst);
  CHECK_THROWS_AS(direct(x, Matrix(1, 2, 1.0), 1), Error);
  CHECK_THROWS_AS(direct(x, Matrix(2, 2, 1.0), 0), Error);
  const std::vector<double> bad_bias{1.0};
  CHECK_THROWS_AS(conv_forward_direct(x, Matrix(2, 2, 1.0), bad_bias, 1), Error);
  try {
    engine_from_string("cudnn");
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::UnknownEngine);
  }
  CHECK(engine_from_string("blocked_direct") == EngineKind::BlockedDirect);
  CHECK_THROWS_AS(conv_forward(EngineChoice{EngineKind::ShiftInt, 32}, x,
                               Matrix(2, 2, 1.0), {}, 1),
                  Error);
  CHECK_THROWS_AS(conv_backward_input(oracle::series({1, 2}), Matrix(2, 2), 1),
                  Error);
}

} // TEST_SUITE
