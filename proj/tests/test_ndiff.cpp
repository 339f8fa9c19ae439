#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "evgraph/error.hpp"
#include "evgraph/ndiff/checkpoint.hpp"
#include "evgraph/ndiff/kernels.hpp"
#include "evgraph/ndiff/params.hpp"
#include "evgraph/ndiff/tape.hpp"
#include "gradient_suite.hpp"
#include "support.hpp"

using namespace evg;
using namespace evg::nd;
using evg::testing::random_mat;

namespace {

constexpr double kTolDouble = 1e-6;

std::size_t dim(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 32) {
  return lo + rng() % (hi - lo + 1);
}

std::vector<Index> random_indices(std::size_t n, std::size_t bound, std::mt19937_64& rng) {
  std::vector<Index> v(n);
  for (auto& i : v) i = static_cast<Index>(rng() % bound);
  return v;
}

}  // namespace

// ---------------------------------------------------------------- forward examples

TEST_CASE("affine examples") {
  const Mat x = Mat::from_rows({{1, 2}});
  CHECK(affine(x, Mat::from_rows({{1, 0}, {0, 1}}), Mat::from_rows({{0, 0}})) == x);
  CHECK(affine(x, Mat::from_rows({{3}, {4}}), Mat::from_rows({{1}})) == Mat::from_rows({{12}}));
  CHECK_THROWS_AS(affine(x, Mat(3, 2), Mat(1, 2)), ShapeError);
  CHECK_THROWS_AS(affine(x, Mat(2, 2), Mat(1, 3)), ShapeError);
  try {
    (void)matmul(x, Mat(3, 2));
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("1x2") != std::string::npos);
  }
}

TEST_CASE("activation examples") {
  const Mat x = Mat::from_rows({{-1, 0, 2}});
  CHECK(activation(x, Activation::relu) == Mat::from_rows({{0, 0, 2}}));
  const Mat e = activation(x, Activation::elu);
  CHECK(e(0, 0) == doctest::Approx(std::exp(-1.0) - 1));
  CHECK(e(0, 1) == 0.0);
  CHECK(e(0, 2) == 2.0);
  const Mat g = activation_backward(x, Mat::from_rows({{1, 1, 1}}), Activation::relu);
  CHECK(g == Mat::from_rows({{0, 0, 1}}));
  CHECK_THROWS_AS(parse_activation("tanh"), ConfigError);
  CHECK(parse_activation("relu") == Activation::relu);
}

TEST_CASE("gather_rows examples") {
  const Mat x = Mat::from_rows({{1}, {2}, {3}});
  const std::vector<Index> idx{2, 0};
  CHECK(gather_rows(x, std::span<const Index>(idx)) == Mat::from_rows({{3}, {1}}));
  const std::vector<Index> dup{0, 0};
  CHECK(gather_rows_backward(Mat::from_rows({{1}, {1}}), std::span<const Index>(dup), 3) ==
        Mat::from_rows({{2}, {0}, {0}}));
  const std::vector<Index> bad{3};
  CHECK_THROWS_AS(gather_rows(x, std::span<const Index>(bad)), IndexError);
}

TEST_CASE("scatter_reduce examples") {
  const Mat m = Mat::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<Index> dst{0, 0, 1};
  const std::span<const Index> d(dst);
  CHECK(scatter_reduce(m, d, 2, Reduce::sum).out == Mat::from_rows({{4, 6}, {5, 6}}));
  CHECK(scatter_reduce(m, d, 2, Reduce::max).out == Mat::from_rows({{3, 4}, {5, 6}}));
  CHECK(scatter_reduce(m, d, 2, Reduce::mean).out == Mat::from_rows({{2, 3}, {5, 6}}));
  for (Reduce r : {Reduce::sum, Reduce::mean, Reduce::max}) {
    const auto res = scatter_reduce(m, d, 3, r);
    CHECK(res.out(2, 0) == 0.0);
    CHECK(res.out(2, 1) == 0.0);
  }
  // Negative messages: the max of an occupied slot is still the true max.
  const Mat neg = Mat::from_rows({{-3}, {-1}});
  const std::vector<Index> z{0, 0};
  CHECK(scatter_reduce(neg, std::span<const Index>(z), 2, Reduce::max).out ==
        Mat::from_rows({{-1}, {0}}));
  const std::vector<Index> bad{0, 5, 1};
  CHECK_THROWS_AS(scatter_reduce(m, std::span<const Index>(bad), 2, Reduce::sum), IndexError);
}

TEST_CASE("scatter_reduce max ties route the gradient to the first message") {
  const Mat m = Mat::from_rows({{2}, {2}, {1}});
  const std::vector<Index> dst{0, 0, 0};
  const auto fwd = scatter_reduce(m, std::span<const Index>(dst), 1, Reduce::max);
  const Mat g = scatter_reduce_backward(Mat::from_rows({{1}}), std::span<const Index>(dst), fwd,
                                        Reduce::max);
  CHECK(g == Mat::from_rows({{1}, {0}, {0}}));
}

TEST_CASE("scatter_reduce is invariant to message order") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t e = dim(rng, 1, 30), n = dim(rng, 1, 8), c = dim(rng, 1, 5);
    const auto dst = random_indices(e, n, rng);
    const Mat m = random_mat(e, c, rng);
    std::vector<std::size_t> perm(e);
    for (std::size_t i = 0; i < e; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat pm(e, c);
    std::vector<Index> pd(e);
    for (std::size_t i = 0; i < e; ++i) {
      for (std::size_t j = 0; j < c; ++j) pm(i, j) = m(perm[i], j);
      pd[i] = dst[perm[i]];
    }
    for (Reduce r : {Reduce::sum, Reduce::mean, Reduce::max}) {
      const auto a = scatter_reduce(m, std::span<const Index>(dst), n, r).out;
      const auto b = scatter_reduce(pm, std::span<const Index>(pd), n, r).out;
      CHECK(testing::max_abs_diff(a, b) <= 1e-12);
    }
  }
}

TEST_CASE("gather_scatter_max equals gather then scatter max") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = dim(rng, 1, 20), e = dim(rng, 0, 40), c = dim(rng, 1, 6);
    const auto src = random_indices(e, n, rng);
    const auto dst = random_indices(e, n, rng);
    const Mat x = random_mat(n, c, rng);
    const Mat gathered = gather_rows(x, std::span<const Index>(src));
    CHECK(gather_scatter_max(x, std::span<const Index>(src), std::span<const Index>(dst), n).out ==
          scatter_reduce(gathered, std::span<const Index>(dst), n, Reduce::max).out);
  }
}

TEST_CASE("concat and slice examples") {
  CHECK(concat_cols(Mat::from_rows({{1}}), Mat::from_rows({{2, 3}})) == Mat::from_rows({{1, 2, 3}}));
  const auto [ga, gb] = concat_cols_backward(Mat::from_rows({{1, 1, 1}}), 1);
  CHECK(ga == Mat::from_rows({{1}}));
  CHECK(gb == Mat::from_rows({{1, 1}}));
  CHECK_THROWS_AS(concat_cols(Mat(1, 1), Mat(2, 1)), ShapeError);
  CHECK(slice_cols(Mat::from_rows({{1, 2, 3}}), 1, 2) == Mat::from_rows({{2, 3}}));
}

TEST_CASE("loss examples") {
  const std::vector<Index> zero{0};
  const auto ce = softmax_cross_entropy(Mat::from_rows({{10, -10}}), std::span<const Index>(zero));
  CHECK(ce.loss == doctest::Approx(2.0611536e-9).epsilon(1e-6));
  CHECK(ce.loss < 1e-8);
  const std::vector<Index> l{2};
  CHECK(softmax_cross_entropy(Mat(1, 4, 0.3), std::span<const Index>(l)).loss ==
        doctest::Approx(std::log(4.0)));
  // Large logits stay finite thanks to the max shift.
  const std::vector<Index> one{1};
  CHECK(softmax_cross_entropy(Mat::from_rows({{1000, -1000}}), std::span<const Index>(one)).loss ==
        doctest::Approx(2000.0));
  const std::vector<Index> oob{4};
  CHECK_THROWS_AS(softmax_cross_entropy(Mat(1, 4), std::span<const Index>(oob)), IndexError);
  CHECK(smooth_l1(Mat(2, 4, 0.7), Mat(2, 4, 0.7)).loss == 0.0);
  CHECK(smooth_l1(Mat::from_rows({{2}}), Mat::from_rows({{0}})).loss == 1.5);
  CHECK(smooth_l1(Mat::from_rows({{0.5}}), Mat::from_rows({{0}})).loss == 0.125);
  CHECK_THROWS_AS(smooth_l1(Mat(1, 4), Mat(1, 3)), ShapeError);
}

// ---------------------------------------------------------------- gradient suite

TEST_CASE("gradient suite: kernels in double and single precision") {
  for (const auto& r : testing::kernel_gradient_suite(20)) {
    INFO(r.name << ": double " << r.worst_double << ", single " << r.worst_single);
    CHECK(r.instances >= 20);
    CHECK(r.passed());
  }
}

TEST_CASE("gradient suite: tape wrappers compose correctly") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = dim(rng, 2, 12), c = dim(rng, 1, 6);
    ParameterSet ps;
    const auto ia = ps.add("a", random_mat(n, c, rng));
    const auto ib = ps.add("b", random_mat(n, c, rng));
    const auto iw = ps.add("w", random_mat(c, 3, rng));
    const auto ibias = ps.add("bias", random_mat(1, 3, rng));
    std::vector<double> coef(n);
    for (auto& v : coef) v = std::uniform_real_distribution<double>(-2, 2)(rng);
    const auto idx = random_indices(2 * n, n, rng);
    const auto dst = random_indices(2 * n, n, rng);
    const auto labels = random_indices(n, 3, rng);
    const Mat target = random_mat(n, 3, rng, 0, 1);
    const double err = testing::tape_grad_check(
        ps,
        [&](Tape& t) {
          const Var a = t.parameter(ps[ia]), b = t.parameter(ps[ib]);
          Var h = add(t, sub(t, a, scale_rows(t, b, coef)), a);
          h = gather_rows(t, h, idx);
          h = scatter_reduce(t, h, dst, n, Reduce::mean);
          h = affine(t, h, t.parameter(ps[iw]), t.parameter(ps[ibias]));
          h = activation(t, h, Activation::elu);
          const Var s = sigmoid(t, reshape(t, reshape(t, h, 1, 3 * n), n, 3));
          const Var loss = weighted_sum(t, softmax_cross_entropy(t, h, labels), 1.0,
                                        smooth_l1(t, s, target), 0.5);
          return loss;
        },
        rng);
    CHECK(err <= kTolDouble);
  }
}

TEST_CASE("grad_check detects a sign-flipped backward") {
  std::mt19937_64 rng(2);
  Mat x = random_mat(4, 3, rng), w = random_mat(3, 2, rng), b = random_mat(1, 2, rng);
  const Mat proj = random_mat(4, 2, rng);
  auto g = affine_backward(x, w, proj);
  for (auto& v : g.w.values()) v = -v;
  std::vector<Mat*> in{&w};
  std::vector<Mat> an{g.w};
  const double err = grad_check([&] { return testing::project(affine(x, w, b), proj); }, in, an);
  CHECK(err == doctest::Approx(2.0).epsilon(1e-4));
}

// ---------------------------------------------------------------- tape behaviour

TEST_CASE("tape: constants take no gradient, parameters accumulate across calls") {
  ParameterSet ps;
  const auto i = ps.add("w", Mat::from_rows({{2}}));
  for (int rep = 0; rep < 2; ++rep) {
    Tape t;
    const Var c = t.constant(Mat::from_rows({{3}}));
    const Var y = matmul(t, c, t.parameter(ps[i]));
    CHECK_FALSE(t.requires_grad(c));
    t.backward(y);
  }
  CHECK(ps[i].tensor.grad(0, 0) == 6.0);
  ps.zero_grad();
  CHECK(ps[i].tensor.grad(0, 0) == 0.0);
}

TEST_CASE("tape: deferred gradients reach parameters only on flush") {
  ParameterSet ps;
  const auto i = ps.add("w", Mat::from_rows({{2}}));
  Tape t(true);
  const Var y = matmul(t, t.constant(Mat::from_rows({{5}})), t.parameter(ps[i]));
  t.backward(y);
  CHECK(ps[i].tensor.grad(0, 0) == 0.0);
  t.flush_parameter_grads();
  CHECK(ps[i].tensor.grad(0, 0) == 5.0);
}

TEST_CASE("parameter names are unique") {
  ParameterSet ps;
  ps.add("layer0.weight", Mat(2, 2));
  CHECK_THROWS_AS(ps.add("layer0.weight", Mat(1, 1)), ConfigError);
  CHECK(ps.find("layer0.weight") == 0u);
  CHECK_FALSE(ps.find("nope").has_value());
  CHECK(ps.total_count() == 4);
}

// ---------------------------------------------------------------- Adam

TEST_CASE("adam_step") {
  SUBCASE("first step with unit gradient") {
    ParameterSet ps;
    ps.add("w", Mat::from_rows({{0.5}}));
    ps[0].tensor.grad(0, 0) = 1.0;
    AdamState st(AdamConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
    adam_step(ps, st);
    CHECK(ps[0].tensor.value(0, 0) - 0.5 == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-9));
    CHECK(ps[0].tensor.grad(0, 0) == 0.0);
    CHECK(st.step == 1);
  }
  SUBCASE("zero gradient and zero decay leave parameters bit-identical") {
    std::mt19937_64 rng(1);
    ParameterSet ps;
    ps.add("w", random_mat(3, 4, rng));
    const Mat before = ps[0].tensor.value;
    AdamState st;
    for (int i = 0; i < 5; ++i) adam_step(ps, st);
    CHECK(ps[0].tensor.value == before);
    CHECK(st.step == 5);
  }
  SUBCASE("decay shrinks positive weights") {
    ParameterSet ps;
    ps.add("w", Mat::from_rows({{0.8, 2.0}}));
    AdamState st(AdamConfig{1e-3, 0.9, 0.999, 1e-8, 5e-3});
    adam_step(ps, st);
    CHECK(ps[0].tensor.value(0, 0) < 0.8);
    CHECK(ps[0].tensor.value(0, 1) < 2.0);
  }
  SUBCASE("bias correction over several steps matches a hand recurrence") {
    ParameterSet ps;
    ps.add("w", Mat::from_rows({{1.0}}));
    AdamConfig cfg{0.01, 0.9, 0.999, 1e-8, 0.1};
    AdamState st(cfg);
    double th = 1.0, m = 0, v = 0;
    const double grads[] = {0.3, -0.2, 0.5, 0.0};
    for (int k = 0; k < 4; ++k) {
      ps[0].tensor.grad(0, 0) = grads[k];
      adam_step(ps, st);
      const double g = grads[k] + cfg.weight_decay * th;
      m = cfg.beta1 * m + (1 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
      const double mh = m / (1 - std::pow(cfg.beta1, k + 1));
      const double vh = v / (1 - std::pow(cfg.beta2, k + 1));
      th -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
      CHECK(ps[0].tensor.value(0, 0) == doctest::Approx(th).epsilon(1e-12));
    }
  }
  SUBCASE("frozen parameters are not updated") {
    ParameterSet ps;
    ps.add("w", Mat::from_rows({{1.0}}), false);
    ps[0].tensor.grad(0, 0) = 1.0;
    AdamState st;
    adam_step(ps, st);
    CHECK(ps[0].tensor.value(0, 0) == 1.0);
  }
}

// ---------------------------------------------------------------- checkpoints

TEST_CASE("checkpoint round trip and errors") {
  std::mt19937_64 rng(6);
  ParameterSet ps;
  ps.add("layer0.weight", testing::grad_detail::float_exact(random_mat(3, 5, rng)));
  ps.add("layer0.bias", testing::grad_detail::float_exact(random_mat(1, 5, rng)));
  const nlohmann::json extra{{"model", "classifier"}, {"epoch", 3}};
  const auto bytes = serialize_checkpoint(ps, extra);
  const auto ck = deserialize_checkpoint(bytes);
  CHECK(ck.header["model"] == "classifier");
  CHECK(ck.names == std::vector<std::string>{"layer0.weight", "layer0.bias"});
  ParameterSet other;
  other.add("layer0.weight", Mat(3, 5));
  other.add("layer0.bias", Mat(1, 5));
  apply_checkpoint(ck, other);
  CHECK(other[0].tensor.value == ps[0].tensor.value);
  CHECK(other[1].tensor.value == ps[1].tensor.value);

  // Layout: u64 header length, then JSON, then 4-byte reals.
  std::uint64_t hlen = 0;
  for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | bytes[i];
  CHECK(bytes.size() == 8 + hlen + 4 * (15 + 5));

  auto trunc = bytes;
  trunc.pop_back();
  CHECK_THROWS_AS(deserialize_checkpoint(trunc), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(std::vector<std::uint8_t>{1, 2}), FormatError);
  ParameterSet wrong;
  wrong.add("layer0.weight", Mat(5, 3));
  wrong.add("layer0.bias", Mat(1, 5));
  CHECK_THROWS_AS(apply_checkpoint(ck, wrong), ShapeError);
  ParameterSet missing;
  missing.add("layer1.weight", Mat(1, 1));
  CHECK_THROWS_AS(apply_checkpoint(ck, missing), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "evgraph_test_ckpt.bin";
  save_checkpoint(path, ps, extra);
  CHECK(load_checkpoint(path).names.size() == 2);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/evgraph.ckpt"), IoError);
}
