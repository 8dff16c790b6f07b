#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "labnn/ops.hpp"
#include "oracles.hpp"

using namespace labnn;

namespace {

template <typename T>
void check_close(const Tensor<T>& a, const Tensor<T>& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (int64_t i = 0; i < a.count(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i] - b.data()[i])));
  }
  CHECK(worst <= tol);
}

// Builds a graph from leaves, runs backward, and checks every leaf gradient
// against central finite differences of the rebuilt graph.
void fd_check_graph(std::vector<Tensor<double>> leaves,
                    const std::function<int(Tape<double>&, const std::vector<int>&)>& build,
                    double tol = 1e-3, double eps = 1e-3) {
  Tape<double> tape;
  std::vector<int> ids;
  for (auto& l : leaves) ids.push_back(tape.leaf(l));
  const int loss = build(tape, ids);
  REQUIRE(tape.val(loss).count() == 1);
  tape.backward(loss);

  for (size_t li = 0; li < leaves.size(); ++li) {
    auto eval = [&]() {
      Tape<double> t2;
      std::vector<int> ids2;
      for (auto& l : leaves) ids2.push_back(t2.leaf(l));
      return t2.val(build(t2, ids2)).data()[0];
    };
    const oracle::FdReport rep = oracle::fd_compare(
        leaves[li].data(), tape.val(ids[li]).grad(), leaves[li].count(), eval, eps);
    INFO("leaf ", li, " checked ", rep.checked, " skipped ", rep.skipped);
    CHECK(rep.max_rel <= tol);
  }
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel") {
  Rng rng(1);
  Tape<float> t;
  Tensor<float> x({1, 1, 4, 4});
  oracle::fill_random(x, rng);
  Tensor<float> w({1, 1, 1, 1});
  w.data()[0] = 1.0f;
  const int y = conv2d(t, t.leaf(x), t.leaf(w), 1, Padding::valid());
  check_close(t.val(y), x, 0.0);
}

TEST_CASE("conv2d: 3x3 ones kernel on ones input gives 9") {
  Tape<float> t;
  Tensor<float> x({1, 1, 4, 4}, 1.0f);
  Tensor<float> w({1, 1, 3, 3}, 1.0f);
  const int y = conv2d(t, t.leaf(x), t.leaf(w), 1, Padding::valid());
  CHECK(t.val(y).shape() == Shape4{1, 1, 2, 2});
  for (int64_t i = 0; i < 4; ++i) CHECK(t.val(y).data()[i] == 9.0f);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng(2);
  Tape<float> t;
  Tensor<float> x({1, 3, 8, 8});
  Tensor<float> w({4, 3, 3, 3});
  oracle::fill_random(x, rng);
  oracle::fill_random(w, rng);
  const int y = conv2d(t, t.leaf(x), t.leaf(w), 1, Padding::valid());
  check_close(t.val(y), oracle::conv2d_naive(x, w, 1, Padding::valid()), 1e-5);
}

TEST_CASE("conv2d matches the oracle across strides, paddings, groups, shapes") {
  Rng rng(3);
  int cases = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int64_t n = 1 + rng.below(2);
    const int64_t groups = rep % 7 == 0 ? 2 : 1;
    const int64_t cin = groups * (1 + rng.below(3));
    const int64_t cout = groups * (1 + rng.below(4));
    const int64_t k = 1 + 2 * rng.below(2);  // 1 or 3
    const int64_t hw = k + rng.below(8);
    const int64_t stride = 1 + rng.below(2);
    const Padding pad = rng.uniform() < 0.5 ? Padding::valid()
                                            : Padding::same(rng.uniform() < 0.5 ? 0.0 : -1.0);
    Tensor<float> x({n, cin, hw, hw});
    Tensor<float> w({cout, cin / groups, k, k});
    oracle::fill_random(x, rng);
    oracle::fill_random(w, rng);
    Tape<float> t;
    const int y = conv2d(t, t.leaf(x), t.leaf(w), stride, pad, groups);
    check_close(t.val(y), oracle::conv2d_naive(x, w, stride, pad, groups), 1e-5);
    ++cases;
  }
  CHECK(cases == 100);
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tape<float> t;
  const int x = t.leaf(Tensor<float>({1, 3, 4, 4}));
  const int w = t.leaf(Tensor<float>({2, 4, 3, 3}));
  CHECK_THROWS_AS(conv2d(t, x, w, 1, Padding::valid()), Error);
}

TEST_CASE("depthwise: multiplier 1 identity") {
  Rng rng(4);
  Tape<float> t;
  Tensor<float> x({1, 3, 5, 5});
  oracle::fill_random(x, rng);
  Tensor<float> w({3, 1, 1, 1}, 1.0f);
  const int y = depthwise_conv2d(t, t.leaf(x), t.leaf(w), -1, 1, Padding::valid());
  check_close(t.val(y), x, 0.0);
}

TEST_CASE("depthwise: multiplier 2 zero kernels give zero doubled channels") {
  Rng rng(5);
  Tape<float> t;
  Tensor<float> x({2, 3, 4, 4});
  oracle::fill_random(x, rng);
  Tensor<float> w({6, 1, 3, 3}, 0.0f);
  const int y = depthwise_conv2d(t, t.leaf(x), t.leaf(w), -1, 2, Padding::same(0.0));
  CHECK(t.val(y).shape() == Shape4{2, 6, 4, 4});
  for (int64_t i = 0; i < t.val(y).count(); ++i) CHECK(t.val(y).data()[i] == 0.0f);
}

TEST_CASE("depthwise matches the nested-loop oracle") {
  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    const int64_t c = 1 + rng.below(4);
    const int64_t mult = 1 + rng.below(2);
    const int64_t hw = 3 + rng.below(6);
    Tensor<float> x({1 + rng.below(2), c, hw, hw});
    Tensor<float> w({mult * c, 1, 3, 3});
    oracle::fill_random(x, rng);
    oracle::fill_random(w, rng);
    Tape<float> t;
    const int y = depthwise_conv2d(t, t.leaf(x), t.leaf(w), -1, mult, Padding::same(0.0));
    check_close(t.val(y), oracle::depthwise_naive(x, w, mult, Padding::same(0.0)), 1e-5);
  }
}

TEST_CASE("depthwise rejects kernel count mismatch") {
  Tape<float> t;
  const int x = t.leaf(Tensor<float>({1, 3, 4, 4}));
  const int w = t.leaf(Tensor<float>({5, 1, 3, 3}));
  CHECK_THROWS_AS(depthwise_conv2d(t, x, w, -1, 2, Padding::same(0.0)), Error);
}

TEST_CASE("backward: loss = sum(x) gives ones") {
  Tape<double> t;
  const int x = t.leaf(Tensor<double>({1, 2, 3, 4}, 0.3));
  t.backward(reduce_sum(t, x));
  for (int64_t i = 0; i < 24; ++i) CHECK(t.val(x).grad()[i] == 1.0);
}

TEST_CASE("backward: loss = sum(x*x)/2 gives x") {
  Rng rng(8);
  Tape<double> t;
  Tensor<double> xv({1, 1, 2, 5});
  oracle::fill_random(xv, rng);
  const int x = t.leaf(xv);
  t.backward(scale(t, reduce_sum(t, mul(t, x, x)), 0.5));
  for (int64_t i = 0; i < xv.count(); ++i) {
    CHECK(t.val(x).grad()[i] == doctest::Approx(xv.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward: leaves off the loss path get zero gradient") {
  Tape<double> t;
  const int x = t.leaf(Tensor<double>({1, 1, 1, 3}, 2.0));
  const int unused = t.leaf(Tensor<double>({1, 1, 1, 3}, 5.0));
  mul(t, unused, unused);  // dead branch
  t.backward(reduce_sum(t, x));
  for (int64_t i = 0; i < 3; ++i) CHECK(t.val(unused).grad()[i] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> t;
  const int x = t.leaf(Tensor<double>({1, 1, 1, 3}, 1.0));
  CHECK_THROWS_AS(t.backward(x), Error);
}

TEST_CASE("gradients: conv2d") {
  Rng rng(10);
  Tensor<double> x({2, 2, 5, 5}), w({3, 2, 3, 3});
  oracle::fill_random(x, rng);
  oracle::fill_random(w, rng);
  fd_check_graph({x, w}, [](Tape<double>& t, const std::vector<int>& ids) {
    const int y = conv2d(t, ids[0], ids[1], 2, Padding::same(0.0));
    return scale(t, reduce_sum(t, mul(t, y, y)), 0.5);
  });
}

TEST_CASE("gradients: depthwise with bias") {
  Rng rng(11);
  Tensor<double> x({2, 3, 4, 4}), w({6, 1, 3, 3}), b({1, 6, 1, 1});
  oracle::fill_random(x, rng);
  oracle::fill_random(w, rng);
  oracle::fill_random(b, rng);
  fd_check_graph({x, w, b}, [](Tape<double>& t, const std::vector<int>& ids) {
    const int y = depthwise_conv2d(t, ids[0], ids[1], ids[2], 2, Padding::same(0.0));
    return scale(t, reduce_sum(t, mul(t, y, y)), 0.5);
  });
}

TEST_CASE("gradients: batchnorm (training)") {
  Rng rng(12);
  Tensor<double> x({4, 3, 3, 3}), g({1, 3, 1, 1}), b({1, 3, 1, 1});
  oracle::fill_random(x, rng);
  oracle::fill_random(g, rng, 0.5, 1.5);
  oracle::fill_random(b, rng);
  fd_check_graph({x, g, b}, [](Tape<double>& t, const std::vector<int>& ids) {
    const int y = batchnorm_train(t, ids[0], ids[1], ids[2], nullptr, false);
    const int m = t.leaf(Tensor<double>({4, 3, 3, 3}, 0.0));  // random-ish projection
    Tensor<double>& mv = t.val(m);
    for (int64_t i = 0; i < mv.count(); ++i) mv.data()[i] = 0.1 * static_cast<double>(i % 7) - 0.2;
    return reduce_sum(t, mul(t, y, m));
  });
}

TEST_CASE("batchnorm: constant input maps to affine offset and needs batch >= 2") {
  Tape<float> t;
  Tensor<float> x({3, 2, 2, 2}, 5.0f);
  const int g = t.leaf(Tensor<float>({1, 2, 1, 1}, 1.0f));
  const int b = t.leaf(Tensor<float>({1, 2, 1, 1}, 0.0f));
  const int y = batchnorm_train(t, t.leaf(x), g, b, nullptr, false);
  for (int64_t i = 0; i < t.val(y).count(); ++i) {
    CHECK(t.val(y).data()[i] == doctest::Approx(0.0f).epsilon(1e-6));
  }
  Tape<float> t1;
  Tensor<float> x1({1, 2, 2, 2}, 5.0f);
  const int g1 = t1.leaf(Tensor<float>({1, 2, 1, 1}, 1.0f));
  const int b1 = t1.leaf(Tensor<float>({1, 2, 1, 1}, 0.0f));
  CHECK_THROWS_AS(batchnorm_train(t1, t1.leaf(x1), g1, b1, nullptr, false), Error);
}

TEST_CASE("batchnorm running statistics update") {
  BnState<float> st(2);
  st.momentum = 0.5;
  Tape<float> t;
  Tensor<float> x({2, 2, 1, 1});
  x.at(0, 0, 0, 0) = 1.0f;
  x.at(1, 0, 0, 0) = 3.0f;  // mean 2, var 1
  x.at(0, 1, 0, 0) = -1.0f;
  x.at(1, 1, 0, 0) = -1.0f;  // mean -1, var 0
  const int g = t.leaf(Tensor<float>({1, 2, 1, 1}, 1.0f));
  const int b = t.leaf(Tensor<float>({1, 2, 1, 1}, 0.0f));
  batchnorm_train(t, t.leaf(x), g, b, &st, true);
  CHECK(st.running_mean.data()[0] == doctest::Approx(1.0f));
  CHECK(st.running_var.data()[0] == doctest::Approx(1.0f));
  CHECK(st.running_mean.data()[1] == doctest::Approx(-0.5f));
  CHECK(st.running_var.data()[1] == doctest::Approx(0.5f));
}

TEST_CASE("gradients: prelu") {
  Rng rng(13);
  Tensor<double> x({2, 3, 4, 4}), a({1, 3, 1, 1});
  oracle::fill_random(x, rng);
  oracle::fill_random(a, rng, 0.1, 0.6);
  fd_check_graph({x, a}, [](Tape<double>& t, const std::vector<int>& ids) {
    const int y = prelu(t, ids[0], ids[1]);
    return scale(t, reduce_sum(t, mul(t, y, y)), 0.5);
  });
}

TEST_CASE("prelu with slope 1 is the identity") {
  Rng rng(14);
  Tape<float> t;
  Tensor<float> x({1, 2, 3, 3});
  oracle::fill_random(x, rng);
  const int y = prelu(t, t.leaf(x), t.leaf(Tensor<float>({1, 2, 1, 1}, 1.0f)));
  check_close(t.val(y), x, 0.0);
}

TEST_CASE("gradients: pooling") {
  Rng rng(15);
  Tensor<double> x({2, 2, 6, 6});
  oracle::fill_random(x, rng);
  fd_check_graph({x}, [](Tape<double>& t, const std::vector<int>& ids) {
    const int y = maxpool2x2(t, ids[0]);
    const int z = avgpool2x2(t, y);
    return reduce_sum(t, mul(t, z, z));
  });
  fd_check_graph({x}, [](Tape<double>& t, const std::vector<int>& ids) {
    const int y = global_avg_pool(t, ids[0]);
    return reduce_sum(t, mul(t, y, y));
  });
}

TEST_CASE("gradients: dense and softmax cross-entropy") {
  Rng rng(16);
  Tensor<double> x({3, 4, 1, 1}), w({5, 4, 1, 1}), b({1, 5, 1, 1});
  oracle::fill_random(x, rng);
  oracle::fill_random(w, rng);
  oracle::fill_random(b, rng);
  const std::vector<int> labels = {1, 4, 0};
  fd_check_graph({x, w, b}, [labels](Tape<double>& t, const std::vector<int>& ids) {
    const int y = dense(t, ids[0], ids[1], ids[2]);
    return softmax_cross_entropy(t, y, labels);
  });
}

TEST_CASE("softmax_cross_entropy rejects bad labels") {
  Tape<double> t;
  const int x = t.leaf(Tensor<double>({2, 3, 1, 1}, 0.1));
  CHECK_THROWS_AS(softmax_cross_entropy(t, x, {0, 3}), Error);
  CHECK_THROWS_AS(softmax_cross_entropy(t, x, {0}), Error);
}

TEST_CASE("gradients: composed three-layer graph") {
  Rng rng(17);
  Tensor<double> x({2, 2, 6, 6}), w1({4, 2, 3, 3}), g1({1, 4, 1, 1}, 1.0), b1({1, 4, 1, 1}, 0.0),
      a1({1, 4, 1, 1}, 0.25), wf({3, 4, 1, 1}), bf({1, 3, 1, 1});
  oracle::fill_random(x, rng);
  oracle::fill_random(w1, rng, -0.5, 0.5);
  oracle::fill_random(wf, rng, -0.5, 0.5);
  oracle::fill_random(bf, rng, -0.1, 0.1);
  const std::vector<int> labels = {2, 0};
  fd_check_graph({x, w1, g1, b1, a1, wf, bf},
                 [labels](Tape<double>& t, const std::vector<int>& ids) {
                   int y = conv2d(t, ids[0], ids[1], 1, Padding::same(0.0));
                   y = batchnorm_train(t, y, ids[2], ids[3], nullptr, false);
                   y = prelu(t, y, ids[4]);
                   y = maxpool2x2(t, y);
                   y = global_avg_pool(t, y);
                   y = dense(t, y, ids[5], ids[6]);
                   return softmax_cross_entropy(t, y, labels);
                 });
}

TEST_CASE("gradients: shortcut composition (add + concat_duplicate)") {
  Rng rng(18);
  Tensor<double> x({2, 2, 4, 4});
  oracle::fill_random(x, rng);
  fd_check_graph({x}, [](Tape<double>& t, const std::vector<int>& ids) {
    const int d = concat_duplicate(t, ids[0]);
    const int h = avgpool2x2(t, d);
    const int y = add(t, h, h);
    return reduce_sum(t, mul(t, y, y));
  });
}

TEST_CASE("sign_ste: values and clipped gradient band") {
  Tape<double> t;
  Tensor<double> x({1, 1, 1, 5});
  x.data()[0] = 0.5;
  x.data()[1] = 0.0;
  x.data()[2] = -0.3;
  x.data()[3] = 1.5;
  x.data()[4] = 1.0;  // boundary: inclusive
  const int xi = t.leaf(x);
  const int y = sign_ste(t, xi, BinMode::kHard);
  CHECK(t.val(y).data()[0] == 1.0);
  CHECK(t.val(y).data()[1] == -1.0);
  CHECK(t.val(y).data()[2] == -1.0);
  t.backward(scale(t, reduce_sum(t, y), 2.0));
  CHECK(t.val(xi).grad()[0] == 2.0);
  CHECK(t.val(xi).grad()[3] == 0.0);
  CHECK(t.val(xi).grad()[4] == 2.0);
}

TEST_CASE("lab_argmax: symmetry, saturation, and surrogate gradients") {
  // z1 = z0, beta = 1: p = 0.5, dy/dz1 = 2*beta*p*(1-p) = 0.5
  Tape<double> t;
  Tensor<double> z({1, 2, 1, 1}, 0.7);
  const int zi = t.leaf(z);
  const int bi = t.leaf(Tensor<double>({1, 1, 1, 1}, 1.0));
  const int y = lab_argmax(t, zi, bi, BinMode::kHard);
  CHECK(t.val(y).data()[0] == -1.0);  // tie goes to -1
  t.backward(reduce_sum(t, y));
  CHECK(t.val(zi).grad()[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.val(zi).grad()[0] == doctest::Approx(-0.5).epsilon(1e-12));

  // saturation: large beta*(z1 - z0) kills all surrogate gradients
  Tape<double> t2;
  Tensor<double> z2({1, 2, 1, 1});
  z2.data()[0] = -30.0;
  z2.data()[1] = 30.0;
  const int z2i = t2.leaf(z2);
  const int b2i = t2.leaf(Tensor<double>({1, 1, 1, 1}, 1.0));
  const int y2 = lab_argmax(t2, z2i, b2i, BinMode::kHard);
  CHECK(t2.val(y2).data()[0] == 1.0);
  t2.backward(reduce_sum(t2, y2));
  CHECK(std::abs(t2.val(z2i).grad()[0]) < 1e-12);
  CHECK(std::abs(t2.val(b2i).grad()[0]) < 1e-12);

  // random case: all gradients match finite differences of the relaxed graph
  Rng rng(19);
  Tensor<double> zr({2, 6, 3, 3}), br({1, 1, 1, 1}, 1.3);
  oracle::fill_random(zr, rng);
  fd_check_graph({zr, br}, [](Tape<double>& t3, const std::vector<int>& ids) {
    const int yy = lab_argmax(t3, ids[0], ids[1], BinMode::kRelaxed);
    return scale(t3, reduce_sum(t3, mul(t3, yy, yy)), 0.5);
  });
}

TEST_CASE("relaxed sign matches clipped STE under finite differences") {
  Rng rng(20);
  Tensor<double> x({1, 2, 4, 4});
  oracle::fill_random(x, rng, -0.9, 0.9);
  fd_check_graph({x}, [](Tape<double>& t, const std::vector<int>& ids) {
    const int y = sign_ste(t, ids[0], BinMode::kRelaxed);
    return scale(t, reduce_sum(t, mul(t, y, y)), 0.5);
  });
}
