#include <doctest.h>

#include <cmath>
#include <random>

#include "shelfnet/errors.hpp"
#include "shelfnet/tensor/ops.hpp"
#include "shelfnet/tensor/optim.hpp"
#include "shelfnet/tensor/parameters.hpp"
#include "test_support.hpp"

using namespace shelfnet;
using testing::finite_difference_check;
using testing::random_tensor;
using T = Tensor<double>;

namespace {

// Scalar probe <op(...), r> with a fixed random direction r.
T probe(const T& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return dot(y, random_tensor(y.shape(), rng));
}

}  // namespace

TEST_CASE("finite-difference gradients of every primitive") {
  std::mt19937_64 rng(100);

  SUBCASE("conv2d") {
    T x = random_tensor({2, 3, 5, 5}, rng, -1, 1, true);
    T w = random_tensor({4, 3, 3, 3}, rng, -1, 1, true);
    auto r = finite_difference_check({x, w}, [&] { return probe(conv2d(x, w, 2, 1, 1), 1); });
    CHECK(r.ok);
    T w1 = random_tensor({2, 3, 1, 1}, rng, -1, 1, true);
    CHECK(finite_difference_check({x, w1}, [&] { return probe(conv2d(x, w1), 2); }).ok);
    T wd = random_tensor({2, 3, 3, 3}, rng, -1, 1, true);
    CHECK(finite_difference_check({x, wd}, [&] { return probe(conv2d(x, wd, 1, 2, 2), 3); }).ok);
  }
  SUBCASE("conv_transpose2d") {
    T x = random_tensor({2, 3, 4, 4}, rng, -1, 1, true);
    T w = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    CHECK(finite_difference_check({x, w}, [&] { return probe(conv_transpose2d(x, w, 2, 1, 1), 4); }).ok);
  }
  SUBCASE("batch_norm train and eval") {
    T x = random_tensor({3, 2, 3, 3}, rng, -2, 2, true);
    T g = random_tensor({1, 2, 1, 1}, rng, 0.5, 1.5, true);
    T b = random_tensor({1, 2, 1, 1}, rng, -1, 1, true);
    BatchNormState<double> st(2);
    CHECK(finite_difference_check({x, g, b}, [&] { return probe(batch_norm(x, g, b, st, Mode::train), 5); }).ok);
    CHECK(finite_difference_check({x, g, b}, [&] { return probe(batch_norm(x, g, b, st, Mode::eval), 6); }).ok);
  }
  SUBCASE("relu and sigmoid") {
    // Keep values away from the relu kink.
    T x = random_tensor({2, 2, 3, 3}, rng, 0.1, 1, true);
    auto xv = x.mutable_values();
    for (std::size_t i = 0; i < xv.size(); i += 2) xv[i] = -xv[i];
    CHECK(finite_difference_check({x}, [&] { return probe(relu(x), 7); }, 1e-4).ok);
    CHECK(finite_difference_check({x}, [&] { return probe(sigmoid(x), 8); }, 1e-4).ok);
  }
  SUBCASE("dropout") {
    T x = random_tensor({2, 2, 4, 4}, rng, -1, 1, true);
    CHECK(finite_difference_check({x}, [&] { return probe(dropout(x, 0.3, Mode::train, 99), 9); }).ok);
  }
  SUBCASE("resampling and pooling") {
    T x = random_tensor({1, 2, 3, 4}, rng, -1, 1, true);
    CHECK(finite_difference_check({x}, [&] { return probe(bilinear_upsample(x, 2), 10); }).ok);
    CHECK(finite_difference_check({x}, [&] { return probe(bilinear_resize(x, 5, 7), 11); }).ok);
    CHECK(finite_difference_check({x}, [&] { return probe(global_avg_pool(x), 12); }).ok);
    CHECK(finite_difference_check({x}, [&] { return probe(max_pool2d(x, 3, 2, 1), 13); }).ok);
  }
  SUBCASE("add, channel_scale, select_mean") {
    T x = random_tensor({2, 3, 2, 2}, rng, -1, 1, true);
    T y = random_tensor({2, 3, 2, 2}, rng, -1, 1, true);
    T g = random_tensor({2, 3, 1, 1}, rng, -1, 1, true);
    CHECK(finite_difference_check({x, y}, [&] { return probe(add(x, y), 14); }).ok);
    CHECK(finite_difference_check({x, g}, [&] { return probe(channel_scale(x, g), 15); }).ok);
    const std::vector<std::int64_t> idx{0, 5, 7, 7, 20};
    CHECK(finite_difference_check({x}, [&] { return select_mean(x, idx); }).ok);
  }
  SUBCASE("softmax_cross_entropy") {
    T z = random_tensor({2, 4, 2, 3}, rng, -3, 3, true);
    std::vector<std::int32_t> labels{0, 1, 2, 3, kIgnoreIndex, 1, 2, 2, 0, 3, 1, kIgnoreIndex};
    CHECK(finite_difference_check({z}, [&] { return softmax_cross_entropy(z, labels).loss; }, 1e-4).ok);
  }
}

TEST_CASE("add routes the upstream gradient to both inputs") {
  std::mt19937_64 rng(101);
  T x = random_tensor({1, 2, 2, 2}, rng, -1, 1, true);
  T y = random_tensor({1, 2, 2, 2}, rng, -1, 1, true);
  T r = random_tensor({1, 2, 2, 2}, rng);
  backward(dot(add(x, y), r));
  for (std::size_t i = 0; i < r.values().size(); ++i) {
    CHECK(x.grad()[i] == r.values()[i]);
    CHECK(y.grad()[i] == r.values()[i]);
  }
}

TEST_CASE("backward contract") {
  std::mt19937_64 rng(102);
  T w = random_tensor({1, 3, 2, 2}, rng, -1, 1, true);
  T x = random_tensor({1, 3, 2, 2}, rng);

  SUBCASE("linear loss gradient is the fixed operand") {
    backward(dot(w, x));
    for (std::size_t i = 0; i < x.values().size(); ++i) CHECK(w.grad()[i] == x.values()[i]);
  }
  SUBCASE("constant loss leaves gradients at zero") {
    backward(T::scalar(3.0));
    for (double g : w.grad()) CHECK(g == 0.0);
  }
  SUBCASE("non-scalar loss is a usage error") {
    CHECK_THROWS_AS(backward(relu(w)), UsageError);
  }
  SUBCASE("k use sites accumulate k single-site gradients") {
    T once = random_tensor({2, 3, 4, 4}, rng, -1, 1);
    backward(probe(conv2d(once, w), 3));
    const auto single = w.grad();
    w.zero_grad();
    T total = probe(conv2d(once, w), 3);
    for (int k = 1; k < 3; ++k) total = add(total, probe(conv2d(once, w), 3));
    backward(total);
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(std::abs(w.grad()[i] - 3.0 * single[i]) < 1e-12);
  }
}

TEST_CASE("sharing groups alias storage and accumulate") {
  ParameterStore<double> store;
  T a = store.create("blk.conv1.weight", {2, 2, 3, 3}, "blk.conv");
  T b = store.create("blk.conv2.weight", {2, 2, 3, 3}, "blk.conv");
  T c = store.create("other.weight", {2, 2, 3, 3});
  CHECK(a.shares_storage_with(b));
  CHECK_FALSE(a.shares_storage_with(c));
  CHECK(store.unique().size() == 2);
  CHECK(store.unique_count() == 72);
  CHECK_THROWS_AS(store.create("blk.conv3.weight", {2, 2, 1, 1}, "blk.conv"), ShapeError);
  CHECK_THROWS_AS(store.create("other.weight", {1, 1, 1, 1}), ConfigError);
}

TEST_CASE("sgd_step") {
  SUBCASE("plain gradient step") {
    std::vector<double> w{1.0, -2.0}, g{0.5, 0.25}, v(2, 0.0);
    sgd_step<double>(w, g, v, {0.1, 0.0, 0.0});
    CHECK(w[0] == doctest::Approx(0.95));
    CHECK(w[1] == doctest::Approx(-2.025));
  }
  SUBCASE("zero learning rate leaves weights unchanged") {
    std::vector<double> w{1.0, -2.0}, g{0.5, 0.25}, v(2, 0.0);
    sgd_step<double>(w, g, v, {0.0, 0.9, 1e-4});
    CHECK(w[0] == 1.0);
    CHECK(w[1] == -2.0);
  }
  SUBCASE("momentum recurrence on a quadratic") {
    // f(w) = 0.5 * a * w^2, g = a * w; hand-iterated recurrence below.
    const double a = 3.0, lr = 0.05, m = 0.9, wd = 0.01;
    std::vector<double> w{2.0}, v{0.0};
    double hw = 2.0, hv = 0.0;
    for (int step = 0; step < 2; ++step) {
      std::vector<double> g{a * w[0]};
      sgd_step<double>(w, g, v, {lr, m, wd});
      hv = m * hv + (a * hw + wd * hw);
      hw = hw - lr * hv;
      CHECK(w[0] == hw);
      CHECK(v[0] == hv);
    }
    // Step 1: v = 6.02, w = 1.699; step 2: v = 0.9*6.02 + 3.01*1.699
    CHECK(hw == doctest::Approx(1.699 - 0.05 * (0.9 * 6.02 + 3.01 * 1.699)));
  }
  SUBCASE("shape mismatch") {
    std::vector<double> w{1.0}, g{1.0, 2.0}, v(1, 0.0);
    CHECK_THROWS_AS(sgd_step<double>(w, g, v, {}), ShapeError);
  }
}
