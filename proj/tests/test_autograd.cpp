#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tbps/losses.hpp"
#include "test_util.hpp"

using namespace tbps;

TEST_CASE("finite differences of a quadratic match the analytic gradient") {
  Parameter<double> w("w", Shape{3});
  w.tensor.mutable_data()[0] = 1.0;
  w.tensor.mutable_data()[1] = -2.0;
  w.tensor.mutable_data()[2] = 0.5;
  const auto loss = [&] { return ops::sum(ops::mul(w.tensor, w.tensor)); };
  backward(loss());
  const Objective f = [&] {
    NoGradGuard g;
    return static_cast<long double>(loss().item());
  };
  const auto report = finite_diff_check<double>(f, {&w}, 1e-5);
  CHECK(report.max_rel_error < 1e-8);
  REQUIRE(report.params.size() == 1);
  CHECK(report.params[0].name == "w");
}

TEST_CASE("a corrupted analytic gradient is detected") {
  Parameter<double> w("w", Shape{2});
  w.fill(1.5);
  const auto loss = [&] { return ops::sum(ops::mul(w.tensor, w.tensor)); };
  backward(loss());
  w.tensor.mutable_grad()[1] = -w.tensor.grad()[1];
  const Objective f = [&] {
    NoGradGuard g;
    return static_cast<long double>(loss().item());
  };
  const auto report = finite_diff_check<double>(f, {&w}, 1e-5);
  CHECK(report.max_rel_error > 0.1);
  CHECK(report.params[0].worst_index == 1);
  CHECK_FALSE(report.passed(1e-5));
}

TEST_CASE("relative error metric") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("finite differences on a 2-pair projection matching loss") {
  Parameter<double> x("x", Shape{2, 3});
  Parameter<double> z("z", Shape{2, 3});
  Rng rng(3);
  x.init_truncated_normal(rng, 1.0);
  z.init_truncated_normal(rng, 1.0);
  const std::vector<int> labels{0, 1};
  const auto loss = [&] { return cmpm(x.tensor, z.tensor, labels, 1e-8); };
  backward(loss());
  const Objective f = [&] {
    NoGradGuard g;
    return static_cast<long double>(loss().item());
  };
  CHECK(finite_diff_check<double>(f, {&x, &z}, 1e-6).max_rel_error < 1e-5);
}

TEST_CASE("adam: first step moves each weight by about lr against the gradient sign") {
  Parameter<double> w("w", Shape{2});
  w.fill(0.0);
  w.tensor.mutable_grad()[0] = 1.0;
  w.tensor.mutable_grad()[1] = -3.0;
  adam_step<double>({&w}, AdamConfig{0.1});
  CHECK(w.tensor.at(0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(w.tensor.at(1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(w.step == 1);
}

TEST_CASE("adam: zero gradient leaves the weight unchanged") {
  Parameter<float> w("w", Shape{3});
  w.fill(0.25f);
  w.zero_grad();
  adam_step<float>({&w}, AdamConfig{0.1});
  for (float v : w.tensor.data()) CHECK(v == 0.25f);
  Parameter<float> never("never", Shape{2});
  never.fill(1.0f);
  adam_step<float>({&never}, AdamConfig{0.1});
  for (float v : never.tensor.data()) CHECK(v == 1.0f);
}

TEST_CASE("adam: bias correction against a hand-rolled reference over several steps") {
  Parameter<double> w("w", Shape{1});
  w.fill(1.0);
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * ref;  // d/dw w²
    w.tensor.mutable_grad()[0] = 2.0 * w.tensor.at(0);
    adam_step<double>({&w}, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(w.tensor.at(0) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("copy_parameters converts precision and checks names") {
  Parameter<float> a("a", Shape{2});
  a.fill(0.5f);
  a.adam_m[1] = 0.25f;
  a.step = 3;
  Parameter<double> b("a", Shape{2});
  copy_parameters<double, float>({&a}, {&b});
  CHECK(b.tensor.at(0) == 0.5);
  CHECK(b.adam_m[1] == 0.25);
  CHECK(b.step == 3);
  Parameter<double> c("other", Shape{2});
  CHECK_THROWS_AS((copy_parameters<double, float>({&a}, {&c})), ShapeError);
}
