#include <doctest.h>

#include <cmath>

#include "cmbdet/hspl.hpp"
#include "cmbdet/synthetic.hpp"
#include "test_util.hpp"

using namespace cmb;
using cmbtest::fd_check_dbl;

namespace {

std::vector<double> rand_vec(int n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_SUITE("hspl") {

TEST_CASE("concentration loss boundary cases") {
  const std::vector<double> e1{1, 0}, e2{0, 1}, zero{0, 0};

  // V_c at the same-class prototype -> 0
  CHECK(std::abs(concentration_loss_grad(e1, e1, e2, 1.0).loss) < 1e-6);
  // V_c at the other-class prototype -> 2
  CHECK(std::abs(concentration_loss_grad(e2, e1, e2, 1.0).loss - 2.0) < 1e-6);
  // equidistant -> exactly 1
  CHECK(concentration_loss_grad(zero, e1, e2, 1.0).loss == 1.0);
  // both prototypes coincide with V_c -> neutral 1 via the epsilon guard
  CHECK(concentration_loss_grad(e1, e1, e1, 1.0).loss == 1.0);
}

TEST_CASE("concentration loss stays in [0,2] for n=1") {
  Rng rng(201);
  for (int i = 0; i < 2000; ++i) {
    const int n = static_cast<int>(rng.uniform_int(1, 16));
    const auto v = rand_vec(n, rng), a = rand_vec(n, rng), b = rand_vec(n, rng);
    const double L = concentration_loss_grad(v, a, b, 1.0).loss;
    CHECK(L >= -1e-6);
    CHECK(L <= 2.0 + 1e-6);
  }
}

TEST_CASE("role swap is antisymmetric about 1") {
  Rng rng(202);
  for (int i = 0; i < 500; ++i) {
    const int n = static_cast<int>(rng.uniform_int(1, 8));
    const auto v = rand_vec(n, rng), a = rand_vec(n, rng), b = rand_vec(n, rng);
    const double l1 = concentration_loss_grad(v, a, b, 1.0).loss;
    const double l2 = concentration_loss_grad(v, b, a, 1.0).loss;
    CHECK(std::abs(l1 + l2 - 2.0) < 1e-9);
  }
}

TEST_CASE("concentration loss is rotation invariant") {
  Rng rng(203);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = rand_vec(3, rng);
    auto a = rand_vec(3, rng);
    auto b = rand_vec(3, rng);
    const double before = concentration_loss_grad(v, a, b, 1.0).loss;
    // random Givens rotations over the three coordinate planes
    for (int k = 0; k < 3; ++k) {
      const double th = rng.uniform(0.0, 6.28318);
      const int i = k, j = (k + 1) % 3;
      const double c = std::cos(th), s = std::sin(th);
      for (auto* vec : {&v, &a, &b}) {
        const double xi = (*vec)[i], xj = (*vec)[j];
        (*vec)[i] = c * xi - s * xj;
        (*vec)[j] = s * xi + c * xj;
      }
    }
    const double after = concentration_loss_grad(v, a, b, 1.0).loss;
    CHECK(before == doctest::Approx(after).epsilon(1e-9));
  }
}

TEST_CASE("concentration gradients match central differences") {
  Rng rng(204);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 10));
    auto v = rand_vec(n, rng), a = rand_vec(n, rng), b = rand_vec(n, rng);
    const auto g = concentration_loss_grad(v, a, b, 1.0);
    const auto eval_v = [&] { return concentration_loss_grad(v, a, b, 1.0).loss; };
    CHECK(fd_check_dbl(v, g.d_v, eval_v, 1e-4) < 1e-4);
    CHECK(fd_check_dbl(a, g.d_ma, eval_v, 1e-4) < 1e-4);
    CHECK(fd_check_dbl(b, g.d_mb, eval_v, 1e-4) < 1e-4);
  }
}

TEST_CASE("concentration role assignment follows the sample class") {
  PrototypePair protos(2, 7);
  protos.cmb().value = {1.0f, 0.0f};
  protos.mimic().value = {0.0f, 1.0f};
  LossWeights w;

  FeatureVector v;
  v.values = {1.0f, 0.0f};
  v.source_is_cmb = true;
  CHECK(concentration_loss(v, protos, w) == doctest::Approx(0.0).epsilon(1e-6));
  v.source_is_cmb = false;  // same vector, mimic role: sits at the wrong prototype
  CHECK(concentration_loss(v, protos, w) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("focal loss with gamma=0 is alpha-scaled cross entropy") {
  Rng rng(205);
  std::vector<float> p(50);
  std::vector<std::uint8_t> t(50);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<float>(rng.uniform(0.05, 0.95));
    t[i] = rng.bernoulli(0.5);
  }
  const double L = focal_loss(p, t, 0.0, 0.5);
  double ce = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    ce += t[i] ? -std::log(static_cast<double>(p[i]))
               : -std::log(1.0 - static_cast<double>(p[i]));
  ce /= static_cast<double>(p.size());
  CHECK(L == doctest::Approx(0.5 * ce).epsilon(1e-9));
}

TEST_CASE("focal loss single-voxel value") {
  // target=1, P=0.9, gamma=2, alpha=0.25: 0.25 * 0.1^2 * (-ln 0.9)
  const std::vector<float> p{0.9f};
  const std::vector<std::uint8_t> t{1};
  const double L = focal_loss(p, t, 2.0, 0.25);
  const double pt = static_cast<double>(p[0]);
  const double expect = 0.25 * (1.0 - pt) * (1.0 - pt) * -std::log(pt);
  CHECK(L == doctest::Approx(expect).epsilon(1e-12));
  CHECK(L == doctest::Approx(2.634e-4).epsilon(1e-3));
}

TEST_CASE("focal loss near zero when prediction equals the hard target") {
  const std::vector<float> p{1.0f, 0.0f};
  const std::vector<std::uint8_t> t{1, 0};
  CHECK(focal_loss(p, t, 2.0, 0.25) < 1e-5);  // bounded by the clamp epsilon
}

TEST_CASE("focal gradients match central differences") {
  Rng rng(206);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(3, 40));
    std::vector<float> p(n);
    std::vector<std::uint8_t> t(n);
    for (int i = 0; i < n; ++i) {
      p[i] = static_cast<float>(rng.uniform(0.05, 0.95));
      t[i] = rng.bernoulli(0.3);
    }
    std::vector<double> pd(p.begin(), p.end());
    std::vector<double> grad;
    focal_loss(pd, t, 2.0, 0.25, &grad);
    const auto eval = [&] { return focal_loss(pd, t, 2.0, 0.25); };
    CHECK(fd_check_dbl(pd, grad, eval, 1e-4) < 1e-4);
  }
}

TEST_CASE("regression loss basics") {
  nn::Tensor reg(4, 2, 2, 2);
  SUBCASE("no positives -> 0") {
    CHECK(regression_loss(reg, {}) == 0.0);
  }
  SUBCASE("exact prediction -> 0") {
    RegressionTarget t;
    t.x = 1;
    t.y = 0;
    t.z = 1;
    t.fx = t.fy = t.fz = 0.5;  // sigmoid(0)
    t.log_size = 0.0;
    CHECK(regression_loss(reg, {t}) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("half-offset error on one axis -> 0.25") {
    RegressionTarget t;
    t.x = 0;
    t.y = 0;
    t.z = 0;
    t.fy = t.fz = 0.5;
    t.fx = 0.25;
    t.log_size = 0.0;
    reg.at(0, 0, 0, 0) = static_cast<float>(std::log(3.0));  // sigmoid = 0.75
    CHECK(regression_loss(reg, {t}) == doctest::Approx(0.25).epsilon(1e-6));
  }
}

TEST_CASE("regression gradients match finite differences") {
  Rng rng(207);
  nn::Tensor reg = cmbtest::random_tensor(4, 3, 3, 3, rng);
  std::vector<RegressionTarget> targets;
  for (int i = 0; i < 3; ++i) {
    RegressionTarget t;
    t.x = static_cast<int>(rng.uniform_int(0, 2));
    t.y = static_cast<int>(rng.uniform_int(0, 2));
    t.z = static_cast<int>(rng.uniform_int(0, 2));
    t.fx = rng.uniform(0.1, 0.9);
    t.fy = rng.uniform(0.1, 0.9);
    t.fz = rng.uniform(0.1, 0.9);
    t.log_size = rng.uniform(-0.5, 0.5);
    targets.push_back(t);
  }
  nn::Tensor d;
  regression_loss(reg, targets, &d);
  std::vector<double> dd(d.v.begin(), d.v.end());
  const auto eval = [&] { return regression_loss(reg, targets); };
  std::vector<std::size_t> probe;
  for (std::size_t i = 0; i < reg.v.size(); i += 7) probe.push_back(i);
  CHECK(cmbtest::fd_check(reg.v, dd, eval, 1e-3, probe) < 1e-2);
}

TEST_CASE("total loss weighted sum and ablation switch") {
  LossWeights w;  // paper defaults 1, 0.001, 0.01
  const LossBreakdown b = total_loss(0.4, 10.0, 1.0, w);
  CHECK(b.l_final == doctest::Approx(0.42).epsilon(1e-12));
  CHECK(total_loss(0, 0, 0, w).l_final == 0.0);

  LossWeights ablated = w;
  ablated.lambda_con = 0.0;
  CHECK(total_loss(0.4, 10.0, 123.0, ablated).l_final ==
        doctest::Approx(0.41).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(total_loss(std::nan(""), 0, 0, w),
                       doctest::Contains("L_cls"), std::runtime_error);
  CHECK_THROWS_WITH_AS(total_loss(0, std::nan(""), 0, w),
                       doctest::Contains("L_reg"), std::runtime_error);
  CHECK_THROWS_WITH_AS(total_loss(0, 0, std::nan(""), w),
                       doctest::Contains("L_con"), std::runtime_error);
}

TEST_CASE("select_coordinate follows the two branches") {
  TrainingCrop crop;
  crop.X = nn::Tensor(2, 8, 8, 8);
  nn::Tensor p(1, 8, 8, 8, 0.1f);

  SUBCASE("argmax branch for crops without CMBs") {
    crop.contains_cmb = false;
    p.at(0, 5, 4, 3) = 0.9f;  // (x,y,z) = (3,4,5)
    const auto c = select_coordinate(crop, p);
    REQUIRE(c.size() == 1);
    CHECK(c[0] == std::array<int, 3>{3, 4, 5});
  }
  SUBCASE("label branch ignores the probability map") {
    crop.contains_cmb = true;
    crop.cmb_coords = {{1, 2, 3}};
    p.at(0, 7, 7, 7) = 0.99f;
    const auto c = select_coordinate(crop, p);
    REQUIRE(c.size() == 1);
    CHECK(c[0] == std::array<int, 3>{1, 2, 3});
  }
  SUBCASE("uniform map tie-breaks lexicographically to the origin") {
    crop.contains_cmb = false;
    const auto c = select_coordinate(crop, p);
    REQUIRE(c.size() == 1);
    CHECK(c[0] == std::array<int, 3>{0, 0, 0});
  }
}

TEST_CASE("extract_feature_vector reads per-channel columns") {
  nn::Tensor f(2, 4, 4, 4, 1.0f);
  SUBCASE("constant map gives all ones") {
    const auto v = extract_feature_vector(f, {1, 2, 3}, true);
    CHECK(v.values == std::vector<float>{1.0f, 1.0f});
    CHECK(v.source_is_cmb);
  }
  SUBCASE("direct read of two channels") {
    f.at(0, 2, 1, 3) = 3.0f;
    f.at(1, 2, 1, 3) = -1.0f;
    const auto v = extract_feature_vector(f, {3, 1, 2}, false);
    CHECK(v.values == std::vector<float>{3.0f, -1.0f});
  }
  SUBCASE("identical columns give identical vectors") {
    const auto a = extract_feature_vector(f, {0, 0, 0}, false);
    const auto b = extract_feature_vector(f, {1, 1, 1}, false);
    CHECK(a.values == b.values);
  }
  SUBCASE("out-of-grid coordinate throws") {
    CHECK_THROWS_AS(extract_feature_vector(f, {4, 0, 0}, false), std::out_of_range);
  }
}

TEST_CASE("balanced sampler: counts, determinism, clean negatives") {
  PhantomSpec spec;
  spec.shape = {48, 48, 24};
  spec.spacing = {1.0, 1.0, 2.0};
  spec.n_cmbs = 2;
  spec.n_vessels = 2;
  spec.n_calcifications = 1;
  spec.seed = 31;
  std::vector<PreprocessedSubject> pool;
  for (int i = 0; i < 2; ++i) {
    PhantomSpec s = spec;
    s.seed = spec.seed + i;
    pool.push_back(preprocess_for_detection(generate_phantom(s), 48));
  }

  Rng rng1(99), rng2(99);
  const auto crops1 = sample_balanced_crops(pool, {16, 16, 16}, 8, rng1);
  const auto crops2 = sample_balanced_crops(pool, {16, 16, 16}, 8, rng2);
  REQUIRE(crops1.size() == 8);

  int pos = 0, neg = 0;
  for (const auto& c : crops1) (c.contains_cmb ? pos : neg)++;
  CHECK(pos == 4);
  CHECK(neg == 4);

  for (std::size_t i = 0; i < crops1.size(); ++i) {
    CHECK(crops1[i].window == crops2[i].window);  // same seed, same origins
    CHECK(crops1[i].subject_index == crops2[i].subject_index);
  }

  // negatives contain zero annotation centers (exhaustive)
  for (const auto& c : crops1) {
    if (c.contains_cmb) {
      CHECK(!c.cmb_coords.empty());
      for (const auto& coord : c.cmb_coords) {
        CHECK(coord[0] >= 0);
        CHECK(coord[0] < 16);
        CHECK(coord[2] < 16);
      }
      continue;
    }
    CHECK(c.cmb_coords.empty());
    const auto& subj = pool[c.subject_index];
    for (const auto& a : subj.annotations) {
      const double zi = map_z_forward(a.z, subj.native_depth, subj.swi.size().nz);
      const bool inside = a.x >= c.window.x0 && a.x < c.window.x0 + c.window.w &&
                          a.y >= c.window.y0 && a.y < c.window.y0 + c.window.h &&
                          zi >= c.window.z0 && zi < c.window.z0 + c.window.d;
      CHECK(!inside);
    }
  }
}

TEST_CASE("balanced sampler validates inputs") {
  std::vector<PreprocessedSubject> empty_pool;
  Rng rng(1);
  CHECK_THROWS_AS(sample_balanced_crops(empty_pool, {8, 8, 8}, 4, rng),
                  std::invalid_argument);

  PhantomSpec spec;
  spec.shape = {48, 48, 24};
  spec.spacing = {1.0, 1.0, 2.0};
  spec.n_cmbs = 0;
  spec.n_vessels = 1;
  spec.n_calcifications = 0;
  spec.seed = 5;
  std::vector<PreprocessedSubject> pool{
      preprocess_for_detection(generate_phantom(spec), 48)};
  CHECK_THROWS_AS(sample_balanced_crops(pool, {8, 8, 8}, 4, rng),
                  std::invalid_argument);  // no subject has a CMB
  CHECK_THROWS_AS(sample_balanced_crops(pool, {8, 8, 8}, 3, rng),
                  std::invalid_argument);  // odd count
}

}  // TEST_SUITE
