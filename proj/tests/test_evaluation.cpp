#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cmbdet/evaluation.hpp"
#include "test_util.hpp"

using namespace cmb;

namespace {

// Independent quadratic re-implementation of the greedy matching rule,
// used as the oracle.
MatchResult brute_force_match(const std::vector<DetectionCandidate>& cands,
                              const std::vector<CMBAnnotation>& annos,
                              double radius_mm, Spacing sp) {
  std::vector<int> order(cands.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (cands[a].score != cands[b].score) return cands[a].score > cands[b].score;
    if (cands[a].x != cands[b].x) return cands[a].x < cands[b].x;
    if (cands[a].y != cands[b].y) return cands[a].y < cands[b].y;
    return cands[a].z < cands[b].z;
  });
  std::vector<bool> used(annos.size(), false);
  MatchResult r;
  r.match_radius_mm = radius_mm;
  for (int ci : order) {
    double best = 1e300;
    int arg = -1;
    for (std::size_t ai = 0; ai < annos.size(); ++ai) {
      if (used[ai]) continue;
      const double dx = (cands[ci].x - annos[ai].x) * sp.sx;
      const double dy = (cands[ci].y - annos[ai].y) * sp.sy;
      const double dz = (cands[ci].z - annos[ai].z) * sp.sz;
      const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (d <= radius_mm && d < best) {
        best = d;
        arg = static_cast<int>(ai);
      }
    }
    if (arg >= 0) {
      used[arg] = true;
      r.pairs.emplace_back(ci, arg);
    }
  }
  r.tp = static_cast<int>(r.pairs.size());
  r.fp = static_cast<int>(cands.size()) - r.tp;
  r.fn = static_cast<int>(annos.size()) - r.tp;
  return r;
}

std::vector<DetectionCandidate> random_cands(int n, Rng& rng) {
  std::vector<DetectionCandidate> out;
  for (int i = 0; i < n; ++i)
    out.push_back({rng.uniform(0.0, 30.0), rng.uniform(0.0, 30.0),
                   rng.uniform(0.0, 15.0), 5.0, rng.uniform(0.01, 0.99), {}});
  return out;
}

std::vector<CMBAnnotation> random_annos(int m, Rng& rng) {
  std::vector<CMBAnnotation> out;
  for (int i = 0; i < m; ++i) {
    CMBAnnotation a;
    a.x = rng.uniform(0.0, 30.0);
    a.y = rng.uniform(0.0, 30.0);
    a.z = rng.uniform(0.0, 15.0);
    out.push_back(a);
  }
  return out;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("match_detections basic examples") {
  const Spacing sp{1, 1, 1};
  std::vector<CMBAnnotation> annos(1);
  annos[0].x = 10;
  annos[0].y = 10;
  annos[0].z = 5;

  SUBCASE("single close candidate is a TP") {
    std::vector<DetectionCandidate> cands{{10.5, 10, 5, 5, 0.9, {}}};
    const auto m = match_detections(cands, annos, 5.0, sp);
    CHECK(m.tp == 1);
    CHECK(m.fp == 0);
    CHECK(m.fn == 0);
  }
  SUBCASE("two candidates near one annotation") {
    std::vector<DetectionCandidate> cands{{10.5, 10, 5, 5, 0.9, {}},
                                          {9.5, 10, 5, 5, 0.8, {}}};
    const auto m = match_detections(cands, annos, 5.0, sp);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.fn == 0);
  }
  SUBCASE("no candidates") {
    const auto m = match_detections({}, annos, 5.0, sp);
    CHECK(m.tp == 0);
    CHECK(m.fp == 0);
    CHECK(m.fn == 1);
  }
}

TEST_CASE("match_detections count identities vs brute force") {
  Rng rng(401);
  const Spacing sp{0.5, 0.5, 2.0};
  for (int trial = 0; trial < 300; ++trial) {
    const auto cands = random_cands(static_cast<int>(rng.uniform_int(0, 20)), rng);
    const auto annos = random_annos(static_cast<int>(rng.uniform_int(0, 10)), rng);
    const double radius = rng.uniform(1.0, 10.0);
    const auto a = match_detections(cands, annos, radius, sp);
    const auto b = brute_force_match(cands, annos, radius, sp);
    CHECK(a.tp == b.tp);
    CHECK(a.fp == b.fp);
    CHECK(a.fn == b.fn);
    CHECK(a.pairs == b.pairs);
    CHECK(a.tp == static_cast<int>(a.pairs.size()));
    CHECK(a.tp + a.fn == static_cast<int>(annos.size()));
    CHECK(a.tp + a.fp == static_cast<int>(cands.size()));
  }
}

TEST_CASE("detection_metrics definitions") {
  std::vector<MatchResult> per_subject(4);
  per_subject[0].tp = 3;
  per_subject[0].fp = 1;
  per_subject[1].tp = 2;
  per_subject[1].fp = 0;
  per_subject[2].tp = 2;
  per_subject[2].fp = 2;
  per_subject[3].tp = 2;
  per_subject[3].fp = 0;
  per_subject[3].fn = 1;
  const auto m = detection_metrics(per_subject);
  REQUIRE(m.sensitivity.has_value());
  REQUIRE(m.precision.has_value());
  CHECK(*m.sensitivity == doctest::Approx(0.90));
  CHECK(*m.precision == doctest::Approx(0.75));
  CHECK(m.fp_avg == doctest::Approx(0.75));
}

TEST_CASE("detection_metrics: 71 of 75 matches the paper's rounding") {
  std::vector<MatchResult> per_subject(23);
  per_subject[0].tp = 71;
  per_subject[0].fn = 4;
  const auto m = detection_metrics(per_subject);
  CHECK(*m.sensitivity == doctest::Approx(71.0 / 75.0).epsilon(1e-12));
  // 94.67% when rounded; the paper prints 94.66
  CHECK(std::abs(*m.sensitivity * 100.0 - 94.66) < 0.02);
}

TEST_CASE("detection_metrics zero-candidate convention") {
  std::vector<MatchResult> per_subject(2);
  per_subject[0].fn = 3;
  per_subject[1].fn = 1;
  const auto m = detection_metrics(per_subject);
  CHECK(*m.sensitivity == 0.0);
  CHECK(!m.precision.has_value());  // null, not zero
  CHECK(m.fp_avg == 0.0);
}

TEST_CASE("pr_curve endpoints") {
  const Spacing sp{1, 1, 1};
  SUBCASE("all candidates correct -> AUC-PR 1") {
    std::vector<SubjectDetections> subjects(1);
    for (int i = 0; i < 4; ++i) {
      CMBAnnotation a;
      a.x = 10.0 * i;
      a.y = 0;
      a.z = 0;
      subjects[0].annotations.push_back(a);
      subjects[0].cands.push_back({10.0 * i, 0, 0, 5, 0.2 + 0.2 * i, {}});
    }
    subjects[0].spacing = sp;
    const auto curve = pr_curve(subjects, 5.0);
    CHECK(curve.auc_pr == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("all candidates wrong -> AUC-PR 0") {
    std::vector<SubjectDetections> subjects(1);
    CMBAnnotation a;
    a.x = 0;
    a.y = 0;
    a.z = 0;
    subjects[0].annotations.push_back(a);
    subjects[0].cands.push_back({25, 25, 10, 5, 0.9, {}});
    subjects[0].cands.push_back({20, 20, 12, 5, 0.7, {}});
    subjects[0].spacing = sp;
    const auto curve = pr_curve(subjects, 5.0);
    CHECK(curve.auc_pr == doctest::Approx(0.0));
  }
}

TEST_CASE("pr_curve equals exhaustive threshold enumeration") {
  Rng rng(402);
  const Spacing sp{0.5, 0.5, 2.0};
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<SubjectDetections> subjects(
        static_cast<std::size_t>(rng.uniform_int(1, 3)));
    long n_annos = 0;
    for (auto& s : subjects) {
      s.cands = random_cands(static_cast<int>(rng.uniform_int(0, 12)), rng);
      s.annotations = random_annos(static_cast<int>(rng.uniform_int(0, 6)), rng);
      s.spacing = sp;
      n_annos += static_cast<long>(s.annotations.size());
    }
    const double radius = 6.0;
    const auto curve = pr_curve(subjects, radius);

    // oracle: enumerate distinct scores descending, recompute everything
    std::vector<double> scores;
    for (const auto& s : subjects)
      for (const auto& c : s.cands) scores.push_back(c.score);
    std::sort(scores.begin(), scores.end(), std::greater<>());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    REQUIRE(curve.points.size() == scores.size());

    double auc = 0, prev_recall = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      long tp = 0, fp = 0;
      for (const auto& s : subjects) {
        std::vector<DetectionCandidate> keep;
        for (const auto& c : s.cands)
          if (c.score >= scores[k]) keep.push_back(c);
        const auto m = brute_force_match(keep, s.annotations, radius, sp);
        tp += m.tp;
        fp += m.fp;
      }
      const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
      const double recall = n_annos > 0 ? static_cast<double>(tp) / n_annos : 0.0;
      CHECK(curve.points[k].threshold == doctest::Approx(scores[k]));
      CHECK(curve.points[k].precision == doctest::Approx(precision).epsilon(1e-12));
      CHECK(curve.points[k].recall == doctest::Approx(recall).epsilon(1e-12));
      auc += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
    CHECK(curve.auc_pr == doctest::Approx(auc).epsilon(1e-12));

    // recall is monotone non-decreasing as the threshold falls
    for (std::size_t k = 1; k < curve.points.size(); ++k)
      CHECK(curve.points[k].recall >= curve.points[k - 1].recall);
  }
}

TEST_CASE("dice_score on label maps") {
  RegionLabelMap a, b;
  a.labels = Volume3D({4, 4, 1}, {1, 1, 1}, Modality::LabelMap);
  b.labels = a.labels;
  // identical maps with all classes present
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      a.labels(x, y, 0) = static_cast<float>(x % 4);
      b.labels(x, y, 0) = static_cast<float>(x % 4);
    }
  auto d = dice_score(a, b);
  CHECK(d.per_class[0] == doctest::Approx(1.0));
  CHECK(d.per_class[2] == doctest::Approx(1.0));
  CHECK(d.mean_class == doctest::Approx(1.0));
  CHECK(d.pooled == doctest::Approx(1.0));

  // disjoint class 1: half-overlap arithmetic
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      a.labels(x, y, 0) = x < 2 ? 1.0f : 0.0f;               // pred: x in {0,1}
      b.labels(x, y, 0) = (x == 1 || x == 2) ? 1.0f : 0.0f;  // truth: x in {1,2}
    }
  d = dice_score(a, b);
  CHECK(d.per_class[0] == doctest::Approx(0.5));  // 2*4/(8+8)
  CHECK(d.absent_convention[1]);
  CHECK(d.per_class[1] == doctest::Approx(1.0));  // absent in both by convention
  CHECK(d.absent_convention[2]);
}

TEST_CASE("localization accuracy per-class and pooled") {
  LocalizationConfusion c;
  c.tp_lobar = 97;
  c.n_lobar = 100;
  c.tp_deep = 10;
  c.n_deep = 10;
  c.tp_infra = 5;
  c.n_infra = 5;
  const auto la = localization_accuracy(c);
  CHECK(*la.lobar == doctest::Approx(0.97));
  CHECK(*la.deep == doctest::Approx(1.0));
  CHECK(*la.infra == doctest::Approx(1.0));
  CHECK(la.total == doctest::Approx(112.0 / 115.0));

  LocalizationConfusion zero;
  zero.n_lobar = 2;  // tp 0
  const auto la0 = localization_accuracy(zero);
  CHECK(*la0.lobar == 0.0);
  CHECK(!la0.deep.has_value());
  CHECK(la0.total == 0.0);

  LocalizationConfusion none;
  CHECK_THROWS_AS(localization_accuracy(none), std::invalid_argument);
}

TEST_CASE("efp_avg paper-anchored values") {
  // seven eliminated FPs over the 23 GMC test subjects -> 0.30
  const double swi = efp_avg(7, 23);
  CHECK(swi == doctest::Approx(7.0 / 23.0).epsilon(1e-12));
  CHECK(std::floor(swi * 100.0) / 100.0 == doctest::Approx(0.30));
  // eight over 23 -> printed as 0.34
  const double t1 = efp_avg(8, 23);
  CHECK(t1 == doctest::Approx(8.0 / 23.0).epsilon(1e-12));
  CHECK(std::floor(t1 * 100.0) / 100.0 == doctest::Approx(0.34));
  CHECK(efp_avg(0, 23) == 0.0);
  // exact arithmetic identity
  for (int e : {1, 5, 23, 100})
    CHECK(efp_avg(e, 23) * 23 == doctest::Approx(e).epsilon(1e-12));
  CHECK_THROWS_AS(efp_avg(1, 0), std::invalid_argument);
}

TEST_CASE("post-filter identities: removing unmatched candidates") {
  Rng rng(403);
  const Spacing sp{1, 1, 1};
  for (int trial = 0; trial < 50; ++trial) {
    auto cands = random_cands(static_cast<int>(rng.uniform_int(2, 15)), rng);
    const auto annos = random_annos(static_cast<int>(rng.uniform_int(1, 6)), rng);
    const auto before = match_detections(cands, annos, 6.0, sp);

    std::vector<bool> matched(cands.size(), false);
    for (const auto& [ci, ai] : before.pairs) matched[ci] = true;

    // drop a random subset of unmatched candidates (the anatomical filter
    // on synthetic data removes only FPs)
    std::vector<DetectionCandidate> kept;
    for (std::size_t i = 0; i < cands.size(); ++i)
      if (matched[i] || rng.bernoulli(0.5)) kept.push_back(cands[i]);
    const auto after = match_detections(kept, annos, 6.0, sp);

    CHECK(after.tp == before.tp);  // sensitivity preserved exactly
    CHECK(after.fp <= before.fp);
    if (before.tp + before.fp > 0 && after.tp + after.fp > 0) {
      const double p_before = static_cast<double>(before.tp) / (before.tp + before.fp);
      const double p_after = static_cast<double>(after.tp) / (after.tp + after.fp);
      CHECK(p_after >= p_before - 1e-12);
    }
  }
}

}  // TEST_SUITE
