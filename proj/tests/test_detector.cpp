#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmbdet/detector.hpp"
#include "cmbdet/nn/checkpoint.hpp"
#include "test_util.hpp"

#include <nlohmann/json.hpp>

using namespace cmb;
using cmbtest::random_tensor;

namespace {

DetectorConfig small_config() {
  DetectorConfig c;
  c.base_channels = 4;
  c.target_slices = 32;
  c.train_crop = {16, 16, 16};
  c.infer_window = {16, 16, 16};
  return c;
}

nn::Param* find_param(nn::ParamRefs& params, const std::string& name) {
  for (nn::Param* p : params)
    if (p->name == name) return p;
  return nullptr;
}

}  // namespace

TEST_SUITE("detector") {

TEST_CASE("backbone level shapes form a 4:2:1 pyramid") {
  DetectorModel model(small_config(), AblationArm::RpnFfmHspl, 42);
  Rng rng(1);
  for (const int side : {8, 16, 24}) {
    const auto crop = random_tensor(2, side, side, side, rng);
    const auto levels = model.backbone_forward(crop);
    CHECK(levels.coarse.c == 16);
    CHECK(levels.coarse.nx == side / 4);
    CHECK(levels.mid.c == 8);
    CHECK(levels.mid.nx == side / 2);
    CHECK(levels.fine.c == 4);
    CHECK(levels.fine.nx == side);
    CHECK(levels.fine.nz == side);
  }
}

TEST_CASE("backbone rejects non-divisible crops with a padding hint") {
  DetectorModel model(small_config(), AblationArm::Rpn, 42);
  Rng rng(2);
  const auto crop = random_tensor(2, 10, 16, 16, rng);
  CHECK_THROWS_WITH_AS(model.backbone_forward(crop), doctest::Contains("pad"),
                       std::invalid_argument);
}

TEST_CASE("backbone is deterministic and finite on zero input") {
  DetectorModel model(small_config(), AblationArm::RpnFfmHspl, 42);
  Rng rng(3);
  const auto crop = random_tensor(2, 16, 16, 16, rng);
  const auto a = model.forward(crop);
  const auto b = model.forward(crop);
  CHECK(a.field.prob.v == b.field.prob.v);
  CHECK(a.field.reg.v == b.field.reg.v);

  const nn::Tensor zeros(2, 16, 16, 16);
  const auto z = model.forward(zeros);
  for (float v : z.field.prob.v) {
    CHECK(std::isfinite(v));
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  for (float v : z.field.reg.v) CHECK(std::isfinite(v));
}

TEST_CASE("fuse_features: zero coarse levels reduce to the projected finest") {
  DetectorModel model(small_config(), AblationArm::RpnFfm, 7);
  Rng rng(4);
  nn::UNetLevels levels;
  levels.fine = random_tensor(4, 8, 8, 8, rng);
  levels.mid = nn::Tensor(8, 4, 4, 4);      // zeros
  levels.coarse = nn::Tensor(16, 2, 2, 2);  // zeros
  const nn::Tensor fused = model.fuse_features(levels);
  CHECK(fused.c == 4);
  CHECK(fused.nx == 8);

  // Independent reconstruction from the registered parameters: bias-free
  // 1x1 projection of the finest level, per-position L2 norm with the
  // learned scales, then ReLU.
  auto params = model.parameters();
  const nn::Param* w = find_param(params, "ffm.proj_fine.w");
  const nn::Param* gamma = find_param(params, "ffm.norm.scale");
  REQUIRE(w != nullptr);
  REQUIRE(gamma != nullptr);
  const std::size_t spatial = levels.fine.spatial();
  for (std::size_t p = 0; p < spatial; p += 17) {
    std::array<double, 4> proj{};
    for (int co = 0; co < 4; ++co)
      for (int ci = 0; ci < 4; ++ci)
        proj[co] += static_cast<double>(w->value[co * 4 + ci]) *
                    levels.fine.v[ci * spatial + p];
    double norm2 = 1e-12;
    for (double v : proj) norm2 += v * v;
    const double inv = 1.0 / std::sqrt(norm2);
    for (int co = 0; co < 4; ++co) {
      const double expect = std::max(0.0, gamma->value[co] * proj[co] * inv);
      CHECK(fused.v[co * spatial + p] == doctest::Approx(expect).epsilon(5e-4));
    }
  }
}

TEST_CASE("fuse_features validates the pyramid relation") {
  DetectorModel model(small_config(), AblationArm::RpnFfm, 7);
  Rng rng(5);
  nn::UNetLevels bad;
  bad.fine = random_tensor(4, 8, 8, 8, rng);
  bad.mid = random_tensor(8, 8, 8, 8, rng);  // wrong grid
  bad.coarse = random_tensor(16, 2, 2, 2, rng);
  CHECK_THROWS_AS(model.fuse_features(bad), std::invalid_argument);
}

TEST_CASE("rpn head: zero weights produce probability one half") {
  DetectorModel model(small_config(), AblationArm::Rpn, 11);
  auto params = model.parameters();
  for (const char* name : {"head.obj.w", "head.obj.b"}) {
    nn::Param* p = find_param(params, name);
    REQUIRE(p != nullptr);
    std::fill(p->value.begin(), p->value.end(), 0.0f);
  }
  Rng rng(6);
  const auto out = model.forward(random_tensor(2, 16, 16, 16, rng));
  for (float v : out.field.prob.v) CHECK(v == doctest::Approx(0.5));
  CHECK(out.field.prob.nx == 16);
  CHECK(out.field.reg.c == 4);
}

TEST_CASE("decode_boxes default regression decodes to cell centers") {
  DetectionFieldOutput field;
  field.prob = nn::Tensor(1, 4, 4, 4, 0.1f);
  field.reg = nn::Tensor(4, 4, 4, 4);
  field.prob.at(0, 2, 1, 3) = 0.9f;

  SUBCASE("zero offsets give voxel + 0.5 and anchor size") {
    const auto cands = decode_boxes(field, {10, 20, 30, 4, 4, 4}, 0.5, 5.0);
    REQUIRE(cands.size() == 1);
    CHECK(cands[0].x == doctest::Approx(10 + 3 + 0.5));
    CHECK(cands[0].y == doctest::Approx(20 + 1 + 0.5));
    CHECK(cands[0].z == doctest::Approx(30 + 2 + 0.5));
    CHECK(cands[0].size_mm == doctest::Approx(5.0));
    CHECK(cands[0].score == doctest::Approx(0.9).epsilon(1e-6));
  }
  SUBCASE("log-size ln 2 doubles the anchor") {
    field.reg.at(3, 2, 1, 3) = static_cast<float>(std::log(2.0));
    const auto cands = decode_boxes(field, {0, 0, 0, 4, 4, 4}, 0.5, 5.0);
    REQUIRE(cands.size() == 1);
    CHECK(cands[0].size_mm == doctest::Approx(10.0).epsilon(1e-6));
  }
  SUBCASE("threshold above the maximum yields the empty list") {
    CHECK(decode_boxes(field, {0, 0, 0, 4, 4, 4}, 0.999, 5.0).empty());
  }
  SUBCASE("translation equivariance in the crop origin") {
    const auto a = decode_boxes(field, {0, 0, 0, 4, 4, 4}, 0.5, 5.0);
    const auto b = decode_boxes(field, {7, 9, 11, 4, 4, 4}, 0.5, 5.0);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(b[i].x - a[i].x == doctest::Approx(7.0));
      CHECK(b[i].y - a[i].y == doctest::Approx(9.0));
      CHECK(b[i].z - a[i].z == doctest::Approx(11.0));
    }
  }
}

TEST_CASE("nms_3d examples") {
  const Spacing sp{1, 1, 1};
  std::vector<DetectionCandidate> two;
  two.push_back({0, 0, 0, 5, 0.9, {}});
  two.push_back({0.5, 0, 0, 5, 0.8, {}});
  auto kept = nms_3d(two, 5.0, sp);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == doctest::Approx(0.9));

  two[1].x = 20.0;
  kept = nms_3d(two, 5.0, sp);
  CHECK(kept.size() == 2);

  std::vector<DetectionCandidate> cluster;
  Rng rng(7);
  for (int i = 0; i < 10; ++i)
    cluster.push_back({rng.uniform(0.0, 0.9), rng.uniform(0.0, 0.9),
                       rng.uniform(0.0, 0.9), 5, rng.uniform(0.1, 0.99), {}});
  CHECK(nms_3d(cluster, 5.0, sp).size() == 1);
}

TEST_CASE("nms_3d against the brute-force suppression oracle") {
  Rng rng(8);
  const Spacing sp{0.5, 0.5, 2.0};
  for (int trial = 0; trial < 40; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(0, 60));
    std::vector<DetectionCandidate> cands;
    for (int i = 0; i < n; ++i)
      cands.push_back({rng.uniform(0.0, 40.0), rng.uniform(0.0, 40.0),
                       rng.uniform(0.0, 20.0), 5.0, rng.uniform(0.01, 0.99), {}});
    const double radius = rng.uniform(1.0, 8.0);
    const auto kept = nms_3d(cands, radius, sp);

    const auto d2 = [&](const DetectionCandidate& a, const DetectionCandidate& b) {
      const double dx = (a.x - b.x) * sp.sx, dy = (a.y - b.y) * sp.sy,
                   dz = (a.z - b.z) * sp.sz;
      return dx * dx + dy * dy + dz * dz;
    };
    // kept candidates form an independent set under the radius relation
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        CHECK(d2(kept[i], kept[j]) > radius * radius);
    // every input candidate is kept or lies within the radius of a kept
    // candidate with a score at least as high
    for (const auto& c : cands) {
      bool accounted = false;
      for (const auto& k : kept)
        if (d2(c, k) <= radius * radius && k.score >= c.score) {
          accounted = true;
          break;
        }
      CHECK(accounted);
    }
  }
}

TEST_CASE("preprocess_for_detection requires a phase image") {
  SubjectRecord s;
  s.subject_id = "s";
  s.swi = Volume3D({8, 8, 8}, {1, 1, 1}, Modality::SWI);
  s.swi.data()[0] = 1.0f;
  CHECK_THROWS_WITH_AS(preprocess_for_detection(s, 16), doctest::Contains("phase"),
                       std::invalid_argument);
}

TEST_CASE("detect_subject: untrained model on a flat subject finds nothing") {
  SubjectRecord s;
  s.subject_id = "flat";
  s.swi = Volume3D({16, 16, 16}, {1, 1, 1}, Modality::SWI, Space::Native, 0.2f);
  s.swi(8, 8, 8) = 0.9f;  // two distinct values so normalization is defined
  s.phase = s.swi;
  s.phase->set_modality(Modality::Phase);

  DetectorConfig cfg = small_config();
  DetectorModel model(cfg, AblationArm::RpnFfmHspl, 13);
  const auto pre = preprocess_for_detection(s, cfg.target_slices);
  CHECK(pre.swi.size().nz == 32);
  const auto cands = detect_subject(pre, model);
  CHECK(cands.empty());  // objectness bias starts strongly negative
}

TEST_CASE("detect_subject rejects native-space input") {
  DetectorConfig cfg = small_config();
  DetectorModel model(cfg, AblationArm::Rpn, 13);
  PreprocessedSubject fake;
  fake.swi = Volume3D({16, 16, 16}, {1, 1, 1}, Modality::SWI);
  fake.phase = fake.swi;
  fake.native_depth = 16;
  CHECK_THROWS_AS(detect_subject(fake, model), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  const fs::path tmp = fs::temp_directory_path() / "cmbdet_ckpt_test";
  fs::create_directories(tmp);

  DetectorModel model(small_config(), AblationArm::RpnFfmHspl, 99);
  auto params = model.parameters();
  const nlohmann::json cfg = {{"note", "test"}};
  const std::string p1 = (tmp / "a.ckpt").string();
  const std::string p2 = (tmp / "b.ckpt").string();
  nn::save_checkpoint(p1, "detector", cfg, params);

  DetectorModel other(small_config(), AblationArm::RpnFfmHspl, 123);
  auto params2 = other.parameters();
  nn::load_checkpoint(p1, "detector", params2);
  nn::save_checkpoint(p2, "detector", cfg, params2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string a((std::istreambuf_iterator<char>(f1)),
                      std::istreambuf_iterator<char>());
  const std::string b((std::istreambuf_iterator<char>(f2)),
                      std::istreambuf_iterator<char>());
  CHECK(a == b);

  CHECK_THROWS_WITH_AS(nn::load_checkpoint(p1, "segmenter", params2),
                       doctest::Contains("kind"), std::runtime_error);
  fs::remove_all(tmp);
}

}  // TEST_SUITE
