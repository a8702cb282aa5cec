#include <doctest.h>

#include "facerig/datagen.hpp"
#include "facerig/errors.hpp"
#include "facerig/io.hpp"
#include "helpers.hpp"

using namespace facerig;

namespace {

RuleSet pair_rule() {
  RuleSet r;
  r.groups.push_back({{0, 1}, 1.0});
  return r;
}

DatasetOptions small_options(int count, unsigned threads = 1) {
  DatasetOptions o;
  o.count = count;
  o.split = {count - 4, 2, 2};
  o.seed = 17;
  o.threads = threads;
  return o;
}

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("repair rescales a violated group to its limit") {
    BlendWeights a{Eigen::Vector3d(0.9, 0.9, 0.7)};
    const BlendWeights r = repair_blendweights(a, pair_rule());
    CHECK(r.values(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.values(1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.values(2) == 0.7);
  }

  TEST_CASE("repair keeps satisfied groups and preserves ratios") {
    BlendWeights ok{Eigen::Vector3d(0.3, 0.6, 0.9)};
    CHECK(repair_blendweights(ok, pair_rule()).values == ok.values);

    BlendWeights skew{Eigen::Vector3d(0.8, 0.4, 0.0)};
    const BlendWeights r = repair_blendweights(skew, pair_rule());
    CHECK(r.values(0) + r.values(1) == doctest::Approx(1.0));
    CHECK(r.values(0) / r.values(1) == doctest::Approx(2.0));
  }

  TEST_CASE("overlapping groups stay satisfied after sequential repair") {
    RuleSet rules;
    rules.groups.push_back({{0, 1}, 1.0});
    rules.groups.push_back({{1, 2}, 0.5});
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
      const BlendWeights a = sample_blendweights(3, rules, rng);
      CHECK(rules.satisfied_by(a));
      CHECK(a.values.minCoeff() >= 0.0);
      CHECK(a.values.maxCoeff() <= 1.0);
    }
  }

  TEST_CASE("rule validation") {
    RuleSet r;
    r.groups.push_back({{0, 5}, 1.0});
    CHECK_THROWS_AS(r.validate(3), ContractViolation);
    r.groups[0] = {{0, 0}, 1.0};
    CHECK_THROWS_AS(r.validate(3), ContractViolation);
    r.groups[0] = {{0, 1}, 0.0};
    CHECK_THROWS_AS(r.validate(3), ContractViolation);
    r.groups[0] = {{0, 1}, 2.5};
    CHECK_THROWS_AS(r.validate(3), ContractViolation);
    r.groups[0] = {{0, 1}, 2.0};
    CHECK_NOTHROW(r.validate(3));
  }

  TEST_CASE("per-sample streams do not depend on each other") {
    auto a = sample_rng(5, 10);
    auto b = sample_rng(5, 10);
    auto c = sample_rng(5, 11);
    auto d = sample_rng(5, 10, 1);
    const auto va = a();
    CHECK(va == b());
    CHECK(va != c());
    CHECK(va != d());
  }

  TEST_CASE("neutral weights give near-zero gamma") {
    const auto& m = facerig::testing::small_model();
    const auto& rig = facerig::testing::small_rig();
    const SamplePair p = make_sample(rig, m, BlendWeights::zero(rig.channel_count()), canonical_frontal_pose(rig), {});
    CHECK(p.gamma.values.cwiseAbs().maxCoeff() <= 1e-6);
  }

  TEST_CASE("fitted gamma matches the rig mixing matrix") {
    const auto& m = facerig::testing::small_model();
    const auto& rig = facerig::testing::small_rig();
    const Eigen::MatrixXd mix = expression_mixing(m, rig);
    FitConfig fc;
    fc.reg_lambda = 0.0;
    std::mt19937_64 rng(8);
    for (int i = 0; i < 10; ++i) {
      const BlendWeights a = sample_blendweights(rig.channel_count(), {}, rng);
      const SamplePair p = make_sample(rig, m, a, canonical_frontal_pose(rig), fc);
      CHECK((p.gamma.values - mix * a.values).cwiseAbs().maxCoeff() <= 1e-3);
      CHECK(p.alpha.values == a.values);
    }
  }

  TEST_CASE("canonical pose maps the neutral face to width 200 at the origin") {
    const auto& rig = facerig::testing::small_rig();
    const Pose cam = canonical_frontal_pose(rig);
    const LandmarkSet2D img =
        project_weak_perspective(rig_landmarks(rig, BlendWeights::zero(rig.channel_count())), cam);
    CHECK(face_width(img) == doctest::Approx(200.0));
    CHECK(img.points.colwise().mean().norm() <= 1e-9);
  }

  TEST_CASE("dataset split sizes, rules and determinism") {
    const auto& m = facerig::testing::small_model();
    const auto& rig = facerig::testing::small_rig();
    const RuleSet rules = pair_rule();
    const GeneratedDataset a = generate_dataset(rig, m, rules, small_options(40));
    CHECK(a.train.size() == 36);
    CHECK(a.val.size() == 2);
    CHECK(a.test.size() == 2);
    CHECK(a.channel_count() == rig.channel_count());
    CHECK(a.rig_name == rig.name);
    for (const auto* part : {&a.train, &a.val, &a.test}) {
      for (const auto& s : *part) {
        CHECK(rules.satisfied_by(s.alpha));
        CHECK(s.gamma.values.size() == kExpressionDim);
      }
    }
    const GeneratedDataset b = generate_dataset(rig, m, rules, small_options(40));
    CHECK(dataset_to_json(a) == dataset_to_json(b));
  }

  TEST_CASE("dataset does not depend on the thread count") {
    const auto& m = facerig::testing::small_model();
    const auto& rig = facerig::testing::small_rig();
    const GeneratedDataset one = generate_dataset(rig, m, pair_rule(), small_options(30, 1));
    const GeneratedDataset four = generate_dataset(rig, m, pair_rule(), small_options(30, 4));
    CHECK(dataset_to_json(one) == dataset_to_json(four));
  }

  TEST_CASE("different seeds give different data") {
    const auto& m = facerig::testing::small_model();
    const auto& rig = facerig::testing::small_rig();
    DatasetOptions o = small_options(20);
    const GeneratedDataset a = generate_dataset(rig, m, {}, o);
    o.seed = 18;
    const GeneratedDataset b = generate_dataset(rig, m, {}, o);
    CHECK(a.train[0].alpha.values != b.train[0].alpha.values);
  }

  TEST_CASE("split must add up to the count") {
    const auto& m = facerig::testing::small_model();
    const auto& rig = facerig::testing::small_rig();
    DatasetOptions o = small_options(20);
    o.split = {10, 5, 4};
    CHECK_THROWS_AS(generate_dataset(rig, m, {}, o), ContractViolation);
    o.count = 0;
    CHECK_THROWS_AS(generate_dataset(rig, m, {}, o), ContractViolation);
  }

#ifdef FACERIG_SOURCE_DIR
  TEST_CASE("shipped example rule file parses and validates") {
    const RuleSet rules =
        rules_from_json(read_text_file(std::filesystem::path(FACERIG_SOURCE_DIR) / "tools/rules/mutual_exclusion.json"));
    CHECK(rules.groups.size() == 3);
    CHECK_NOTHROW(rules.validate(25));
    const BlendWeights r = repair_blendweights({Eigen::VectorXd::Constant(25, 0.8)}, rules);
    CHECK(r.values.head(7).sum() == doctest::Approx(3.0));
    CHECK(rules.satisfied_by(r));
  }
#endif
}
