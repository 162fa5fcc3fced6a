#include "lego/scenario.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace lego {
namespace {

namespace fs = std::filesystem;

Pipeline synthetic_pipeline(int users = 120, std::uint64_t seed = 1) {
  auto s = synthetic_dataset(users, 40, 2.0, seed);
  return {std::move(s.dataset), std::move(s.attributes), {s.user_factors, s.item_factors}};
}

Config small_config(const fs::path& out) {
  Config c;
  c.calibration.iterations = 40;
  c.calibration.batch_size = 32;
  c.calibration.variational = {16, 1e-2};
  c.calibration.learning_rate = 1e-2;
  c.combination.iterations = 20;
  c.combination.batch_size = 32;
  c.combination.variational = {16, 1e-2};
  c.attack.attacker.max_epochs = 20;
  c.attack.attacker.hidden = 16;
  c.output_dir = out.string();
  return c;
}

class ScenarioTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lego_scenario_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    config_ = small_config(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  Config config_;
  Pipeline pipeline_ = synthetic_pipeline();
  const ScenarioOptions no_eval_{false, false};
};

TEST_F(ScenarioTest, SubsetAfterSupersetIsServedFromCache) {
  EmbeddingStore store(config_.effective_store_dir());
  const auto r = run_scenario(config_, pipeline_, store, {{{"gender", "age"}, {"gender"}}}, no_eval_);
  EXPECT_EQ(r[0].calibrations_executed, 2);
  EXPECT_EQ(r[0].cache_hits, 0);
  EXPECT_EQ(r[1].calibrations_executed, 0);
  EXPECT_EQ(r[1].cache_hits, 1);
  EXPECT_EQ(store.size(), 2u);
}

TEST_F(ScenarioTest, SupersetAfterSubsetCalibratesOnlyNewAttribute) {
  EmbeddingStore store(config_.effective_store_dir());
  const auto r = run_scenario(config_, pipeline_, store, {{{"gender"}, {"gender", "age"}}}, no_eval_);
  EXPECT_EQ(r[0].calibrations_executed, 1);
  EXPECT_EQ(r[1].calibrations_executed, 1);
  EXPECT_EQ(r[1].cache_hits, 1);
  for (const auto& rep : r) EXPECT_EQ(rep.calibrations_executed + rep.cache_hits, static_cast<int>(rep.attributes.size()));
}

TEST_F(ScenarioTest, SingleAttributeRequestUsesItsCalibration) {
  EmbeddingStore store(config_.effective_store_dir());
  const auto r = run_request(config_, pipeline_, store, {"gender"}, 0, no_eval_);
  const auto direct = calibrate(pipeline_.model.users, pipeline_.attributes.at("gender").labels, 2, config_.calibration,
                                "gender");
  EXPECT_EQ(r.embedding, direct.embedding);
  EXPECT_DOUBLE_EQ(r.weights.alpha(0), 1.0);
}

TEST_F(ScenarioTest, CachedResultMatchesFreshCalibration) {
  std::vector<std::string> req = {"gender", "age"};
  Matrix fresh;
  {
    EmbeddingStore store(dir_ / "a");
    fresh = run_request(config_, pipeline_, store, req, 0, no_eval_).embedding;
    const auto again = run_request(config_, pipeline_, store, req, 1, no_eval_);
    EXPECT_EQ(again.cache_hits, 2);
    EXPECT_LE((again.embedding - fresh).cwiseAbs().maxCoeff(), 1e-12);
  }
  EmbeddingStore other(dir_ / "b");
  EXPECT_LE((run_request(config_, pipeline_, other, req, 0, no_eval_).embedding - fresh).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(ScenarioTest, CorruptedEntryIsRecalibrated) {
  EmbeddingStore store(config_.effective_store_dir());
  const auto first = run_request(config_, pipeline_, store, {"gender"}, 0, no_eval_);
  for (const auto& e : fs::directory_iterator(config_.effective_store_dir()))
    if (e.path().extension() == ".emb") {
      std::fstream f(e.path(), std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(32);
      f.put('\x01');
    }
  warnings_enabled() = false;
  const auto second = run_request(config_, pipeline_, store, {"gender"}, 1, no_eval_);
  warnings_enabled() = true;
  EXPECT_EQ(second.calibrations_executed, 1);
  EXPECT_EQ(second.cache_hits, 0);
  EXPECT_EQ(second.recalibrated_after_corruption, std::vector<std::string>{"gender"});
  EXPECT_EQ(second.embedding, first.embedding);
  EXPECT_EQ(run_request(config_, pipeline_, store, {"gender"}, 2, no_eval_).cache_hits, 1);
}

TEST_F(ScenarioTest, ChangedCalibrationConfigMissesCache) {
  EmbeddingStore store(config_.effective_store_dir());
  run_request(config_, pipeline_, store, {"gender"}, 0, no_eval_);
  auto changed = config_;
  changed.calibration.seed += 1;
  EXPECT_EQ(run_request(changed, pipeline_, store, {"gender"}, 1, no_eval_).calibrations_executed, 1);
  auto other = synthetic_pipeline(120, 2);
  EXPECT_EQ(run_request(config_, other, store, {"gender"}, 2, no_eval_).calibrations_executed, 1);
}

TEST_F(ScenarioTest, EvaluationAndTraces) {
  EmbeddingStore store(config_.effective_store_dir());
  const auto r = run_request(config_, pipeline_, store, {"gender", "age"}, 0, {true, true});
  ASSERT_TRUE(r.attack.has_value());
  ASSERT_TRUE(r.rec.has_value());
  EXPECT_EQ(r.attack->attributes.size(), 2u);
  EXPECT_EQ(r.rec->users_evaluated, pipeline_.dataset.num_users);
  EXPECT_TRUE(fs::exists(dir_ / "traces" / "calibration_gender.csv"));
  const json j = to_json(r);
  EXPECT_EQ(j.at("calibrations_executed"), 2);
  EXPECT_EQ(j.at("attributes").size(), 2u);
  EXPECT_GE(r.timings.total(), r.timings.unlearning());
}

TEST(ScenarioScript, Validation) {
  const auto p = synthetic_pipeline(40);
  EXPECT_NO_THROW((ScenarioScript{{{"gender"}, {"age", "gender"}}}.validate(p.attributes)));
  EXPECT_THROW(ScenarioScript{}.validate(p.attributes), Error);
  EXPECT_THROW((ScenarioScript{{{}}}.validate(p.attributes)), Error);
  EXPECT_THROW((ScenarioScript{{{"height"}}}.validate(p.attributes)), Error);
  EXPECT_THROW((ScenarioScript{{{"age", "age"}}}.validate(p.attributes)), Error);
  const auto s = script_from_json(json::parse(R"({"schema_version": 1, "requests": [["gender"], ["gender", "age"]]})"));
  EXPECT_EQ(s.requests.size(), 2u);
  EXPECT_THROW(script_from_json(json::parse(R"({"requests": [["gender"]]})")), Error);
  EXPECT_THROW(script_from_json(json::parse(R"({"schema_version": 1, "requests": [[1]]})")), Error);
  EXPECT_EQ(split_names("gender,,age"), (std::vector<std::string>{"gender", "age"}));
}

TEST(ConfigJson, RoundTripAndDefaults) {
  Config c;
  c.calibration.iterations = 17;
  c.combination.learning_rate = 0.5;
  c.attack.folds = 3;
  c.cf_checkpoint = "/tmp/model.bin";
  const Config back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  const Config d = config_from_json(json::parse(R"({"schema_version": 1})"));
  EXPECT_EQ(d.calibration.hash(), CalibrationConfig{}.hash());
  EXPECT_EQ(d.mi_protocol.folds, 1);  // objective scoring
}

TEST(ConfigJson, RejectsUnknownKeysTypesAndSchema) {
  EXPECT_THROW(config_from_json(json::parse(R"({})")), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"schema_version": 2})")), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"schema_version": 1, "colour": 1})")), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"schema_version": 1, "calibration": {"lr": 1}})")), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"schema_version": 1, "calibration": {"iterations": "x"}})")), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"schema_version": 1, "calibration": {"eps_ratio": -1}})")), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"schema_version": 1, "dataset": {"format": "netflix"}})")), Error);
}

TEST(ConfigJson, RelativePathsResolveAgainstBase) {
  const auto c = config_from_json(
      json::parse(R"({"schema_version": 1, "dataset": {"ratings": "d/u.data", "users": "/abs/u.user"}})"), "/cfg");
  EXPECT_EQ(c.dataset.ratings, "/cfg/d/u.data");
  EXPECT_EQ(c.dataset.users, "/abs/u.user");
}

TEST(ConfigJson, StoreDirectoryPrecedence) {
  Config c;
  c.output_dir = "/out";
  ::unsetenv(kStoreDirEnv);
  EXPECT_EQ(c.effective_store_dir(), "/out/store");
  c.store_dir = "/explicit";
  EXPECT_EQ(c.effective_store_dir(), "/explicit");
  ::setenv(kStoreDirEnv, "/from-env", 1);
  EXPECT_EQ(c.effective_store_dir(), "/from-env");
  ::unsetenv(kStoreDirEnv);
}

TEST(PreparePipeline, TrainsOnceThenLoadsCheckpoint) {
  const fs::path dir = fs::temp_directory_path() / "lego_prepare";
  fs::remove_all(dir);
  Config c;
  c.dataset.ratings = std::string(LEGO_FIXTURES) + "/ml100k/u.data";
  c.dataset.users = std::string(LEGO_FIXTURES) + "/ml100k/u.user";
  c.cf.epochs = 3;
  c.cf.dim = 4;
  c.cf_checkpoint = (dir / "cf.bin").string();
  bool trained = false;
  const auto first = prepare_pipeline(c, &trained);
  EXPECT_TRUE(trained);
  ASSERT_TRUE(fs::exists(c.cf_checkpoint));
  const auto second = prepare_pipeline(c, &trained);
  EXPECT_FALSE(trained);
  EXPECT_EQ(second.model.users, first.model.users);
  EXPECT_EQ(second.source_hash(), first.source_hash());
  EXPECT_EQ(first.attribute_names(), (std::vector<std::string>{"gender", "age", "occupation"}));
  fs::remove_all(dir);
}

TEST(DpBaseline, ZeroNoiseSeedsAndValidation) {
  const auto p = synthetic_pipeline(60);
  EXPECT_EQ(dp_baseline(p.model.users, 0.0, 1), p.model.users);
  EXPECT_EQ(dp_baseline(p.model.users, 0.5, 1), dp_baseline(p.model.users, 0.5, 1));
  EXPECT_NE(dp_baseline(p.model.users, 0.5, 1), dp_baseline(p.model.users, 0.5, 2));
  const Matrix noise = dp_baseline(Matrix::Zero(200, 50), 2.0, 3);
  EXPECT_NEAR(std::sqrt(noise.squaredNorm() / noise.size()), 2.0, 0.05);
  EXPECT_THROW(dp_baseline(p.model.users, -1.0, 1), Error);
}

TEST(DpBaseline, LargeNoiseDestroysAttributesAndRanking) {
  const auto p = synthetic_pipeline(400);
  Config c = small_config(fs::temp_directory_path() / "lego_dp");
  const auto points = dp_sweep(c, p, {0.0, 100.0});
  EXPECT_GE(points[0].attack.at("gender").bacc_mean, 85.0);
  EXPECT_NEAR(points[1].attack.at("gender").bacc_mean, 50.0, 8.0);
  EXPECT_LT(points[1].rec.ndcg, 0.5 * points[0].rec.ndcg);
  const json j = to_json(points[1]);
  EXPECT_DOUBLE_EQ(j.at("sigma").get<double>(), 100.0);
}

}  // namespace
}  // namespace lego
