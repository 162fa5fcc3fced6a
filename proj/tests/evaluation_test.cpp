#include "lego/evaluation.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <set>

namespace lego {
namespace {

Labels repeat(std::initializer_list<std::pair<int, int>> runs) {
  Labels out;
  for (auto [value, count] : runs) out.insert(out.end(), static_cast<std::size_t>(count), value);
  return out;
}

TEST(Bacc, PerfectPredictionsScore100) {
  const Labels y = {0, 1, 2, 1, 0};
  EXPECT_DOUBLE_EQ(bacc(y, y), 100.0);
}

TEST(Bacc, HandComputedRecalls) {
  // Class 0: 3 of 4 right, class 1: 3 of 4 right.
  const Labels y = {0, 0, 0, 0, 1, 1, 1, 1};
  const Labels p = {0, 0, 0, 1, 1, 1, 1, 0};
  EXPECT_DOUBLE_EQ(bacc(p, y), 75.0);
  // Recalls 0.9, 0.6, 0.3 over ten users per class.
  const Labels y3 = repeat({{0, 10}, {1, 10}, {2, 10}});
  const Labels p3 = repeat({{0, 9}, {1, 1}, {1, 6}, {2, 4}, {2, 3}, {0, 7}});
  EXPECT_NEAR(bacc(p3, y3), 60.0, 1e-12);
  EXPECT_NEAR(bacc(p3, y3), oracle::balanced_accuracy(p3, y3), 1e-12);
}

TEST(Bacc, IgnoresClassesAbsentFromTruth) {
  const Labels y = {0, 0, 2, 2};
  const Labels p = {0, 1, 2, 2};  // class 1 appears only as a prediction
  EXPECT_DOUBLE_EQ(bacc(p, y), 75.0);
}

TEST(Bacc, MajorityGuessIsChanceOnImbalancedData) {
  const Labels y = repeat({{0, 90}, {1, 10}});
  EXPECT_DOUBLE_EQ(bacc(Labels(100, 0), y), 50.0);
}

TEST(Bacc, MatchesOracleOnRandomInput) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto y = oracle::random_labels(50, 4, rng);
    const auto p = oracle::random_labels(50, 4, rng);
    ASSERT_NEAR(bacc(p, y), oracle::balanced_accuracy(p, y), 1e-10);
  }
  EXPECT_THROW(bacc({0}, {0, 1}), ShapeError);
  EXPECT_THROW(bacc({}, {}), Error);
}

TEST(MicroF1, EqualsAccuracy) {
  const Labels y = {0, 1, 1, 0};
  EXPECT_DOUBLE_EQ(micro_f1(y, y), 100.0);
  EXPECT_DOUBLE_EQ(micro_f1({0, 0, 0, 0}, y), 50.0);
  const Labels y10 = repeat({{0, 5}, {1, 5}});
  const Labels p10 = repeat({{0, 5}, {0, 3}, {1, 2}});
  EXPECT_NEAR(micro_f1(p10, y10), 70.0, 1e-12);
  EXPECT_DOUBLE_EQ(micro_f1({1, 1}, {0, 0}), 0.0);
}

InteractionDataset single_user(int items, int target, std::vector<int> train) {
  InteractionDataset ds;
  ds.num_users = 1;
  ds.num_items = items;
  ds.user_ids = {1};
  for (int i = 0; i < items; ++i) ds.item_ids.push_back(i);
  for (int i : train) ds.train.push_back({0, i});
  ds.train_items = {train};
  ds.test_item = {target};
  return ds;
}

Matrix scores_as_items(const std::vector<double>& s) {
  Matrix items(static_cast<Eigen::Index>(s.size()), 1);
  for (std::size_t i = 0; i < s.size(); ++i) items(static_cast<Eigen::Index>(i), 0) = s[i];
  return items;
}

TEST(HrNdcg, RankOneScoresOne) {
  const auto ds = single_user(5, 2, {0});
  const auto r = hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items({9, 1, 5, 3, 2}), ds, 10);
  EXPECT_EQ(r.ranks[0], 1);  // item 0 scores higher but is a training item
  EXPECT_DOUBLE_EQ(r.hr, 1.0);
  EXPECT_DOUBLE_EQ(r.ndcg, 1.0);
}

TEST(HrNdcg, RankThreeAndBeyondCutoff) {
  const auto ds = single_user(5, 4, {});
  const auto r = hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items({9, 8, 1, 0, 5}), ds, 10);
  EXPECT_EQ(r.ranks[0], 3);
  EXPECT_DOUBLE_EQ(r.ndcg, 0.5);
  const auto r2 = hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items({9, 8, 1, 0, 5}), ds, 2);
  EXPECT_DOUBLE_EQ(r2.hr, 0.0);
  EXPECT_DOUBLE_EQ(r2.ndcg, 0.0);
}

TEST(HrNdcg, RankElevenOutsideTopTen) {
  std::vector<double> s(12);
  for (int i = 0; i < 12; ++i) s[static_cast<std::size_t>(i)] = 20.0 - i;
  const auto ds = single_user(12, 10, {});
  const auto r = hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items(s), ds, 10);
  EXPECT_EQ(r.ranks[0], 11);
  EXPECT_DOUBLE_EQ(r.ndcg, 0.0);
}

TEST(HrNdcg, TiesRankSmallerIdsFirst) {
  const auto ds = single_user(4, 2, {});
  const auto r = hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items({1, 1, 1, 1}), ds, 10);
  EXPECT_EQ(r.ranks[0], 3);
}

TEST(HrNdcg, MatchesSortOracleAndMonotoneTransform) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coarse(0, 6);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(15);
    for (auto& v : s) v = coarse(rng);
    const std::vector<int> train = {1, 4};
    const int target = 7 + t % 8;
    const auto ds = single_user(15, target, train);
    const auto r = hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items(s), ds, 10);
    ASSERT_EQ(r.ranks[0], oracle::sort_rank(s, target, train));
    std::vector<double> warped(s);
    for (auto& v : warped) v = std::exp(v) * 3.0 + 1.0;
    ASSERT_EQ(hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items(warped), ds, 10).ranks[0], r.ranks[0]);
  }
}

TEST(HrNdcg, SkipsUsersWithoutTestItemAndChecksShapes) {
  auto ds = single_user(3, -1, {0});
  warnings_enabled() = false;
  const auto r = hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items({1, 2, 3}), ds, 10);
  warnings_enabled() = true;
  EXPECT_EQ(r.users_evaluated, 0);
  EXPECT_EQ(r.ranks[0], 0);
  EXPECT_THROW(hr_ndcg_at_k(Matrix::Ones(2, 1), scores_as_items({1, 2, 3}), ds, 10), ShapeError);
  EXPECT_THROW(hr_ndcg_at_k(Matrix::Ones(1, 1), scores_as_items({1, 2, 3}), ds, 0), Error);
}

TEST(Folds, PartitionIsBalancedAndDeterministic) {
  const auto f = make_folds(103, 5, 9);
  std::vector<int> sizes(5, 0);
  for (int k : f.fold_of) ++sizes[static_cast<std::size_t>(k)];
  EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1);
  for (int k = 0; k < 5; ++k) {
    const auto test = f.members(k, true), train = f.members(k, false);
    EXPECT_EQ(test.size() + train.size(), 103u);
    std::set<int> both(test.begin(), test.end());
    both.insert(train.begin(), train.end());
    EXPECT_EQ(both.size(), 103u);
  }
  EXPECT_EQ(make_folds(103, 5, 9).fold_of, f.fold_of);
  EXPECT_NE(make_folds(103, 5, 10).fold_of, f.fold_of);
  EXPECT_THROW(make_folds(3, 5, 1), Error);
  EXPECT_THROW(make_folds(10, 1, 1), Error);
}

TEST(Attacker, SeparableAttributeIsRecovered) {
  std::mt19937_64 rng(3);
  Matrix x = oracle::random_matrix(200, 4, rng, 0.3);
  const auto y = oracle::random_labels(200, 2, rng);
  for (int i = 0; i < 200; ++i) x(i, 0) += y[static_cast<std::size_t>(i)] == 0 ? 3.0 : -3.0;
  const auto r = attack_metrics(x, {{"g", 2, y}});
  EXPECT_GE(r.attributes[0].bacc_mean, 99.0);
  EXPECT_EQ(r.attributes[0].fold_bacc.size(), 5u);
}

TEST(Attacker, OneHotAttributeIsRecovered) {
  std::mt19937_64 rng(4);
  const auto y = oracle::random_labels(150, 3, rng);
  Matrix x = Matrix::Zero(150, 3);
  for (int i = 0; i < 150; ++i) x(i, y[static_cast<std::size_t>(i)]) = 1.0;
  EXPECT_GE(attack_metrics(x, {{"a", 3, y}}).bacc_mean, 99.0);
}

TEST(Attacker, ShuffledLabelsGiveChance) {
  std::mt19937_64 rng(5);
  const Matrix x = oracle::random_matrix(2000, 8, rng);
  const auto y = oracle::random_labels(2000, 2, rng);
  const auto r = attack_metrics(x, {{"g", 2, y}});
  EXPECT_NEAR(r.attributes[0].bacc_mean, 50.0, 5.0);
}

TEST(Attacker, ZeroEpochsReturnsInitialNetwork) {
  std::mt19937_64 rng(6);
  const Matrix x = oracle::random_matrix(20, 3, rng);
  const auto y = oracle::random_labels(20, 2, rng);
  AttackerConfig c;
  c.max_epochs = 0;
  const auto net = train_attacker(x, y, 2, c);
  const auto init = init_network({3, c.hidden, 2}, c.seed);
  EXPECT_EQ(net.layers()[0].weight, init.layers()[0].weight);
  EXPECT_THROW(train_attacker(x, Labels(20, 1), 2, c), Error);
}

TEST(Attacker, RegeneratesFoldsThatMissAClass) {
  std::mt19937_64 rng(7);
  const Matrix x = oracle::random_matrix(30, 2, rng);
  Labels y(30, 0);
  y[3] = 1;  // a single positive: one fold trains without it
  y[17] = 1;
  warnings_enabled() = false;
  AttackProtocol p;
  p.attacker.max_epochs = 5;
  const auto r = attack_metrics(x, {{"g", 2, y}}, p);
  warnings_enabled() = true;
  EXPECT_EQ(r.attributes[0].fold_bacc.size(), 5u);
}

}  // namespace
}  // namespace lego
