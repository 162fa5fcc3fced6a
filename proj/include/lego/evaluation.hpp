#pragma once

// Attribute-inference attack (MLP attacker, 5-fold CV, BAcc and micro-F1)
// and leave-one-out ranking metrics over the full item catalogue.

#include "lego/cf.hpp"
#include "lego/mi.hpp"

#include <numeric>

namespace lego {

// Mirrors a scikit-learn MLPClassifier: one ReLU hidden layer, Adam,
// mini-batches of min(200, n), L2 penalty alpha/2 * ||W||^2 / batch, and a
// stop after `patience` epochs without `tolerance` improvement.
struct AttackerConfig {
  int hidden = 100;
  double l2 = 1.0;
  double learning_rate = 1e-2;
  int max_epochs = 500;
  int batch_size = 200;
  double tolerance = 1e-4;
  int patience = 10;
  std::uint64_t seed = 42;
};

inline DenseNetwork train_attacker(const Matrix& embeddings, const Labels& labels, int cardinality,
                                   const AttackerConfig& config = {}) {
  check_labels(labels, embeddings.rows(), cardinality);
  std::vector<int> present(static_cast<std::size_t>(cardinality), 0);
  for (int y : labels) present[static_cast<std::size_t>(y)] = 1;
  if (std::accumulate(present.begin(), present.end(), 0) < 2)
    throw Error("train_attacker: training labels contain fewer than two classes");

  DenseNetwork net = init_network({static_cast<int>(embeddings.cols()), config.hidden, cardinality}, config.seed);
  Adam opt(AdamConfig{config.learning_rate});
  const auto n = static_cast<int>(embeddings.rows());
  const int batch = std::min(config.batch_size, n);
  Rng rng(derive_seed(config.seed, "attacker-shuffle"));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += batch) {
      const int stop = std::min(n, start + batch);
      std::span<const int> rows(order.data() + start, static_cast<std::size_t>(stop - start));
      const Matrix x = gather_rows(embeddings, rows);
      auto [loss, grads] = nll_and_gradient(net, x, gather_labels(labels, rows));
      const double m = static_cast<double>(rows.size());
      double penalty = 0.0;
      for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        const Matrix& w = net.layers()[l].weight;
        penalty += w.squaredNorm();
        grads.layers[l].weight += (config.l2 / m) * w;
      }
      epoch_loss += (loss + 0.5 * config.l2 * penalty / m) * m;
      opt.step(net, grads);
    }
    epoch_loss /= n;
    if (!std::isfinite(epoch_loss)) throw NumericError("train_attacker: non-finite loss");
    if (epoch_loss > best - config.tolerance)
      ++stale;
    else
      stale = 0;
    best = std::min(best, epoch_loss);
    if (stale > config.patience) break;
  }
  return net;
}

inline Labels predict(const DenseNetwork& net, const Matrix& embeddings) {
  const Matrix logits = forward(net, embeddings);
  Labels out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

// Mean per-class recall over classes present in `labels`, in percent.
inline double bacc(const Labels& predictions, const Labels& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("bacc: length mismatch");
  if (labels.empty()) throw Error("bacc: empty input");
  const int classes = 1 + std::max(*std::max_element(labels.begin(), labels.end()),
                                   *std::max_element(predictions.begin(), predictions.end()));
  std::vector<double> hits(static_cast<std::size_t>(classes), 0.0), support(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    support[static_cast<std::size_t>(labels[i])] += 1.0;
    if (predictions[i] == labels[i]) hits[static_cast<std::size_t>(labels[i])] += 1.0;
  }
  double total = 0.0;
  int counted = 0;
  for (int c = 0; c < classes; ++c) {
    if (support[static_cast<std::size_t>(c)] == 0.0) continue;
    total += hits[static_cast<std::size_t>(c)] / support[static_cast<std::size_t>(c)];
    ++counted;
  }
  return 100.0 * total / counted;
}

// Micro-averaged F1 in percent. For single-label multiclass predictions
// pooled TP / FP / FN make this equal to accuracy.
inline double micro_f1(const Labels& predictions, const Labels& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("micro_f1: length mismatch");
  if (labels.empty()) throw Error("micro_f1: empty input");
  double tp = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) tp += predictions[i] == labels[i] ? 1.0 : 0.0;
  const double fp = static_cast<double>(labels.size()) - tp;  // each miss is one FP and one FN
  const double fn = fp;
  const double precision = tp / (tp + fp);
  const double recall = tp / (tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

struct FoldSpec {
  std::uint64_t seed = 0;
  std::vector<int> fold_of;  // fold id per user
  int folds = 5;

  [[nodiscard]] std::vector<int> members(int fold, bool test) const {
    std::vector<int> out;
    for (std::size_t u = 0; u < fold_of.size(); ++u)
      if ((fold_of[u] == fold) == test) out.push_back(static_cast<int>(u));
    return out;
  }
};

// Shuffled partition into `folds` groups whose sizes differ by at most one.
inline FoldSpec make_folds(int num_users, int folds, std::uint64_t seed) {
  if (folds < 2 || num_users < folds) throw Error("make_folds: need 2 <= folds <= users");
  FoldSpec split{seed, std::vector<int>(static_cast<std::size_t>(num_users)), folds};
  std::vector<int> order(static_cast<std::size_t>(num_users));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (int k = 0; k < num_users; ++k) split.fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = k % folds;
  return split;
}

struct AttributeAttack {
  std::string attribute;
  double bacc_mean = 0.0, bacc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  std::vector<double> fold_bacc, fold_f1;
};

struct AttackReport {
  std::vector<AttributeAttack> attributes;
  double bacc_mean = 0.0;  // averaged across attributes
  double f1_mean = 0.0;

  [[nodiscard]] const AttributeAttack& at(std::string_view name) const {
    for (const auto& a : attributes)
      if (a.attribute == name) return a;
    throw Error("attack report has no attribute '" + std::string(name) + "'");
  }
};

struct AttackProtocol {
  int folds = 5;
  std::uint64_t fold_seed = 5;
  AttackerConfig attacker{};
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

inline bool train_covers_classes(const FoldSpec& folds, const Labels& labels, int cardinality) {
  std::vector<int> present_all(static_cast<std::size_t>(cardinality), 0);
  for (int y : labels) present_all[static_cast<std::size_t>(y)] = 1;
  for (int f = 0; f < folds.folds; ++f) {
    std::vector<int> present(static_cast<std::size_t>(cardinality), 0);
    for (int u : folds.members(f, false)) present[static_cast<std::size_t>(labels[static_cast<std::size_t>(u)])] = 1;
    if (present != present_all) return false;
  }
  return true;
}

}  // namespace detail

// A fresh attacker per (attribute, fold), trained on the released embedding
// itself and tested on the held-out fold.
inline AttackReport attack_metrics(const Matrix& embeddings, const std::vector<AttributeLabels>& attributes,
                                   const AttackProtocol& protocol = {}) {
  const auto n = static_cast<int>(embeddings.rows());
  AttackReport report;
  for (const auto& a : attributes) {
    check_labels(a.labels, n, a.cardinality);
    FoldSpec folds = make_folds(n, protocol.folds, protocol.fold_seed);
    for (int retry = 1; !detail::train_covers_classes(folds, a.labels, a.cardinality); ++retry) {
      if (retry > 100) throw Error("attack_metrics: cannot find folds whose training sets cover every class");
      warn("attack_metrics: a training fold misses a class of '" + a.name + "', regenerating folds");
      folds = make_folds(n, protocol.folds, derive_seed(protocol.fold_seed, "retry" + std::to_string(retry)));
    }
    AttributeAttack result;
    result.attribute = a.name;
    for (int f = 0; f < folds.folds; ++f) {
      const auto train_rows = folds.members(f, false);
      const auto test_rows = folds.members(f, true);
      AttackerConfig cfg = protocol.attacker;
      cfg.seed = derive_seed(protocol.attacker.seed, a.name + ":fold" + std::to_string(f));
      const DenseNetwork net =
          train_attacker(gather_rows(embeddings, train_rows), gather_labels(a.labels, train_rows), a.cardinality, cfg);
      const Labels pred = predict(net, gather_rows(embeddings, test_rows));
      const Labels truth = gather_labels(a.labels, test_rows);
      result.fold_bacc.push_back(bacc(pred, truth));
      result.fold_f1.push_back(micro_f1(pred, truth));
    }
    std::tie(result.bacc_mean, result.bacc_std) = detail::mean_std(result.fold_bacc);
    std::tie(result.f1_mean, result.f1_std) = detail::mean_std(result.fold_f1);
    report.attributes.push_back(std::move(result));
  }
  if (!report.attributes.empty()) {
    for (const auto& a : report.attributes) {
      report.bacc_mean += a.bacc_mean;
      report.f1_mean += a.f1_mean;
    }
    report.bacc_mean /= static_cast<double>(report.attributes.size());
    report.f1_mean /= static_cast<double>(report.attributes.size());
  }
  return report;
}

struct RecReport {
  int k = 10;
  double hr = 0.0;
  double ndcg = 0.0;
  int users_evaluated = 0;
  std::vector<int> ranks;  // per user, 1-based; 0 for skipped users
};

// 1-based rank of `target` among all items outside `train_items` under
// descending score, ties to the smaller item id.
inline int rank_of(const Vector& scores, int target, const std::vector<int>& train_items) {
  const double s = scores[target];
  int rank = 1;
  for (int i = 0; i < scores.size(); ++i) {
    if (i == target || std::binary_search(train_items.begin(), train_items.end(), i)) continue;
    if (scores[i] > s || (scores[i] == s && i < target)) ++rank;
  }
  return rank;
}

inline double ndcg_gain(int rank, int k) { return rank >= 1 && rank <= k ? 1.0 / std::log2(rank + 1.0) : 0.0; }

inline RecReport hr_ndcg_at_k(const Matrix& users, const Matrix& items, const InteractionDataset& ds, int k = 10) {
  if (k < 1) throw Error("hr_ndcg_at_k: k must be at least 1");
  if (users.rows() != ds.num_users || items.rows() != ds.num_items || users.cols() != items.cols())
    throw ShapeError("hr_ndcg_at_k: embedding shapes do not match the dataset");
  RecReport report;
  report.k = k;
  report.ranks.assign(static_cast<std::size_t>(ds.num_users), 0);
  int skipped = 0;
  for (int u = 0; u < ds.num_users; ++u) {
    const int target = ds.test_item[static_cast<std::size_t>(u)];
    if (target < 0) {
      ++skipped;
      continue;
    }
    const int rank = rank_of(score_items(users, items, u), target, ds.train_items[static_cast<std::size_t>(u)]);
    report.ranks[static_cast<std::size_t>(u)] = rank;
    report.hr += rank <= k ? 1.0 : 0.0;
    report.ndcg += ndcg_gain(rank, k);
    ++report.users_evaluated;
  }
  if (skipped > 0) warn("hr_ndcg_at_k: skipped " + std::to_string(skipped) + " users without a test item");
  if (report.users_evaluated > 0) {
    report.hr /= report.users_evaluated;
    report.ndcg /= report.users_evaluated;
  }
  return report;
}

inline RecReport hr_ndcg_at_k(const CFModel& model, const InteractionDataset& ds, int k = 10) {
  return hr_ndcg_at_k(model.users, model.items, ds, k);
}

}  // namespace lego
