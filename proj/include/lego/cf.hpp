#pragma once

// Matrix factorization trained with a BPR pairwise loss. The unlearning
// pipeline only ever reads `users` (U_0) and swaps it out; `items` stays fixed.

#include "lego/data.hpp"
#include "lego/nn.hpp"

#include <fstream>
#include <unordered_set>

namespace lego {

struct CFModel {
  Matrix users;  // N x d
  Matrix items;  // M x d

  [[nodiscard]] int dim() const { return static_cast<int>(users.cols()); }
  [[nodiscard]] int num_users() const { return static_cast<int>(users.rows()); }
  [[nodiscard]] int num_items() const { return static_cast<int>(items.rows()); }

  // Same items, different user embeddings.
  [[nodiscard]] CFModel with_users(Matrix replacement) const {
    if (replacement.rows() != users.rows() || replacement.cols() != users.cols())
      throw ShapeError("with_users: replacement embedding has the wrong shape");
    return CFModel{std::move(replacement), items};
  }
};

struct CFTrainConfig {
  int dim = 32;
  int epochs = 30;
  double learning_rate = 5e-3;
  double l2 = 1e-2;
  int negatives = 1;
  int batch_size = 1024;
  double init_std = 0.01;
  std::uint64_t seed = 2024;

  void validate() const {
    if (dim <= 0 || epochs < 0 || learning_rate <= 0.0 || l2 < 0.0 || negatives <= 0 || batch_size <= 0 ||
        init_std <= 0.0)
      throw Error("CFTrainConfig: dim, negatives, batch size, learning rate and init std must be positive; "
                  "epochs and l2 non-negative");
  }
};

struct CFTrainStats {
  double initial_probe_loss = 0.0;
  double final_probe_loss = 0.0;
  std::vector<double> epoch_loss;
};

namespace detail {

struct Triple {
  int user, pos, neg;
};

inline int sample_negative(const InteractionDataset& ds, int user, Rng& rng) {
  const auto& seen = ds.train_items[static_cast<std::size_t>(user)];
  if (static_cast<int>(seen.size()) >= ds.num_items) throw Error("train_cf: user has interacted with every item");
  std::uniform_int_distribution<int> pick(0, ds.num_items - 1);
  while (true) {
    const int j = pick(rng);
    if (!std::binary_search(seen.begin(), seen.end(), j)) return j;
  }
}

inline double bpr_loss(const CFModel& m, const std::vector<Triple>& triples) {
  double total = 0.0;
  for (const auto& t : triples) {
    const double x = m.users.row(t.user).dot(m.items.row(t.pos) - m.items.row(t.neg));
    total += std::log1p(std::exp(-std::abs(x))) + std::max(-x, 0.0);  // -log sigmoid(x)
  }
  return triples.empty() ? 0.0 : total / static_cast<double>(triples.size());
}

}  // namespace detail

inline CFModel init_cf(int num_users, int num_items, const CFTrainConfig& config) {
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  CFModel m{Matrix(num_users, config.dim), Matrix(num_items, config.dim)};
  for (Eigen::Index k = 0; k < m.users.size(); ++k) m.users.data()[k] = normal(rng);
  for (Eigen::Index k = 0; k < m.items.size(); ++k) m.items.data()[k] = normal(rng);
  return m;
}

inline CFModel train_cf(const InteractionDataset& ds, const CFTrainConfig& config, CFTrainStats* stats = nullptr) {
  config.validate();
  if (ds.train.empty()) throw Error("train_cf: empty training set");
  CFModel m = init_cf(ds.num_users, ds.num_items, config);
  Rng rng(derive_seed(config.seed, "bpr-sampling"));

  // Fixed probe of training pairs with frozen negatives, for loss tracking.
  std::vector<detail::Triple> probe;
  {
    Rng probe_rng(derive_seed(config.seed, "bpr-probe"));
    std::uniform_int_distribution<std::size_t> pick(0, ds.train.size() - 1);
    const std::size_t n = std::min<std::size_t>(2000, ds.train.size());
    for (std::size_t k = 0; k < n; ++k) {
      const auto& ix = ds.train[pick(probe_rng)];
      probe.push_back({ix.user, ix.item, detail::sample_negative(ds, ix.user, probe_rng)});
    }
  }
  CFTrainStats local;
  local.initial_probe_loss = detail::bpr_loss(m, probe);

  Adam opt_users(AdamConfig{config.learning_rate});
  Adam opt_items(AdamConfig{config.learning_rate});
  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  Matrix grad_users = Matrix::Zero(m.users.rows(), m.users.cols());
  Matrix grad_items = Matrix::Zero(m.items.rows(), m.items.cols());
  std::vector<detail::Triple> batch;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) {
        const auto& ix = ds.train[order[k]];
        for (int n = 0; n < config.negatives; ++n)
          batch.push_back({ix.user, ix.item, detail::sample_negative(ds, ix.user, rng)});
      }
      grad_users.setZero();
      grad_items.setZero();
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (const auto& t : batch) {
        const auto u = m.users.row(t.user);
        const auto i = m.items.row(t.pos);
        const auto j = m.items.row(t.neg);
        const double x = u.dot(i - j);
        epoch_total += std::log1p(std::exp(-std::abs(x))) + std::max(-x, 0.0);
        const double g = -scale / (1.0 + std::exp(x));  // d(-log sigmoid x)/dx, batch-averaged
        grad_users.row(t.user) += g * (i - j) + scale * config.l2 * u;
        grad_items.row(t.pos) += g * u + scale * config.l2 * i;
        grad_items.row(t.neg) += -g * u + scale * config.l2 * j;
      }
      epoch_count += batch.size();
      opt_users.step(m.users, grad_users);
      opt_items.step(m.items, grad_items);
    }
    const double mean = epoch_total / static_cast<double>(epoch_count);
    if (!std::isfinite(mean)) throw NumericError("train_cf: non-finite loss in epoch " + std::to_string(epoch));
    local.epoch_loss.push_back(mean);
  }
  local.final_probe_loss = detail::bpr_loss(m, probe);
  if (stats) *stats = std::move(local);
  return m;
}

inline Vector score_items(const Matrix& users, const Matrix& items, int user) {
  if (user < 0 || user >= users.rows()) throw Error("score_user: user " + std::to_string(user) + " out of range");
  return items * users.row(user).transpose();
}

inline Vector score_user(const CFModel& m, int user) { return score_items(m.users, m.items, user); }

// Items ranked by descending score; ties go to the smaller item id.
// `exclusions` must be sorted ascending.
inline std::vector<int> top_k(const Vector& scores, int k, const std::vector<int>& exclusions = {}) {
  if (k < 1) throw Error("top_k: k must be at least 1");
  std::vector<int> candidates;
  candidates.reserve(static_cast<std::size_t>(scores.size()));
  for (int i = 0; i < scores.size(); ++i)
    if (!std::binary_search(exclusions.begin(), exclusions.end(), i)) candidates.push_back(i);
  if (k > static_cast<int>(candidates.size()))
    throw Error("top_k: k=" + std::to_string(k) + " exceeds " + std::to_string(candidates.size()) +
                " available items");
  auto better = [&](int a, int b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), better);
  candidates.resize(static_cast<std::size_t>(k));
  return candidates;
}

inline std::vector<int> top_k(const CFModel& m, int user, int k, const std::vector<int>& exclusions = {}) {
  return top_k(score_user(m, user), k, exclusions);
}

// Checkpoint: "LEGOCF01", u32 N, u32 M, u32 d, f64 user rows, f64 item rows.
inline void save_cf(const CFModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_cf: cannot open " + path);
  out.write("LEGOCF01", 8);
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(m.num_users()), static_cast<std::uint32_t>(m.num_items()),
                                   static_cast<std::uint32_t>(m.dim())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(m.users.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.users.size())));
  out.write(reinterpret_cast<const char*>(m.items.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.items.size())));
  if (!out) throw Error("save_cf: write failed for " + path);
}

inline CFModel load_cf(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_cf: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "LEGOCF01", 8) != 0) throw Error("load_cf: bad magic in " + path);
  std::uint32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw Error("load_cf: truncated header in " + path);
  CFModel m{Matrix(header[0], header[2]), Matrix(header[1], header[2])};
  in.read(reinterpret_cast<char*>(m.users.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.users.size())));
  in.read(reinterpret_cast<char*>(m.items.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.items.size())));
  if (!in) throw Error("load_cf: truncated payload in " + path);
  return m;
}

}  // namespace lego
