#pragma once

// Nearest-neighbor mining over unit-norm embeddings and P@N evaluation.
//
// Exact mode scores every row. ANN mode is an inverted file: spherical k-means
// partitions the rows and a query scans the members of its `probes` closest
// centroids. Similarity is the raw dot product; ties rank by ascending id.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bdm/corpus.hpp"
#include "bdm/error.hpp"
#include "bdm/parallel.hpp"
#include "bdm/tensor.hpp"

namespace bdm {

enum class IndexMode { exact, ann };

struct AnnParams {
  std::size_t num_clusters = 100;
  std::size_t probes = 10;
  std::size_t kmeans_iters = 20;
  std::uint64_t seed = 1;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<std::pair<std::string, double>> ranked;
};

class EmbeddingIndex {
 public:
  static constexpr double kNormTolerance = 1e-4;

  EmbeddingIndex(std::vector<std::string> ids, Tensor2 vectors, IndexMode mode, AnnParams ann = {})
      : ids_(std::move(ids)), vectors_(std::move(vectors)), mode_(mode), ann_(ann) {
    if (ids_.size() != vectors_.rows()) throw ContractError("build_index: id count != vector count");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids_)
      if (!seen.insert(id).second) throw ContractError("build_index: duplicate id '" + id + "'");
    for (std::size_t r = 0; r < vectors_.rows(); ++r) {
      if (std::abs(l2_norm(vectors_.row(r)) - 1.0) > kNormTolerance) {
        throw ContractError("build_index: vector for '" + ids_[r] + "' is not unit norm");
      }
    }
    if (mode_ == IndexMode::ann) {
      if (ann_.num_clusters < 1) throw ContractError("build_index: num_clusters must be >= 1");
      if (ann_.probes < 1 || ann_.probes > ann_.num_clusters) {
        throw ContractError("build_index: probes must lie in [1, num_clusters]");
      }
      train_kmeans();
    }
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return vectors_.cols(); }
  IndexMode mode() const { return mode_; }
  const AnnParams& ann_params() const { return ann_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const Tensor2& vectors() const { return vectors_; }
  std::size_t num_lists() const { return lists_.size(); }

  bool contains(const std::string& id) const {
    return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
  }

  /// Top-n candidates; `probes` overrides the build-time probe count in ANN mode.
  RetrievalResult query(std::span<const double> q, std::size_t top_n, std::optional<std::size_t> probes = {},
                        std::string query_id = {}) const {
    if (q.size() != dim()) {
      throw ContractError("query: dimension " + std::to_string(q.size()) + " != index dimension " + std::to_string(dim()));
    }
    std::vector<std::pair<double, std::size_t>> scored;
    if (mode_ == IndexMode::exact) {
      scored.reserve(size());
      for (std::size_t r = 0; r < size(); ++r) scored.emplace_back(dot(q, vectors_.row(r)), r);
    } else {
      for (std::size_t c : nearest_lists(q, probes.value_or(ann_.probes))) {
        for (std::size_t r : lists_[c]) scored.emplace_back(dot(q, vectors_.row(r)), r);
      }
    }
    auto better = [this](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : ids_[a.second] < ids_[b.second];
    };
    const std::size_t n = std::min(top_n, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
    RetrievalResult res{std::move(query_id), {}};
    res.ranked.reserve(n);
    for (std::size_t i = 0; i < n; ++i) res.ranked.emplace_back(ids_[scored[i].second], scored[i].first);
    return res;
  }

 private:
  std::vector<std::size_t> nearest_lists(std::span<const double> q, std::size_t probes) const {
    probes = std::min(std::max<std::size_t>(probes, 1), lists_.size());
    std::vector<std::pair<double, std::size_t>> cs;
    cs.reserve(lists_.size());
    for (std::size_t c = 0; c < lists_.size(); ++c) cs.emplace_back(dot(q, centroids_.row(c)), c);
    std::partial_sort(cs.begin(), cs.begin() + static_cast<std::ptrdiff_t>(probes), cs.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < probes; ++i) out.push_back(cs[i].second);
    return out;
  }

  std::size_t assign(std::span<const double> v) const {
    std::size_t best = 0;
    double best_s = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids_.rows(); ++c) {
      const double s = dot(v, centroids_.row(c));
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    return best;
  }

  // Spherical k-means seeded from distinct random rows; empty clusters keep their centroid.
  void train_kmeans() {
    const std::size_t n = size();
    const std::size_t k = std::min(ann_.num_clusters, std::max<std::size_t>(n, 1));
    centroids_ = Tensor2(k, dim());
    lists_.assign(k, {});
    if (n == 0) return;
    std::mt19937_64 rng(ann_.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t c = 0; c < k; ++c) {
      auto src = vectors_.row(order[c]);
      std::copy(src.begin(), src.end(), centroids_.row(c).begin());
    }
    std::vector<std::size_t> assignment(n, 0);
    for (std::size_t it = 0; it < ann_.kmeans_iters; ++it) {
      bool changed = it == 0;
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t a = assign(vectors_.row(r));
        changed = changed || a != assignment[r];
        assignment[r] = a;
      }
      if (!changed) break;
      Tensor2 sums(k, dim());
      std::vector<std::size_t> counts(k, 0);
      for (std::size_t r = 0; r < n; ++r) {
        auto dst = sums.row(assignment[r]);
        auto src = vectors_.row(r);
        for (std::size_t d = 0; d < dim(); ++d) dst[d] += src[d];
        ++counts[assignment[r]];
      }
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        const double nrm = l2_norm(sums.row(c));
        if (!(nrm > 0.0)) continue;
        for (std::size_t d = 0; d < dim(); ++d) centroids_(c, d) = sums(c, d) / nrm;
      }
    }
    for (std::size_t r = 0; r < n; ++r) lists_[assign(vectors_.row(r))].push_back(r);
  }

  std::vector<std::string> ids_;
  Tensor2 vectors_;
  IndexMode mode_;
  AnnParams ann_;
  Tensor2 centroids_;
  std::vector<std::vector<std::size_t>> lists_;
};

inline EmbeddingIndex build_index(std::vector<std::string> ids, Tensor2 vectors, IndexMode mode, AnnParams ann = {}) {
  return EmbeddingIndex(std::move(ids), std::move(vectors), mode, ann);
}

// ---------------------------------------------------------------------------
// P@N

struct EvalReport {
  std::map<std::size_t, double> p_at;
  std::size_t num_queries = 0;
  std::size_t candidate_pool_size = 0;

  double at(std::size_t n) const {
    auto it = p_at.find(n);
    if (it == p_at.end()) throw ContractError("EvalReport: P@" + std::to_string(n) + " not computed");
    return it->second;
  }

  /// metric,N,value,pool_size
  std::string to_csv() const {
    std::ostringstream os;
    os << "metric,N,value,pool_size\n";
    for (const auto& [n, v] : p_at) os << "P@N," << n << ',' << std::fixed << std::setprecision(6) << v << ',' << candidate_pool_size << '\n';
    return os.str();
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(8) << "metric" << std::right << std::setw(10) << "value" << '\n';
    for (const auto& [n, v] : p_at) {
      os << std::left << std::setw(8) << ("P@" + std::to_string(n)) << std::right << std::setw(10) << std::fixed
         << std::setprecision(3) << v << '\n';
    }
    os << "queries " << num_queries << ", candidate pool " << candidate_pool_size << '\n';
    return os.str();
  }
};

/// Fraction of gold pairs whose target is among the top-N results of its source.
/// `query_ids[i]` names the source embedded in row i of `queries`.
inline EvalReport evaluate_pn(const std::vector<DocumentPair>& gold, const EmbeddingIndex& index,
                              const std::vector<std::string>& query_ids, const Tensor2& queries,
                              const std::vector<std::size_t>& ns = {1, 3, 10}, std::size_t threads = 1) {
  if (query_ids.size() != queries.rows()) throw ContractError("evaluate_pn: query id count != query rows");
  if (ns.empty()) throw ContractError("evaluate_pn: no N values");
  std::unordered_map<std::string, std::size_t> qrow;
  for (std::size_t i = 0; i < query_ids.size(); ++i) qrow.emplace(query_ids[i], i);
  std::unordered_set<std::string> indexed(index.ids().begin(), index.ids().end());
  for (const auto& p : gold) {
    if (!indexed.count(p.tgt_id)) throw ContractError("evaluate_pn: gold target '" + p.tgt_id + "' missing from index");
    if (!qrow.count(p.src_id)) throw ContractError("evaluate_pn: no query embedding for source '" + p.src_id + "'");
  }
  const std::size_t max_n = *std::max_element(ns.begin(), ns.end());
  std::vector<std::size_t> rank(gold.size(), 0);  // 1-based; 0 = not within max_n
  parallel_for(gold.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto res = index.query(queries.row(qrow.at(gold[i].src_id)), max_n);
      for (std::size_t r = 0; r < res.ranked.size(); ++r) {
        if (res.ranked[r].first == gold[i].tgt_id) {
          rank[i] = r + 1;
          break;
        }
      }
    }
  });
  EvalReport rep;
  rep.num_queries = gold.size();
  rep.candidate_pool_size = index.size();
  for (std::size_t n : ns) {
    std::size_t hits = 0;
    for (std::size_t r : rank) hits += (r != 0 && r <= n) ? 1 : 0;
    rep.p_at[n] = gold.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(gold.size());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Length-difference histogram

struct LengthDiffHistogram {
  static constexpr std::size_t kBuckets = 11;  // 0..9 and >=10
  std::vector<std::size_t> counts = std::vector<std::size_t>(kBuckets, 0);

  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  static std::string label(std::size_t b) { return b + 1 == kBuckets ? ">=10" : std::to_string(b); }

  std::string to_csv() const {
    std::ostringstream os;
    os << "diff_bucket,count\n";
    for (std::size_t b = 0; b < kBuckets; ++b) os << label(b) << ',' << counts[b] << '\n';
    return os.str();
  }

  std::string to_table() const {
    std::ostringstream os;
    const std::size_t n = total();
    os << std::left << std::setw(6) << "diff" << std::right << std::setw(8) << "count" << std::setw(9) << "share" << '\n';
    for (std::size_t b = 0; b < kBuckets; ++b) {
      os << std::left << std::setw(6) << label(b) << std::right << std::setw(8) << counts[b] << std::setw(9)
         << std::fixed << std::setprecision(3) << (n ? static_cast<double>(counts[b]) / static_cast<double>(n) : 0.0)
         << '\n';
    }
    return os.str();
  }
};

/// |#sentences(src) - #sentences(tgt)| per pair. With `resplit`, both documents are
/// re-joined and split with that configuration first (seeded per pair).
inline LengthDiffHistogram length_diff_histogram(const Corpus& corpus, std::optional<SplitterConfig> resplit = {}) {
  const auto idx = corpus.index();
  LengthDiffHistogram h;
  std::size_t pair_no = 0;
  for (const auto& p : corpus.pairs) {
    auto s = idx.find(p.src_id), t = idx.find(p.tgt_id);
    if (s == idx.end() || t == idx.end()) throw ValidationError("histogram: dangling pair " + p.src_id + "," + p.tgt_id);
    auto count = [&](const DocumentRecord& d, std::uint64_t salt) {
      if (!resplit) return d.sentences.size();
      SplitterConfig sc = *resplit;
      sc.seed = resplit->seed ^ (pair_no * 0x9e3779b97f4a7c15ULL + salt);
      return split_sentences(detail::join_sentences(d.sentences), sc).size();
    };
    const std::size_t a = count(corpus.documents[s->second], 1);
    const std::size_t b = count(corpus.documents[t->second], 2);
    const std::size_t diff = a > b ? a - b : b - a;
    ++h.counts[std::min(diff, LengthDiffHistogram::kBuckets - 1)];
    ++pair_no;
  }
  return h;
}

}  // namespace bdm
