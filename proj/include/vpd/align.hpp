#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vpd/corpus.hpp"

namespace vpd {

/// Symmetric DTW with slope constraint P = 2 on L2 frame distances:
///   g(1,1) = 2 d(1,1)
///   g(i,j) = min{ g(i-2,j-3) + 2d(i-1,j-2) + 2d(i,j-1) + d(i,j),
///                 g(i-1,j-1) + 2d(i,j),
///                 g(i-3,j-2) + 2d(i-2,j-1) + 2d(i-1,j) + d(i,j) }
/// Returns g(N,M) / (N+M), or +infinity when no path reaches (N,M).
/// Throws EmptySequence, DimensionMismatch.
double dtw_cost(const FeatureSequence& a, const FeatureSequence& b);

using SequenceRefs = std::vector<const FeatureSequence*>;

/// Cost matrix (queries x index). Any implementation must agree with
/// reference_pairwise_costs within 1e-6.
using PairwiseCostFn = std::function<Eigen::MatrixXd(const SequenceRefs& queries, const SequenceRefs& index)>;

/// dtw_cost on every pair.
Eigen::MatrixXd reference_pairwise_costs(const SequenceRefs& queries, const SequenceRefs& index);

/// Each row scaled to unit L2 norm; all-zero rows stay zero.
FeatureSequence unit_normalize(const FeatureSequence& seq);

/// A sequence prepared for alignment: unit-normalized frames plus the
/// normalized mirror when available.
struct AlignClip {
    std::string id;
    int label = 0;
    FeatureSequence regular;
    FeatureSequence flipped;

    bool has_flipped() const { return flipped.rows() > 0; }
};

AlignClip make_align_clip(std::string id, int label, const FeatureSequence& regular,
                          const FeatureSequence& flipped = {});

/// Minimum over the flip combinations (regular/flipped on each side) of
/// every query/index pair.
Eigen::MatrixXd combined_costs(const std::vector<AlignClip>& queries, const std::vector<AlignClip>& index,
                               const PairwiseCostFn& costs = reference_pairwise_costs);

struct NnsResult {
    int label = 0;
    std::size_t index = 0;
    double cost = 0.0;
};

/// Label of the cheapest index entry; first index wins ties.
/// Throws EmptyTrainingSet for an empty index, AllInfeasible.
NnsResult nns_classify(const AlignClip& query, const std::vector<AlignClip>& index,
                       const PairwiseCostFn& costs = reference_pairwise_costs);

/// Same as nns_classify on one row of a precomputed combined cost matrix.
NnsResult nns_from_costs(const Eigen::RowVectorXd& row, const std::vector<AlignClip>& index);

struct RetrievalHit {
    std::size_t index = 0;
    std::string id;
    int label = 0;
    double cost = 0.0;
};

/// Corpus entries ranked by ascending combined cost (stable on ties,
/// infeasible last), excluding entries whose id equals the query's.
/// k = 0 keeps the full ranking.
std::vector<RetrievalHit> retrieve(const AlignClip& query, const std::vector<AlignClip>& corpus, std::size_t k = 0,
                                   const PairwiseCostFn& costs = reference_pairwise_costs);

std::vector<RetrievalHit> rank_from_costs(const AlignClip& query, const Eigen::RowVectorXd& row,
                                          const std::vector<AlignClip>& corpus, std::size_t k = 0);

/// Mean over queries of (relevant in top k) / k; missing ranks count as
/// irrelevant. relevance[q][r] says whether rank r of query q shares its label.
std::vector<double> precision_at_k(const std::vector<std::vector<bool>>& relevance, const std::vector<int>& ks);

std::vector<bool> relevance_mask(int query_label, const std::vector<RetrievalHit>& ranking);

}  // namespace vpd
