#include "vpd/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vpd/error.hpp"

namespace vpd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

double dtw_cost(const FeatureSequence& a, const FeatureSequence& b) {
    if (a.rows() == 0 || b.rows() == 0) throw EmptySequence("dtw needs nonempty sequences");
    if (a.cols() != b.cols()) throw DimensionMismatch("dtw sequences differ in dim");
    const Eigen::Index n = a.rows(), m = b.rows();
    // Outside the P=2 slope band nothing is reachable.
    if (2 * n < m || 2 * m < n) return kInf;

    const Eigen::MatrixXd ad = a.cast<double>(), bd = b.cast<double>();
    // d and g are 1-based; row/col 0 of d is unused.
    Eigen::MatrixXd d(n + 1, m + 1);
    for (Eigen::Index i = 1; i <= n; ++i)
        for (Eigen::Index j = 1; j <= m; ++j) d(i, j) = (ad.row(i - 1) - bd.row(j - 1)).norm();

    Eigen::MatrixXd g = Eigen::MatrixXd::Constant(n + 1, m + 1, kInf);
    g(1, 1) = 2.0 * d(1, 1);
    for (Eigen::Index i = 1; i <= n; ++i)
        for (Eigen::Index j = 1; j <= m; ++j) {
            if (i == 1 && j == 1) continue;
            double best = kInf;
            if (i >= 3 && j >= 4) best = std::min(best, g(i - 2, j - 3) + 2 * d(i - 1, j - 2) + 2 * d(i, j - 1) + d(i, j));
            if (i >= 2 && j >= 2) best = std::min(best, g(i - 1, j - 1) + 2 * d(i, j));
            if (i >= 4 && j >= 3) best = std::min(best, g(i - 3, j - 2) + 2 * d(i - 2, j - 1) + 2 * d(i - 1, j) + d(i, j));
            g(i, j) = best;
        }
    const double total = g(n, m);
    return std::isinf(total) ? kInf : total / double(n + m);
}

Eigen::MatrixXd reference_pairwise_costs(const SequenceRefs& queries, const SequenceRefs& index) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(index.size()));
    for (std::size_t q = 0; q < queries.size(); ++q)
        for (std::size_t i = 0; i < index.size(); ++i)
            out(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i)) = dtw_cost(*queries[q], *index[i]);
    return out;
}

FeatureSequence unit_normalize(const FeatureSequence& seq) {
    FeatureSequence out = seq;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double norm = seq.row(r).cast<double>().norm();
        if (norm > 0.0) out.row(r) = (seq.row(r).cast<double>() / norm).cast<float>();
    }
    return out;
}

AlignClip make_align_clip(std::string id, int label, const FeatureSequence& regular, const FeatureSequence& flipped) {
    if (flipped.rows() > 0 && flipped.cols() != regular.cols())
        throw DimensionMismatch("flipped sequence differs in dim");
    AlignClip c;
    c.id = std::move(id);
    c.label = label;
    c.regular = unit_normalize(regular);
    if (flipped.rows() > 0) c.flipped = unit_normalize(flipped);
    return c;
}

Eigen::MatrixXd combined_costs(const std::vector<AlignClip>& queries, const std::vector<AlignClip>& index,
                               const PairwiseCostFn& costs) {
    const auto nq = static_cast<Eigen::Index>(queries.size());
    const auto ni = static_cast<Eigen::Index>(index.size());
    // One batch per combination; missing mirrors fall back to the regular
    // sequence, which only repeats a combination already covered.
    auto refs = [](const std::vector<AlignClip>& clips, bool flip) {
        SequenceRefs out;
        for (const auto& c : clips) out.push_back(flip && c.has_flipped() ? &c.flipped : &c.regular);
        return out;
    };
    Eigen::MatrixXd best = Eigen::MatrixXd::Constant(nq, ni, kInf);
    for (bool qf : {false, true})
        for (bool jf : {false, true}) {
            const Eigen::MatrixXd c = costs(refs(queries, qf), refs(index, jf));
            if (c.rows() != nq || c.cols() != ni) throw ShapeMismatch("pairwise cost backend returned a wrong shape");
            best = best.cwiseMin(c);
        }
    return best;
}

NnsResult nns_from_costs(const Eigen::RowVectorXd& row, const std::vector<AlignClip>& index) {
    if (index.empty()) throw EmptyTrainingSet("nearest-neighbour index is empty");
    NnsResult out;
    out.cost = kInf;
    for (std::size_t i = 0; i < index.size(); ++i) {
        const double c = row(static_cast<Eigen::Index>(i));
        if (c < out.cost) out = {index[i].label, i, c};
    }
    if (std::isinf(out.cost)) throw AllInfeasible("no index entry can be aligned with the query");
    return out;
}

NnsResult nns_classify(const AlignClip& query, const std::vector<AlignClip>& index, const PairwiseCostFn& costs) {
    if (index.empty()) throw EmptyTrainingSet("nearest-neighbour index is empty");
    return nns_from_costs(combined_costs({query}, index, costs).row(0), index);
}

std::vector<RetrievalHit> rank_from_costs(const AlignClip& query, const Eigen::RowVectorXd& row,
                                          const std::vector<AlignClip>& corpus, std::size_t k) {
    std::vector<RetrievalHit> hits;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].id == query.id) continue;
        hits.push_back({i, corpus[i].id, corpus[i].label, row(static_cast<Eigen::Index>(i))});
    }
    // +inf compares greater than every finite cost, so infeasible pairs land last.
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.cost < b.cost; });
    if (k > 0 && hits.size() > k) hits.resize(k);
    return hits;
}

std::vector<RetrievalHit> retrieve(const AlignClip& query, const std::vector<AlignClip>& corpus, std::size_t k,
                                   const PairwiseCostFn& costs) {
    if (corpus.empty()) return {};
    return rank_from_costs(query, combined_costs({query}, corpus, costs).row(0), corpus, k);
}

std::vector<double> precision_at_k(const std::vector<std::vector<bool>>& relevance, const std::vector<int>& ks) {
    std::vector<double> out;
    for (int k : ks) {
        if (k < 1) throw BadConfig("precision@k needs k >= 1");
        if (relevance.empty()) {
            out.push_back(0.0);
            continue;
        }
        double sum = 0.0;
        for (const auto& rel : relevance) {
            const std::size_t upto = std::min(rel.size(), static_cast<std::size_t>(k));
            const auto hits = std::count(rel.begin(), rel.begin() + static_cast<std::ptrdiff_t>(upto), true);
            sum += double(hits) / double(k);
        }
        out.push_back(sum / double(relevance.size()));
    }
    return out;
}

std::vector<bool> relevance_mask(int query_label, const std::vector<RetrievalHit>& ranking) {
    std::vector<bool> out;
    out.reserve(ranking.size());
    for (const auto& h : ranking) out.push_back(h.label == query_label);
    return out;
}

}  // namespace vpd
