// Probability vectors over classes and the distances between them.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "votelab/error.hpp"

namespace votelab {

// Per-example target distribution over C classes. Entries are non-negative
// and sum to 1 within 1e-9.
struct AnnotatorDistribution {
    Eigen::VectorXd probs;

    AnnotatorDistribution() = default;
    explicit AnnotatorDistribution(Eigen::VectorXd p) : probs(std::move(p)) {}

    int num_classes() const { return static_cast<int>(probs.size()); }

    bool valid(double tol = 1e-9) const {
        if (probs.size() == 0) return false;
        if ((probs.array() < 0.0).any()) return false;
        return std::abs(probs.sum() - 1.0) <= tol;
    }

    static AnnotatorDistribution one_hot(int num_classes, int k) {
        Eigen::VectorXd p = Eigen::VectorXd::Zero(num_classes);
        p[k] = 1.0;
        return AnnotatorDistribution(std::move(p));
    }

    static AnnotatorDistribution uniform(int num_classes) {
        return AnnotatorDistribution(
            Eigen::VectorXd::Constant(num_classes, 1.0 / num_classes));
    }
};

// Integer votes per class; sum(counts) == total.
struct VoteCounts {
    std::vector<int> counts;

    int total() const {
        int m = 0;
        for (int c : counts) m += c;
        return m;
    }
    int num_classes() const { return static_cast<int>(counts.size()); }
};

inline AnnotatorDistribution counts_to_distribution(const VoteCounts& v) {
    const int m = v.total();
    if (m < 1) throw InvalidInput("counts_to_distribution: zero total votes");
    Eigen::VectorXd p(v.num_classes());
    for (int k = 0; k < v.num_classes(); ++k)
        p[k] = static_cast<double>(v.counts[static_cast<std::size_t>(k)]) / m;
    return AnnotatorDistribution(std::move(p));
}

// Shannon entropy in nats, with 0 log 0 = 0.
inline double dist_entropy(const AnnotatorDistribution& p) {
    double h = 0.0;
    for (int k = 0; k < p.num_classes(); ++k) {
        const double pk = p.probs[k];
        if (pk > 0.0) h -= pk * std::log(pk);
    }
    return h;
}

// Square root of the Jensen-Shannon divergence with base-2 logs.
// A metric bounded in [0,1]; 0 iff p == q, 1 on disjoint supports.
inline double js_distance(const AnnotatorDistribution& p, const AnnotatorDistribution& q) {
    if (p.num_classes() != q.num_classes())
        throw InvalidInput("js_distance: length mismatch");
    const double inv_log2 = 1.0 / std::log(2.0);
    double div = 0.0;
    for (int k = 0; k < p.num_classes(); ++k) {
        const double pk = p.probs[k];
        const double qk = q.probs[k];
        const double mk = 0.5 * (pk + qk);
        if (pk > 0.0) div += 0.5 * pk * std::log(pk / mk) * inv_log2;
        if (qk > 0.0) div += 0.5 * qk * std::log(qk / mk) * inv_log2;
    }
    if (div < 0.0) div = 0.0;  // guard tiny negative round-off
    return std::sqrt(div);
}

inline double l1_distance(const AnnotatorDistribution& p, const AnnotatorDistribution& q) {
    if (p.num_classes() != q.num_classes())
        throw InvalidInput("l1_distance: length mismatch");
    return (p.probs - q.probs).cwiseAbs().sum();
}

// Lowest index attaining the maximum.
inline int argmax_lowest(const Eigen::VectorXd& v) {
    int best = 0;
    for (int k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
    return best;
}

// Argmax class; ties break to the lowest class index.
inline int majority_label(const AnnotatorDistribution& p) {
    return argmax_lowest(p.probs);
}

inline int majority_label(const VoteCounts& v) {
    int best = 0;
    for (int k = 1; k < v.num_classes(); ++k)
        if (v.counts[static_cast<std::size_t>(k)] > v.counts[static_cast<std::size_t>(best)])
            best = k;
    return best;
}

}  // namespace votelab
