// Closed forms for the label-sampling statistics of hard-label delivery.
//
// For hard-label cross-entropy at logits z with q = softmax(z) and a label
// drawn y ~ p, the logit gradient is q - e_y, so
//   E[grad]    = q - p
//   Cov[grad]  = Diag(p) - p p^T
//   E||q-e_y||^2 = ||q - p||^2 + 1 - ||p||^2
// and the parameter-space covariance is J^T (Diag(p) - p p^T) J for the logit
// Jacobian J. The variance term vanishes exactly on one-hot targets and grows
// with annotator disagreement.

#pragma once

#include <Eigen/Dense>

#include "votelab/error.hpp"
#include "votelab/rng.hpp"

namespace votelab {

struct LabelSamplingStats {
    Eigen::VectorXd mean_grad;
    Eigen::MatrixXd covariance;
    double expected_sqnorm = 0.0;
    long sample_count = 0;
};

// Monte-Carlo estimate of the logit-gradient statistics under y ~ p; the
// sampling counterpart of the closed forms below.
inline LabelSamplingStats sample_label_stats(const Eigen::VectorXd& q, const Eigen::VectorXd& p,
                                             long draws, Stream& rng) {
    if (q.size() != p.size()) throw InvalidInput("sample_label_stats: length mismatch");
    if (draws < 2) throw InvalidInput("sample_label_stats: need at least 2 draws");
    const auto c = p.size();
    Eigen::VectorXd freq = Eigen::VectorXd::Zero(c);
    double sqnorm = 0.0;
    for (long i = 0; i < draws; ++i) {
        const int y = rng.categorical(p);
        freq[y] += 1.0;
        Eigen::VectorXd g = q;
        g[y] -= 1.0;
        sqnorm += g.squaredNorm();
    }
    freq /= static_cast<double>(draws);

    LabelSamplingStats stats;
    stats.sample_count = draws;
    stats.mean_grad = q - freq;
    // gradients differ only through e_y, so their covariance is the sample
    // covariance of the one-hot draws
    stats.covariance = (static_cast<double>(draws) / (draws - 1)) *
                       (Eigen::MatrixXd(freq.asDiagonal()) - freq * freq.transpose());
    stats.expected_sqnorm = sqnorm / static_cast<double>(draws);
    return stats;
}

inline Eigen::VectorXd expected_logit_grad(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
    if (q.size() != p.size()) throw InvalidInput("expected_logit_grad: length mismatch");
    return q - p;
}

inline Eigen::MatrixXd logit_grad_covariance(const Eigen::VectorXd& p) {
    Eigen::MatrixXd cov = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
    return cov;
}

inline double expected_grad_sqnorm(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
    if (q.size() != p.size()) throw InvalidInput("expected_grad_sqnorm: length mismatch");
    return (q - p).squaredNorm() + 1.0 - p.squaredNorm();
}

// J has one row per class (C x P); result is the P x P covariance of the
// parameter gradient under label sampling.
inline Eigen::MatrixXd param_grad_covariance(const Eigen::MatrixXd& jacobian,
                                             const Eigen::VectorXd& p) {
    if (jacobian.rows() != p.size())
        throw InvalidInput("param_grad_covariance: Jacobian rows must match class count");
    return jacobian.transpose() * logit_grad_covariance(p) * jacobian;
}

}  // namespace votelab
