// Loss-landscape and representation diagnostics at a checkpoint: top Hessian
// eigenvalue by power iteration, Hutchinson trace, linear-interpolation loss
// barriers, linear CKA, and the label-sampling gradient-variance probe.
//
// The spectral estimators are generic over any Hessian-vector operator so
// the same code runs against analytic quadratic oracles in tests and against
// the MLP soft cross-entropy Hessian in the harness.

#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "votelab/dataset.hpp"
#include "votelab/error.hpp"
#include "votelab/mlp.hpp"
#include "votelab/rng.hpp"
#include "votelab/stats.hpp"
#include "votelab/theory.hpp"

namespace votelab {

struct PowerIterResult {
    double lambda = 0.0;    // Rayleigh quotient of the last iterate
    double residual = 0.0;  // ||Hv - lambda v|| with ||v|| = 1
    int iterations = 0;
    Eigen::VectorXd vector;
};

// Power iteration on an arbitrary symmetric operator from an explicit start
// vector. Returns the eigenvalue of largest magnitude; the signed value is
// reported (a saddle can make it negative). Converges when the residual
// drops below tol.
template <typename HvpFn>
PowerIterResult top_eigenvalue_from(HvpFn&& hvp_fn, Eigen::VectorXd v, int iters, double tol) {
    if (iters < 1) throw InvalidInput("top_eigenvalue: iters must be >= 1");
    v.normalize();

    PowerIterResult res;
    for (int it = 0; it < iters; ++it) {
        const Eigen::VectorXd w = hvp_fn(v);
        if (!w.allFinite()) throw NumericFault("top_eigenvalue: non-finite Hessian-vector product");
        res.lambda = v.dot(w);
        res.residual = (w - res.lambda * v).norm();
        res.iterations = it + 1;
        res.vector = v;
        if (res.residual < tol) break;
        const double norm = w.norm();
        if (norm == 0.0) break;  // in the null space; lambda 0 is exact
        v = w / norm;
    }
    return res;
}

template <typename HvpFn>
PowerIterResult top_eigenvalue(HvpFn&& hvp_fn, Eigen::Index dim, int iters, double tol,
                               Stream& rng) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.gaussian();
    return top_eigenvalue_from(hvp_fn, std::move(v), iters, tol);
}

struct TraceEstimate {
    double trace = 0.0;
    double standard_error = 0.0;
    int probes = 0;
};

// Hutchinson estimator with Rademacher probes.
template <typename HvpFn>
TraceEstimate hessian_trace(HvpFn&& hvp_fn, Eigen::Index dim, int probes, Stream& rng) {
    if (probes < 1) throw InvalidInput("hessian_trace: probes must be >= 1");
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < probes; ++i) {
        Eigen::VectorXd v(dim);
        for (Eigen::Index j = 0; j < dim; ++j) v[j] = (rng.next_u64() & 1) ? 1.0 : -1.0;
        const double est = v.dot(hvp_fn(v));
        if (!std::isfinite(est)) throw NumericFault("hessian_trace: non-finite probe");
        sum += est;
        sumsq += est * est;
    }
    TraceEstimate res;
    res.probes = probes;
    res.trace = sum / probes;
    if (probes > 1) {
        const double var = (sumsq - sum * sum / probes) / (probes - 1);
        res.standard_error = std::sqrt(std::max(0.0, var) / probes);
    }
    return res;
}

inline PowerIterResult top_eigenvalue(const Mlp& m, const Batch& batch, int iters, double tol,
                                      Stream& rng) {
    return top_eigenvalue([&](const Eigen::VectorXd& v) { return hvp(m, batch, v); },
                          m.theta.size(), iters, tol, rng);
}

inline TraceEstimate hessian_trace(const Mlp& m, const Batch& batch, int probes, Stream& rng) {
    return hessian_trace([&](const Eigen::VectorXd& v) { return hvp(m, batch, v); },
                         m.theta.size(), probes, rng);
}

struct BarrierResult {
    double barrier = 0.0;
    std::vector<double> ts;
    std::vector<double> losses;
};

// Loss along the linear interpolation theta(t) = (1-t) a + t b on a uniform
// grid including both endpoints; barrier = max over the grid minus the larger
// endpoint loss, hence non-negative.
template <typename LossFn>
BarrierResult loss_barrier_fn(LossFn&& loss_fn, const Eigen::VectorXd& theta_a,
                              const Eigen::VectorXd& theta_b, int n_points = 21) {
    if (n_points < 3) throw InvalidInput("loss_barrier: need at least 3 grid points");
    if (theta_a.size() != theta_b.size())
        throw InvalidInput("loss_barrier: parameter shape mismatch");
    BarrierResult res;
    res.ts.reserve(static_cast<std::size_t>(n_points));
    res.losses.reserve(static_cast<std::size_t>(n_points));
    double max_loss = -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd direction = theta_b - theta_a;  // zero direction stays exact
    for (int i = 0; i < n_points; ++i) {
        const double t = static_cast<double>(i) / (n_points - 1);
        const double loss = loss_fn(Eigen::VectorXd(theta_a + t * direction));
        res.ts.push_back(t);
        res.losses.push_back(loss);
        max_loss = std::max(max_loss, loss);
    }
    res.barrier = max_loss - std::max(res.losses.front(), res.losses.back());
    return res;
}

inline BarrierResult loss_barrier(const Mlp& arch, const Eigen::VectorXd& theta_a,
                                  const Eigen::VectorXd& theta_b, const Batch& batch,
                                  int n_points = 21) {
    if (theta_a.size() != static_cast<Eigen::Index>(arch.param_count()))
        throw InvalidInput("loss_barrier: parameter shape mismatch");
    Mlp probe = arch;
    return loss_barrier_fn(
        [&](const Eigen::VectorXd& theta) {
            probe.theta = theta;
            return loss_value(probe, batch);
        },
        theta_a, theta_b, n_points);
}

struct CkaResult {
    double value = 0.0;
    bool defined = true;  // false when a feature set has zero variance
};

// Linear centered kernel alignment between two N x h feature matrices
// (rows = examples). Invariant to orthogonal transforms and isotropic
// scaling of either side.
inline CkaResult linear_cka(const Eigen::MatrixXd& feats_a, const Eigen::MatrixXd& feats_b) {
    if (feats_a.rows() != feats_b.rows() || feats_a.rows() < 2)
        throw InvalidInput("linear_cka: need matching N >= 2");
    const Eigen::MatrixXd a = feats_a.rowwise() - feats_a.colwise().mean();
    const Eigen::MatrixXd b = feats_b.rowwise() - feats_b.colwise().mean();
    const double cross = (a.transpose() * b).squaredNorm();
    const double na = (a.transpose() * a).norm();
    const double nb = (b.transpose() * b).norm();
    if (na == 0.0 || nb == 0.0) return {0.0, false};
    return {cross / (na * nb), true};
}

struct GradientVarianceProbe {
    std::vector<double> empirical;      // per-example total last-layer variance
    std::vector<double> closed_form;    // trace of J^T (Diag(p)-pp^T) J
    std::vector<double> standard_error; // MC standard error of the empirical value
    std::vector<double> target_entropy;
    double spearman_vs_entropy = 0.0;
    bool spearman_defined = true;
};

// Draws labels y ~ p_i and measures the per-example variance of the
// last-layer weight+bias gradient, against the closed-form covariance trace
// from the label-sampling proposition.
inline GradientVarianceProbe gradient_variance_probe(const Mlp& m, const Dataset& ds,
                                                     int n_draws, Stream& rng) {
    if (n_draws < 2) throw InvalidInput("gradient_variance_probe: need n_draws >= 2");
    const int c = m.num_classes();
    GradientVarianceProbe probe;
    probe.empirical.reserve(ds.size());
    probe.closed_form.reserve(ds.size());
    probe.target_entropy.reserve(ds.size());

    for (const auto& ex : ds.examples) {
        const ForwardResult fr = forward(m, ex.x);
        const Eigen::VectorXd& p = ex.full_dist.probs;
        Eigen::VectorXd aug(fr.features.size() + 1);
        aug << fr.features, 1.0;  // weight columns plus the bias coordinate

        // Last-layer logit Jacobian: row k is e_k (x) aug.
        const auto cols = static_cast<Eigen::Index>(c) * aug.size();
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(c, cols);
        for (int k = 0; k < c; ++k)
            jac.block(k, static_cast<Eigen::Index>(k) * aug.size(), 1, aug.size()) =
                aug.transpose();
        probe.closed_form.push_back(param_grad_covariance(jac, p).trace());

        // Monte-Carlo draws of the hard-label gradient (q - e_y) (x) aug.
        Eigen::MatrixXd grads(cols, n_draws);
        for (int j = 0; j < n_draws; ++j) {
            const int y = rng.categorical(p);
            Eigen::VectorXd logit_grad = fr.q;
            logit_grad[y] -= 1.0;
            Eigen::MatrixXd g = logit_grad * aug.transpose();  // c x (h+1)
            grads.col(j) = Eigen::Map<Eigen::VectorXd>(g.data(), cols);
        }
        const Eigen::VectorXd mean = grads.rowwise().mean();
        double sum = 0.0, sumsq = 0.0;
        for (int j = 0; j < n_draws; ++j) {
            const double sq = (grads.col(j) - mean).squaredNorm();
            sum += sq;
            sumsq += sq * sq;
        }
        probe.empirical.push_back(sum / (n_draws - 1));
        const double var_of_sq = (sumsq - sum * sum / n_draws) / (n_draws - 1);
        probe.standard_error.push_back(std::sqrt(std::max(0.0, var_of_sq) / n_draws));
        probe.target_entropy.push_back(dist_entropy(ex.full_dist));
    }
    const SpearmanResult sr = spearman(probe.target_entropy, probe.empirical);
    probe.spearman_vs_entropy = sr.defined ? sr.rho : 0.0;
    probe.spearman_defined = sr.defined;
    return probe;
}

}  // namespace votelab
