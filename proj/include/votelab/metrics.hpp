// Endpoint evaluation metrics over predicted distributions and annotator
// targets. Predictions and targets are passed as C x N matrices, one column
// per example. NLL and KL are in nats; calibration accuracy is measured
// against the majority annotator label (ties to the lowest class index).

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "votelab/distribution.hpp"
#include "votelab/error.hpp"
#include "votelab/stats.hpp"

namespace votelab {

struct ProperScores {
    double soft_nll = 0.0;
    double kl_to_annotator = 0.0;
    double soft_brier = 0.0;
    int clamped = 0;  // predictions clamped at 1e-12 under positive target mass
};

// Mean cross-entropy, mean KL, mean squared distance. Both NLL and KL use
// the same clamped log-prediction, so soft_nll - kl equals the mean target
// entropy exactly.
inline ProperScores proper_scores(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets) {
    if (preds.rows() != targets.rows() || preds.cols() != targets.cols())
        throw InvalidInput("proper_scores: shape mismatch");
    const auto n = preds.cols();
    ProperScores s;
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index k = 0; k < preds.rows(); ++k) {
            const double p = targets(k, j);
            if (p <= 0.0) continue;
            double q = preds(k, j);
            if (q < 1e-12) {
                q = 1e-12;
                ++s.clamped;
            }
            const double logq = std::log(q);
            s.soft_nll -= p * logq;
            s.kl_to_annotator += p * (std::log(p) - logq);
        }
        s.soft_brier += (targets.col(j) - preds.col(j)).squaredNorm();
    }
    s.soft_nll /= static_cast<double>(n);
    s.kl_to_annotator /= static_cast<double>(n);
    s.soft_brier /= static_cast<double>(n);
    return s;
}

inline double hard_acc_all(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets) {
    if (preds.cols() != targets.cols()) throw InvalidInput("hard_acc_all: shape mismatch");
    int correct = 0;
    for (Eigen::Index j = 0; j < preds.cols(); ++j)
        if (argmax_lowest(preds.col(j)) == argmax_lowest(targets.col(j))) ++correct;
    return static_cast<double>(correct) / static_cast<double>(preds.cols());
}

// Equal-mass expected calibration error. Examples are sorted by confidence
// (max predicted probability) and split into `bins` near-equal-count bins;
// the leading N mod bins bins take one extra example.
inline double ece_eqmass(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets,
                         int bins = 15) {
    if (bins < 1) throw InvalidInput("ece_eqmass: bins must be >= 1");
    const auto n = static_cast<std::size_t>(preds.cols());
    if (n == 0) throw InvalidInput("ece_eqmass: empty input");
    if (static_cast<std::size_t>(bins) > n) bins = static_cast<int>(n);

    std::vector<double> conf(n);
    std::vector<int> correct(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto col = preds.col(static_cast<Eigen::Index>(j));
        const int arg = argmax_lowest(col);
        conf[j] = col[arg];
        correct[j] = arg == argmax_lowest(targets.col(static_cast<Eigen::Index>(j))) ? 1 : 0;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return conf[a] < conf[b]; });

    double ece = 0.0;
    std::size_t start = 0;
    const std::size_t base = n / static_cast<std::size_t>(bins);
    const std::size_t extra = n % static_cast<std::size_t>(bins);
    for (int b = 0; b < bins; ++b) {
        const std::size_t count = base + (static_cast<std::size_t>(b) < extra ? 1 : 0);
        if (count == 0) continue;
        double mean_conf = 0.0, acc = 0.0;
        for (std::size_t j = start; j < start + count; ++j) {
            mean_conf += conf[order[j]];
            acc += correct[order[j]];
        }
        mean_conf /= static_cast<double>(count);
        acc /= static_cast<double>(count);
        ece += (static_cast<double>(count) / static_cast<double>(n)) * std::abs(mean_conf - acc);
        start += count;
    }
    return ece;
}

struct ReliabilityCurve {
    std::vector<double> grid;      // 101 confidence points in [0,1]
    std::vector<double> accuracy;  // kernel-smoothed accuracy at each point
    std::vector<double> density;   // confidence density at each point
    double smooth_ece = 0.0;       // density-weighted |curve - diagonal|
    bool degenerate = false;       // single distinct confidence value
};

// Gaussian-kernel reliability curve on a fixed 101-point grid.
inline ReliabilityCurve smooth_reliability(const Eigen::MatrixXd& preds,
                                           const Eigen::MatrixXd& targets,
                                           double bandwidth = 0.05) {
    if (bandwidth <= 0.0) throw InvalidInput("smooth_reliability: bandwidth must be positive");
    const auto n = static_cast<std::size_t>(preds.cols());
    std::vector<double> conf(n);
    std::vector<double> correct(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto col = preds.col(static_cast<Eigen::Index>(j));
        const int arg = argmax_lowest(col);
        conf[j] = col[arg];
        correct[j] = arg == argmax_lowest(targets.col(static_cast<Eigen::Index>(j))) ? 1.0 : 0.0;
    }
    ReliabilityCurve rc;
    rc.degenerate =
        std::all_of(conf.begin(), conf.end(), [&](double c) { return c == conf.front(); });
    const int grid_points = 101;
    rc.grid.resize(grid_points);
    rc.accuracy.resize(grid_points);
    rc.density.resize(grid_points);
    double weighted_gap = 0.0, total_density = 0.0;
    for (int g = 0; g < grid_points; ++g) {
        const double c = static_cast<double>(g) / (grid_points - 1);
        rc.grid[static_cast<std::size_t>(g)] = c;
        double wsum = 0.0, wacc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double u = (c - conf[j]) / bandwidth;
            const double w = std::exp(-0.5 * u * u);
            wsum += w;
            wacc += w * correct[j];
        }
        const double curve = wsum > 0.0 ? wacc / wsum : 0.0;
        rc.accuracy[static_cast<std::size_t>(g)] = curve;
        rc.density[static_cast<std::size_t>(g)] = wsum;
        weighted_gap += std::abs(curve - c) * wsum;
        total_density += wsum;
    }
    rc.smooth_ece = total_density > 0.0 ? weighted_gap / total_density : 0.0;
    return rc;
}

// Spearman correlation between predicted and annotator entropies; flagged 0
// when either side has constant ranks.
struct EntropyCorrelation {
    double rho = 0.0;
    bool defined = true;
};

inline EntropyCorrelation entropy_correlation(const Eigen::MatrixXd& preds,
                                              const Eigen::MatrixXd& targets) {
    if (preds.cols() != targets.cols() || preds.cols() < 2)
        throw InvalidInput("entropy_correlation: need matched N >= 2");
    auto column_entropies = [](const Eigen::MatrixXd& m) {
        std::vector<double> h(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            h[static_cast<std::size_t>(j)] = dist_entropy(AnnotatorDistribution(m.col(j)));
        return h;
    };
    const SpearmanResult r = spearman(column_entropies(preds), column_entropies(targets));
    return {r.defined ? r.rho : 0.0, r.defined};
}

struct BrierDecomposition {
    double reliability = 0.0;
    double resolution = 0.0;
    double uncertainty = 0.0;
};

// Murphy decomposition, computed per class against the majority-label
// one-hot outcome with equal-width forecast bins, summed over classes.
// Recombines exactly to the brier score of bin-mean forecasts:
//   binned_brier = reliability - resolution + uncertainty.
inline BrierDecomposition brier_decomposition(const Eigen::MatrixXd& preds,
                                              const Eigen::MatrixXd& targets, int bins = 15) {
    if (bins < 1) throw InvalidInput("brier_decomposition: bins must be >= 1");
    const auto n = preds.cols();
    if (n == 0) throw InvalidInput("brier_decomposition: empty input");
    std::vector<int> majority(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j)
        majority[static_cast<std::size_t>(j)] = argmax_lowest(targets.col(j));

    BrierDecomposition out;
    for (int k = 0; k < preds.rows(); ++k) {
        std::vector<double> fsum(static_cast<std::size_t>(bins), 0.0);
        std::vector<double> osum(static_cast<std::size_t>(bins), 0.0);
        std::vector<int> cnt(static_cast<std::size_t>(bins), 0);
        double obar = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double f = preds(k, j);
            int b = static_cast<int>(f * bins);
            if (b >= bins) b = bins - 1;
            if (b < 0) b = 0;
            const double o = majority[static_cast<std::size_t>(j)] == k ? 1.0 : 0.0;
            fsum[static_cast<std::size_t>(b)] += f;
            osum[static_cast<std::size_t>(b)] += o;
            cnt[static_cast<std::size_t>(b)] += 1;
            obar += o;
        }
        obar /= static_cast<double>(n);
        for (int b = 0; b < bins; ++b) {
            const int c = cnt[static_cast<std::size_t>(b)];
            if (c == 0) continue;  // empty bins skipped
            const double fb = fsum[static_cast<std::size_t>(b)] / c;
            const double ob = osum[static_cast<std::size_t>(b)] / c;
            const double w = static_cast<double>(c) / static_cast<double>(n);
            out.reliability += w * (fb - ob) * (fb - ob);
            out.resolution += w * (ob - obar) * (ob - obar);
        }
        out.uncertainty += obar * (1.0 - obar);
    }
    return out;
}

struct EvalReport {
    double soft_nll = 0.0;
    double kl_to_annotator = 0.0;
    double soft_brier = 0.0;
    double hard_acc_all = 0.0;
    double ece_eqmass = 0.0;
    double entropy_corr = 0.0;
    double brier_reliability = 0.0;
    double brier_resolution = 0.0;
    double brier_uncertainty = 0.0;
    double smooth_ece = 0.0;
    int clamped = 0;
    ReliabilityCurve reliability_curve;

    static std::string csv_header() {
        return "soft_nll,kl_to_annotator,soft_brier,hard_acc_all,ece_eqmass,entropy_corr,"
               "brier_reliability,brier_resolution,brier_uncertainty,smooth_ece,clamped";
    }
};

inline EvalReport compute_eval_report(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets,
                                      int bins = 15, double bandwidth = 0.05) {
    EvalReport r;
    const ProperScores ps = proper_scores(preds, targets);
    r.soft_nll = ps.soft_nll;
    r.kl_to_annotator = ps.kl_to_annotator;
    r.soft_brier = ps.soft_brier;
    r.clamped = ps.clamped;
    r.hard_acc_all = hard_acc_all(preds, targets);
    r.ece_eqmass = ece_eqmass(preds, targets, bins);
    r.entropy_corr = entropy_correlation(preds, targets).rho;
    const BrierDecomposition bd = brier_decomposition(preds, targets, bins);
    r.brier_reliability = bd.reliability;
    r.brier_resolution = bd.resolution;
    r.brier_uncertainty = bd.uncertainty;
    r.reliability_curve = smooth_reliability(preds, targets, bandwidth);
    r.smooth_ece = r.reliability_curve.smooth_ece;
    return r;
}

}  // namespace votelab
