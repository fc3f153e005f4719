// Out-of-distribution scores and AUROC. All six score types are oriented so
// that higher means more in-distribution; AUROC is then read uniformly as
// the probability that a random in-distribution score exceeds a random OOD
// score, ties counted one half.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "votelab/dataset.hpp"
#include "votelab/distribution.hpp"
#include "votelab/error.hpp"
#include "votelab/mlp.hpp"
#include "votelab/stats.hpp"

namespace votelab {

enum class OodScoreType { msp, energy, entropy, margin, odin, knn };

inline const char* to_string(OodScoreType t) {
    switch (t) {
        case OodScoreType::msp: return "msp";
        case OodScoreType::energy: return "energy";
        case OodScoreType::entropy: return "entropy";
        case OodScoreType::margin: return "margin";
        case OodScoreType::odin: return "odin";
        case OodScoreType::knn: return "knn";
    }
    return "?";
}

inline OodScoreType ood_score_type_from_string(const std::string& s) {
    for (OodScoreType t : {OodScoreType::msp, OodScoreType::energy, OodScoreType::entropy,
                           OodScoreType::margin, OodScoreType::odin, OodScoreType::knn})
        if (s == to_string(t)) return t;
    throw ConfigError("unknown OOD score type: " + s);
}

inline const std::vector<OodScoreType>& all_ood_score_types() {
    static const std::vector<OodScoreType> types = {
        OodScoreType::msp,    OodScoreType::energy, OodScoreType::entropy,
        OodScoreType::margin, OodScoreType::odin,   OodScoreType::knn};
    return types;
}

struct OodParams {
    double energy_temperature = 1.0;
    double odin_temperature = 1000.0;
    double odin_epsilon = 0.0014;   // perturbation in units of odin_feature_scale
    double odin_feature_scale = 1.0;  // set to the training-input scale
    int knn_k = 50;
};

// Mean per-dimension standard deviation of the inputs; used to express the
// ODIN perturbation in feature units.
inline double mean_feature_std(const Dataset& ds) {
    if (ds.size() < 2) return 1.0;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ds.dim);
    for (const auto& ex : ds.examples) mean += ex.x;
    mean /= static_cast<double>(ds.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(ds.dim);
    for (const auto& ex : ds.examples) var += (ex.x - mean).cwiseAbs2();
    var /= static_cast<double>(ds.size() - 1);
    return var.cwiseSqrt().mean();
}

// L2-normalized penultimate features of the training set; read-only after
// construction. Scores are the negated distance to the k-th nearest stored
// feature.
class KnnIndex {
public:
    KnnIndex(const Mlp& m, const Dataset& train, int k = 50) : k_(k) {
        if (k < 1) throw ConfigError("KnnIndex: k must be >= 1");
        if (train.size() < static_cast<std::size_t>(k))
            throw ConfigError("KnnIndex: fewer training points than k");
        features_.resize(static_cast<Eigen::Index>(train.size()),
                         m.widths()[m.widths().size() - 2]);
        for (std::size_t i = 0; i < train.size(); ++i)
            features_.row(static_cast<Eigen::Index>(i)) = normalized(forward(m, train.examples[i].x).features);
    }

    double score(const Eigen::VectorXd& penultimate) const {
        const Eigen::VectorXd f = normalized(penultimate);
        std::vector<double> dists(static_cast<std::size_t>(features_.rows()));
        for (Eigen::Index i = 0; i < features_.rows(); ++i)
            dists[static_cast<std::size_t>(i)] = (features_.row(i).transpose() - f).norm();
        std::nth_element(dists.begin(), dists.begin() + (k_ - 1), dists.end());
        return -dists[static_cast<std::size_t>(k_ - 1)];
    }

    int k() const { return k_; }

private:
    static Eigen::VectorXd normalized(const Eigen::VectorXd& v) {
        const double n = v.norm();
        return n > 0.0 ? Eigen::VectorXd(v / n) : v;
    }

    Eigen::MatrixXd features_;
    int k_;
};

inline double logsumexp(const Eigen::VectorXd& z) {
    const double mx = z.maxCoeff();
    return mx + std::log((z.array() - mx).exp().sum());
}

// Single-example score. The KNN index is required only for knn scores.
inline double ood_score(const Mlp& m, const Eigen::VectorXd& x, OodScoreType type,
                        const OodParams& params = {}, const KnnIndex* index = nullptr) {
    const ForwardResult fr = forward(m, x);
    switch (type) {
        case OodScoreType::msp:
            return fr.q.maxCoeff();
        case OodScoreType::energy: {
            const double t = params.energy_temperature;
            return t * logsumexp(fr.logits / t);
        }
        case OodScoreType::entropy:
            return -dist_entropy(AnnotatorDistribution(fr.q));
        case OodScoreType::margin: {
            Eigen::VectorXd z = fr.logits;
            std::sort(z.data(), z.data() + z.size(), std::greater<double>());
            return z[0] - z[1];
        }
        case OodScoreType::odin: {
            // Temperature-scaled MSP after one input step along the gradient
            // that increases that score (sign step of size epsilon in feature
            // units).
            const double t = params.odin_temperature;
            const Eigen::VectorXd g = input_gradient(m, x, [&](const ForwardResult& f) {
                Eigen::VectorXd qt = f.logits / t;
                const double mx = qt.maxCoeff();
                qt = (qt.array() - mx).exp();
                qt /= qt.sum();
                const int j = argmax_lowest(f.logits);
                // d msp_T / d z = (1/t) * qt_j * (e_j - qt)
                Eigen::VectorXd grad = -qt * (qt[j] / t);
                grad[j] += qt[j] / t;
                return grad;
            });
            const double eps = params.odin_epsilon * params.odin_feature_scale;
            const Eigen::VectorXd x_pert = x + eps * g.cwiseSign();
            const ForwardResult fp = forward(m, x_pert);
            Eigen::VectorXd qt = fp.logits / t;
            const double mx = qt.maxCoeff();
            qt = (qt.array() - mx).exp();
            qt /= qt.sum();
            return qt.maxCoeff();
        }
        case OodScoreType::knn:
            if (index == nullptr) throw ConfigError("ood_score: knn requires a fitted index");
            return index->score(fr.features);
    }
    throw ConfigError("ood_score: unknown score type");
}

inline std::vector<double> score_dataset(const Mlp& m, const Dataset& ds, OodScoreType type,
                                         const OodParams& params = {},
                                         const KnnIndex* index = nullptr) {
    std::vector<double> scores;
    scores.reserve(ds.size());
    for (const auto& ex : ds.examples) scores.push_back(ood_score(m, ex.x, type, params, index));
    return scores;
}

// Probability that a random in-distribution score exceeds a random OOD
// score, ties one half; the normalized Mann-Whitney U by rank summation.
inline double auroc(const std::vector<double>& in_scores, const std::vector<double>& out_scores) {
    if (in_scores.empty() || out_scores.empty()) throw InvalidInput("auroc: empty score set");
    std::vector<double> all;
    all.reserve(in_scores.size() + out_scores.size());
    all.insert(all.end(), in_scores.begin(), in_scores.end());
    all.insert(all.end(), out_scores.begin(), out_scores.end());
    const std::vector<double> ranks = midranks(all);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < in_scores.size(); ++i) rank_sum += ranks[i];
    const double n_in = static_cast<double>(in_scores.size());
    const double n_out = static_cast<double>(out_scores.size());
    const double u = rank_sum - n_in * (n_in + 1.0) / 2.0;
    return u / (n_in * n_out);
}

}  // namespace votelab
