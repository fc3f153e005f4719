// Synthetic annotator-population task, vote subsampling, splits, and the
// shuffled-control transform.
//
// The generator draws inputs from C isotropic Gaussian clusters with equal
// priors and shared spread `overlap`, so the class posterior has a closed
// form and every downstream target-estimation claim can be checked against
// known ground truth. Cluster means sit on the unit circle in the first two
// feature dimensions (evenly spaced integers on a line when d == 1).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "votelab/distribution.hpp"
#include "votelab/error.hpp"
#include "votelab/rng.hpp"

namespace votelab {

struct Example {
    Eigen::VectorXd x;
    AnnotatorDistribution full_dist;            // dense ground-truth target
    std::optional<VoteCounts> counts;           // sparse regime
    std::optional<AnnotatorDistribution> true_posterior;  // generator-known
};

struct Dataset {
    std::vector<Example> examples;
    int num_classes = 0;
    int dim = 0;
    // Named seeds, in insertion order; recorded in serialized headers.
    std::vector<std::pair<std::string, std::uint64_t>> provenance;

    std::size_t size() const { return examples.size(); }
};

// Simplex layout: cluster k at scale * e_k (needs dim >= num_classes), every
// pair of centers equidistant, so each example's posterior can spread over
// many classes at once.
inline Eigen::MatrixXd simplex_cluster_means(int num_classes, int dim, double scale = 1.0) {
    if (dim < num_classes)
        throw ConfigError("simplex_cluster_means: need dim >= num_classes");
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(num_classes, dim);
    for (int k = 0; k < num_classes; ++k) means(k, k) = scale;
    return means;
}

// Evenly spaced cluster means: unit circle in the first two dimensions for
// d >= 2 (rotated by angle_offset radians), integer spacing on a line for
// d == 1.
inline Eigen::MatrixXd default_cluster_means(int num_classes, int dim,
                                             double angle_offset = 0.0) {
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(num_classes, dim);
    if (dim == 1) {
        for (int k = 0; k < num_classes; ++k) means(k, 0) = static_cast<double>(k) + angle_offset;
        return means;
    }
    const double two_pi = 2.0 * M_PI;
    for (int k = 0; k < num_classes; ++k) {
        const double a = two_pi * k / num_classes + angle_offset;
        means(k, 0) = std::cos(a);
        means(k, 1) = std::sin(a);
    }
    return means;
}

// Closed-form posterior over clusters at x: softmax of -||x - mu_k||^2/(2 s^2)
// under equal priors.
inline AnnotatorDistribution cluster_posterior(const Eigen::VectorXd& x,
                                               const Eigen::MatrixXd& means,
                                               double spread) {
    const int c = static_cast<int>(means.rows());
    Eigen::VectorXd logp(c);
    for (int k = 0; k < c; ++k)
        logp[k] = -(x - means.row(k).transpose()).squaredNorm() / (2.0 * spread * spread);
    const double mx = logp.maxCoeff();
    Eigen::VectorXd p = (logp.array() - mx).exp();
    p /= p.sum();
    return AnnotatorDistribution(std::move(p));
}

inline VoteCounts subsample_counts(const AnnotatorDistribution& p, int k_votes, Stream& rng) {
    if (k_votes < 1) throw InvalidInput("subsample_counts: K must be >= 1");
    return VoteCounts{rng.multinomial(p.probs, k_votes)};
}

// Generator over explicit cluster means; make_synthetic_task wraps it with
// the default layout. Input draws come from stream (seed, "gen_x"), votes
// from (seed, "gen_votes"), both consumed in example order.
inline Dataset make_cluster_task(const Eigen::MatrixXd& means, int n, double overlap,
                                 int votes_per_example, std::uint64_t rng_seed) {
    const int c = static_cast<int>(means.rows());
    const int d = static_cast<int>(means.cols());
    if (n < c || c < 2 || d < 1 || overlap <= 0.0 || votes_per_example < 1)
        throw ConfigError("make_cluster_task: invalid sizes");

    Stream gx(rng_seed, "gen_x");
    Stream gv(rng_seed, "gen_votes");

    Dataset ds;
    ds.num_classes = c;
    ds.dim = d;
    ds.provenance.emplace_back("gen_seed", rng_seed);
    ds.examples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cluster = static_cast<int>(gx.uniform_below(static_cast<std::uint64_t>(c)));
        Eigen::VectorXd x(d);
        for (int j = 0; j < d; ++j) x[j] = gx.gaussian() * overlap;
        x += means.row(cluster).transpose();

        Example ex;
        ex.x = std::move(x);
        ex.true_posterior = cluster_posterior(ex.x, means, overlap);
        ex.full_dist = *ex.true_posterior;
        ex.counts = subsample_counts(ex.full_dist, votes_per_example, gv);
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

inline Dataset make_synthetic_task(int n, int num_classes, int dim, double overlap,
                                   int votes_per_example, std::uint64_t rng_seed) {
    return make_cluster_task(default_cluster_means(num_classes, dim), n, overlap,
                             votes_per_example, rng_seed);
}

// Replaces every example's counts with an independent multinomial of size K
// drawn from its full distribution; draws consumed in example order.
inline Dataset subsample_dataset(const Dataset& ds, int k_votes, Stream& rng) {
    Dataset out = ds;
    for (auto& ex : out.examples) ex.counts = subsample_counts(ex.full_dist, k_votes, rng);
    return out;
}

struct SplitResult {
    Dataset train;
    Dataset eval;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> eval_idx;
    bool stratified = true;  // false when the per-class fallback triggered
};

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.dim = ds.dim;
    out.provenance = ds.provenance;
    out.examples.reserve(idx.size());
    for (std::size_t i : idx) out.examples.push_back(ds.examples[i]);
    return out;
}

// Proportional split by majority class of the full distribution. Falls back
// to a global split when any class has fewer than two members.
inline SplitResult stratified_split(const Dataset& ds, double eval_frac, Stream& rng) {
    if (!(eval_frac > 0.0 && eval_frac < 1.0))
        throw ConfigError("stratified_split: eval_frac must be in (0,1)");

    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(majority_label(ds.examples[i].full_dist))].push_back(i);

    SplitResult res;
    bool degenerate = false;
    for (const auto& cls : by_class)
        if (!cls.empty() && cls.size() < 2) degenerate = true;

    if (degenerate) {
        res.stratified = false;
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        rng.shuffle(all);
        const auto n_eval = static_cast<std::size_t>(std::llround(eval_frac * static_cast<double>(ds.size())));
        res.eval_idx.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_eval));
        res.train_idx.assign(all.begin() + static_cast<std::ptrdiff_t>(n_eval), all.end());
    } else {
        for (auto& cls : by_class) {
            if (cls.empty()) continue;
            rng.shuffle(cls);
            const auto n_eval = static_cast<std::size_t>(std::llround(eval_frac * static_cast<double>(cls.size())));
            for (std::size_t j = 0; j < cls.size(); ++j)
                (j < n_eval ? res.eval_idx : res.train_idx).push_back(cls[j]);
        }
    }
    std::sort(res.train_idx.begin(), res.train_idx.end());
    std::sort(res.eval_idx.begin(), res.eval_idx.end());
    res.train = subset(ds, res.train_idx);
    res.eval = subset(ds, res.eval_idx);
    return res;
}

// Shuffled-control transform: one global permutation of (full_dist, counts)
// across examples. Inputs and generator posteriors stay put, so the multiset
// of targets is preserved while the example-to-distribution match breaks.
inline Dataset permute_distributions(const Dataset& ds, Stream& rng) {
    if (ds.size() < 2) throw InvalidInput("permute_distributions: need at least 2 examples");
    const std::vector<std::size_t> perm = rng.permutation(ds.size());
    Dataset out = ds;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out.examples[i].full_dist = ds.examples[perm[i]].full_dist;
        out.examples[i].counts = ds.examples[perm[i]].counts;
    }
    return out;
}

struct SliceResult {
    std::vector<std::size_t> indices;
    bool degenerate = false;  // zero-entropy threshold; slice left empty
};

// Indices whose target entropy reaches the (1 - quantile) empirical quantile.
// Default quantile 0.25 keeps the top quartile by annotator entropy.
inline SliceResult high_disagreement_slice(const Dataset& ds, double quantile = 0.25) {
    if (!(quantile > 0.0 && quantile < 1.0))
        throw ConfigError("high_disagreement_slice: quantile must be in (0,1)");
    std::vector<double> entropies(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        entropies[i] = dist_entropy(ds.examples[i].full_dist);

    std::vector<double> sorted = entropies;
    std::sort(sorted.begin(), sorted.end());
    auto pos = static_cast<std::size_t>(
        std::floor((1.0 - quantile) * static_cast<double>(ds.size())));
    if (pos >= ds.size()) pos = ds.size() - 1;
    const double threshold = sorted[pos];

    SliceResult res;
    if (threshold <= 0.0) {
        res.degenerate = true;  // all-one-hot targets carry no disagreement signal
        return res;
    }
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (entropies[i] >= threshold) res.indices.push_back(i);
    return res;
}

// --- serialization ---------------------------------------------------------
//
// Line-oriented text, one example per line:
//   index  x[0..d)  full_dist[0..C)  [counts[0..C)]
// preceded by a header:
//   # votelab dataset v1
//   # C=<C> d=<d> N=<N> counts=<0|1>
//   # seeds: name=value ...
// Floats are written with %.17g so reload is bit-exact.

namespace detail {
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

inline void save_dataset(const Dataset& ds, std::ostream& os) {
    const bool has_counts = !ds.examples.empty() && ds.examples.front().counts.has_value();
    os << "# votelab dataset v1\n";
    os << "# C=" << ds.num_classes << " d=" << ds.dim << " N=" << ds.size()
       << " counts=" << (has_counts ? 1 : 0) << "\n";
    os << "# seeds:";
    for (const auto& [name, value] : ds.provenance) os << " " << name << "=" << value;
    os << "\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Example& ex = ds.examples[i];
        os << i;
        for (int j = 0; j < ds.dim; ++j) os << " " << detail::fmt_double(ex.x[j]);
        for (int k = 0; k < ds.num_classes; ++k)
            os << " " << detail::fmt_double(ex.full_dist.probs[k]);
        if (has_counts)
            for (int k = 0; k < ds.num_classes; ++k)
                os << " " << ex.counts->counts[static_cast<std::size_t>(k)];
        os << "\n";
    }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("save_dataset: cannot open " + path);
    save_dataset(ds, os);
}

inline Dataset load_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# votelab dataset", 0) != 0)
        throw InvalidInput("load_dataset: missing header");

    Dataset ds;
    std::size_t n = 0;
    bool has_counts = false;
    {
        if (!std::getline(is, line)) throw InvalidInput("load_dataset: truncated header");
        std::istringstream hs(line);
        std::string tok;
        hs >> tok;  // '#'
        while (hs >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            if (key == "C") ds.num_classes = std::stoi(val);
            else if (key == "d") ds.dim = std::stoi(val);
            else if (key == "N") n = std::stoull(val);
            else if (key == "counts") has_counts = std::stoi(val) != 0;
        }
    }
    {
        if (!std::getline(is, line)) throw InvalidInput("load_dataset: truncated header");
        std::istringstream ss(line);
        std::string tok;
        ss >> tok >> tok;  // "#" "seeds:"
        while (ss >> tok) {
            const auto eq = tok.find('=');
            if (eq != std::string::npos)
                ds.provenance.emplace_back(tok.substr(0, eq), std::stoull(tok.substr(eq + 1)));
        }
    }
    if (ds.num_classes < 2 || ds.dim < 1) throw InvalidInput("load_dataset: bad dimensions");

    ds.examples.reserve(n);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::size_t idx = 0;
        ss >> idx;
        Example ex;
        ex.x.resize(ds.dim);
        for (int j = 0; j < ds.dim; ++j) ss >> ex.x[j];
        ex.full_dist.probs.resize(ds.num_classes);
        for (int k = 0; k < ds.num_classes; ++k) ss >> ex.full_dist.probs[k];
        if (has_counts) {
            VoteCounts vc;
            vc.counts.resize(static_cast<std::size_t>(ds.num_classes));
            for (int k = 0; k < ds.num_classes; ++k) ss >> vc.counts[static_cast<std::size_t>(k)];
            ex.counts = std::move(vc);
        }
        if (!ss) throw InvalidInput("load_dataset: malformed example line");
        ds.examples.push_back(std::move(ex));
    }
    if (n != 0 && ds.size() != n) throw InvalidInput("load_dataset: example count mismatch");
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("load_dataset: cannot open " + path);
    return load_dataset(is);
}

}  // namespace votelab
