// Delivery schedules: how a fixed per-example annotator target is presented
// to the optimizer at each epoch.
//
// Multipass expands each example's vote counts into the observed label
// multiset, shuffles it once with a per-example stream, and cycles through it
// via epoch mod m_i, so every window of m_i consecutive epochs delivers each
// observed vote exactly once. Deterministic control is the same construction
// with the shuffle seed offset by 1000. SLS resamples one hard label per
// example from its target distribution at the start of every hold_period-th
// epoch (hold_period 1 is canonical). Shuffled SLS runs SLS after a single
// global permutation of the targets, breaking the example-to-distribution
// match while preserving the marginal statistics.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "votelab/dataset.hpp"
#include "votelab/distribution.hpp"
#include "votelab/error.hpp"
#include "votelab/rng.hpp"
#include "votelab/target.hpp"

namespace votelab {

enum class DeliveryMethod {
    soft,
    multipass,
    deterministic_control,
    sls,
    shuffled_sls,
    majority,
    label_smoothing,
    mixup,
};

inline const char* to_string(DeliveryMethod m) {
    switch (m) {
        case DeliveryMethod::soft: return "soft";
        case DeliveryMethod::multipass: return "multipass";
        case DeliveryMethod::deterministic_control: return "deterministic_control";
        case DeliveryMethod::sls: return "sls";
        case DeliveryMethod::shuffled_sls: return "shuffled_sls";
        case DeliveryMethod::majority: return "majority";
        case DeliveryMethod::label_smoothing: return "label_smoothing";
        case DeliveryMethod::mixup: return "mixup";
    }
    return "?";
}

inline DeliveryMethod delivery_method_from_string(const std::string& s) {
    for (DeliveryMethod m :
         {DeliveryMethod::soft, DeliveryMethod::multipass, DeliveryMethod::deterministic_control,
          DeliveryMethod::sls, DeliveryMethod::shuffled_sls, DeliveryMethod::majority,
          DeliveryMethod::label_smoothing, DeliveryMethod::mixup})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown delivery method: " + s);
}

struct DeliveryParams {
    DeliveryMethod method = DeliveryMethod::soft;
    int hold_period = 1;           // sls refresh interval in epochs
    double smoothing_alpha = 0.1;  // label_smoothing
    double mixup_alpha = 0.2;      // mixup
};

// Which distribution plays the role of the per-example target p_i: the dense
// full distribution, or the empirical ratio of the (possibly subsampled)
// vote counts.
enum class TargetSource { full_dist, counts };

class DeliverySchedule {
public:
    static DeliverySchedule build(const Dataset& ds, const DeliveryParams& params,
                                  std::uint64_t seed,
                                  TargetSource source = TargetSource::full_dist) {
        if (params.hold_period < 1) throw ConfigError("delivery: hold_period must be >= 1");
        DeliverySchedule s;
        s.params_ = params;
        s.seed_ = seed;
        s.num_classes_ = ds.num_classes;

        s.targets_.reserve(ds.size());
        for (const auto& ex : ds.examples) {
            if (source == TargetSource::counts) {
                if (!ex.counts) throw ConfigError("delivery: counts target source without counts");
                s.targets_.push_back(counts_to_distribution(*ex.counts));
            } else {
                s.targets_.push_back(ex.full_dist);
            }
        }

        const DeliveryMethod m = params.method;
        if (m == DeliveryMethod::multipass || m == DeliveryMethod::deterministic_control) {
            // Control differs from multipass only in the shuffle seed offset.
            const std::uint64_t shuffle_seed =
                m == DeliveryMethod::deterministic_control ? seed + 1000 : seed;
            s.sequences_.reserve(ds.size());
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (!ds.examples[i].counts)
                    throw ConfigError("delivery: multipass needs vote counts");
                const VoteCounts& vc = *ds.examples[i].counts;
                std::vector<int> seq;
                seq.reserve(static_cast<std::size_t>(vc.total()));
                for (int k = 0; k < vc.num_classes(); ++k)
                    for (int r = 0; r < vc.counts[static_cast<std::size_t>(k)]; ++r)
                        seq.push_back(k);
                Stream shuffle(shuffle_seed, "multipass_shuffle", i);
                shuffle.shuffle(seq);
                s.sequences_.push_back(std::move(seq));
            }
        }
        if (m == DeliveryMethod::shuffled_sls) {
            Stream perm_stream(seed, "shuffle_control");
            const auto perm = perm_stream.permutation(s.targets_.size());
            std::vector<AnnotatorDistribution> permuted(s.targets_.size());
            for (std::size_t i = 0; i < perm.size(); ++i) permuted[i] = s.targets_[perm[i]];
            s.targets_ = std::move(permuted);
        }
        if (m == DeliveryMethod::sls || m == DeliveryMethod::shuffled_sls)
            s.sampled_labels_.assign(s.targets_.size(), 0);
        return s;
    }

    DeliveryMethod method() const { return params_.method; }
    const DeliveryParams& params() const { return params_; }
    std::size_t size() const { return targets_.size(); }
    const AnnotatorDistribution& target_dist(std::size_t i) const { return targets_[i]; }
    const std::vector<int>& multipass_sequence(std::size_t i) const { return sequences_[i]; }

    // Epoch-boundary phase: refreshes SLS labels when epoch % hold_period == 0.
    // Must be called for every epoch in order before target_at reads.
    void begin_epoch(int epoch) {
        current_epoch_ = epoch;
        const DeliveryMethod m = params_.method;
        if ((m == DeliveryMethod::sls || m == DeliveryMethod::shuffled_sls) &&
            epoch % params_.hold_period == 0) {
            Stream draw(seed_, "sls_epoch", static_cast<std::uint64_t>(epoch));
            for (std::size_t i = 0; i < targets_.size(); ++i)
                sampled_labels_[i] = draw.categorical(targets_[i].probs);
        }
    }

    TrainingTarget target_at(std::size_t i, int epoch) const {
        switch (params_.method) {
            case DeliveryMethod::soft:
            case DeliveryMethod::mixup:
                return TrainingTarget::soft(targets_[i].probs);
            case DeliveryMethod::multipass:
            case DeliveryMethod::deterministic_control: {
                const auto& seq = sequences_[i];
                return TrainingTarget::hard(seq[static_cast<std::size_t>(epoch) % seq.size()]);
            }
            case DeliveryMethod::sls:
            case DeliveryMethod::shuffled_sls:
                if (epoch != current_epoch_)
                    throw ConfigError("delivery: begin_epoch not called for this epoch");
                return TrainingTarget::hard(sampled_labels_[i]);
            case DeliveryMethod::majority:
                return TrainingTarget::hard(majority_label(targets_[i]));
            case DeliveryMethod::label_smoothing: {
                const double a = params_.smoothing_alpha;
                Eigen::VectorXd p =
                    Eigen::VectorXd::Constant(num_classes_, a / num_classes_);
                p[majority_label(targets_[i])] += 1.0 - a;
                return TrainingTarget::soft(std::move(p));
            }
        }
        throw ConfigError("delivery: unknown method");
    }

private:
    DeliveryParams params_;
    std::uint64_t seed_ = 0;
    int num_classes_ = 0;
    std::vector<AnnotatorDistribution> targets_;
    std::vector<std::vector<int>> sequences_;  // multipass family
    std::vector<int> sampled_labels_;          // sls family, per-epoch
    int current_epoch_ = -1;
};

inline DeliverySchedule build_multipass(const Dataset& ds, std::uint64_t seed) {
    return DeliverySchedule::build(ds, DeliveryParams{DeliveryMethod::multipass}, seed);
}

inline DeliverySchedule build_deterministic_control(const Dataset& ds, std::uint64_t seed) {
    return DeliverySchedule::build(ds, DeliveryParams{DeliveryMethod::deterministic_control}, seed);
}

// Deterministic mixup core: convex-combines inputs and dense targets with
// the given lambda against the given partner permutation.
inline void mixup_apply(Eigen::MatrixXd& inputs, Eigen::MatrixXd& targets, double lambda,
                        const std::vector<std::size_t>& partner) {
    const Eigen::MatrixXd x0 = inputs;
    const Eigen::MatrixXd t0 = targets;
    for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
        const auto pj = static_cast<Eigen::Index>(partner[static_cast<std::size_t>(j)]);
        inputs.col(j) = lambda * x0.col(j) + (1.0 - lambda) * x0.col(pj);
        targets.col(j) = lambda * t0.col(j) + (1.0 - lambda) * t0.col(pj);
    }
}

// Batch mixup: one lambda ~ Beta(alpha, alpha) per batch, random partners.
// Batches of size 1 pass through unchanged.
inline void mixup_batch(Eigen::MatrixXd& inputs, Eigen::MatrixXd& targets, double alpha,
                        Stream& rng) {
    if (alpha <= 0.0) throw ConfigError("mixup: alpha must be positive");
    if (inputs.cols() < 2) return;
    const double lambda = rng.beta(alpha, alpha);
    const auto partner = rng.permutation(static_cast<std::size_t>(inputs.cols()));
    mixup_apply(inputs, targets, lambda, partner);
}

}  // namespace votelab
