// SGD training loop with per-epoch target delivery.
//
// Reproducibility contract: every stochastic choice draws from a named
// stream keyed by the run seed — "split", "init", "batch_order" (per epoch),
// "sls_epoch" (inside the schedule), "mixup" (per epoch) — so a rerun with
// the same config and seed retraces the identical parameter trajectory. The
// batch-order stream is independent of the label-sampling stream, so
// delivery methods sharing a seed see the same batch sequence.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "votelab/dataset.hpp"
#include "votelab/delivery.hpp"
#include "votelab/error.hpp"
#include "votelab/mlp.hpp"
#include "votelab/rng.hpp"

namespace votelab {

struct TrainConfig {
    double lr0 = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int epochs = 60;
    int batch_size = 64;
    double eval_frac = 0.2;
    std::uint64_t seed = 0;
    std::vector<int> hidden = {64, 64};
    Activation activation = Activation::tanh;
    DeliveryParams delivery;
    TargetSource target_source = TargetSource::full_dist;

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs and batch_size must be >= 1");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
        if (!(eval_frac > 0.0 && eval_frac < 1.0)) throw ConfigError("train: eval_frac must be in (0,1)");
    }
};

inline double cosine_lr(int epoch, const TrainConfig& cfg) {
    return cfg.lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                           static_cast<double>(cfg.epochs)));
}

// Classical momentum with coupled weight decay:
//   v <- momentum * v + (g + wd * theta);  theta <- theta - lr * v
inline void sgd_step(Eigen::VectorXd& theta, Eigen::VectorXd& velocity,
                     const Eigen::VectorXd& grad, double lr, double momentum,
                     double weight_decay) {
    velocity = momentum * velocity + (grad + weight_decay * theta);
    theta -= lr * velocity;
    if (!theta.allFinite()) throw NumericFault("sgd_step: non-finite update");
}

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;     // mean of batch losses
    double eval_soft_nll = 0.0;  // vs full eval distributions, nats
    double eval_hard_acc = 0.0;  // vs majority of full eval distributions
};

struct RunRecord {
    std::vector<EpochStats> history;
    Mlp best_model{std::vector<int>{1, 2}};
    Mlp final_model{std::vector<int>{1, 2}};
    int best_epoch = 0;
    double best_soft_nll = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> train_idx, eval_idx;
    bool stratified_split_used = true;
};

namespace detail {

inline Eigen::MatrixXd input_matrix(const Dataset& ds) {
    Eigen::MatrixXd x(ds.dim, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = ds.examples[i].x;
    return x;
}

}  // namespace detail

// Full training procedure: split, init, per-epoch delivery + SGD, per-epoch
// evaluation on the held-out split, best-checkpoint tracking by lowest eval
// soft NLL (earliest epoch on ties).
inline RunRecord train_run(const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    Stream split_rng(cfg.seed, "split");
    SplitResult split = stratified_split(ds, cfg.eval_frac, split_rng);

    std::vector<int> widths;
    widths.push_back(ds.dim);
    for (int h : cfg.hidden) widths.push_back(h);
    widths.push_back(ds.num_classes);
    Mlp model(widths, cfg.activation);
    Stream init_rng(cfg.seed, "init");
    model.init_params(init_rng);

    DeliverySchedule schedule =
        DeliverySchedule::build(split.train, cfg.delivery, cfg.seed, cfg.target_source);

    const Eigen::MatrixXd train_x = detail::input_matrix(split.train);
    const Eigen::MatrixXd eval_x = detail::input_matrix(split.eval);
    // Validation targets follow the active target source: a sparse run can
    // only validate against the counts it observes, never the full
    // distributions it pretends not to have.
    Eigen::MatrixXd eval_t(ds.num_classes, static_cast<Eigen::Index>(split.eval.size()));
    std::vector<int> eval_majority(split.eval.size());
    for (std::size_t i = 0; i < split.eval.size(); ++i) {
        const AnnotatorDistribution target =
            cfg.target_source == TargetSource::counts
                ? counts_to_distribution(*split.eval.examples[i].counts)
                : split.eval.examples[i].full_dist;
        eval_t.col(static_cast<Eigen::Index>(i)) = target.probs;
        eval_majority[i] = majority_label(target);
    }

    RunRecord rec;
    rec.seed = cfg.seed;
    rec.train_idx = split.train_idx;
    rec.eval_idx = split.eval_idx;
    rec.stratified_split_used = split.stratified;
    rec.best_soft_nll = std::numeric_limits<double>::infinity();

    Eigen::VectorXd velocity = Eigen::VectorXd::Zero(model.theta.size());
    const std::size_t n_train = split.train.size();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg);
        schedule.begin_epoch(epoch);
        Stream order_rng(cfg.seed, "batch_order", static_cast<std::uint64_t>(epoch));
        const auto order = order_rng.permutation(n_train);
        Stream mixup_rng(cfg.seed, "mixup", static_cast<std::uint64_t>(epoch));

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
            const auto b = static_cast<Eigen::Index>(stop - start);
            Batch batch;
            batch.inputs.resize(ds.dim, b);
            batch.targets.reserve(static_cast<std::size_t>(b));
            for (std::size_t j = start; j < stop; ++j) {
                batch.inputs.col(static_cast<Eigen::Index>(j - start)) =
                    train_x.col(static_cast<Eigen::Index>(order[j]));
                batch.targets.push_back(schedule.target_at(order[j], epoch));
            }
            if (cfg.delivery.method == DeliveryMethod::mixup) {
                Eigen::MatrixXd dense(ds.num_classes, b);
                for (Eigen::Index j = 0; j < b; ++j)
                    dense.col(j) = batch.targets[static_cast<std::size_t>(j)].dense(ds.num_classes);
                mixup_batch(batch.inputs, dense, cfg.delivery.mixup_alpha, mixup_rng);
                for (Eigen::Index j = 0; j < b; ++j)
                    batch.targets[static_cast<std::size_t>(j)] = TrainingTarget::soft(dense.col(j));
            }
            auto [loss, grad] = loss_and_grad(model, batch);
            sgd_step(model.theta, velocity, grad, lr, cfg.momentum, cfg.weight_decay);
            loss_sum += loss;
            ++batches;
        }

        // Deterministic evaluation on the held-out split, identity preprocessing.
        const auto eval_trace = detail::forward_trace(model, eval_x);
        const double soft_nll = detail::mean_cross_entropy(eval_trace.a.back(), eval_t);
        int correct = 0;
        for (Eigen::Index j = 0; j < eval_trace.q.cols(); ++j) {
            Eigen::Index arg = 0;
            eval_trace.q.col(j).maxCoeff(&arg);
            if (static_cast<int>(arg) == eval_majority[static_cast<std::size_t>(j)]) ++correct;
        }
        const double hard_acc = static_cast<double>(correct) / static_cast<double>(eval_trace.q.cols());

        rec.history.push_back({epoch, lr, loss_sum / batches, soft_nll, hard_acc});
        if (soft_nll < rec.best_soft_nll) {
            rec.best_soft_nll = soft_nll;
            rec.best_epoch = epoch;
            rec.best_model = model;
        }
    }
    rec.final_model = model;
    return rec;
}

// First epoch whose eval soft NLL is within (1 - frac) * |best| of the run's
// best value; empty when never reached (possible only for frac > 1 rules,
// kept for the sentinel contract).
inline std::optional<int> epochs_to_fraction(const std::vector<EpochStats>& history, double frac) {
    if (history.empty() || !(frac > 0.0 && frac <= 1.0))
        throw InvalidInput("epochs_to_fraction: need non-empty history and frac in (0,1]");
    double best = history.front().eval_soft_nll;
    for (const auto& row : history) best = std::min(best, row.eval_soft_nll);
    const double threshold = best + (1.0 - frac) * std::abs(best);
    for (const auto& row : history)
        if (row.eval_soft_nll <= threshold) return row.epoch;
    return std::nullopt;
}

inline void save_run_csv(const RunRecord& rec, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("save_run_csv: cannot open " + path);
    os << "epoch,lr,train_loss,eval_soft_nll,eval_hard_acc\n";
    for (const auto& row : rec.history) {
        os << row.epoch << "," << detail::fmt_double(row.lr) << ","
           << detail::fmt_double(row.train_loss) << "," << detail::fmt_double(row.eval_soft_nll)
           << "," << detail::fmt_double(row.eval_hard_acc) << "\n";
    }
}

}  // namespace votelab
