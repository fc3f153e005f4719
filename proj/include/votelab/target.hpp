#pragma once

#include <utility>
#include <variant>

#include <Eigen/Dense>

namespace votelab {

// Per-step supervision: exactly one of a hard class index or a soft
// distribution over classes.
class TrainingTarget {
public:
    static TrainingTarget hard(int label) { return TrainingTarget(label); }
    static TrainingTarget soft(Eigen::VectorXd probs) { return TrainingTarget(std::move(probs)); }

    bool is_hard() const { return std::holds_alternative<int>(value_); }
    int hard_label() const { return std::get<int>(value_); }
    const Eigen::VectorXd& soft_probs() const { return std::get<Eigen::VectorXd>(value_); }

    // Dense view: one-hot for hard targets.
    Eigen::VectorXd dense(int num_classes) const {
        if (is_hard()) {
            Eigen::VectorXd p = Eigen::VectorXd::Zero(num_classes);
            p[hard_label()] = 1.0;
            return p;
        }
        return soft_probs();
    }

private:
    explicit TrainingTarget(int label) : value_(label) {}
    explicit TrainingTarget(Eigen::VectorXd probs) : value_(std::move(probs)) {}
    std::variant<int, Eigen::VectorXd> value_;
};

}  // namespace votelab
