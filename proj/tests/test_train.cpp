#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "votelab/train.hpp"

using namespace votelab;

TEST_CASE("cosine schedule endpoints and monotonicity") {
    TrainConfig cfg;
    cfg.lr0 = 0.08;
    cfg.epochs = 40;
    REQUIRE(cosine_lr(0, cfg) == Catch::Approx(0.08).margin(1e-15));
    REQUIRE(cosine_lr(20, cfg) == Catch::Approx(0.04).margin(1e-15));
    REQUIRE(cosine_lr(39, cfg) ==
            Catch::Approx(0.08 * 0.5 * (1.0 + std::cos(M_PI * 39.0 / 40.0))).margin(1e-15));
    for (int t = 1; t < 40; ++t) REQUIRE(cosine_lr(t, cfg) < cosine_lr(t - 1, cfg));
}

TEST_CASE("sgd step algebra") {
    SECTION("no momentum, no decay: plain gradient descent") {
        Eigen::VectorXd theta(2);
        theta << 1.0, -2.0;
        Eigen::VectorXd v = Eigen::VectorXd::Zero(2);
        Eigen::VectorXd g(2);
        g << 0.5, 0.25;
        sgd_step(theta, v, g, 0.1, 0.0, 0.0);
        REQUIRE(theta[0] == Catch::Approx(1.0 - 0.1 * 0.5).margin(1e-15));
        REQUIRE(theta[1] == Catch::Approx(-2.0 - 0.1 * 0.25).margin(1e-15));
    }

    SECTION("momentum on a quadratic bowl converges per the linear recurrence") {
        // loss 0.5 * theta^2, gradient = theta; state recurrence:
        //   v' = m v + theta;  theta' = theta - lr v'
        const double lr = 0.1, momentum = 0.9;
        double ot = 1.0, ov = 0.0;  // oracle state
        int steps_to_small = -1;
        for (int t = 0; t < 4000; ++t) {
            ov = momentum * ov + ot;
            ot = ot - lr * ov;
            if (std::abs(ot) < 1e-6) {
                steps_to_small = t + 1;
                break;
            }
        }
        REQUIRE(steps_to_small > 0);

        Eigen::VectorXd theta(1), v(1);
        theta << 1.0;
        v << 0.0;
        for (int t = 0; t < steps_to_small; ++t) sgd_step(theta, v, theta, lr, momentum, 0.0);
        REQUIRE(std::abs(theta[0]) < 1e-6);
    }

    SECTION("pure weight decay shrinks geometrically") {
        Eigen::VectorXd theta(1), v(1);
        theta << 2.0;
        v << 0.0;
        const double lr = 0.05, wd = 0.1;
        double expected = 2.0;
        for (int t = 0; t < 20; ++t) {
            sgd_step(theta, v, Eigen::VectorXd::Zero(1), lr, 0.0, wd);
            expected *= 1.0 - lr * wd;
            REQUIRE(theta[0] == Catch::Approx(expected).margin(1e-14));
        }
    }

    SECTION("non-finite updates abort") {
        Eigen::VectorXd theta(1), v(1);
        theta << 1.0;
        v << 0.0;
        Eigen::VectorXd g(1);
        g << std::numeric_limits<double>::infinity();
        REQUIRE_THROWS_AS(sgd_step(theta, v, g, 0.1, 0.9, 0.0), NumericFault);
    }
}

TEST_CASE("train_run basics") {
    const Dataset ds = make_synthetic_task(120, 3, 4, 0.6, 5, 3);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 32;
    cfg.hidden = {8};
    cfg.seed = 5;

    SECTION("zero epochs rejected, one epoch gives one history row") {
        TrainConfig bad = cfg;
        bad.epochs = 0;
        REQUIRE_THROWS_AS(train_run(ds, bad), ConfigError);
        const RunRecord rec = train_run(ds, cfg);
        REQUIRE(rec.history.size() == 1);
    }

    SECTION("identical configs reproduce identical runs") {
        TrainConfig two = cfg;
        two.epochs = 6;
        const RunRecord a = train_run(ds, two);
        const RunRecord b = train_run(ds, two);
        REQUIRE(a.final_model.theta == b.final_model.theta);
        REQUIRE(a.best_model.theta == b.best_model.theta);
        REQUIRE(a.best_epoch == b.best_epoch);
        for (std::size_t i = 0; i < a.history.size(); ++i) {
            REQUIRE(a.history[i].train_loss == b.history[i].train_loss);
            REQUIRE(a.history[i].eval_soft_nll == b.history[i].eval_soft_nll);
        }
    }

    SECTION("best checkpoint is the minimum of the history column") {
        TrainConfig many = cfg;
        many.epochs = 12;
        const RunRecord rec = train_run(ds, many);
        double best = rec.history.front().eval_soft_nll;
        for (const auto& row : rec.history) best = std::min(best, row.eval_soft_nll);
        REQUIRE(rec.best_soft_nll == best);
        REQUIRE(rec.history[static_cast<std::size_t>(rec.best_epoch)].eval_soft_nll == best);
    }
}

TEST_CASE("one-hot targets make soft and sls trajectories bit-identical") {
    const Dataset ds = make_synthetic_task(200, 4, 6, 0.05, 5, 9);  // near one-hot targets?
    // force exactly one-hot targets so sampling is degenerate
    Dataset onehot = ds;
    for (auto& ex : onehot.examples) {
        const int label = majority_label(ex.full_dist);
        ex.full_dist = AnnotatorDistribution::one_hot(ds.num_classes, label);
        std::vector<int> counts(static_cast<std::size_t>(ds.num_classes), 0);
        counts[static_cast<std::size_t>(label)] = 5;
        ex.counts = VoteCounts{counts};
    }

    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 32;
    cfg.hidden = {16};
    cfg.seed = 3;

    cfg.delivery.method = DeliveryMethod::soft;
    const RunRecord soft = train_run(onehot, cfg);
    cfg.delivery.method = DeliveryMethod::sls;
    const RunRecord sls = train_run(onehot, cfg);
    REQUIRE(soft.final_model.theta == sls.final_model.theta);

    cfg.delivery.method = DeliveryMethod::multipass;
    const RunRecord mp = train_run(onehot, cfg);
    REQUIRE(mp.final_model.theta == soft.final_model.theta);
}

TEST_CASE("expected-objective equivalence at a frozen model") {
    const Dataset ds = make_synthetic_task(100, 4, 6, 1.0, 5, 13);
    Mlp model({6, 16, 4});
    Stream init(21, "frozen");
    model.init_params(init);

    Stream draw(22, "redraw");
    const int n_draws = 10000;
    for (const auto& ex : ds.examples) {
        const ForwardResult fr = forward(model, ex.x);
        const Eigen::VectorXd logq = fr.q.array().log();
        double soft_loss = 0.0;
        for (int k = 0; k < 4; ++k)
            if (ex.full_dist.probs[k] > 0.0) soft_loss -= ex.full_dist.probs[k] * logq[k];

        double sum = 0.0, sumsq = 0.0;
        for (int d = 0; d < n_draws; ++d) {
            const double loss = -logq[draw.categorical(ex.full_dist.probs)];
            sum += loss;
            sumsq += loss * loss;
        }
        const double mean = sum / n_draws;
        const double var = (sumsq - sum * sum / n_draws) / (n_draws - 1);
        const double se = std::sqrt(std::max(var, 1e-30) / n_draws);
        REQUIRE(std::abs(mean - soft_loss) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("epochs_to_fraction threshold rule") {
    auto history_of = [](std::initializer_list<double> nll) {
        std::vector<EpochStats> h;
        int epoch = 0;
        for (double v : nll) h.push_back({epoch++, 0.0, 0.0, v, 0.0});
        return h;
    };

    SECTION("monotone decreasing with frac 1 returns the argmin epoch") {
        const auto h = history_of({1.0, 0.8, 0.6, 0.5});
        REQUIRE(epochs_to_fraction(h, 1.0).value() == 3);
    }

    SECTION("constant history reaches the threshold immediately") {
        const auto h = history_of({0.7, 0.7, 0.7});
        REQUIRE(epochs_to_fraction(h, 0.95).value() == 0);
    }

    SECTION("documented example") {
        const auto h = history_of({1.0, 0.6, 0.5, 0.5});
        // threshold = 0.5 + 0.05 * 0.5 = 0.525; first epoch at or below is 2
        REQUIRE(epochs_to_fraction(h, 0.95).value() == 2);
    }
}

TEST_CASE("run CSV has the documented schema") {
    const Dataset ds = make_synthetic_task(80, 3, 4, 0.7, 5, 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.hidden = {8};
    const RunRecord rec = train_run(ds, cfg);
    const std::string path = "/tmp/votelab_run_test.csv";
    save_run_csv(rec, path);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    REQUIRE(header == "epoch,lr,train_loss,eval_soft_nll,eval_hard_acc");
    int rows = 0;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 2);
    std::remove(path.c_str());
}
