#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>

#include "votelab/delivery.hpp"
#include "votelab/mlp.hpp"

using namespace votelab;

namespace {

Dataset dataset_from_counts(const std::vector<std::vector<int>>& counts, int num_classes) {
    Dataset ds;
    ds.num_classes = num_classes;
    ds.dim = 1;
    for (const auto& c : counts) {
        Example ex;
        ex.x = Eigen::VectorXd::Zero(1);
        ex.counts = VoteCounts{c};
        ex.full_dist = counts_to_distribution(*ex.counts);
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

std::vector<int> sorted_copy(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

TEST_CASE("multipass sequences are shuffled vote multisets") {
    const Dataset ds = dataset_from_counts({{2, 1, 0}, {0, 0, 3}}, 3);
    const DeliverySchedule s = build_multipass(ds, 7);
    REQUIRE(sorted_copy(s.multipass_sequence(0)) == std::vector<int>{0, 0, 1});
    REQUIRE(s.multipass_sequence(1) == std::vector<int>{2, 2, 2});

    const DeliverySchedule again = build_multipass(ds, 7);
    REQUIRE(again.multipass_sequence(0) == s.multipass_sequence(0));
}

TEST_CASE("multipass requires counts") {
    Dataset ds;
    ds.num_classes = 2;
    ds.dim = 1;
    Example ex;
    ex.x = Eigen::VectorXd::Zero(1);
    ex.full_dist = AnnotatorDistribution::uniform(2);
    ds.examples.push_back(std::move(ex));
    REQUIRE_THROWS_AS(build_multipass(ds, 1), ConfigError);
}

TEST_CASE("deterministic control is multipass with the shuffle seed offset by 1000") {
    const Dataset ds = dataset_from_counts({{3, 2, 1}, {1, 4, 0}}, 3);
    const DeliverySchedule control = build_deterministic_control(ds, 11);
    const DeliverySchedule offset = build_multipass(ds, 1011);
    for (std::size_t i = 0; i < ds.size(); ++i)
        REQUIRE(control.multipass_sequence(i) == offset.multipass_sequence(i));

    SECTION("same multiset under either seed") {
        const DeliverySchedule mp = build_multipass(ds, 11);
        for (std::size_t i = 0; i < ds.size(); ++i)
            REQUIRE(sorted_copy(mp.multipass_sequence(i)) ==
                    sorted_copy(control.multipass_sequence(i)));
    }

    SECTION("single-vote examples leave only one order") {
        const Dataset ones = dataset_from_counts({{1, 0}, {0, 1}}, 2);
        const DeliverySchedule a = build_multipass(ones, 5);
        const DeliverySchedule b = build_deterministic_control(ones, 5);
        for (int epoch = 0; epoch < 6; ++epoch)
            for (std::size_t i = 0; i < ones.size(); ++i)
                REQUIRE(a.target_at(i, epoch).hard_label() == b.target_at(i, epoch).hard_label());
    }
}

TEST_CASE("multipass cycles via epoch mod sequence length") {
    const Dataset ds = dataset_from_counts({{2, 1}}, 2);
    DeliverySchedule s = build_multipass(ds, 3);
    const auto& seq = s.multipass_sequence(0);
    for (int epoch = 0; epoch < 12; ++epoch) {
        s.begin_epoch(epoch);
        REQUIRE(s.target_at(0, epoch).hard_label() ==
                seq[static_cast<std::size_t>(epoch) % seq.size()]);
    }
}

TEST_CASE("multipass window property: every m consecutive epochs deliver each vote once") {
    Stream rng(21, "window_prop");
    for (int trial = 0; trial < 60; ++trial) {
        const int c = 2 + static_cast<int>(rng.uniform_below(4));
        std::vector<int> counts(static_cast<std::size_t>(c), 0);
        int m = 0;
        for (auto& v : counts) {
            v = static_cast<int>(rng.uniform_below(4));
            m += v;
        }
        if (m == 0) {
            counts[0] = 1;
            m = 1;
        }
        const Dataset ds = dataset_from_counts({counts}, c);
        DeliverySchedule s = build_multipass(ds, 100 + trial);
        for (int start = 0; start < m; ++start) {
            std::vector<int> window(static_cast<std::size_t>(c), 0);
            for (int epoch = start; epoch < start + m; ++epoch)
                window[static_cast<std::size_t>(s.multipass_sequence(0)[static_cast<std::size_t>(epoch) % static_cast<std::size_t>(m)])] += 1;
            REQUIRE(window == counts);
        }
    }
}

TEST_CASE("sls with a one-hot target delivers the same label every epoch") {
    Dataset ds;
    ds.num_classes = 4;
    ds.dim = 1;
    Example ex;
    ex.x = Eigen::VectorXd::Zero(1);
    ex.full_dist = AnnotatorDistribution::one_hot(4, 2);
    ds.examples.push_back(std::move(ex));

    DeliverySchedule s = DeliverySchedule::build(ds, DeliveryParams{DeliveryMethod::sls}, 9);
    for (int epoch = 0; epoch < 50; ++epoch) {
        s.begin_epoch(epoch);
        REQUIRE(s.target_at(0, epoch).hard_label() == 2);
    }
}

TEST_CASE("sls label frequencies converge to the target distribution") {
    Dataset ds;
    ds.num_classes = 3;
    ds.dim = 1;
    Example ex;
    ex.x = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd p(3);
    p << 0.5, 0.3, 0.2;
    ex.full_dist = AnnotatorDistribution(p);
    ds.examples.push_back(std::move(ex));

    DeliverySchedule s = DeliverySchedule::build(ds, DeliveryParams{DeliveryMethod::sls}, 5);
    const int epochs = 10000;
    std::vector<int> freq(3, 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        s.begin_epoch(epoch);
        freq[static_cast<std::size_t>(s.target_at(0, epoch).hard_label())] += 1;
    }
    for (int k = 0; k < 3; ++k) {
        const double se = std::sqrt(p[k] * (1.0 - p[k]) / epochs);
        REQUIRE(std::abs(freq[static_cast<std::size_t>(k)] / static_cast<double>(epochs) - p[k]) <=
                3.0 * se);
    }
}

TEST_CASE("sls labels are constant within hold-period windows") {
    Dataset ds;
    ds.num_classes = 2;
    ds.dim = 1;
    for (int i = 0; i < 8; ++i) {
        Example ex;
        ex.x = Eigen::VectorXd::Zero(1);
        ex.full_dist = AnnotatorDistribution::uniform(2);
        ds.examples.push_back(std::move(ex));
    }
    DeliveryParams params{DeliveryMethod::sls};
    params.hold_period = 5;
    DeliverySchedule s = DeliverySchedule::build(ds, params, 13);
    std::vector<int> window_start_labels;
    for (int epoch = 0; epoch < 20; ++epoch) {
        s.begin_epoch(epoch);
        if (epoch % 5 == 0) window_start_labels.push_back(s.target_at(3, epoch).hard_label());
        REQUIRE(s.target_at(3, epoch).hard_label() == window_start_labels.back());
    }
}

TEST_CASE("majority and label smoothing targets") {
    Dataset ds;
    ds.num_classes = 4;
    ds.dim = 1;
    Example ex;
    ex.x = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd p(4);
    p << 0.1, 0.6, 0.2, 0.1;
    ex.full_dist = AnnotatorDistribution(p);
    ds.examples.push_back(std::move(ex));

    DeliverySchedule maj = DeliverySchedule::build(ds, DeliveryParams{DeliveryMethod::majority}, 1);
    maj.begin_epoch(0);
    REQUIRE(maj.target_at(0, 0).hard_label() == 1);

    DeliveryParams sp{DeliveryMethod::label_smoothing};
    sp.smoothing_alpha = 0.1;
    DeliverySchedule smooth = DeliverySchedule::build(ds, sp, 1);
    smooth.begin_epoch(0);
    const TrainingTarget t = smooth.target_at(0, 0);
    REQUIRE_FALSE(t.is_hard());
    REQUIRE(t.soft_probs()[1] == Catch::Approx(0.9 + 0.1 / 4.0).margin(1e-12));
    REQUIRE(t.soft_probs()[0] == Catch::Approx(0.1 / 4.0).margin(1e-12));
    REQUIRE(t.soft_probs().sum() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("shuffled sls permutes targets but keeps the multiset") {
    const Dataset ds = make_synthetic_task(100, 4, 6, 1.0, 5, 31);
    const DeliverySchedule s =
        DeliverySchedule::build(ds, DeliveryParams{DeliveryMethod::shuffled_sls}, 3);
    std::vector<std::vector<double>> original, permuted;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& p = ds.examples[i].full_dist.probs;
        const auto& q = s.target_dist(i).probs;
        original.emplace_back(p.data(), p.data() + p.size());
        permuted.emplace_back(q.data(), q.data() + q.size());
    }
    std::sort(original.begin(), original.end());
    std::sort(permuted.begin(), permuted.end());
    REQUIRE(original == permuted);
}

TEST_CASE("for one-hot targets every delivery method gives the same supervision") {
    Dataset ds;
    ds.num_classes = 3;
    ds.dim = 2;
    Stream gen(8, "onehot_gen");
    for (int i = 0; i < 16; ++i) {
        Example ex;
        ex.x = Eigen::VectorXd::Zero(2);
        ex.x << gen.gaussian(), gen.gaussian();
        const int label = static_cast<int>(gen.uniform_below(3));
        ex.full_dist = AnnotatorDistribution::one_hot(3, label);
        std::vector<int> counts(3, 0);
        counts[static_cast<std::size_t>(label)] = 4;
        ex.counts = VoteCounts{counts};
        ds.examples.push_back(std::move(ex));
    }

    Mlp model({2, 5, 3});
    Stream init(3, "init");
    model.init_params(init);

    std::vector<DeliverySchedule> schedules;
    for (DeliveryMethod m : {DeliveryMethod::soft, DeliveryMethod::sls, DeliveryMethod::multipass,
                             DeliveryMethod::majority})
        schedules.push_back(DeliverySchedule::build(ds, DeliveryParams{m}, 77));

    for (int epoch = 0; epoch < 4; ++epoch) {
        std::vector<double> losses;
        for (auto& s : schedules) {
            s.begin_epoch(epoch);
            Batch batch;
            batch.inputs.resize(2, static_cast<Eigen::Index>(ds.size()));
            for (std::size_t i = 0; i < ds.size(); ++i) {
                batch.inputs.col(static_cast<Eigen::Index>(i)) = ds.examples[i].x;
                batch.targets.push_back(s.target_at(i, epoch));
            }
            losses.push_back(loss_and_grad(model, batch).first);
        }
        for (std::size_t i = 1; i < losses.size(); ++i)
            REQUIRE(losses[i] == Catch::Approx(losses[0]).margin(1e-12));
    }
}

TEST_CASE("mixup convex combinations") {
    SECTION("lambda 1 leaves the batch unchanged") {
        Eigen::MatrixXd x(2, 3), t(2, 3);
        x << 1, 2, 3, 4, 5, 6;
        t << 1, 0, 0.5, 0, 1, 0.5;
        const Eigen::MatrixXd x0 = x, t0 = t;
        mixup_apply(x, t, 1.0, {2, 0, 1});
        REQUIRE(x == x0);
        REQUIRE(t == t0);
    }

    SECTION("lambda 0.5 on one-hot targets of classes 0 and 1") {
        Eigen::MatrixXd x(1, 2), t(3, 2);
        x << 0, 1;
        t << 1, 0, 0, 1, 0, 0;
        mixup_apply(x, t, 0.5, {1, 0});
        REQUIRE(t(0, 0) == Catch::Approx(0.5).margin(1e-12));
        REQUIRE(t(1, 0) == Catch::Approx(0.5).margin(1e-12));
        REQUIRE(t(2, 0) == 0.0);
    }

    SECTION("mixed targets stay on the simplex") {
        Stream rng(19, "mixup");
        for (int trial = 0; trial < 10000; ++trial) {
            Eigen::MatrixXd x(2, 4);
            Eigen::MatrixXd t(3, 4);
            for (int j = 0; j < 4; ++j) {
                x.col(j) << rng.gaussian(), rng.gaussian();
                Eigen::VectorXd raw(3);
                for (int k = 0; k < 3; ++k) raw[k] = rng.gamma(0.9);
                t.col(j) = raw / raw.sum();
            }
            mixup_batch(x, t, 0.2, rng);
            for (int j = 0; j < 4; ++j)
                REQUIRE(t.col(j).sum() == Catch::Approx(1.0).margin(1e-12));
        }
    }

    SECTION("single-element batches pass through") {
        Eigen::MatrixXd x(2, 1), t(2, 1);
        x << 1, 2;
        t << 0.3, 0.7;
        Stream rng(1, "mixup1");
        const Eigen::MatrixXd x0 = x, t0 = t;
        mixup_batch(x, t, 0.2, rng);
        REQUIRE(x == x0);
        REQUIRE(t == t0);
    }
}
