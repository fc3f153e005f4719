#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "votelab/dataset.hpp"
#include "votelab/geometry.hpp"

using namespace votelab;

namespace {

// diagonal quadratic oracle: H = Diag(d), loss = 0.5 theta^T H theta
struct DiagonalOperator {
    Eigen::VectorXd diag;
    Eigen::VectorXd operator()(const Eigen::VectorXd& v) const { return diag.cwiseProduct(v); }
};

Batch soft_batch_of(const Dataset& ds) {
    Batch b;
    b.inputs.resize(ds.dim, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        b.inputs.col(static_cast<Eigen::Index>(i)) = ds.examples[i].x;
        b.targets.push_back(TrainingTarget::soft(ds.examples[i].full_dist.probs));
    }
    return b;
}

Eigen::MatrixXd dense_fd_hessian(const Mlp& m, const Batch& batch, double step) {
    Mlp probe = m;
    const auto n = m.theta.size();
    Eigen::MatrixXd h(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double saved = probe.theta[j];
        probe.theta[j] = saved + step;
        const Eigen::VectorXd up = loss_and_grad(probe, batch).second;
        probe.theta[j] = saved - step;
        const Eigen::VectorXd down = loss_and_grad(probe, batch).second;
        probe.theta[j] = saved;
        h.col(j) = (up - down) / (2.0 * step);
    }
    return h;
}

}  // namespace

TEST_CASE("power iteration on the diagonal quadratic oracle") {
    DiagonalOperator op;
    op.diag = Eigen::VectorXd(3);
    op.diag << 3.0, 1.0, 0.5;

    Stream rng(1, "power");
    const PowerIterResult res = top_eigenvalue(op, 3, 500, 1e-9, rng);
    REQUIRE(res.lambda == Catch::Approx(3.0).margin(1e-6));
    REQUIRE(res.residual < 1e-9);

    SECTION("starting at the top eigenvector converges in one iteration") {
        const PowerIterResult one =
            top_eigenvalue_from(op, Eigen::VectorXd::Unit(3, 0), 100, 1e-9);
        REQUIRE(one.iterations == 1);
        REQUIRE(one.lambda == Catch::Approx(3.0).margin(1e-12));
    }
}

TEST_CASE("power iteration matches a dense eigensolve on a tiny model") {
    Mlp m({3, 4, 3});  // 31 parameters
    Stream rng(2, "tiny");
    m.init_params(rng);
    Dataset ds = make_synthetic_task(40, 3, 3, 0.8, 5, 6);
    const Batch batch = soft_batch_of(ds);

    const Eigen::MatrixXd h = dense_fd_hessian(m, batch, 1e-5);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
    const double dense_top = std::max(std::abs(es.eigenvalues().minCoeff()),
                                      std::abs(es.eigenvalues().maxCoeff()));

    Stream power_rng(3, "power");
    const PowerIterResult res = top_eigenvalue(m, batch, 2000, 1e-10, power_rng);
    REQUIRE(std::abs(std::abs(res.lambda) - dense_top) / dense_top < 0.01);
    REQUIRE(res.residual < 1e-3 * std::abs(res.lambda));
}

TEST_CASE("Hutchinson trace estimates") {
    DiagonalOperator op;
    op.diag = Eigen::VectorXd(3);
    op.diag << 3.0, 1.0, 0.5;

    SECTION("diagonal oracle within 3 SE at 1000 probes") {
        Stream rng(4, "trace");
        const TraceEstimate est = hessian_trace(op, 3, 1000, rng);
        REQUIRE(std::abs(est.trace - 4.5) <= 3.0 * est.standard_error + 1e-12);
    }

    SECTION("zero operator gives exactly zero") {
        DiagonalOperator zero;
        zero.diag = Eigen::VectorXd::Zero(5);
        Stream rng(5, "trace0");
        const TraceEstimate est = hessian_trace(zero, 5, 50, rng);
        REQUIRE(est.trace == 0.0);
        REQUIRE(est.standard_error == 0.0);
    }

    SECTION("tiny model within 5% of the dense trace at 1000 probes") {
        Mlp m({3, 4, 3});
        Stream rng(6, "trace_tiny");
        m.init_params(rng);
        Dataset ds = make_synthetic_task(40, 3, 3, 0.8, 5, 7);
        const Batch batch = soft_batch_of(ds);
        const double dense = dense_fd_hessian(m, batch, 1e-5).trace();
        Stream probe_rng(7, "hutch");
        const TraceEstimate est = hessian_trace(m, batch, 1000, probe_rng);
        REQUIRE(std::abs(est.trace - dense) / std::abs(dense) < 0.05);
    }

    SECTION("estimator is unbiased across independent repeats") {
        double sum = 0.0, sumsq = 0.0;
        const int reps = 50;
        for (int r = 0; r < reps; ++r) {
            Stream rng(100 + static_cast<std::uint64_t>(r), "unbiased");
            const double est = hessian_trace(op, 3, 20, rng).trace;
            sum += est;
            sumsq += est * est;
        }
        const double mean = sum / reps;
        const double se = std::sqrt(((sumsq - sum * sum / reps) / (reps - 1)) / reps);
        REQUIRE(std::abs(mean - 4.5) <= 3.0 * se);
    }
}

TEST_CASE("loss barrier on interpolation paths") {
    SECTION("self-interpolation is exactly zero") {
        Mlp m({2, 3, 2});
        Stream rng(8, "barrier");
        m.init_params(rng);
        Dataset ds = make_synthetic_task(20, 2, 2, 0.7, 3, 8);
        const Batch batch = soft_batch_of(ds);
        const BarrierResult res = loss_barrier(m, m.theta, m.theta, batch);
        REQUIRE(res.barrier == 0.0);
    }

    SECTION("convex quadratic losses have no barrier for any pair") {
        auto quad = [](const Eigen::VectorXd& theta) { return theta.squaredNorm(); };
        Stream rng(9, "quad");
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd a(4), b(4);
            for (int i = 0; i < 4; ++i) {
                a[i] = rng.gaussian();
                b[i] = rng.gaussian();
            }
            const BarrierResult res = loss_barrier_fn(quad, a, b);
            REQUIRE(res.barrier <= 1e-12);
        }
    }

    SECTION("barrier is symmetric in its endpoints") {
        Mlp m({2, 4, 2});
        Stream rng(10, "sym");
        m.init_params(rng);
        Eigen::VectorXd other = m.theta;
        for (Eigen::Index i = 0; i < other.size(); ++i) other[i] += rng.gaussian();
        Dataset ds = make_synthetic_task(30, 2, 2, 0.7, 3, 9);
        const Batch batch = soft_batch_of(ds);
        const BarrierResult ab = loss_barrier(m, m.theta, other, batch);
        const BarrierResult ba = loss_barrier(m, other, m.theta, batch);
        REQUIRE(ab.barrier == Catch::Approx(ba.barrier).margin(1e-12));
    }

    SECTION("shape mismatch is rejected") {
        Mlp m({2, 3, 2});
        Dataset ds = make_synthetic_task(10, 2, 2, 0.7, 3, 10);
        REQUIRE_THROWS_AS(
            loss_barrier(m, m.theta, Eigen::VectorXd::Zero(m.theta.size() + 1), soft_batch_of(ds)),
            InvalidInput);
    }
}

TEST_CASE("linear CKA") {
    Stream rng(11, "cka");
    const int n = 200, h = 8;
    Eigen::MatrixXd f(n, h);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < h; ++j) f(i, j) = rng.gaussian();

    SECTION("identical features give 1") {
        REQUIRE(linear_cka(f, f).value == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("orthogonal transforms leave CKA at 1") {
        Eigen::MatrixXd raw(h, h);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < h; ++j) raw(i, j) = rng.gaussian();
        const Eigen::MatrixXd rot = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ();
        REQUIRE(linear_cka(f, f * rot).value == Catch::Approx(1.0).margin(1e-9));
    }

    SECTION("independent features score near zero") {
        const int big_n = 2000, width = 16;
        Eigen::MatrixXd a(big_n, width), b(big_n, width);
        for (int i = 0; i < big_n; ++i)
            for (int j = 0; j < width; ++j) {
                a(i, j) = rng.gaussian();
                b(i, j) = rng.gaussian();
            }
        const CkaResult res = linear_cka(a, b);
        REQUIRE(res.defined);
        REQUIRE(res.value < 0.1);
    }

    SECTION("zero-variance features are flagged") {
        const Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(n, h);
        REQUIRE_FALSE(linear_cka(constant, f).defined);
    }
}

TEST_CASE("gradient variance probe") {
    Mlp m({4, 6, 3});
    Stream init(12, "gv_init");
    m.init_params(init);

    SECTION("one-hot targets have exactly zero variance") {
        Dataset ds;
        ds.num_classes = 3;
        ds.dim = 4;
        for (int i = 0; i < 5; ++i) {
            Example ex;
            ex.x = Eigen::VectorXd::Zero(4);
            ex.x[0] = i;
            ex.full_dist = AnnotatorDistribution::one_hot(3, i % 3);
            ds.examples.push_back(std::move(ex));
        }
        Stream rng(13, "gv");
        const GradientVarianceProbe probe = gradient_variance_probe(m, ds, 64, rng);
        // identical draws; only mean round-off can survive, squared
        for (double v : probe.empirical) REQUIRE(v <= 1e-20);
        for (double v : probe.closed_form) REQUIRE(v <= 1e-12);
    }

    SECTION("empirical variance matches the closed form within 3 SE") {
        const Dataset ds = make_synthetic_task(25, 3, 4, 1.0, 5, 14);
        Stream rng(14, "gv2");
        const GradientVarianceProbe probe = gradient_variance_probe(m, ds, 3000, rng);
        for (std::size_t i = 0; i < probe.empirical.size(); ++i) {
            REQUIRE(std::abs(probe.empirical[i] - probe.closed_form[i]) <=
                    3.0 * probe.standard_error[i] + 1e-9);
        }
    }
}
