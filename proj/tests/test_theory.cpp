#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "votelab/mlp.hpp"
#include "votelab/rng.hpp"
#include "votelab/theory.hpp"

using namespace votelab;

namespace {

Eigen::VectorXd random_simplex(int c, Stream& rng, double shape = 1.0) {
    Eigen::VectorXd p(c);
    for (int k = 0; k < c; ++k) p[k] = rng.gamma(shape);
    return p / p.sum();
}

}  // namespace

TEST_CASE("expected logit gradient is q - p") {
    Stream rng(1, "elg");
    const Eigen::VectorXd p = random_simplex(5, rng);
    const Eigen::VectorXd q = random_simplex(5, rng);

    REQUIRE(expected_logit_grad(p, p).norm() == 0.0);

    const Eigen::VectorXd onehot = Eigen::VectorXd::Unit(5, 2);
    REQUIRE((expected_logit_grad(q, onehot) - (q - onehot)).norm() == 0.0);

    SECTION("Monte-Carlo mean within 4 SE componentwise") {
        const int n = 100000;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(5), sumsq = Eigen::VectorXd::Zero(5);
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd g = q;
            g[rng.categorical(p)] -= 1.0;
            sum += g;
            sumsq += g.cwiseAbs2();
        }
        const Eigen::VectorXd closed = expected_logit_grad(q, p);
        for (int k = 0; k < 5; ++k) {
            const double mean = sum[k] / n;
            const double var = (sumsq[k] - sum[k] * sum[k] / n) / (n - 1);
            const double se = std::sqrt(std::max(var, 1e-30) / n);
            REQUIRE(std::abs(mean - closed[k]) <= 4.0 * se);
        }
    }

    REQUIRE_THROWS_AS(expected_logit_grad(q, random_simplex(4, rng)), InvalidInput);
}

TEST_CASE("logit gradient covariance is Diag(p) - pp^T") {
    SECTION("one-hot target has no sampling variance") {
        REQUIRE(logit_grad_covariance(Eigen::VectorXd::Unit(4, 1)).norm() <= 1e-15);
    }

    SECTION("two-point uniform case") {
        Eigen::VectorXd p(2);
        p << 0.5, 0.5;
        const Eigen::MatrixXd cov = logit_grad_covariance(p);
        REQUIRE(cov(0, 0) == Catch::Approx(0.25).margin(1e-15));
        REQUIRE(cov(0, 1) == Catch::Approx(-0.25).margin(1e-15));
        REQUIRE(cov(1, 0) == Catch::Approx(-0.25).margin(1e-15));
        REQUIRE(cov(1, 1) == Catch::Approx(0.25).margin(1e-15));
    }

    SECTION("Monte-Carlo covariance of e_y at C=6 within 2% Frobenius") {
        Stream rng(2, "cov");
        const Eigen::VectorXd p = random_simplex(6, rng);
        const int n = 1000000;
        Eigen::VectorXd freq = Eigen::VectorXd::Zero(6);
        for (int i = 0; i < n; ++i) freq[rng.categorical(p)] += 1.0;
        freq /= static_cast<double>(n);
        const Eigen::MatrixXd mc =
            (static_cast<double>(n) / (n - 1)) *
            (Eigen::MatrixXd(freq.asDiagonal()) - freq * freq.transpose());
        const Eigen::MatrixXd closed = logit_grad_covariance(p);
        REQUIRE((mc - closed).norm() / closed.norm() < 0.02);
    }

    SECTION("symmetric PSD and rows sum to zero") {
        Stream rng(3, "psd");
        for (int trial = 0; trial < 50; ++trial) {
            const Eigen::VectorXd p = random_simplex(5, rng, 0.6);
            const Eigen::MatrixXd cov = logit_grad_covariance(p);
            REQUIRE((cov - cov.transpose()).norm() <= 1e-14);
            REQUIRE((cov.rowwise().sum()).cwiseAbs().maxCoeff() <= 1e-12);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
            REQUIRE(es.eigenvalues().minCoeff() >= -1e-10);
        }
    }
}

TEST_CASE("expected squared gradient norm identity") {
    Stream rng(4, "sqnorm");
    const Eigen::VectorXd q = random_simplex(4, rng);

    SECTION("one-hot target leaves only the bias term") {
        const Eigen::VectorXd e = Eigen::VectorXd::Unit(4, 3);
        REQUIRE(expected_grad_sqnorm(q, e) ==
                Catch::Approx((q - e).squaredNorm()).margin(1e-15));
    }

    SECTION("uniform fixed point") {
        const Eigen::VectorXd u = Eigen::VectorXd::Constant(4, 0.25);
        REQUIRE(expected_grad_sqnorm(u, u) == Catch::Approx(1.0 - 0.25).margin(1e-15));
    }

    SECTION("Monte-Carlo check within 3 SE") {
        const Eigen::VectorXd p = random_simplex(4, rng, 0.8);
        const int n = 100000;
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd g = q;
            g[rng.categorical(p)] -= 1.0;
            const double s = g.squaredNorm();
            sum += s;
            sumsq += s * s;
        }
        const double mean = sum / n;
        const double se = std::sqrt(((sumsq - sum * sum / n) / (n - 1)) / n);
        REQUIRE(std::abs(mean - expected_grad_sqnorm(q, p)) <= 3.0 * se);
    }

    SECTION("variance term equals the covariance trace") {
        const Eigen::VectorXd p = random_simplex(4, rng, 1.2);
        const double variance_term = expected_grad_sqnorm(q, p) - (q - p).squaredNorm();
        REQUIRE(std::abs(variance_term - logit_grad_covariance(p).trace()) <= 1e-12);
        REQUIRE(std::abs(logit_grad_covariance(p).trace() - (1.0 - p.squaredNorm())) <= 1e-12);
    }
}

TEST_CASE("parameter-space covariance through the logit Jacobian") {
    Stream rng(5, "pgc");

    SECTION("identity Jacobian reduces to the logit covariance") {
        const Eigen::VectorXd p = random_simplex(4, rng);
        const Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(4, 4);
        REQUIRE((param_grad_covariance(jac, p) - logit_grad_covariance(p)).norm() <= 1e-15);
    }

    SECTION("one-hot target gives the zero matrix for any Jacobian") {
        Eigen::MatrixXd jac(3, 7);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 7; ++c) jac(r, c) = rng.gaussian();
        REQUIRE(param_grad_covariance(jac, Eigen::VectorXd::Unit(3, 0)).norm() <= 1e-12);
    }

    SECTION("matches Monte-Carlo parameter-gradient covariance on a tiny model") {
        Mlp tiny({3, 4, 3});
        Stream init(6, "pgc_init");
        tiny.init_params(init);
        Eigen::VectorXd x(3);
        x << 0.3, -0.8, 1.1;
        const Eigen::VectorXd p = random_simplex(3, rng, 1.5);
        const Eigen::MatrixXd closed = param_grad_covariance(logit_jacobian(tiny, x), p);

        const int n = 100000;
        const auto dim = tiny.theta.size();
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
        Eigen::MatrixXd second = Eigen::MatrixXd::Zero(dim, dim);
        for (int i = 0; i < n; ++i) {
            Batch b;
            b.inputs = x;
            b.targets.push_back(TrainingTarget::hard(rng.categorical(p)));
            const Eigen::VectorXd g = loss_and_grad(tiny, b).second;
            mean += g;
            second += g * g.transpose();
        }
        mean /= static_cast<double>(n);
        const Eigen::MatrixXd mc =
            (second - static_cast<double>(n) * mean * mean.transpose()) / (n - 1);
        REQUIRE((mc - closed).norm() / closed.norm() < 0.05);
    }
}

TEST_CASE("Monte-Carlo estimates converge at the 1/sqrt(n) rate") {
    Stream rng(7, "rate");
    const Eigen::VectorXd p = random_simplex(4, rng);
    const Eigen::VectorXd q = random_simplex(4, rng);

    auto estimate = [&](int draws) {
        double sum = 0.0;
        for (int i = 0; i < draws; ++i) {
            Eigen::VectorXd g = q;
            g[rng.categorical(p)] -= 1.0;
            sum += g.squaredNorm();
        }
        return sum / draws;
    };

    const int reps = 300;
    double var_small = 0.0, var_large = 0.0, mean_small = 0.0, mean_large = 0.0;
    std::vector<double> small(reps), large(reps);
    for (int r = 0; r < reps; ++r) {
        small[static_cast<std::size_t>(r)] = estimate(500);
        large[static_cast<std::size_t>(r)] = estimate(1000);
        mean_small += small[static_cast<std::size_t>(r)];
        mean_large += large[static_cast<std::size_t>(r)];
    }
    mean_small /= reps;
    mean_large /= reps;
    for (int r = 0; r < reps; ++r) {
        var_small += (small[static_cast<std::size_t>(r)] - mean_small) *
                     (small[static_cast<std::size_t>(r)] - mean_small);
        var_large += (large[static_cast<std::size_t>(r)] - mean_large) *
                     (large[static_cast<std::size_t>(r)] - mean_large);
    }
    // halving the sample size should roughly double the estimator variance
    REQUIRE(var_small / var_large == Catch::Approx(2.0).margin(0.7));
}
