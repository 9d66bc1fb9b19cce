#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "gk/errors.hpp"
#include "gk/rng.hpp"
#include "gk/sampler.hpp"
#include "gk/solver.hpp"
#include "oracles.hpp"

using namespace gk;

namespace {

double max_abs(const Mat& A) { return A.cwiseAbs().maxCoeff(); }

// (m+1)p square matrix with Sigma on diagonal blocks and Sigma - S elsewhere.
Mat gs_oracle(const Mat& Sigma, const Mat& S, int m) {
    const Index p = Sigma.rows();
    Mat G(p * (m + 1), p * (m + 1));
    for (int a = 0; a <= m; ++a)
        for (int b = 0; b <= m; ++b) G.block(a * p, b * p, p, p) = a == b ? Sigma : Mat(Sigma - S);
    return G;
}

Mat draw_gaussian(const Mat& Sigma, Index n, std::uint64_t seed) {
    Mat L;
    REQUIRE(oracle::cholesky(Sigma, L));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0, 1);
    Mat Z(n, Sigma.rows());
    for (Index r = 0; r < n; ++r)
        for (Index j = 0; j < Sigma.rows(); ++j) Z(r, j) = N(rng);
    return Z * L.transpose();
}

Mat empirical_cov(const Mat& X, const Mat& Xk) {
    Mat Z(X.rows(), X.cols() + Xk.cols());
    Z << X, Xk;
    return Z.transpose() * Z / double(Z.rows());
}

// Keys on an AR(1) chain, non-keys load on their own group's key only.
Mat ci_sigma(Index groups, Index size) {
    const Index p = groups * size;
    Mat A = Mat::Zero(p, groups + p);
    for (Index g = 0; g < groups; ++g) {
        const Index key = g * size;
        for (Index h = 0; h <= g; ++h) A(key, h) = std::pow(0.5, double(g - h)) * (h == 0 ? 1.0 : std::sqrt(0.75));
        for (Index t = 1; t < size; ++t) {
            A.row(key + t) = (0.5 + 0.1 * double(t)) * A.row(key);
            A(key + t, groups + key + t) = 0.7;
        }
    }
    return oracle::to_cor(A * A.transpose());
}

KeySelection first_is_key(const GroupPartition& g) {
    KeySelection ks;
    for (const auto& mem : g.members) {
        ks.keys.push_back({mem.front()});
        ks.non_keys.emplace_back(mem.begin() + 1, mem.end());
    }
    return ks;
}

}  // namespace

TEST_CASE("model examples") {
    std::mt19937_64 rng(1);
    const Mat R = oracle::random_cor(4, rng);

    const KnockoffModel whole = build_model(R, R, 1);
    CHECK(max_abs(whole.P_block) < 1e-12);
    CHECK(max_abs(whole.C - R) < 1e-12);

    const KnockoffModel zero = build_model(R, Mat::Zero(4, 4), 3);
    CHECK(max_abs(zero.P_block - Mat::Identity(4, 4)) < 1e-12);
    CHECK(max_abs(zero.V()) < 1e-12);
    CHECK(zero.v_semidefinite);

    const Mat I = Mat::Identity(3, 3);
    const KnockoffModel id = build_model(I, I, 2);
    CHECK(max_abs(id.P_block) == 0.0);
    const Mat V = id.V();
    CHECK(max_abs(V.topLeftCorner(3, 3) - I) < 1e-15);
    CHECK(max_abs(V.bottomRightCorner(3, 3) - I) < 1e-15);
    CHECK(max_abs(V.topRightCorner(3, 3)) < 1e-15);
    CHECK(max_abs(id.LV * id.LV.transpose() - V) < 1e-14);

    CHECK_THROWS_AS(build_model(R, 3 * R, 1), InfeasibleS);
}

TEST_CASE("model reproduces the joint covariance") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Index p = 2 + trial % 4;
        const int m = 1 + trial % 3;
        const Mat R = oracle::random_cor(p, rng);
        const GroupPartition g = GroupPartition::blocks(p, 2);
        const Mat S = (0.3 + 0.02 * trial) * solve_equi(R, g, m);
        const KnockoffModel mod = build_model(R, S, m);
        Mat P(m * p, p);
        for (int l = 0; l < m; ++l) P.middleRows(l * p, p) = mod.P_block;
        Mat G(p * (m + 1), p * (m + 1));
        G.topLeftCorner(p, p) = R;
        G.topRightCorner(p, m * p) = R * P.transpose();
        G.bottomLeftCorner(m * p, p) = P * R;
        G.bottomRightCorner(m * p, m * p) = P * R * P.transpose() + mod.LV * mod.LV.transpose();
        CHECK(max_abs(G - gs_oracle(R, S, m)) < 1e-10);
        CHECK(max_abs(joint_covariance(R, S, m) - gs_oracle(R, S, m)) == 0.0);
    }
}

TEST_CASE("sampling examples") {
    std::mt19937_64 rng(3);
    const Mat R = oracle::random_cor(5, rng);
    const Vec x = Vec::LinSpaced(5, -1, 1);

    const KnockoffModel zero = build_model(R, Mat::Zero(5, 5), 3);
    const Vec rep = sample_knockoffs(x, zero, 7);
    for (int l = 0; l < 3; ++l) CHECK(max_abs(rep.segment(5 * l, 5) - x) < 1e-12);

    const KnockoffModel mod = build_model(R, 0.4 * solve_equi(R, GroupPartition::singletons(5), 2), 2);
    CHECK(sample_knockoffs(x, mod, 11) == sample_knockoffs(x, mod, 11));
    CHECK(sample_knockoffs(x, mod, 11) != sample_knockoffs(x, mod, 12));

    const Mat X = draw_gaussian(R, 20, 5);
    const Mat K = sample_knockoffs_rows(X, mod, 9);
    CHECK(K.row(4).transpose() == sample_knockoffs(X.row(4).transpose(), mod, derive_seed(9, 4)));
}

TEST_CASE("sampled knockoffs have the target covariance") {
    std::mt19937_64 rng(4);
    const Mat R = oracle::random_cor(5, rng);
    const GroupPartition g = GroupPartition::from_labels({0, 0, 1, 2, 2});
    SolverConfig c;
    c.m = 2;
    const Mat S = solve_group_knockoffs(R, g, c).S;
    const KnockoffModel mod = build_model(R, S, 2);
    const Mat X = draw_gaussian(R, 100000, 21);
    const Mat K = sample_knockoffs_rows(X, mod, 22);
    CHECK(max_abs(empirical_cov(X, K) - gs_oracle(R, S, 2)) < 0.02);
    CHECK(K.colwise().mean().cwiseAbs().maxCoeff() < 0.02);

    const ExchangeabilityReport rep = exchangeability_check(X, K, g);
    CHECK(rep.max_cross_deviation <= 0.03);
    CHECK_FALSE(rep.flagged);
    CHECK(rep.pairs.size() == std::size_t(2 * 5 * 4));

    // scrambled copy columns break the pairing
    Mat Kp = K;
    for (int l = 0; l < 2; ++l) {
        Kp.col(5 * l + 0).swap(Kp.col(5 * l + 3));
        Kp.col(5 * l + 1).swap(Kp.col(5 * l + 4));
    }
    CHECK(exchangeability_check(X, Kp, g).flagged);
}

TEST_CASE("exact copies show no deviation") {
    std::mt19937_64 rng(5);
    const Mat R = oracle::random_cor(4, rng);
    const Mat X = draw_gaussian(R, 500, 6);
    const ExchangeabilityReport rep = exchangeability_check(X, X, GroupPartition::singletons(4));
    CHECK(rep.max_cross_deviation < 1e-12);
    CHECK(rep.max_within_deviation == 0.0);
}

TEST_CASE("conditional-independence sampler") {
    // keys cover every variable: same draws as the plain sampler
    std::mt19937_64 rng(6);
    const Mat R = oracle::random_cor(6, rng);
    const GroupPartition g = GroupPartition::blocks(6, 3);
    const KeySelection all = select_key_variables(R, g, 1.0);
    const KnockoffModel mod = build_model(R, 0.5 * solve_equi(R, g, 2), 2);
    const CIKnockoffSampler full = build_ci_sampler(R, g, all, mod);
    const Vec x = Vec::LinSpaced(6, 0.5, -0.5);
    CHECK(sample_ci_knockoffs(x, full, 33) == sample_knockoffs(x, mod, 33));

    // p = 2 single group, key = {0}: Schur complement 1 - rho^2
    Mat two(2, 2);
    two << 1, 0.5, 0.5, 1;
    const GroupPartition one = GroupPartition::single_group(2);
    KeySelection ks;
    ks.keys = {{0}};
    ks.non_keys = {{1}};
    const CIKnockoffSampler s2 = build_ci_sampler(two, one, ks, build_model(Mat::Identity(1, 1), Mat::Identity(1, 1), 1));
    REQUIRE(s2.groups.size() == 1);
    CHECK((s2.groups[0].root * s2.groups[0].root.transpose())(0, 0) == doctest::Approx(0.75));
    CHECK(s2.groups[0].coef(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("conditional-independence sampler matches the extended S") {
    const Mat R = ci_sigma(3, 3);
    const GroupPartition g = GroupPartition::blocks(9, 3);
    const KeySelection ks = first_is_key(g);
    const int m = 2;
    SolverConfig c;
    c.m = m;
    const Mat S = solve_with_key_ci(R, g, ks, c).S;
    const StarProblem star = star_problem(R, g, ks);
    const Mat Sst = S(star.keys, star.keys);
    const CIKnockoffSampler ci = build_ci_sampler(R, g, ks, build_model(star.Sigma, Sst, m));

    const Mat X = draw_gaussian(R, 100000, 41);
    const Mat K = sample_ci_knockoffs_rows(X, ci, 42);
    CHECK(max_abs(empirical_cov(X, K) - gs_oracle(R, S, m)) < 0.02);

    // and the plain sampler built from the same S agrees in second moments
    const Mat K2 = sample_knockoffs_rows(X, build_model(R, S, m), 43);
    CHECK(max_abs(empirical_cov(X, K2) - empirical_cov(X, K)) < 0.03);
}
