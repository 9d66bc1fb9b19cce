#pragma once

#include <cstdint>
#include <vector>

#include "gk/grouping.hpp"
#include "gk/linalg.hpp"

namespace gk {

// X~ = P x + L_V eta. P stacks m identical blocks I - S Sigma^{-1}; V has
// C = 2S - S Sigma^{-1} S on its diagonal blocks and C - S elsewhere.
struct KnockoffModel {
    Mat Sigma;
    Mat S;
    int m = 1;
    Mat P_block;  // p x p
    Mat C;        // p x p
    Mat LV;       // mp x mp, L_V L_V' = V (triangular only when V was PD)
    bool v_semidefinite = false;

    Index p() const { return Sigma.rows(); }
    Mat V() const;
};

KnockoffModel build_model(const Mat& Sigma, const Mat& S, int m);

// Covariance of (X, X~_1, ..., X~_m): Sigma on the diagonal blocks, Sigma - S off it.
Mat joint_covariance(const Mat& Sigma, const Mat& S, int m);

// Returns m*p values, copy-major. Draws m*p normals in that same order.
Vec sample_knockoffs(const Vec& x, const KnockoffModel& model, std::uint64_t seed);
// Row r uses seed derive_seed(seed, r); rows are independent of thread count.
Mat sample_knockoffs_rows(const Mat& X, const KnockoffModel& model, std::uint64_t seed);

struct CIKnockoffSampler {
    KnockoffModel star;
    std::vector<Index> keys;  // sorted original indices
    Index p = 0;
    int m = 1;
    struct GroupDraw {
        std::vector<Index> dag;  // non-key members
        Mat coef;                // |dag| x |keys|: Sigma_{dag,*} Sigma_{**}^{-1}
        Mat root;                // square root of the Schur complement
    };
    std::vector<GroupDraw> groups;
};

CIKnockoffSampler build_ci_sampler(const Mat& Sigma, const GroupPartition& partition,
                                   const KeySelection& keys, const KnockoffModel& star_model);

// Key knockoffs first (same draws as sample_knockoffs on the key coordinates),
// then per copy and per group the non-key conditional draws.
Vec sample_ci_knockoffs(const Vec& x, const CIKnockoffSampler& sampler, std::uint64_t seed);
Mat sample_ci_knockoffs_rows(const Mat& X, const CIKnockoffSampler& sampler, std::uint64_t seed);

struct PairDeviation {
    Index i = 0, j = 0;
    int copy = 0;  // 1-based
    double corr_x = 0.0;   // corr(X_i, X_j)
    double corr_xk = 0.0;  // corr(X_i, X~_j)
    bool cross_group = true;
};

struct ExchangeabilityReport {
    std::vector<PairDeviation> pairs;
    double max_cross_deviation = 0.0;
    double max_within_deviation = 0.0;
    bool flagged = false;  // max_cross_deviation above the threshold
};

ExchangeabilityReport exchangeability_check(const Mat& X, const Mat& Xk, const GroupPartition& partition,
                                            double flag_threshold = 0.03);

}  // namespace gk
