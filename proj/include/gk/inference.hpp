#pragma once

#include <cstdint>
#include <vector>

#include "gk/grouping.hpp"
#include "gk/linalg.hpp"

namespace gk {

struct LassoOptions {
    int max_iter = 100000;  // full passes
    double tol = 1e-8;      // KKT residual
};

// argmin 1/2 b'Ab - r'b + lambda |b|_1 by cyclic coordinate descent.
Vec lasso_cd(const Mat& A, const Vec& r, double lambda, const LassoOptions& opt = {},
             const Vec* warm_start = nullptr);

// max_j violation of the KKT conditions at beta.
double lasso_kkt_residual(const Mat& A, const Vec& r, const Vec& beta, double lambda);

std::vector<double> lambda_grid(double lambda_max, double lambda_min, int count);

struct PseudoSplit {
    Vec r_train, r_valid;
    double n_train = 0, n_valid = 0;
};
PseudoSplit pseudo_split(const Vec& r, const Mat& A, double n, std::uint64_t seed, double train_frac = 0.8);

struct PseudoValidation {
    double lambda = 0.0;
    std::vector<double> grid;
    std::vector<double> scores;  // -inf where beta = 0
};
PseudoValidation pseudo_validate(const Vec& r, const Mat& A, double n, const std::vector<double>& grid,
                                 std::uint64_t seed, const LassoOptions& opt = {});

struct GroupScores {
    Vec Z;   // g
    Mat Zk;  // g x m
};

// beta has p(m+1) entries: originals then copies, copy-major.
GroupScores group_scores(const Vec& beta, const GroupPartition& partition, int m);
// Sums of (x'y)^2/n over each group, after standardizing columns and y.
GroupScores marginal_group_scores(const Mat& X, const Mat& Xk, const Vec& y, const GroupPartition& partition);

struct WStatistics {
    Vec W;
    std::vector<int> kappa;  // 0 = original wins, else 1-based copy
    Vec T;
};
WStatistics knockoff_W(const GroupScores& scores);

struct SelectionResult {
    Vec W;
    std::vector<int> kappa;
    Vec T;
    double tau = 0.0;  // +inf when nothing qualifies
    std::vector<int> selected;  // 0-based group ids, ascending
    double q = 0.1;
};
SelectionResult multiple_knockoff_filter(const Vec& W, const std::vector<int>& kappa, const Vec& T, double q, int m);

struct Metrics {
    double power = 0.0;
    double fdp = 0.0;
};
Metrics power_fdr(const std::vector<int>& selected, const std::vector<int>& causal_groups, int total_groups);

double median(std::vector<double> v);

}  // namespace gk
