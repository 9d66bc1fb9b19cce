#pragma once

#include <Eigen/Dense>

namespace gk {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

struct CholeskyFactor {
    Mat L;  // lower triangular, strictly positive diagonal

    Index order() const { return L.rows(); }
    Mat reconstruct() const { return L * L.transpose(); }
    double logdet() const;
};

CholeskyFactor cholesky_factorize(const Mat& A);

enum class Rank1 { update, downdate };

// L*L' +/- w*w'. Only entries of w at positions >= start are read, which lets
// callers skip the leading zeros of sparse w. Throws DowndateBreaksPositivity.
// Returns the smallest ratio new/old over the touched pivots.
double rank1_update_inplace(Mat& L, Vec w, Rank1 dir, Index start = 0);
CholeskyFactor rank1_update(const CholeskyFactor& f, const Vec& w, Rank1 dir);

// L^{-1} e_i, with zeros above i.
Vec forward_unit(const Mat& L, Index i);
// L^{-1} v where v is zero before `start`.
Vec forward_from(const Mat& L, const Vec& v, Index start);
// A^{-1} v for A = L L'.
Vec chol_solve(const Mat& L, const Vec& v);

struct QuadraticForms {
    double a_ii = 0, a_ij = 0, a_jj = 0;  // D^{-1}
    double b_ii = 0, b_ij = 0, b_jj = 0;  // S^{-1}
    double c_ii = 0, c_ij = 0, c_jj = 0;  // S^{-2}
    double d_ii = 0, d_ij = 0, d_jj = 0;  // D^{-2}
};

QuadraticForms quadratic_forms(const CholeskyFactor& LD, const CholeskyFactor& LS,
                               Index i, Index j, bool want_second_order);

// Shrinkage toward diag(sample covariance). `lambda_out` receives the intensity.
Mat estimate_shrinkage_covariance(const Mat& X, double* lambda_out = nullptr);
double shrinkage_intensity(const Mat& X);

Mat regularize_to_pd(const Mat& A, double eig_floor = 1e-5);

double lambda_min(const Mat& A);
Mat cov_to_cor(const Mat& A);
bool is_symmetric(const Mat& A, double tol = 0.0);

}  // namespace gk
