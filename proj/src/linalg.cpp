#include "gk/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gk/errors.hpp"

namespace gk {

double CholeskyFactor::logdet() const {
    return 2.0 * L.diagonal().array().log().sum();
}

CholeskyFactor cholesky_factorize(const Mat& A) {
    if (A.rows() != A.cols() || A.rows() == 0)
        throw InputError("cholesky_factorize: matrix must be square and nonempty");
    Eigen::LLT<Mat> llt(A);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefinite("nonpositive pivot");
    CholeskyFactor f{llt.matrixL()};
    if ((f.L.diagonal().array() <= 0.0).any() || !f.L.allFinite())
        throw NotPositiveDefinite("nonpositive pivot");
    return f;
}

double rank1_update_inplace(Mat& L, Vec w, Rank1 dir, Index start) {
    const Index p = L.rows();
    const double sign = dir == Rank1::update ? 1.0 : -1.0;
    double worst = 1.0;
    for (Index k = start; k < p; ++k) {
        const double wk = w(k);
        if (wk == 0.0) continue;
        const double lkk = L(k, k);
        const double r2 = lkk * lkk + sign * wk * wk;
        if (dir == Rank1::downdate && !(r2 > 1e-24))
            throw DowndateBreaksPositivity("pivot " + std::to_string(k));
        const double r = std::sqrt(r2);
        if (dir == Rank1::downdate && r < 1e-12)
            throw DowndateBreaksPositivity("pivot " + std::to_string(k));
        const double c = r / lkk;
        worst = std::min(worst, c);
        const double s = wk / lkk;
        L(k, k) = r;
        const Index t = p - k - 1;
        if (t == 0) break;
        auto col = L.col(k).tail(t);
        auto wt = w.tail(t);
        col = (col + sign * s * wt) / c;
        wt = c * wt - s * col;
    }
    return worst;
}

CholeskyFactor rank1_update(const CholeskyFactor& f, const Vec& w, Rank1 dir) {
    if (w.size() != f.order()) throw InputError("rank1_update: size mismatch");
    CholeskyFactor out = f;
    rank1_update_inplace(out.L, w, dir);
    return out;
}

Vec forward_unit(const Mat& L, Index i) {
    const Index p = L.rows();
    Vec x = Vec::Zero(p);
    x(i) = 1.0;
    const Index t = p - i;
    L.bottomRightCorner(t, t).triangularView<Eigen::Lower>().solveInPlace(x.tail(t));
    return x;
}

Vec forward_from(const Mat& L, const Vec& v, Index start) {
    const Index p = L.rows();
    Vec x = v;
    const Index t = p - start;
    L.bottomRightCorner(t, t).triangularView<Eigen::Lower>().solveInPlace(x.tail(t));
    return x;
}

Vec chol_solve(const Mat& L, const Vec& v) {
    Vec x = L.triangularView<Eigen::Lower>().solve(v);
    L.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
}

QuadraticForms quadratic_forms(const CholeskyFactor& LD, const CholeskyFactor& LS,
                               Index i, Index j, bool want_second_order) {
    const Index p = LD.order();
    if (LS.order() != p) throw InputError("quadratic_forms: order mismatch");
    if (i < 0 || j < 0 || i >= p || j >= p) throw InputError("quadratic_forms: index out of range");
    QuadraticForms q;
    const Vec ui = forward_unit(LD.L, i), uj = forward_unit(LD.L, j);
    const Vec vi = forward_unit(LS.L, i), vj = forward_unit(LS.L, j);
    q.a_ii = ui.squaredNorm();
    q.a_jj = uj.squaredNorm();
    q.a_ij = ui.dot(uj);
    q.b_ii = vi.squaredNorm();
    q.b_jj = vj.squaredNorm();
    q.b_ij = vi.dot(vj);
    if (want_second_order) {
        const Vec Di = LD.L.transpose().triangularView<Eigen::Upper>().solve(ui);
        const Vec Dj = LD.L.transpose().triangularView<Eigen::Upper>().solve(uj);
        const Vec Si = LS.L.transpose().triangularView<Eigen::Upper>().solve(vi);
        const Vec Sj = LS.L.transpose().triangularView<Eigen::Upper>().solve(vj);
        q.d_ii = Di.squaredNorm();
        q.d_jj = Dj.squaredNorm();
        q.d_ij = Di.dot(Dj);
        q.c_ii = Si.squaredNorm();
        q.c_jj = Sj.squaredNorm();
        q.c_ij = Si.dot(Sj);
    }
    return q;
}

namespace {

Mat centered(const Mat& X) {
    const Index n = X.rows(), p = X.cols();
    if (n < 2) throw InputError("shrinkage: need at least 2 rows");
    if (!X.allFinite()) throw InputError("shrinkage: nonfinite data");
    Mat Xc = X.rowwise() - X.colwise().mean();
    for (Index j = 0; j < p; ++j)
        if (Xc.col(j).squaredNorm() == 0.0)
            throw DegenerateData("column " + std::to_string(j + 1) + " has zero variance");
    return Xc;
}

double intensity_from_centered(const Mat& Xc, const Mat& S) {
    const double n = static_cast<double>(Xc.rows());
    // sum_k w_kij^2 for w_kij = xc_ki * xc_kj
    const Mat sq = Xc.array().square().matrix();
    const Mat W2 = sq.transpose() * sq;
    const Mat Wbar = S * ((n - 1.0) / n);
    double num = 0.0, den = 0.0;
    for (Index j = 0; j < S.cols(); ++j) {
        for (Index i = 0; i < S.rows(); ++i) {
            if (i == j) continue;
            const double ss = std::max(0.0, W2(i, j) - n * Wbar(i, j) * Wbar(i, j));
            num += n / std::pow(n - 1.0, 3) * ss;
            den += S(i, j) * S(i, j);
        }
    }
    if (den <= 0.0) return 1.0;
    return std::clamp(num / den, 0.0, 1.0);
}

}  // namespace

double shrinkage_intensity(const Mat& X) {
    const Mat Xc = centered(X);
    const Mat S = Xc.transpose() * Xc / static_cast<double>(X.rows() - 1);
    return intensity_from_centered(Xc, S);
}

Mat estimate_shrinkage_covariance(const Mat& X, double* lambda_out) {
    const Mat Xc = centered(X);
    Mat S = Xc.transpose() * Xc / static_cast<double>(X.rows() - 1);
    const double lam = intensity_from_centered(Xc, S);
    if (lambda_out) *lambda_out = lam;
    Mat out = (1.0 - lam) * S;
    out.diagonal() = S.diagonal();
    return 0.5 * (out + out.transpose());
}

double lambda_min(const Mat& A) {
    Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

Mat cov_to_cor(const Mat& A) {
    const Vec d = A.diagonal().array().sqrt().inverse();
    Mat R = d.asDiagonal() * A * d.asDiagonal();
    R.diagonal().setOnes();
    return 0.5 * (R + R.transpose());
}

bool is_symmetric(const Mat& A, double tol) {
    if (A.rows() != A.cols()) return false;
    return (A - A.transpose()).cwiseAbs().maxCoeff() <= tol;
}

Mat regularize_to_pd(const Mat& A, double eig_floor) {
    const Mat As = 0.5 * (A + A.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(As);
    const double target = eig_floor * (1.0 - 1e-9);
    if (es.eigenvalues()(0) >= target) return As;

    const bool unit_diag = (As.diagonal().array() - 1.0).abs().maxCoeff() <= 1e-12;
    // Aim a hair above the floor so round-off in later eigensolves stays clear of it.
    const double lift = eig_floor * (1.0 + 1e-6);
    Vec ev = es.eigenvalues().cwiseMax(lift);
    Mat R = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    R = 0.5 * (R + R.transpose());
    if (!unit_diag) return R;

    R = cov_to_cor(R);
    // Rescaling can push the smallest eigenvalue a little under the floor;
    // pull toward I just enough to restore it. Keeps unit diagonal.
    const double mu = lambda_min(R);
    if (mu < target) {
        const double t = (lift - mu) / (1.0 - mu);
        R = (1.0 - t) * R + t * Mat::Identity(R.rows(), R.cols());
        R.diagonal().setOnes();
    }
    return R;
}

}  // namespace gk
