#include "gk/sampler.hpp"

#include <cmath>
#include <random>

#include "gk/errors.hpp"
#include "gk/rng.hpp"

namespace gk {

namespace {

// Square root of a PSD matrix: Cholesky when it works, otherwise eigenvalues
// clipped at zero. Negative eigenvalues below -tol are an error.
Mat psd_root(const Mat& A, double tol, bool* semidefinite) {
    if (A.rows() == 0) return Mat(0, 0);
    Eigen::LLT<Mat> llt(A);
    if (llt.info() == Eigen::Success && (Mat(llt.matrixL()).diagonal().array() > 0).all()) {
        if (semidefinite) *semidefinite = false;
        return llt.matrixL();
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()));
    const double lmin = es.eigenvalues()(0);
    if (lmin < -tol) throw InfeasibleS("lambda_min = " + std::to_string(lmin));
    if (semidefinite) *semidefinite = true;
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Vec normals(Rng& rng, Index n) {
    std::normal_distribution<double> N(0.0, 1.0);
    Vec z(n);
    for (Index k = 0; k < n; ++k) z(k) = N(rng);
    return z;
}

}  // namespace

Mat KnockoffModel::V() const {
    const Index pp = p();
    Mat v(m * pp, m * pp);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) v.block(a * pp, b * pp, pp, pp) = a == b ? C : Mat(C - S);
    return v;
}

KnockoffModel build_model(const Mat& Sigma, const Mat& S, int m) {
    if (m < 1) throw InputError("m must be at least 1");
    if (Sigma.rows() != Sigma.cols() || S.rows() != Sigma.rows() || S.cols() != Sigma.cols())
        throw InputError("build_model: Sigma and S must be square and the same size");
    KnockoffModel mod;
    mod.Sigma = Sigma;
    mod.S = S;
    mod.m = m;
    const Index p = Sigma.rows();
    const CholeskyFactor f = cholesky_factorize(Sigma);
    Mat SigInvS = S;  // Sigma^{-1} S
    f.L.triangularView<Eigen::Lower>().solveInPlace(SigInvS);
    f.L.transpose().triangularView<Eigen::Upper>().solveInPlace(SigInvS);
    mod.P_block = Mat::Identity(p, p) - SigInvS.transpose();
    Mat C = 2.0 * S - S * SigInvS;
    mod.C = 0.5 * (C + C.transpose());
    mod.LV = psd_root(mod.V(), 1e-8, &mod.v_semidefinite);
    return mod;
}

Mat joint_covariance(const Mat& Sigma, const Mat& S, int m) {
    const Index p = Sigma.rows();
    Mat G(p * (m + 1), p * (m + 1));
    for (int a = 0; a <= m; ++a)
        for (int b = 0; b <= m; ++b) G.block(a * p, b * p, p, p) = a == b ? Sigma : Mat(Sigma - S);
    return G;
}

Vec sample_knockoffs(const Vec& x, const KnockoffModel& model, std::uint64_t seed) {
    const Index p = model.p();
    if (x.size() != p) throw InputError("sample_knockoffs: input length does not match the model");
    Rng rng(seed);
    const Vec eta = normals(rng, model.m * p);
    Vec out = model.LV * eta;
    const Vec px = model.P_block * x;
    for (int l = 0; l < model.m; ++l) out.segment(l * p, p) += px;
    return out;
}

Mat sample_knockoffs_rows(const Mat& X, const KnockoffModel& model, std::uint64_t seed) {
    const Index p = model.p(), n = X.rows();
    if (X.cols() != p) throw InputError("sample_knockoffs_rows: column count does not match the model");
    Mat E(n, model.m * p);
    for (Index r = 0; r < n; ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        E.row(r) = normals(rng, model.m * p).transpose();
    }
    Mat out = E * model.LV.transpose();
    const Mat PX = X * model.P_block.transpose();
    for (int l = 0; l < model.m; ++l) out.middleCols(l * p, p) += PX;
    return out;
}

CIKnockoffSampler build_ci_sampler(const Mat& Sigma, const GroupPartition& partition, const KeySelection& keys,
                                   const KnockoffModel& star_model) {
    CIKnockoffSampler s;
    s.star = star_model;
    s.keys = keys.all_keys();
    s.p = Sigma.rows();
    s.m = star_model.m;
    if (star_model.p() != static_cast<Index>(s.keys.size()))
        throw InputError("star model size does not match the key count");
    const Mat Skk = submatrix(Sigma, s.keys, s.keys);
    Eigen::LLT<Mat> llt(Skk);
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("key covariance");
    for (Index g = 0; g < partition.num_groups(); ++g) {
        CIKnockoffSampler::GroupDraw gd;
        gd.dag = keys.non_keys[g];
        if (!gd.dag.empty()) {
            const Mat Skd = submatrix(Sigma, s.keys, gd.dag);
            gd.coef = llt.solve(Skd).transpose();
            const Mat schur = submatrix(Sigma, gd.dag, gd.dag) - gd.coef * Skd;
            gd.root = psd_root(0.5 * (schur + schur.transpose()), 1e-8, nullptr);
        }
        s.groups.push_back(std::move(gd));
    }
    return s;
}

namespace {

void ci_fill(const Vec& x, const CIKnockoffSampler& s, Rng& rng, Eigen::Ref<Vec> out) {
    const Index p = s.p, k = static_cast<Index>(s.keys.size());
    const int m = s.m;
    Vec xs(k);
    for (Index t = 0; t < k; ++t) xs(t) = x(s.keys[t]);
    const Vec eta = normals(rng, m * k);
    Vec ks = s.star.LV * eta;
    const Vec px = s.star.P_block * xs;
    for (int l = 0; l < m; ++l) ks.segment(l * k, k) += px;
    for (int l = 0; l < m; ++l) {
        const auto kl = ks.segment(l * k, k);
        for (Index t = 0; t < k; ++t) out(l * p + s.keys[t]) = kl(t);
        for (const auto& gd : s.groups) {
            if (gd.dag.empty()) continue;
            const Vec z = normals(rng, static_cast<Index>(gd.dag.size()));
            const Vec v = gd.coef * kl + gd.root * z;
            for (std::size_t a = 0; a < gd.dag.size(); ++a) out(l * p + gd.dag[a]) = v(a);
        }
    }
}

}  // namespace

Vec sample_ci_knockoffs(const Vec& x, const CIKnockoffSampler& sampler, std::uint64_t seed) {
    if (x.size() != sampler.p) throw InputError("sample_ci_knockoffs: input length mismatch");
    Rng rng(seed);
    Vec out(sampler.m * sampler.p);
    ci_fill(x, sampler, rng, out);
    return out;
}

Mat sample_ci_knockoffs_rows(const Mat& X, const CIKnockoffSampler& sampler, std::uint64_t seed) {
    if (X.cols() != sampler.p) throw InputError("sample_ci_knockoffs_rows: column count mismatch");
    Mat out(X.rows(), sampler.m * sampler.p);
    Vec buf(sampler.m * sampler.p);
    for (Index r = 0; r < X.rows(); ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        ci_fill(X.row(r).transpose(), sampler, rng, buf);
        out.row(r) = buf.transpose();
    }
    return out;
}

ExchangeabilityReport exchangeability_check(const Mat& X, const Mat& Xk, const GroupPartition& partition,
                                            double flag_threshold) {
    const Index n = X.rows(), p = X.cols();
    if (Xk.rows() != n || p == 0 || Xk.cols() % p != 0) throw InputError("exchangeability_check: shape mismatch");
    if (partition.num_vars() != p) throw InputError("exchangeability_check: partition size mismatch");
    const int m = static_cast<int>(Xk.cols() / p);
    Mat Z(n, p * (m + 1));
    Z << X, Xk;
    Z = Z.rowwise() - Z.colwise().mean();
    for (Index j = 0; j < Z.cols(); ++j) {
        const double nrm = Z.col(j).norm();
        if (nrm > 0) Z.col(j) /= nrm;
    }
    const Mat R = Z.transpose() * Z;
    ExchangeabilityReport rep;
    for (int l = 1; l <= m; ++l)
        for (Index i = 0; i < p; ++i)
            for (Index j = 0; j < p; ++j) {
                if (i == j) continue;
                PairDeviation d{i, j, l, R(i, j), R(i, l * p + j),
                                partition.assignment[i] != partition.assignment[j]};
                const double dev = std::abs(d.corr_x - d.corr_xk);
                if (d.cross_group)
                    rep.max_cross_deviation = std::max(rep.max_cross_deviation, dev);
                else
                    rep.max_within_deviation = std::max(rep.max_within_deviation, dev);
                rep.pairs.push_back(d);
            }
    rep.flagged = rep.max_cross_deviation > flag_threshold;
    return rep;
}

}  // namespace gk
