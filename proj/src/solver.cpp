#include "gk/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include <boost/math/tools/minima.hpp>

#include "gk/errors.hpp"

namespace gk {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRefactorRatio = 1e-3;  // pivot new/old below which factors are rebuilt
constexpr double kRejectRatio = 1e-6;    // and below which the step is rejected
constexpr int kBacktracks = 8;

double kscale(int m) { return (m + 1.0) / m; }

int brent_bits(double tol) {
    return std::max(4, static_cast<int>(std::ceil(1.0 - std::log2(tol))));
}

}  // namespace

Method parse_method(const std::string& s) {
    if (s == "me" || s == "ME") return Method::ME;
    if (s == "mvr" || s == "MVR") return Method::MVR;
    if (s == "sdp" || s == "SDP") return Method::SDP;
    if (s == "esdp" || s == "eSDP" || s == "equi") return Method::eSDP;
    throw InputError("unknown method '" + s + "'");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::eSDP: return "esdp";
        case Method::SDP: return "sdp";
        case Method::MVR: return "mvr";
        case Method::ME: return "me";
    }
    return "?";
}

FeasibleInterval feasible_interval(const QuadraticForms& q, StepKind kind, double eps) {
    double lo, hi;
    if (kind != StepKind::offdiag) {
        lo = -1.0 / q.b_jj;
        hi = 1.0 / q.a_jj;
    } else {
        // det of the 2x2 updates: (1 - d a_ij)^2 - d^2 a_ii a_jj for D and
        // (1 + d b_ij)^2 - d^2 b_ii b_jj for S. Each has one root on either
        // side of zero; keep the innermost.
        const double ra = std::sqrt(q.a_ii * q.a_jj), rb = std::sqrt(q.b_ii * q.b_jj);
        lo = -kInf;
        hi = kInf;
        if (ra - q.a_ij > 0) lo = std::max(lo, -1.0 / (ra - q.a_ij));
        if (ra + q.a_ij > 0) hi = std::min(hi, 1.0 / (ra + q.a_ij));
        if (rb + q.b_ij > 0) lo = std::max(lo, -1.0 / (rb + q.b_ij));
        if (rb - q.b_ij > 0) hi = std::min(hi, 1.0 / (rb - q.b_ij));
        // the first half of the rank-2 update must not break positivity either
        const double ua = q.a_ii + 2 * q.a_ij + q.a_jj, ub = q.b_ii + 2 * q.b_ij + q.b_jj;
        if (ua > 0) hi = std::min(hi, 2.0 / ua);
        if (ub > 0) lo = std::max(lo, -2.0 / ub);
    }
    if (kind == StepKind::offdiag) {
        lo += eps;
        hi -= eps;
        // Keep the updated 2x2 blocks of D^{-1} and S^{-1} below 1/eps, the
        // same margin the diagonal bounds give. With P the inverse of the
        // current 2x2 block, the new block is the inverse of P -/+ delta H.
        auto margin = [&](double x11, double x12, double x22, double sgn) {
            const double det = x11 * x22 - x12 * x12;
            if (!(det > 0)) {
                lo = std::max(lo, 0.0);
                hi = std::min(hi, 0.0);
                return;
            }
            const double p11 = x22 / det, p22 = x11 / det, p12 = -x12 / det;
            const double r2 = (p11 - eps) * (p22 - eps);
            const double r = r2 > 0 && p11 > eps ? std::sqrt(r2) : 0.0;
            // need (p12 - sgn*delta)^2 <= r^2
            const double c = sgn * p12;
            lo = std::max(lo, c - r);
            hi = std::min(hi, c + r);
        };
        margin(q.a_ii, q.a_ij, q.a_jj, 1.0);
        margin(q.b_ii, q.b_ij, q.b_jj, -1.0);
    } else {
        lo += eps;
        hi -= eps;
    }
    FeasibleInterval iv;
    iv.lo = std::min(0.0, lo);
    iv.hi = std::max(0.0, hi);
    if (!std::isfinite(iv.lo)) iv.lo = 0.0;
    if (!std::isfinite(iv.hi)) iv.hi = 0.0;
    return iv;
}

double step_loss_change(Method method, StepKind kind, const StepContext& ctx, int m, double d) {
    const QuadraticForms& q = ctx.q;
    switch (method) {
        case Method::ME: {
            double dd, ds;
            if (kind == StepKind::offdiag) {
                dd = (1 - d * q.a_ij) * (1 - d * q.a_ij) - d * d * q.a_ii * q.a_jj;
                ds = (1 + d * q.b_ij) * (1 + d * q.b_ij) - d * d * q.b_ii * q.b_jj;
            } else {
                dd = 1 - d * q.a_jj;
                ds = 1 + d * q.b_jj;
            }
            if (!(dd > 0) || !(ds > 0)) return kInf;
            return -(std::log(dd) + m * std::log(ds));
        }
        case Method::MVR: {
            const double m2 = static_cast<double>(m) * m;
            if (kind == StepKind::offdiag) {
                const double den_s = (1 + d * q.b_ij) * (1 + d * q.b_ij) - d * d * q.b_ii * q.b_jj;
                const double den_d = (1 - d * q.a_ij) * (1 - d * q.a_ij) - d * d * q.a_ii * q.a_jj;
                if (!(den_s > 0) || !(den_d > 0)) return kInf;
                const double ts = -d * (2 * q.c_ij + d * (2 * q.c_ij * q.b_ij - q.c_jj * q.b_ii - q.c_ii * q.b_jj)) / den_s;
                const double td = d * (2 * q.d_ij + d * (-2 * q.d_ij * q.a_ij + q.d_jj * q.a_ii + q.d_ii * q.a_jj)) / den_d;
                return m2 * ts + td;
            }
            const double den_s = 1 + d * q.b_jj, den_d = 1 - d * q.a_jj;
            if (!(den_s > 0) || !(den_d > 0)) return kInf;
            return -m2 * d * q.c_jj / den_s + d * q.d_jj / den_d;
        }
        case Method::SDP:
        case Method::eSDP: {
            if (kind == StepKind::pca) {
                const Mat& Sg = *ctx.sigma_block;
                const Mat& Ss = *ctx.s_block;
                const Vec& v = *ctx.v;
                double acc = 0.0;
                for (Index b = 0; b < Sg.cols(); ++b)
                    for (Index a = 0; a < Sg.rows(); ++a) {
                        const double r = Ss(a, b) - Sg(a, b);
                        acc += std::abs(r + d * v(a) * v(b)) - std::abs(r);
                    }
                return ctx.group_weight * acc;
            }
            const double r = ctx.s_ij - ctx.sigma_ij;
            const double mult = kind == StepKind::offdiag ? 2.0 : 1.0;
            return ctx.group_weight * mult * (std::abs(r + d) - std::abs(r));
        }
    }
    return kInf;
}

double optimal_delta(Method method, StepKind kind, const StepContext& ctx, int m,
                     const FeasibleInterval& iv, double brent_tol, int brent_max_iter) {
    if (iv.pinned()) return 0.0;
    const QuadraticForms& q = ctx.q;
    double d = 0.0;
    bool closed = true;
    if (method == Method::SDP || method == Method::eSDP) {
        if (kind == StepKind::pca)
            closed = false;
        else
            d = iv.clamp(ctx.sigma_ij - ctx.s_ij);
    } else if (kind != StepKind::offdiag) {
        if (method == Method::ME) {
            d = (m * q.b_jj - q.a_jj) / ((m + 1.0) * q.a_jj * q.b_jj);
        } else {
            // stationary point of -m^2 d c/(1+d b) + d dd/(1-d a); the factored
            // root of the quadratic that lies inside the feasible region
            const double sc = m * std::sqrt(q.c_jj), sd = std::sqrt(q.d_jj);
            d = (sc - sd) / (q.b_jj * sd + q.a_jj * sc);
        }
        d = iv.clamp(d);
    } else {
        closed = false;
    }
    if (!closed) {
        auto f = [&](double x) { return step_loss_change(method, kind, ctx, m, x); };
        std::uintmax_t it = static_cast<std::uintmax_t>(brent_max_iter);
        const auto r = boost::math::tools::brent_find_minima(f, iv.lo, iv.hi, brent_bits(brent_tol), it);
        d = iv.clamp(r.first);
    }
    if (d == 0.0) return 0.0;
    const double change = step_loss_change(method, kind, ctx, m, d);
    return change < 0.0 ? d : 0.0;
}

double objective(const Mat& Sigma, const Mat& S, const GroupPartition& partition, int m, Method method) {
    if (method == Method::SDP || method == Method::eSDP) {
        double acc = 0.0;
        for (const auto& g : partition.members) {
            double s = 0.0;
            for (Index a : g)
                for (Index b : g) s += std::abs(S(a, b) - Sigma(a, b));
            acc += s / static_cast<double>(g.size() * g.size());
        }
        return acc;
    }
    const Mat D = kscale(m) * Sigma - S;
    CholeskyFactor fs, fd;
    try {
        fs = cholesky_factorize(S);
        fd = cholesky_factorize(D);
    } catch (const NotPositiveDefinite&) {
        throw SingularState("S or D is not positive definite");
    }
    if (method == Method::ME) return -(fd.logdet() + m * fs.logdet());
    const Index p = S.rows();
    const Mat I = Mat::Identity(p, p);
    const double ts = fs.L.triangularView<Eigen::Lower>().solve(I).squaredNorm();
    const double td = fd.L.triangularView<Eigen::Lower>().solve(I).squaredNorm();
    return static_cast<double>(m) * m * ts + td;
}

double equi_scale(const Mat& Sigma, const GroupPartition& partition, int m) {
    const Index p = Sigma.rows();
    Mat B = Mat::Zero(p, p);
    for (const auto& g : partition.members) {
        const Mat Sg = submatrix(Sigma, g, g);
        Eigen::SelfAdjointEigenSolver<Mat> es(Sg);
        if (es.eigenvalues()(0) <= 0) throw NotPositiveDefinite("group block of Sigma");
        const Mat R = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                      es.eigenvectors().transpose();
        for (std::size_t a = 0; a < g.size(); ++a)
            for (std::size_t b = 0; b < g.size(); ++b) B(g[a], g[b]) = R(a, b);
    }
    const Mat M = B * Sigma * B;
    const double lmin = lambda_min(0.5 * (M + M.transpose()));
    if (lmin <= 0) throw NotPositiveDefinite("Sigma");
    return std::min(1.0, kscale(m) * lmin);
}

Mat solve_equi(const Mat& Sigma, const GroupPartition& partition, int m) {
    const double tau = equi_scale(Sigma, partition, m);
    const Index p = Sigma.rows();
    Mat S = Mat::Zero(p, p);
    for (const auto& g : partition.members)
        for (Index a : g)
            for (Index b : g) S(a, b) = tau * Sigma(a, b);
    return S;
}

std::vector<Vec> pca_directions(const Mat& Sigma, const GroupPartition& partition) {
    const Index p = Sigma.rows();
    std::vector<Vec> dirs;
    for (const auto& g : partition.members) {
        if (g.size() < 2) continue;
        Eigen::SelfAdjointEigenSolver<Mat> es(submatrix(Sigma, g, g));
        for (Index k = 0; k < es.eigenvectors().cols(); ++k) {
            Vec v = Vec::Zero(p);
            for (std::size_t a = 0; a < g.size(); ++a) v(g[a]) = es.eigenvectors()(a, k);
            dirs.push_back(std::move(v));
        }
    }
    for (Index i = 0; i < p; ++i) dirs.push_back(Vec::Unit(p, i));
    return dirs;
}

namespace {

class CoordinateSolver {
public:
    CoordinateSolver(const Mat& Sigma, const GroupPartition& part, const SolverConfig& cfg)
        : Sigma_(Sigma), part_(part), cfg_(cfg), m_(cfg.m), c_(kscale(cfg.m)) {
        const Index p = Sigma.rows();
        pos_.resize(p);
        for (const auto& g : part.members)
            for (std::size_t a = 0; a < g.size(); ++a) pos_[g[a]] = static_cast<Index>(a);
        S_ = 0.5 * solve_equi(Sigma, part, cfg.m);
        refactor();
    }

    SolveResult run() {
        SolveResult res;
        double obj = current_objective();
        res.objective_history.push_back(obj);
        const bool do_pca = cfg_.alternation != Alternation::cd_only;
        const bool do_cd = cfg_.alternation != Alternation::pca_only;
        std::vector<Vec> dirs;
        std::vector<int> dir_group;
        if (do_pca) {
            dirs = pca_directions(Sigma_, part_);
            for (const Vec& v : dirs) {
                Index first = 0;
                while (v(first) == 0.0) ++first;
                dir_group.push_back(part_.assignment[first]);
            }
        }

        for (int sweep = 1; sweep <= cfg_.max_sweeps; ++sweep) {
            const Mat S_before = S_;
            if (do_pca)
                for (std::size_t k = 0; k < dirs.size(); ++k) pca_step(dirs[k], dir_group[k]);
            if (do_cd) cd_pass();

            const double prev = obj;
            obj = current_objective();
            res.objective_history.push_back(obj);
            res.sweeps = sweep;
            if (cfg_.refactor_every > 0 && sweep % cfg_.refactor_every == 0) {
                const auto [fro, gap] = refactor_and_measure();
                res.drift_history.push_back(fro);
                res.reconstruction_history.push_back(gap);
                if (gap > cfg_.drift_tol)
                    throw FactorizationDrift("maintained factors drifted by " + std::to_string(gap));
            }
            const double change = (S_ - S_before).cwiseAbs().maxCoeff();
            if (cfg_.on_sweep) cfg_.on_sweep(SweepInfo{sweep, obj, change});
            if (std::abs(prev - obj) <= cfg_.tol * std::abs(prev) || change < cfg_.s_change_tol) {
                res.converged = true;
                break;
            }
        }
        res.S = S_;
        res.objective = obj;
        return res;
    }

private:
    const Mat& Sigma_;
    const GroupPartition& part_;
    const SolverConfig& cfg_;
    int m_;
    double c_;
    Mat S_;
    Mat LD_;
    std::vector<Mat> LS_;
    std::vector<Index> pos_;

    bool second_order() const { return cfg_.method == Method::MVR; }

    void refactor() {
        try {
            LD_ = cholesky_factorize(c_ * Sigma_ - S_).L;
            LS_.resize(part_.members.size());
            for (std::size_t g = 0; g < part_.members.size(); ++g) {
                const auto& mem = part_.members[g];
                LS_[g] = cholesky_factorize(submatrix(S_, mem, mem)).L;
            }
        } catch (const NotPositiveDefinite&) {
            throw SingularState("S or D lost positive definiteness");
        }
    }

    // Returns {Frobenius distance between maintained and fresh factors,
    // largest entrywise gap between the maintained products and the matrices
    // rebuilt from S relative to max|Sigma|}. Near the boundary the first can
    // be large while the second is at rounding level.
    std::pair<double, double> refactor_and_measure() {
        const Mat D = c_ * Sigma_ - S_;
        double gap = (LD_ * LD_.transpose() - D).cwiseAbs().maxCoeff();
        for (std::size_t g = 0; g < LS_.size(); ++g) {
            const auto& mem = part_.members[g];
            gap = std::max(gap, (LS_[g] * LS_[g].transpose() - submatrix(S_, mem, mem)).cwiseAbs().maxCoeff());
        }
        gap /= std::max(1e-300, Sigma_.cwiseAbs().maxCoeff());
        // A fresh factorization of a D on the boundary can fail where the
        // maintained one is still accurate; keep the latter then.
        const Mat LD_keep = LD_;
        const std::vector<Mat> LS_keep = LS_;
        try {
            refactor();
        } catch (const SingularState&) {
            LD_ = LD_keep;
            LS_ = LS_keep;
            return {std::numeric_limits<double>::quiet_NaN(), gap};
        }
        double fro2 = (LD_ - LD_keep).squaredNorm();
        for (std::size_t g = 0; g < LS_.size(); ++g) fro2 += (LS_[g] - LS_keep[g]).squaredNorm();
        return {std::sqrt(fro2), gap};
    }

    double current_objective() const {
        switch (cfg_.method) {
            case Method::ME: {
                double ls = 0.0;
                for (const Mat& L : LS_) ls += 2.0 * L.diagonal().array().log().sum();
                return -(2.0 * LD_.diagonal().array().log().sum() + m_ * ls);
            }
            case Method::MVR: {
                double ts = 0.0;
                for (const Mat& L : LS_)
                    ts += L.triangularView<Eigen::Lower>().solve(Mat::Identity(L.rows(), L.cols())).squaredNorm();
                const double td = LD_.triangularView<Eigen::Lower>()
                                      .solve(Mat::Identity(LD_.rows(), LD_.cols()))
                                      .squaredNorm();
                return static_cast<double>(m_) * m_ * ts + td;
            }
            default: return objective(Sigma_, S_, part_, m_, Method::SDP);
        }
    }

    double group_weight(int g) const {
        const double k = static_cast<double>(part_.members[g].size());
        return 1.0 / (k * k);
    }

    StepContext pair_context(Index i, Index j) const {
        const int g = part_.assignment[i];
        const Mat& C = LS_[g];
        StepContext ctx;
        QuadraticForms& q = ctx.q;
        const Vec ui = forward_unit(LD_, i);
        const Vec vi = forward_unit(C, pos_[i]);
        if (i == j) {
            q.a_ii = q.a_jj = q.a_ij = ui.squaredNorm();
            q.b_ii = q.b_jj = q.b_ij = vi.squaredNorm();
            if (second_order()) {
                const Vec xi = LD_.transpose().triangularView<Eigen::Upper>().solve(ui);
                const Vec yi = C.transpose().triangularView<Eigen::Upper>().solve(vi);
                q.d_ii = q.d_jj = q.d_ij = xi.squaredNorm();
                q.c_ii = q.c_jj = q.c_ij = yi.squaredNorm();
            }
        } else {
            const Vec uj = forward_unit(LD_, j);
            const Vec vj = forward_unit(C, pos_[j]);
            q.a_ii = ui.squaredNorm();
            q.a_jj = uj.squaredNorm();
            q.a_ij = ui.dot(uj);
            q.b_ii = vi.squaredNorm();
            q.b_jj = vj.squaredNorm();
            q.b_ij = vi.dot(vj);
            if (second_order()) {
                const Vec xi = LD_.transpose().triangularView<Eigen::Upper>().solve(ui);
                const Vec xj = LD_.transpose().triangularView<Eigen::Upper>().solve(uj);
                const Vec yi = C.transpose().triangularView<Eigen::Upper>().solve(vi);
                const Vec yj = C.transpose().triangularView<Eigen::Upper>().solve(vj);
                q.d_ii = xi.squaredNorm();
                q.d_jj = xj.squaredNorm();
                q.d_ij = xi.dot(xj);
                q.c_ii = yi.squaredNorm();
                q.c_jj = yj.squaredNorm();
                q.c_ij = yi.dot(yj);
            }
        }
        ctx.sigma_ij = Sigma_(i, j);
        ctx.s_ij = S_(i, j);
        ctx.group_weight = group_weight(g);
        return ctx;
    }

    // Applies S += sum_k sgn_k w_k w_k', D -= the same, in order. A step whose
    // downdate fails or cancels a pivot almost completely is rolled back and
    // reported as rejected.
    bool apply(int g, const std::vector<std::pair<Vec, double>>& terms, Index d_start,
               const std::vector<std::tuple<Index, Index, double>>& entries) {
        auto shift = [&](double sgn) {
            for (const auto& [i, j, v] : entries) {
                S_(i, j) += sgn * v;
                if (i != j) S_(j, i) += sgn * v;
            }
        };
        shift(1.0);
        double ratio = 1.0;
        try {
            for (const auto& [w, sgn] : terms) {
                Vec wl(LS_[g].rows());
                const auto& mem = part_.members[g];
                for (std::size_t a = 0; a < mem.size(); ++a) wl(a) = w(mem[a]);
                if (sgn > 0) {
                    rank1_update_inplace(LS_[g], wl, Rank1::update);
                    ratio = std::min(ratio, rank1_update_inplace(LD_, w, Rank1::downdate, d_start));
                } else {
                    rank1_update_inplace(LD_, w, Rank1::update, d_start);
                    ratio = std::min(ratio, rank1_update_inplace(LS_[g], wl, Rank1::downdate));
                }
            }
        } catch (const DowndateBreaksPositivity&) {
            ratio = 0.0;
        }
        if (ratio < kRejectRatio) {
            shift(-1.0);
            refactor();
            return false;
        }
        // Heavy cancellation amplifies rounding in the rest of the column;
        // rebuild the factors from S instead.
        if (ratio < kRefactorRatio) {
            try {
                refactor();
            } catch (const SingularState&) {
                shift(-1.0);
                refactor();
                return false;
            }
        }
        return true;
    }

    // Tries d, then halves it while the step is rejected and still improving.
    template <class Make>
    void backtrack(Method method, StepKind kind, const StepContext& ctx, double d, Make make) {
        for (int k = 0; k < kBacktracks && d != 0.0; ++k) {
            if (make(d)) return;
            d *= 0.5;
            if (!(step_loss_change(method, kind, ctx, m_, d) < 0.0)) return;
        }
    }

    void diag_step(Index j) {
        const StepContext ctx = pair_context(j, j);
        const FeasibleInterval iv = feasible_interval(ctx.q, StepKind::diag, cfg_.epsilon);
        const double d = optimal_delta(cfg_.method, StepKind::diag, ctx, m_, iv, cfg_.brent_tol, cfg_.brent_max_iter);
        const Index p = S_.rows();
        backtrack(cfg_.method, StepKind::diag, ctx, d, [&](double x) {
            const Vec w = std::sqrt(std::abs(x)) * Vec::Unit(p, j);
            return apply(part_.assignment[j], {{w, x > 0 ? 1.0 : -1.0}}, j, {{j, j, x}});
        });
    }

    void offdiag_step(Index i, Index j) {
        const StepContext ctx = pair_context(i, j);
        const FeasibleInterval iv = feasible_interval(ctx.q, StepKind::offdiag, cfg_.epsilon);
        const double d = optimal_delta(cfg_.method, StepKind::offdiag, ctx, m_, iv, cfg_.brent_tol, cfg_.brent_max_iter);
        const Index p = S_.rows();
        backtrack(cfg_.method, StepKind::offdiag, ctx, d, [&](double x) {
            const double s = std::sqrt(std::abs(x) / 2.0);
            const Vec u = s * (Vec::Unit(p, i) + Vec::Unit(p, j));
            const Vec v = s * (Vec::Unit(p, i) - Vec::Unit(p, j));
            const double sg = x > 0 ? 1.0 : -1.0;
            return apply(part_.assignment[i], {{u, sg}, {v, -sg}}, std::min(i, j), {{i, j, x}});
        });
    }

    void pca_step(const Vec& v, int g) {
        const auto& mem = part_.members[g];
        const Index start = mem.front();
        Vec vl(mem.size());
        for (std::size_t a = 0; a < mem.size(); ++a) vl(a) = v(mem[a]);
        const Mat& C = LS_[g];
        const Vec uf = forward_from(LD_, v, start);
        const Vec vf = C.triangularView<Eigen::Lower>().solve(vl);
        StepContext ctx;
        ctx.q.a_jj = uf.squaredNorm();
        ctx.q.b_jj = vf.squaredNorm();
        if (second_order()) {
            ctx.q.d_jj = LD_.transpose().triangularView<Eigen::Upper>().solve(uf).squaredNorm();
            ctx.q.c_jj = C.transpose().triangularView<Eigen::Upper>().solve(vf).squaredNorm();
        }
        Mat sig_b, s_b;
        if (cfg_.method == Method::SDP) {
            sig_b = submatrix(Sigma_, mem, mem);
            s_b = submatrix(S_, mem, mem);
            ctx.sigma_block = &sig_b;
            ctx.s_block = &s_b;
            ctx.v = &vl;
            ctx.group_weight = group_weight(g);
        }
        const FeasibleInterval iv = feasible_interval(ctx.q, StepKind::pca, cfg_.epsilon);
        const double d = optimal_delta(cfg_.method, StepKind::pca, ctx, m_, iv, cfg_.brent_tol, cfg_.brent_max_iter);
        backtrack(cfg_.method, StepKind::pca, ctx, d, [&](double x) {
            std::vector<std::tuple<Index, Index, double>> entries;
            for (std::size_t a = 0; a < mem.size(); ++a)
                for (std::size_t b = a; b < mem.size(); ++b) {
                    const double val = x * vl(a) * vl(b);
                    if (val != 0.0) entries.emplace_back(mem[a], mem[b], val);
                }
            return apply(g, {{std::sqrt(std::abs(x)) * v, x > 0 ? 1.0 : -1.0}}, start, entries);
        });
    }

    void cd_pass() {
        for (std::size_t g = 0; g < part_.members.size(); ++g) {
            const auto& mem = part_.members[g];
            for (Index j : mem) diag_step(j);
            if (mem.size() < 2) continue;
            for (std::size_t a = 0; a < mem.size(); ++a)
                for (std::size_t b = a + 1; b < mem.size(); ++b) offdiag_step(mem[a], mem[b]);
        }
    }
};

void check_inputs(const Mat& Sigma, const GroupPartition& partition, int m) {
    if (Sigma.rows() != Sigma.cols() || Sigma.rows() == 0) throw InputError("Sigma must be square and nonempty");
    if (partition.num_vars() != Sigma.rows()) throw InputError("partition size does not match Sigma");
    if (m < 1) throw InputError("m must be at least 1");
    if (!is_symmetric(Sigma, 1e-10 * std::max(1.0, Sigma.cwiseAbs().maxCoeff())))
        throw InputError("Sigma is not symmetric");
}

}  // namespace

SolveResult solve_group_knockoffs(const Mat& Sigma, const GroupPartition& partition, const SolverConfig& config) {
    check_inputs(Sigma, partition, config.m);
    if (config.method == Method::eSDP) throw InputError("solve_group_knockoffs: use solve_equi for eSDP");
    if (!(config.tol >= 0) || !(config.epsilon > 0)) throw InputError("solver tolerances must be positive");
    cholesky_factorize(Sigma);
    CoordinateSolver cs(Sigma, partition, config);
    return cs.run();
}

SolveResult solve(const Mat& Sigma, const GroupPartition& partition, const SolverConfig& config) {
    if (config.method != Method::eSDP) return solve_group_knockoffs(Sigma, partition, config);
    check_inputs(Sigma, partition, config.m);
    cholesky_factorize(Sigma);
    SolveResult r;
    r.S = solve_equi(Sigma, partition, config.m);
    r.converged = true;
    r.objective = objective(Sigma, r.S, partition, config.m, Method::SDP);
    r.objective_history.push_back(r.objective);
    return r;
}

StarProblem star_problem(const Mat& Sigma, const GroupPartition& partition, const KeySelection& keys) {
    StarProblem sp;
    sp.keys = keys.all_keys();
    sp.Sigma = submatrix(Sigma, sp.keys, sp.keys);
    std::vector<long> labels;
    for (Index k : sp.keys) labels.push_back(partition.assignment[k]);
    sp.partition = GroupPartition::from_labels(labels);
    return sp;
}

Mat extend_star_S(const Mat& Sigma, const GroupPartition& partition, const KeySelection& keys,
                  const Mat& S_star) {
    const Index p = Sigma.rows();
    const std::vector<Index> all = keys.all_keys();
    if (S_star.rows() != static_cast<Index>(all.size())) throw InputError("extend_star_S: S_star size mismatch");
    std::vector<Index> where(p, -1);
    for (std::size_t t = 0; t < all.size(); ++t) where[all[t]] = static_cast<Index>(t);

    Mat S = Mat::Zero(p, p);
    for (Index g = 0; g < partition.num_groups(); ++g) {
        const auto& K = keys.keys[g];
        const auto& T = keys.non_keys[g];
        std::vector<Index> Kl;
        for (Index k : K) Kl.push_back(where[k]);
        const Mat Ss = submatrix(S_star, Kl, Kl);
        for (std::size_t a = 0; a < K.size(); ++a)
            for (std::size_t b = 0; b < K.size(); ++b) S(K[a], K[b]) = Ss(a, b);
        if (T.empty()) continue;

        const Mat Skk = submatrix(Sigma, K, K);
        const Mat Skt = submatrix(Sigma, K, T);
        const Mat Stt = submatrix(Sigma, T, T);
        Eigen::LLT<Mat> llt(Skk);
        if (llt.info() != Eigen::Success) throw NotPositiveDefinite("key block of group " + std::to_string(g + 1));
        const Mat Q = -llt.solve(Skt);
        const Mat Skt_new = -Ss * Q;
        Mat Stt_new = Stt + Skt.transpose() * Q + Q.transpose() * Ss * Q;
        Stt_new = 0.5 * (Stt_new + Stt_new.transpose());
        for (std::size_t a = 0; a < K.size(); ++a)
            for (std::size_t b = 0; b < T.size(); ++b) S(K[a], T[b]) = S(T[b], K[a]) = Skt_new(a, b);
        for (std::size_t a = 0; a < T.size(); ++a)
            for (std::size_t b = 0; b < T.size(); ++b) S(T[a], T[b]) = Stt_new(a, b);
    }
    return S;
}

SolveResult solve_with_key_ci(const Mat& Sigma, const GroupPartition& partition, const KeySelection& keys,
                              const SolverConfig& config) {
    check_inputs(Sigma, partition, config.m);
    if (static_cast<Index>(keys.keys.size()) != partition.num_groups())
        throw InputError("key selection does not match partition");
    const StarProblem sp = star_problem(Sigma, partition, keys);
    SolveResult r = solve(sp.Sigma, sp.partition, config);
    r.S = extend_star_S(Sigma, partition, keys, r.S);
    return r;
}

std::vector<std::vector<Index>> independent_blocks(const Mat& Sigma, const GroupPartition& partition) {
    const Index p = Sigma.rows();
    std::vector<Index> parent(p);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](Index x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    auto unite = [&](Index a, Index b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };
    for (Index j = 0; j < p; ++j)
        for (Index i = j + 1; i < p; ++i)
            if (Sigma(i, j) != 0.0) unite(i, j);
    for (const auto& g : partition.members)
        for (Index v : g) unite(g.front(), v);
    std::vector<std::vector<Index>> blocks;
    std::vector<Index> slot(p, -1);
    for (Index i = 0; i < p; ++i) {
        const Index r = find(i);
        if (slot[r] < 0) {
            slot[r] = static_cast<Index>(blocks.size());
            blocks.emplace_back();
        }
        blocks[slot[r]].push_back(i);
    }
    return blocks;
}

SolveResult solve_blockwise(const Mat& Sigma, const GroupPartition& partition, const SolverConfig& config,
                            int threads) {
    check_inputs(Sigma, partition, config.m);
    const auto blocks = independent_blocks(Sigma, partition);
    // eSDP has a single global scale, so it is never split.
    if (blocks.size() <= 1 || config.method == Method::eSDP) return solve(Sigma, partition, config);

    std::vector<SolveResult> parts(blocks.size());
    std::vector<std::exception_ptr> errs(blocks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t b = next++; b < blocks.size(); b = next++) {
            try {
                std::vector<long> labels;
                for (Index v : blocks[b]) labels.push_back(partition.assignment[v]);
                SolverConfig cfg = config;
                cfg.on_sweep = nullptr;
                parts[b] = solve(submatrix(Sigma, blocks[b], blocks[b]), GroupPartition::from_labels(labels), cfg);
            } catch (...) {
                errs[b] = std::current_exception();
            }
        }
    };
    const int nt = std::max(1, std::min<int>(threads, static_cast<int>(blocks.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);

    SolveResult out;
    const Index p = Sigma.rows();
    out.S = Mat::Zero(p, p);
    out.converged = true;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& idx = blocks[b];
        for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t c = 0; c < idx.size(); ++c) out.S(idx[a], idx[c]) = parts[b].S(a, c);
        out.sweeps = std::max(out.sweeps, parts[b].sweeps);
        out.converged = out.converged && parts[b].converged;
        out.objective += parts[b].objective;
    }
    return out;
}

std::pair<double, double> feasibility_margins(const Mat& Sigma, const Mat& S, int m) {
    const Mat D = kscale(m) * Sigma - S;
    return {lambda_min(0.5 * (S + S.transpose())), lambda_min(0.5 * (D + D.transpose()))};
}

}  // namespace gk
