#include "gk/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "gk/errors.hpp"
#include "gk/rng.hpp"

namespace gk {

namespace {

double soft(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

double kkt_from_gradient(const Vec& g, const Vec& beta, double lambda) {
    double worst = 0.0;
    for (Index j = 0; j < beta.size(); ++j) {
        const double v = beta(j) == 0.0 ? std::max(0.0, std::abs(g(j)) - lambda)
                                        : std::abs(g(j) - lambda * (beta(j) > 0 ? 1.0 : -1.0));
        worst = std::max(worst, v);
    }
    return worst;
}

}  // namespace

double lasso_kkt_residual(const Mat& A, const Vec& r, const Vec& beta, double lambda) {
    return kkt_from_gradient(r - A * beta, beta, lambda);
}

Vec lasso_cd(const Mat& A, const Vec& r, double lambda, const LassoOptions& opt, const Vec* warm_start) {
    const Index p = A.rows();
    if (A.cols() != p || r.size() != p) throw InputError("lasso_cd: shape mismatch");
    if (!(lambda >= 0)) throw InputError("lasso_cd: lambda must be nonnegative");
    Vec beta = warm_start ? *warm_start : Vec::Zero(p);
    if (beta.size() != p) throw InputError("lasso_cd: warm start has the wrong length");
    Vec g = r - A * beta;  // negative gradient of the smooth part

    auto coord = [&](Index j) {
        const double ajj = A(j, j);
        double nb = 0.0;
        if (ajj > 0.0) nb = soft(g(j) + ajj * beta(j), lambda) / ajj;
        const double d = nb - beta(j);
        if (d != 0.0) {
            g.noalias() -= d * A.col(j);
            beta(j) = nb;
        }
        return std::abs(d) * std::max(ajj, 1e-300);
    };

    // Exact solve on the current support and signs; used only if it passes KKT.
    auto polish = [&](const std::vector<Index>& act, Vec& out) {
        const Index k = static_cast<Index>(act.size());
        Mat M(k, k);
        Vec rhs(k);
        for (Index a = 0; a < k; ++a) {
            rhs(a) = r(act[a]) - lambda * (beta(act[a]) > 0 ? 1.0 : -1.0);
            for (Index b = 0; b < k; ++b) M(a, b) = A(act[a], act[b]);
        }
        const Eigen::LDLT<Mat> ldlt(M);
        if (ldlt.info() != Eigen::Success) return false;
        const Vec x = ldlt.solve(rhs);
        if (!x.allFinite()) return false;
        out = Vec::Zero(p);
        for (Index a = 0; a < k; ++a) {
            if ((x(a) > 0) != (beta(act[a]) > 0)) return false;
            out(act[a]) = x(a);
        }
        return kkt_from_gradient(r - A * out, out, lambda) <= opt.tol;
    };

    std::vector<Index> active;
    Vec polished;
    for (int it = 0; it < opt.max_iter; ++it) {
        for (Index j = 0; j < p; ++j) coord(j);
        g = r - A * beta;
        if (kkt_from_gradient(g, beta, lambda) <= opt.tol) return beta;

        active.clear();
        for (Index j = 0; j < p; ++j)
            if (beta(j) != 0.0) active.push_back(j);
        if (!active.empty() && polish(active, polished)) return polished;
        for (int inner = 0; inner < 1000 && !active.empty(); ++inner) {
            double worst = 0.0;
            for (Index j : active) worst = std::max(worst, coord(j));
            if (worst <= 0.1 * opt.tol) break;
            if (inner % 64 == 63) g = r - A * beta;
        }
    }
    throw NoConvergence("lasso_cd: KKT residual still " +
                        std::to_string(lasso_kkt_residual(A, r, beta, lambda)) + " after " +
                        std::to_string(opt.max_iter) + " passes");
}

std::vector<double> lambda_grid(double lambda_max, double lambda_min, int count) {
    if (count < 1 || !(lambda_max > 0) || !(lambda_min > 0)) throw InputError("lambda_grid: bad arguments");
    std::vector<double> g(count);
    if (count == 1) {
        g[0] = lambda_max;
        return g;
    }
    const double a = std::log(lambda_max), b = std::log(lambda_min);
    for (int k = 0; k < count; ++k) g[k] = std::exp(a + (b - a) * k / (count - 1));
    return g;
}

PseudoSplit pseudo_split(const Vec& r, const Mat& A, double n, std::uint64_t seed, double train_frac) {
    if (!(n > 0)) throw InputError("pseudo_split: n must be positive");
    const Index p = r.size();
    PseudoSplit s;
    s.n_train = train_frac * n;
    s.n_valid = n - s.n_train;
    Mat root;
    Eigen::LLT<Mat> llt(A);
    if (llt.info() == Eigen::Success) {
        root = llt.matrixL();
    } else {
        Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()));
        root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
    Rng rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    Vec z(p);
    for (Index k = 0; k < p; ++k) z(k) = N(rng);
    s.r_train = r + std::sqrt(s.n_valid / (n * s.n_train)) * (root * z);
    s.r_valid = (n * r - s.n_train * s.r_train) / s.n_valid;
    return s;
}

PseudoValidation pseudo_validate(const Vec& r, const Mat& A, double n, const std::vector<double>& grid,
                                 std::uint64_t seed, const LassoOptions& opt) {
    if (grid.empty()) throw InputError("pseudo_validate: empty lambda grid");
    const PseudoSplit sp = pseudo_split(r, A, n, seed);
    PseudoValidation out;
    out.grid = grid;
    out.scores.assign(grid.size(), -std::numeric_limits<double>::infinity());

    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] > grid[b]; });
    Vec warm = Vec::Zero(r.size());
    bool any = false;
    for (std::size_t k : order) {
        warm = lasso_cd(A, sp.r_train, grid[k], opt, &warm);
        const double quad = warm.dot(A * warm);
        if (warm.cwiseAbs().maxCoeff() == 0.0 || !(quad > 0)) continue;
        out.scores[k] = warm.dot(sp.r_valid) / std::sqrt(quad);
        any = true;
    }
    if (!any) throw AllZeroPaths("every lambda in the grid gives beta = 0");
    std::size_t best = 0;
    for (std::size_t k = 1; k < grid.size(); ++k)
        if (out.scores[k] > out.scores[best]) best = k;
    out.lambda = grid[best];
    return out;
}

GroupScores group_scores(const Vec& beta, const GroupPartition& partition, int m) {
    const Index p = partition.num_vars();
    if (beta.size() != p * (m + 1)) throw InputError("group_scores: beta must have p(m+1) entries");
    const Index G = partition.num_groups();
    GroupScores s{Vec::Zero(G), Mat::Zero(G, m)};
    for (Index i = 0; i < p; ++i) {
        const int g = partition.assignment[i];
        s.Z(g) += std::abs(beta(i));
        for (int l = 0; l < m; ++l) s.Zk(g, l) += std::abs(beta((l + 1) * p + i));
    }
    return s;
}

GroupScores marginal_group_scores(const Mat& X, const Mat& Xk, const Vec& y, const GroupPartition& partition) {
    const Index n = X.rows(), p = X.cols();
    if (Xk.rows() != n || y.size() != n || p == 0 || Xk.cols() % p != 0)
        throw InputError("marginal_group_scores: shape mismatch");
    const int m = static_cast<int>(Xk.cols() / p);
    auto standardize = [](Vec v) {
        v.array() -= v.mean();
        const double sd = std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
        if (sd > 0) v /= sd;
        return v;
    };
    const Vec ys = standardize(y);
    auto stat = [&](const Vec& col) {
        const double t = standardize(col).dot(ys);
        return t * t / static_cast<double>(n);
    };
    Vec beta(p * (m + 1));
    for (Index i = 0; i < p; ++i) beta(i) = stat(X.col(i));
    for (Index c = 0; c < Xk.cols(); ++c) beta(p + c) = stat(Xk.col(c));
    return group_scores(beta, partition, m);
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size();
    return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

WStatistics knockoff_W(const GroupScores& scores) {
    const Index G = scores.Z.size();
    const Index m = scores.Zk.cols();
    if (m < 1 || scores.Zk.rows() != G) throw InputError("knockoff_W: need at least one knockoff copy");
    WStatistics w{Vec::Zero(G), std::vector<int>(G, 0), Vec::Zero(G)};
    for (Index g = 0; g < G; ++g) {
        std::vector<double> copies(m);
        Index arg = 0;
        for (Index l = 0; l < m; ++l) {
            copies[l] = scores.Zk(g, l);
            if (copies[l] > copies[arg]) arg = l;
        }
        const double z = scores.Z(g), mx = copies[arg];
        const double med = median(copies);
        if (z >= mx) {
            w.kappa[g] = 0;
            w.W(g) = z - med;
            w.T(g) = z - med;
        } else {
            w.kappa[g] = static_cast<int>(arg) + 1;
            w.W(g) = 0.0;
            std::vector<double> rest{z};
            for (Index l = 0; l < m; ++l)
                if (l != arg) rest.push_back(copies[l]);
            w.T(g) = mx - median(rest);
        }
    }
    return w;
}

SelectionResult multiple_knockoff_filter(const Vec& W, const std::vector<int>& kappa, const Vec& T, double q, int m) {
    const Index G = T.size();
    if (static_cast<Index>(kappa.size()) != G || W.size() != G) throw InputError("filter: length mismatch");
    if (!(q > 0 && q < 1)) throw InputError("filter: q must lie in (0, 1)");
    if (m < 1) throw InputError("filter: m must be at least 1");
    SelectionResult res;
    res.W = W;
    res.kappa = kappa;
    res.T = T;
    res.q = q;
    res.tau = std::numeric_limits<double>::infinity();

    std::vector<double> cand;
    for (Index g = 0; g < G; ++g)
        if (T(g) > 0) cand.push_back(T(g));
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    for (double t : cand) {
        double num = 1.0, den = 0.0;
        for (Index g = 0; g < G; ++g) {
            if (T(g) < t) continue;
            if (kappa[g] >= 1)
                num += 1.0;
            else
                den += 1.0;
        }
        if (num / m / std::max(1.0, den) <= q) {
            res.tau = t;
            break;
        }
    }
    for (Index g = 0; g < G; ++g)
        if (kappa[g] == 0 && T(g) >= res.tau) res.selected.push_back(static_cast<int>(g));
    return res;
}

Metrics power_fdr(const std::vector<int>& selected, const std::vector<int>& causal_groups, int total_groups) {
    (void)total_groups;
    Metrics mt;
    std::size_t hit = 0;
    for (int s : selected)
        if (std::find(causal_groups.begin(), causal_groups.end(), s) != causal_groups.end()) ++hit;
    mt.power = causal_groups.empty() ? 0.0 : static_cast<double>(hit) / causal_groups.size();
    mt.fdp = static_cast<double>(selected.size() - hit) / std::max<std::size_t>(1, selected.size());
    return mt;
}

}  // namespace gk
