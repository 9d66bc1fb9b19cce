#include "gk/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "gk/errors.hpp"

namespace gk {

std::size_t GroupPartition::max_group_size() const {
    std::size_t mx = 0;
    for (const auto& g : members) mx = std::max(mx, g.size());
    return mx;
}

GroupPartition GroupPartition::from_labels(const std::vector<long>& labels) {
    GroupPartition gp;
    std::map<long, int> relabel;
    gp.assignment.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = relabel.find(labels[i]);
        if (it == relabel.end()) {
            it = relabel.emplace(labels[i], static_cast<int>(gp.members.size())).first;
            gp.members.emplace_back();
        }
        gp.assignment[i] = it->second;
        gp.members[it->second].push_back(static_cast<Index>(i));
    }
    gp.contiguous = true;
    for (const auto& g : gp.members)
        if (g.back() - g.front() + 1 != static_cast<Index>(g.size())) gp.contiguous = false;
    return gp;
}

GroupPartition GroupPartition::singletons(Index p) {
    std::vector<long> l(p);
    for (Index i = 0; i < p; ++i) l[i] = i;
    return from_labels(l);
}

GroupPartition GroupPartition::single_group(Index p) {
    return from_labels(std::vector<long>(p, 0));
}

GroupPartition GroupPartition::blocks(Index p, Index size) {
    std::vector<long> l(p);
    for (Index i = 0; i < p; ++i) l[i] = i / size;
    return from_labels(l);
}

std::vector<Index> KeySelection::all_keys() const {
    std::vector<Index> out;
    for (const auto& k : keys) out.insert(out.end(), k.begin(), k.end());
    std::sort(out.begin(), out.end());
    return out;
}

bool KeySelection::all_are_keys() const {
    for (const auto& nk : non_keys)
        if (!nk.empty()) return false;
    return true;
}

Mat submatrix(const Mat& A, const std::vector<Index>& rows, const std::vector<Index>& cols) {
    Mat out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = A(rows[i], cols[j]);
    return out;
}

namespace {

void check_square(const Mat& S, const char* who) {
    if (S.rows() != S.cols() || S.rows() == 0)
        throw InputError(std::string(who) + ": matrix must be square and nonempty");
}

}  // namespace

GroupPartition cluster_groups_hier(const Mat& Sigma, double cutoff, Linkage linkage,
                                   bool adjacency_constrained) {
    check_square(Sigma, "cluster_groups_hier");
    const Index p = Sigma.rows();
    const double h = 1.0 - cutoff;

    Mat d = 1.0 - Sigma.cwiseAbs().array();
    d.diagonal().setZero();
    d = 0.5 * (d + d.transpose());

    // Cluster slots are named by their smallest member; a merged cluster keeps
    // the lower slot. For the constrained variant, clusters are ranges and
    // `next` links each live slot to its right neighbour.
    std::vector<long> label(p);
    std::vector<double> size(p, 1.0);
    std::vector<char> alive(p, 1);
    std::vector<Index> next(p);
    for (Index i = 0; i < p; ++i) {
        label[i] = i;
        next[i] = i + 1;
    }

    for (Index step = 0; step + 1 < p; ++step) {
        double best = std::numeric_limits<double>::infinity();
        Index bi = -1, bj = -1;
        if (adjacency_constrained) {
            for (Index i = 0; i < p; ++i) {
                if (!alive[i] || next[i] >= p) continue;
                if (d(i, next[i]) < best) {
                    best = d(i, next[i]);
                    bi = i;
                    bj = next[i];
                }
            }
        } else {
            for (Index i = 0; i < p; ++i) {
                if (!alive[i]) continue;
                for (Index j = i + 1; j < p; ++j) {
                    if (alive[j] && d(i, j) < best) {
                        best = d(i, j);
                        bi = i;
                        bj = j;
                    }
                }
            }
        }
        if (bi < 0 || !(best <= h)) break;

        for (Index k = 0; k < p; ++k) {
            if (!alive[k] || k == bi || k == bj) continue;
            double v = 0.0;
            switch (linkage) {
                case Linkage::average:
                    v = (size[bi] * d(k, bi) + size[bj] * d(k, bj)) / (size[bi] + size[bj]);
                    break;
                case Linkage::single: v = std::min(d(k, bi), d(k, bj)); break;
                case Linkage::complete: v = std::max(d(k, bi), d(k, bj)); break;
            }
            d(k, bi) = d(bi, k) = v;
        }
        size[bi] += size[bj];
        alive[bj] = 0;
        next[bi] = next[bj];
        for (Index k = 0; k < p; ++k)
            if (label[k] == bj) label[k] = bi;
    }
    return GroupPartition::from_labels(label);
}

GroupPartition cluster_groups_id(const Mat& Sigma, double resid_threshold, bool contiguous) {
    check_square(Sigma, "cluster_groups_id");
    const Index p = Sigma.rows();
    const CholeskyFactor f = cholesky_factorize(Sigma);
    const Mat A = f.L.transpose();  // Sigma = A' A
    Eigen::ColPivHouseholderQR<Mat> qr(A);
    const auto& perm = qr.colsPermutation().indices();

    // Residuals c_j = Sigma_jj - Sigma_jS Sigma_SS^{-1} Sigma_Sj, maintained
    // by growing a Cholesky factor of Sigma_SS one column at a time.
    Vec resid = Sigma.diagonal();
    Mat W(p, p);  // row j holds L_S^{-1} Sigma_Sj
    std::vector<char> is_center(p, 0);
    std::vector<Index> centers;
    for (Index k = 0; k < p; ++k) {
        double worst = 0.0;
        for (Index j = 0; j < p; ++j)
            if (!is_center[j]) worst = std::max(worst, resid(j));
        if (!centers.empty() && worst < resid_threshold) break;

        const Index s = perm(k);
        const double piv = resid(s);
        is_center[s] = 1;
        centers.push_back(s);
        const Index kk = static_cast<Index>(centers.size()) - 1;
        if (piv <= 1e-14) {
            W.col(kk).setZero();
            continue;
        }
        const double sp = std::sqrt(piv);
        for (Index j = 0; j < p; ++j) {
            const double t = (Sigma(j, s) - W.row(j).head(kk).dot(W.row(s).head(kk))) / sp;
            W(j, kk) = t;
            resid(j) = std::max(0.0, resid(j) - t * t);
        }
        resid(s) = 0.0;
    }
    std::sort(centers.begin(), centers.end());

    std::vector<long> label(p, -1);
    for (Index c : centers) label[c] = c;
    if (!contiguous) {
        for (Index i = 0; i < p; ++i) {
            if (is_center[i]) continue;
            Index best = centers.front();
            for (Index c : centers)
                if (std::abs(Sigma(i, c)) > std::abs(Sigma(i, best))) best = c;
            label[i] = best;
        }
    } else {
        // Between consecutive centers, split the gap at the point that keeps
        // the most total |correlation| with the assigned center.
        for (Index i = 0; i < centers.front(); ++i) label[i] = centers.front();
        for (Index i = centers.back() + 1; i < p; ++i) label[i] = centers.back();
        for (std::size_t k = 0; k + 1 < centers.size(); ++k) {
            const Index lc = centers[k], rc = centers[k + 1];
            Index best_split = lc + 1;
            double best_score = -1.0;
            for (Index s = lc + 1; s <= rc; ++s) {
                double score = 0.0;
                for (Index i = lc + 1; i < rc; ++i)
                    score += std::abs(Sigma(i, i < s ? lc : rc));
                if (score > best_score) {
                    best_score = score;
                    best_split = s;
                }
            }
            for (Index i = lc + 1; i < rc; ++i) label[i] = i < best_split ? lc : rc;
        }
    }
    return GroupPartition::from_labels(label);
}

double key_explained_ratio(const Mat& Sigma, const GroupPartition& partition,
                           const std::vector<Index>& keys, int group) {
    const Index p = Sigma.rows();
    const auto& members = partition.members.at(group);
    std::vector<Index> dag;
    for (Index j : members)
        if (std::find(keys.begin(), keys.end(), j) == keys.end()) dag.push_back(j);
    if (dag.empty()) return 1.0;
    std::vector<Index> rest;
    for (Index j = 0; j < p; ++j)
        if (std::find(dag.begin(), dag.end(), j) == dag.end()) rest.push_back(j);

    double sum = 0.0;
    for (Index j : dag) {
        const std::vector<Index> jj{j};
        double eta = 0.0, zeta = 0.0;
        if (!keys.empty()) {
            const Mat Skk = submatrix(Sigma, keys, keys);
            const Vec s = submatrix(Sigma, keys, jj);
            eta = s.dot(Skk.ldlt().solve(s));
        }
        if (!rest.empty()) {
            const Mat Srr = submatrix(Sigma, rest, rest);
            const Vec s = submatrix(Sigma, rest, jj);
            zeta = s.dot(Srr.ldlt().solve(s));
        }
        sum += zeta <= 1e-12 ? 1.0 : std::clamp(eta / zeta, 0.0, 1.0);
    }
    return sum / static_cast<double>(dag.size());
}

KeySelection select_key_variables(const Mat& Sigma, const GroupPartition& partition, double c) {
    check_square(Sigma, "select_key_variables");
    if (partition.num_vars() != Sigma.rows()) throw InputError("select_key_variables: partition size mismatch");
    if (!(c >= 0.0 && c <= 1.0)) throw InputError("select_key_variables: c must lie in [0, 1]");

    KeySelection out;
    out.threshold_c = c;
    const Index G = partition.num_groups();
    out.keys.resize(G);
    out.non_keys.resize(G);
    if (c >= 1.0) {
        for (Index g = 0; g < G; ++g) out.keys[g] = partition.members[g];
        return out;
    }

    // zeta_j = Sigma_jj - [(Omega_{B,B})^{-1}]_jj with B the current non-keys.
    Mat Omega;
    {
        const CholeskyFactor f = cholesky_factorize(Sigma);
        Omega = f.L.transpose().triangularView<Eigen::Upper>().solve(
            f.L.triangularView<Eigen::Lower>().solve(Mat::Identity(Sigma.rows(), Sigma.cols())));
        Omega = 0.5 * (Omega + Omega.transpose());
    }

    for (Index g = 0; g < G; ++g) {
        const std::vector<Index>& mem = partition.members[g];
        const Index k = static_cast<Index>(mem.size());
        std::vector<char> is_key(k, 0);
        Mat W = Mat::Zero(k, k);  // row a: L_*^{-1} Sigma_{*, mem[a]}
        Index nkeys = 0;
        Vec eta = Vec::Zero(k);

        auto mean_ratio = [&]() {
            std::vector<Index> dag_local, dag;
            for (Index a = 0; a < k; ++a)
                if (!is_key[a]) {
                    dag_local.push_back(a);
                    dag.push_back(mem[a]);
                }
            if (dag.empty()) return 1.0;
            const Mat Ob = submatrix(Omega, dag, dag);
            const Mat Ob_inv = Ob.ldlt().solve(Mat::Identity(Ob.rows(), Ob.cols()));
            double sum = 0.0;
            for (std::size_t t = 0; t < dag.size(); ++t) {
                const double zeta = Sigma(dag[t], dag[t]) - Ob_inv(t, t);
                const double e = eta(dag_local[t]);
                sum += zeta <= 1e-12 ? 1.0 : std::clamp(e / zeta, 0.0, 1.0);
            }
            return sum / static_cast<double>(dag.size());
        };

        while (nkeys < k) {
            if (nkeys > 0 && mean_ratio() >= c) break;
            // Gain of adding candidate j: sum over other non-keys of the new eta.
            Index best = -1;
            double best_gain = -std::numeric_limits<double>::infinity();
            for (Index a = 0; a < k; ++a) {
                if (is_key[a]) continue;
                const double s_a = Sigma(mem[a], mem[a]) - W.row(a).head(nkeys).squaredNorm();
                double gain = 0.0;
                for (Index b = 0; b < k; ++b) {
                    if (is_key[b] || b == a) continue;
                    double add = 0.0;
                    if (s_a > 1e-12) {
                        const double t = Sigma(mem[b], mem[a]) - W.row(b).head(nkeys).dot(W.row(a).head(nkeys));
                        add = t * t / s_a;
                    }
                    gain += eta(b) + add;
                }
                if (gain > best_gain) {
                    best_gain = gain;
                    best = a;
                }
            }
            const Index a = best;
            const double s_a = Sigma(mem[a], mem[a]) - W.row(a).head(nkeys).squaredNorm();
            const double sq = std::sqrt(std::max(s_a, 0.0));
            for (Index b = 0; b < k; ++b) {
                double t = 0.0;
                if (sq > 1e-12)
                    t = (Sigma(mem[b], mem[a]) - W.row(b).head(nkeys).dot(W.row(a).head(nkeys))) / sq;
                W(b, nkeys) = t;
            }
            for (Index b = 0; b < k; ++b) eta(b) = W.row(b).head(nkeys + 1).squaredNorm();
            is_key[a] = 1;
            ++nkeys;
        }
        for (Index a = 0; a < k; ++a) (is_key[a] ? out.keys[g] : out.non_keys[g]).push_back(mem[a]);
    }
    return out;
}

}  // namespace gk
