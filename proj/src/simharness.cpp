#include "gk/simharness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "gk/errors.hpp"
#include "gk/inference.hpp"
#include "gk/rng.hpp"
#include "gk/sampler.hpp"

namespace gk {

CovKind parse_cov_kind(const std::string& s) {
    if (s == "block") return CovKind::block;
    if (s == "er_cov" || s == "er") return CovKind::er_cov;
    if (s == "er_prec") return CovKind::er_prec;
    if (s == "ar1") return CovKind::ar1;
    if (s == "ar1_corr") return CovKind::ar1_corr;
    if (s == "toeplitz") return CovKind::toeplitz;
    if (s == "gkci") return CovKind::gkci;
    throw InputError("unknown cov_kind '" + s + "'");
}

std::string cov_kind_name(CovKind k) {
    switch (k) {
        case CovKind::block: return "block";
        case CovKind::er_cov: return "er_cov";
        case CovKind::er_prec: return "er_prec";
        case CovKind::ar1: return "ar1";
        case CovKind::ar1_corr: return "ar1_corr";
        case CovKind::toeplitz: return "toeplitz";
        case CovKind::gkci: return "gkci";
    }
    return "?";
}

namespace {

Mat er_blocks(Index p, const CovParams& prm, Rng& rng) {
    std::uniform_real_distribution<double> U(0.3, 0.9);
    std::bernoulli_distribution coin(0.5), edge(prm.er_prob);
    Mat V = Mat::Zero(p, p);
    for (Index s = 0; s < p; s += prm.er_block) {
        const Index e = std::min(p, s + prm.er_block);
        for (Index i = s; i < e; ++i) {
            V(i, i) = 1.0;
            for (Index j = i + 1; j < e; ++j) {
                const double w = (coin(rng) ? 1.0 : -1.0) * U(rng);
                const double v = edge(rng) ? w : 0.0;
                V(i, j) = V(j, i) = v;
            }
        }
    }
    return V + (std::abs(lambda_min(V)) + 0.1) * Mat::Identity(p, p);
}

Mat ar1_cov(Index p, const CovParams& prm, Rng& rng) {
    std::gamma_distribution<double> ga(prm.ar_alpha, 1.0), gb(prm.ar_beta, 1.0);
    Vec cum = Vec::Zero(p);
    for (Index j = 1; j < p; ++j) {
        const double a = ga(rng), b = gb(rng);
        const double rho = std::clamp(a / (a + b), 1e-12, 1.0);
        cum(j) = cum(j - 1) + std::log(rho);
    }
    Mat S(p, p);
    for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) S(i, j) = std::exp(-std::abs(cum(i) - cum(j)));
    return S;
}

// Keys follow an AR(1) chain; each non-key is a combination of its own
// group's keys plus independent noise, so groups are independent of each
// other given the keys.
Mat gkci_cov(Index p, const CovParams& prm, Rng& rng) {
    std::uniform_real_distribution<double> load(0.4, 1.0), noise(0.1, 0.4);
    std::vector<Index> keys, group(p);
    for (Index i = 0; i < p; ++i) {
        group[i] = i / prm.ci_group;
        if (i % prm.ci_group < prm.ci_keys) keys.push_back(i);
    }
    const Index k = static_cast<Index>(keys.size());
    // loadings: X = M * [X*; E], with X* ~ N(0, Ks) and E ~ N(0, Psi)
    Mat Ks(k, k);
    for (Index a = 0; a < k; ++a)
        for (Index b = 0; b < k; ++b) Ks(a, b) = std::pow(prm.ci_key_rho, static_cast<double>(std::abs(a - b)));
    Mat M = Mat::Zero(p, k);
    Vec psi = Vec::Zero(p);
    Index t = 0;
    for (Index i = 0; i < p; ++i) {
        if (t < k && keys[t] == i) {
            M(i, t++) = 1.0;
            continue;
        }
        for (Index a = 0; a < k; ++a)
            if (group[keys[a]] == group[i]) M(i, a) = load(rng);
        psi(i) = noise(rng);
    }
    Mat S = M * Ks * M.transpose();
    S.diagonal() += psi;
    return S;
}

}  // namespace

Mat gen_cov(CovKind kind, Index p, const CovParams& prm, std::uint64_t seed) {
    if (p < 2) throw InputError("gen_cov: p must be at least 2");
    Rng rng(seed);
    Mat S(p, p);
    switch (kind) {
        case CovKind::block:
            for (Index i = 0; i < p; ++i)
                for (Index j = 0; j < p; ++j)
                    S(i, j) = i == j ? 1.0
                              : (i / prm.block_size == j / prm.block_size) ? prm.rho
                                                                           : prm.gamma * prm.rho;
            break;
        case CovKind::er_cov: S = er_blocks(p, prm, rng); break;
        case CovKind::er_prec: {
            const Mat V = er_blocks(p, prm, rng);
            S = V.llt().solve(Mat::Identity(p, p));
            break;
        }
        case CovKind::ar1:
        case CovKind::ar1_corr: S = ar1_cov(p, prm, rng); break;
        case CovKind::toeplitz:
            for (Index i = 0; i < p; ++i)
                for (Index j = 0; j < p; ++j) S(i, j) = std::pow(prm.rho, static_cast<double>(std::abs(i - j)));
            break;
        case CovKind::gkci: S = gkci_cov(p, prm, rng); break;
    }
    S = cov_to_cor(0.5 * (S + S.transpose()));
    const double lmin = lambda_min(S);
    if (lmin < prm.min_eig) {
        S.diagonal().array() += prm.min_eig - lmin;
        S = cov_to_cor(S);
    }
    return S;
}

SimData gen_data(const Mat& Sigma, Index n, Index k, double effect_sd, Placement placement, std::uint64_t seed) {
    const Index p = Sigma.rows();
    if (k < 0 || k > p) throw InputError("gen_data: k must lie in [0, p]");
    Rng rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    const CholeskyFactor f = cholesky_factorize(Sigma);
    Mat Z(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) Z(i, j) = N(rng);
    SimData d;
    d.X = Z * f.L.transpose();
    d.beta = Vec::Zero(p);
    if (k > 0) {
        if (placement == Placement::contiguous) {
            std::uniform_int_distribution<Index> start(0, p - k);
            const Index s = start(rng);
            for (Index j = s; j < s + k; ++j) d.causal.push_back(j);
        } else {
            std::vector<Index> idx(p);
            std::iota(idx.begin(), idx.end(), 0);
            for (Index j = 0; j < k; ++j) {
                std::uniform_int_distribution<Index> pick(j, p - 1);
                std::swap(idx[j], idx[pick(rng)]);
            }
            d.causal.assign(idx.begin(), idx.begin() + k);
            std::sort(d.causal.begin(), d.causal.end());
        }
        for (Index j : d.causal) d.beta(j) = effect_sd * N(rng);
    }
    d.y = d.X * d.beta;
    for (Index i = 0; i < n; ++i) d.y(i) += N(rng);
    return d;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double to_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw InputError("spec: bad value for " + key + ": '" + v + "'");
    return x;
}

long to_int(const std::string& key, const std::string& v) {
    const double x = to_real(key, v);
    if (x != std::floor(x)) throw InputError("spec: " + key + " must be an integer");
    return static_cast<long>(x);
}

}  // namespace

ScenarioSpec parse_scenario(const std::string& text) {
    ScenarioSpec s;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InputError("spec line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
        if (key == "cov_kind") s.cov_kind = parse_cov_kind(v);
        else if (key == "p") s.p = to_int(key, v);
        else if (key == "n") s.n = to_int(key, v);
        else if (key == "k") s.k = to_int(key, v);
        else if (key == "effect_sd") s.effect_sd = to_real(key, v);
        else if (key == "m") s.m = static_cast<int>(to_int(key, v));
        else if (key == "method") s.method = parse_method(v);
        else if (key == "q") s.q = to_real(key, v);
        else if (key == "c") s.c = to_real(key, v);
        else if (key == "replicates") s.replicates = static_cast<int>(to_int(key, v));
        else if (key == "seed") s.seed = static_cast<std::uint64_t>(to_int(key, v));
        else if (key == "cutoff") s.cutoff = to_real(key, v);
        else if (key == "lambda_count") s.lambda_count = static_cast<int>(to_int(key, v));
        else if (key == "lambda_ratio") s.lambda_ratio = to_real(key, v);
        else if (key == "placement") {
            if (v == "random") s.placement = Placement::random;
            else if (v == "contiguous") s.placement = Placement::contiguous;
            else throw InputError("spec: placement must be random or contiguous");
            s.placement_set = true;
        }
        else if (key == "threads") s.threads = static_cast<int>(to_int(key, v));
        else if (key == "max_sweeps") s.max_sweeps = static_cast<int>(to_int(key, v));
        else if (key == "solver_tol") s.solver_tol = to_real(key, v);
        else if (key == "block_size") s.cov.block_size = to_int(key, v);
        else if (key == "rho") s.cov.rho = to_real(key, v);
        else if (key == "gamma") s.cov.gamma = to_real(key, v);
        else if (key == "er_block") s.cov.er_block = to_int(key, v);
        else if (key == "er_prob") s.cov.er_prob = to_real(key, v);
        else if (key == "ci_group") s.cov.ci_group = to_int(key, v);
        else if (key == "ci_keys") s.cov.ci_keys = to_int(key, v);
        else if (key == "ci_key_rho") s.cov.ci_key_rho = to_real(key, v);
        else throw InputError("spec: unknown key '" + key + "'");
    }
    if (s.p < 2 || s.n < 2) throw InputError("spec: need p >= 2 and n >= 2");
    if (s.k < 0 || s.k > s.p) throw InputError("spec: need 0 <= k <= p");
    if (!(s.q > 0 && s.q < 1)) throw InputError("spec: q must lie in (0, 1)");
    if (!(s.c >= 0 && s.c <= 1)) throw InputError("spec: c must lie in [0, 1]");
    if (s.m < 1 || s.replicates < 1) throw InputError("spec: need m >= 1 and replicates >= 1");
    if (!s.placement_set && s.cov_kind == CovKind::ar1_corr) s.placement = Placement::contiguous;
    return s;
}

ScenarioSpec read_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

int worker_count(int requested) {
    int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("GK_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return std::max(1, n);
}

namespace {

// Knockoffs for the rows of X, through the key route when c < 1.
Mat make_knockoffs(const Mat& Sigma, const Mat& X, const GroupPartition& groups, const ScenarioSpec& spec,
                   std::uint64_t seed, double* solve_seconds) {
    SolverConfig cfg;
    cfg.method = spec.method;
    cfg.m = spec.m;
    cfg.max_sweeps = spec.max_sweeps;
    cfg.tol = spec.solver_tol;
    const auto t0 = std::chrono::steady_clock::now();
    if (spec.c < 1.0) {
        const KeySelection keys = select_key_variables(Sigma, groups, spec.c);
        const SolveResult r = solve_with_key_ci(Sigma, groups, keys, cfg);
        *solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const StarProblem sp = star_problem(Sigma, groups, keys);
        const Mat S_star = submatrix(r.S, sp.keys, sp.keys);
        const KnockoffModel star = build_model(sp.Sigma, S_star, spec.m);
        const CIKnockoffSampler smp = build_ci_sampler(Sigma, groups, keys, star);
        return sample_ci_knockoffs_rows(X, smp, seed);
    }
    const SolveResult r = solve(Sigma, groups, cfg);
    *solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const KnockoffModel mod = build_model(Sigma, r.S, spec.m);
    return sample_knockoffs_rows(X, mod, seed);
}

}  // namespace

ReplicateResult run_replicate(const ScenarioSpec& spec, int replicate) {
    ReplicateResult rr;
    rr.replicate = replicate;
    const std::uint64_t base = derive_seed(spec.seed, static_cast<std::uint64_t>(replicate));
    try {
        Mat Sigma = gen_cov(spec.cov_kind, spec.p, spec.cov, derive_seed(base, 1));
        const SimData data = gen_data(Sigma, spec.n, spec.k, spec.effect_sd, spec.placement, derive_seed(base, 2));
        const Index p = spec.p, n = spec.n;

        Mat Xc = data.X.rowwise() - data.X.colwise().mean();
        const Mat emp = cov_to_cor(Xc.transpose() * Xc / static_cast<double>(n - 1));
        const GroupPartition groups = cluster_groups_hier(emp, spec.cutoff, Linkage::average);

        Mat Xk;
        try {
            Xk = make_knockoffs(Sigma, data.X, groups, spec, derive_seed(base, 3), &rr.solve_seconds);
        } catch (const NumericalError&) {
            Sigma = regularize_to_pd(Sigma);
            rr.regularized = true;
            Xk = make_knockoffs(Sigma, data.X, groups, spec, derive_seed(base, 3), &rr.solve_seconds);
        }

        Mat Xf(n, p * (spec.m + 1));
        Xf << data.X, Xk;
        const Mat A = Xf.transpose() * Xf / static_cast<double>(n);
        const Vec r = Xf.transpose() * data.y / static_cast<double>(n);
        const double lmax = r.cwiseAbs().maxCoeff();
        Vec beta = Vec::Zero(A.rows());
        if (lmax > 0) {
            const auto grid = lambda_grid(lmax, lmax * spec.lambda_ratio, spec.lambda_count);
            double lam = grid.front();
            try {
                lam = pseudo_validate(r, A, static_cast<double>(n), grid, derive_seed(base, 4)).lambda;
            } catch (const AllZeroPaths&) {
                lam = grid.front();
            }
            beta = lasso_cd(A, r, lam);
        }
        const GroupScores sc = group_scores(beta, groups, spec.m);
        const WStatistics w = knockoff_W(sc);
        const SelectionResult sel = multiple_knockoff_filter(w.W, w.kappa, w.T, spec.q, spec.m);

        std::vector<int> causal_groups;
        for (Index j : data.causal) causal_groups.push_back(groups.assignment[j]);
        std::sort(causal_groups.begin(), causal_groups.end());
        causal_groups.erase(std::unique(causal_groups.begin(), causal_groups.end()), causal_groups.end());
        const Metrics mt = power_fdr(sel.selected, causal_groups, static_cast<int>(groups.num_groups()));
        rr.power = mt.power;
        rr.fdp = mt.fdp;
        rr.selected = static_cast<int>(sel.selected.size());
        rr.groups = static_cast<int>(groups.num_groups());
        rr.causal_groups = static_cast<int>(causal_groups.size());
        rr.ok = true;
    } catch (const std::exception& e) {
        rr.ok = false;
        rr.error = e.what();
    }
    return rr;
}

ExperimentResult run_experiment(const ScenarioSpec& spec) {
    ExperimentResult res;
    res.spec = spec;
    res.replicates.resize(spec.replicates);
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int r = next++; r < spec.replicates; r = next++) res.replicates[r] = run_replicate(spec, r);
    };
    const int nt = std::min(worker_count(spec.threads), spec.replicates);
    std::vector<std::thread> pool;
    for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<double> pw, fd, ts;
    for (const auto& rr : res.replicates) {
        if (!rr.ok) {
            ++res.failed;
            continue;
        }
        pw.push_back(rr.power);
        fd.push_back(rr.fdp);
        ts.push_back(rr.solve_seconds);
    }
    auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
        mean = se = 0.0;
        if (v.empty()) return;
        mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        if (v.size() < 2) return;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        se = std::sqrt(ss / (v.size() - 1) / v.size());
    };
    double dummy;
    mean_se(pw, res.power_mean, res.power_se);
    mean_se(fd, res.fdr_mean, res.fdr_se);
    mean_se(ts, res.solve_seconds_mean, dummy);
    return res;
}

std::string experiment_csv(const ExperimentResult& res) {
    const ScenarioSpec& s = res.spec;
    std::ostringstream o;
    o << std::setprecision(10);
    o << "cov_kind,method,p,n,k,m,q,c,replicates,failed,power_mean,power_se,fdr_mean,fdr_se\n";
    o << cov_kind_name(s.cov_kind) << ',' << method_name(s.method) << ',' << s.p << ',' << s.n << ',' << s.k << ','
      << s.m << ',' << s.q << ',' << s.c << ',' << s.replicates << ',' << res.failed << ',' << res.power_mean << ','
      << res.power_se << ',' << res.fdr_mean << ',' << res.fdr_se << '\n';
    o << '\n' << "replicate,status,power,fdp,selected,groups,causal_groups,regularized,error\n";
    for (const auto& r : res.replicates) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        o << r.replicate + 1 << ',' << (r.ok ? "ok" : "failed") << ',' << r.power << ',' << r.fdp << ','
          << r.selected << ',' << r.groups << ',' << r.causal_groups << ',' << (r.regularized ? 1 : 0) << ','
          << err << '\n';
    }
    return o.str();
}

void write_experiment(const std::string& path, const ExperimentResult& res) {
    {
        std::ofstream out(path);
        if (!out) throw InputError("cannot write " + path);
        out << experiment_csv(res);
    }
    std::ofstream t(path + ".timing.csv");
    if (!t) throw InputError("cannot write " + path + ".timing.csv");
    t << std::setprecision(6) << "replicate,solve_seconds\n";
    for (const auto& r : res.replicates) t << r.replicate + 1 << ',' << r.solve_seconds << '\n';
    t << "mean," << res.solve_seconds_mean << '\n';
}

}  // namespace gk
