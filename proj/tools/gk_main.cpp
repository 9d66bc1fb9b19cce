// gk: group knockoff construction and selection from the command line.
//
// Exit codes: 0 success, 2 bad input or usage, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gk/errors.hpp"
#include "gk/grouping.hpp"
#include "gk/inference.hpp"
#include "gk/matrix_io.hpp"
#include "gk/sampler.hpp"
#include "gk/simharness.hpp"
#include "gk/solver.hpp"

namespace {

using namespace gk;

Mat read_sigma(const std::string& path) {
    Mat S = read_matrix(path);
    if (S.rows() != S.cols()) throw InputError(path + ": Sigma must be square");
    if (!is_symmetric(S, 1e-8 * std::max(1.0, S.cwiseAbs().maxCoeff()))) throw InputError(path + ": Sigma is not symmetric");
    return 0.5 * (S + S.transpose());
}

GroupPartition read_groups(const std::string& path, Index p) {
    const auto ids = read_integers(path);
    if (static_cast<Index>(ids.size()) != p)
        throw InputError(path + ": expected " + std::to_string(p) + " group ids, found " + std::to_string(ids.size()));
    for (long g : ids)
        if (g < 1) throw InputError(path + ": group ids are 1-based");
    return GroupPartition::from_labels(ids);
}

void write_groups(const std::string& path, const GroupPartition& gp) {
    std::vector<long> ids;
    for (int g : gp.assignment) ids.push_back(g + 1);
    if (path.empty()) {
        for (long g : ids) std::cout << g << '\n';
    } else {
        write_integers(path, ids);
    }
}

KeySelection read_keys(const std::string& path, const GroupPartition& gp) {
    const auto idx = read_integers(path);
    const Index p = gp.num_vars();
    std::vector<char> is_key(p, 0);
    for (long k : idx) {
        if (k < 1 || k > p) throw InputError(path + ": key index " + std::to_string(k) + " out of range");
        is_key[k - 1] = 1;
    }
    KeySelection ks;
    ks.threshold_c = -1;
    ks.keys.resize(gp.num_groups());
    ks.non_keys.resize(gp.num_groups());
    for (Index g = 0; g < gp.num_groups(); ++g) {
        for (Index v : gp.members[g]) (is_key[v] ? ks.keys[g] : ks.non_keys[g]).push_back(v);
        if (ks.keys[g].empty()) throw InputError(path + ": group " + std::to_string(g + 1) + " has no key");
    }
    return ks;
}

Vec read_vector(const std::string& path) {
    const auto v = read_reals(path);
    if (v.empty()) throw InputError(path + ": empty vector");
    return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

void write_vector(const std::string& path, const Vec& v) {
    std::vector<double> out(v.data(), v.data() + v.size());
    if (path.empty()) {
        std::cout << std::setprecision(17);
        for (double x : out) std::cout << x << '\n';
    } else {
        write_reals(path, out);
    }
}

int run(int argc, char** argv) {
    CLI::App app{"Group knockoff construction and selection"};
    app.require_subcommand(1);

    // groups
    auto* c_groups = app.add_subcommand("groups", "partition variables into groups");
    std::string g_sigma, g_out, g_linkage = "average", g_method = "hier";
    double g_cutoff = 0.5, g_resid = 0.25;
    bool g_contig = false;
    c_groups->add_option("--sigma", g_sigma, "correlation matrix")->required();
    c_groups->add_option("--cutoff", g_cutoff, "correlation cutoff");
    c_groups->add_option("--linkage", g_linkage, "average|single|complete");
    c_groups->add_flag("--contiguous", g_contig, "only merge adjacent clusters");
    c_groups->add_option("--method", g_method, "hier|id");
    c_groups->add_option("--resid", g_resid, "residual threshold for --method id");
    c_groups->add_option("--out", g_out, "groups file (default stdout)");

    // keys
    auto* c_keys = app.add_subcommand("keys", "select key variables per group");
    std::string k_sigma, k_groups, k_out;
    double k_c = 0.5;
    c_keys->add_option("--sigma", k_sigma)->required();
    c_keys->add_option("--groups", k_groups)->required();
    c_keys->add_option("--c", k_c, "explained-variation threshold in [0,1]");
    c_keys->add_option("--out", k_out, "keys file (default stdout)");

    // solve
    auto* c_solve = app.add_subcommand("solve", "solve for the S matrix");
    std::string s_sigma, s_groups, s_method = "me", s_keys, s_out;
    int s_m = 1, s_threads = 1, s_sweeps = 100;
    double s_tol = 1e-4;
    c_solve->add_option("--sigma", s_sigma)->required();
    c_solve->add_option("--groups", s_groups)->required();
    c_solve->add_option("--method", s_method, "me|mvr|sdp|esdp");
    c_solve->add_option("--m", s_m, "number of knockoff copies");
    c_solve->add_option("--keys", s_keys, "key variables (solve the reduced problem)");
    c_solve->add_option("--tol", s_tol);
    c_solve->add_option("--max-sweeps", s_sweeps);
    c_solve->add_option("--threads", s_threads, "workers for independent blocks");
    c_solve->add_option("--out", s_out)->required();

    // sample
    auto* c_sample = app.add_subcommand("sample", "draw knockoff copies");
    std::string a_sigma, a_s, a_input, a_out, a_keys, a_groups;
    int a_m = 1;
    std::uint64_t a_seed = 1;
    c_sample->add_option("--sigma", a_sigma)->required();
    c_sample->add_option("--s", a_s)->required();
    c_sample->add_option("--m", a_m);
    c_sample->add_option("--input", a_input, "n x p data matrix or a z-score file")->required();
    c_sample->add_option("--seed", a_seed);
    c_sample->add_option("--keys", a_keys, "sample through the key route (needs --groups)");
    c_sample->add_option("--groups", a_groups);
    c_sample->add_option("--out", a_out)->required();

    // lasso
    auto* c_lasso = app.add_subcommand("lasso", "Lasso on a Gram matrix");
    std::string l_gram, l_r, l_out;
    double l_lambda = -1, l_n = 0, l_ridge = 0;
    bool l_auto = false;
    std::uint64_t l_seed = 1;
    c_lasso->add_option("--gram", l_gram)->required();
    c_lasso->add_option("--r", l_r)->required();
    auto* lam_opt = c_lasso->add_option("--lambda", l_lambda);
    auto* auto_opt = c_lasso->add_flag("--auto", l_auto, "choose lambda by pseudo-validation");
    lam_opt->excludes(auto_opt);
    c_lasso->add_option("--n", l_n, "sample size (required with --auto)");
    c_lasso->add_option("--ridge", l_ridge, "add ridge * I to the Gram matrix");
    c_lasso->add_option("--seed", l_seed);
    c_lasso->add_option("--out", l_out, "coefficients (default stdout)");

    // filter
    auto* c_filter = app.add_subcommand("filter", "knockoff filter on group scores");
    std::string f_scores, f_out, f_causal;
    double f_q = 0.1;
    int f_m = 1;
    c_filter->add_option("--scores", f_scores, "g x (m+1) matrix: original then copies")->required();
    c_filter->add_option("--q", f_q);
    c_filter->add_option("--m", f_m);
    c_filter->add_option("--causal", f_causal, "1-based causal group ids, prints power/fdp");
    c_filter->add_option("--out", f_out, "selection CSV (default stdout)");

    // simulate
    auto* c_sim = app.add_subcommand("simulate", "run a simulation scenario");
    std::string m_spec, m_out;
    c_sim->add_option("--spec", m_spec)->required();
    c_sim->add_option("--out", m_out)->required();

    // check-exchangeability
    auto* c_exch = app.add_subcommand("check-exchangeability", "compare corr(X_i,X_j) with corr(X_i,X~_j)");
    std::string e_x, e_xt, e_groups, e_out;
    double e_thresh = 0.03;
    c_exch->add_option("--x", e_x)->required();
    c_exch->add_option("--xt", e_xt)->required();
    c_exch->add_option("--groups", e_groups)->required();
    c_exch->add_option("--threshold", e_thresh);
    c_exch->add_option("--out", e_out, "pairs CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (c_groups->parsed()) {
        const Mat S = read_sigma(g_sigma);
        GroupPartition gp;
        if (g_method == "id") {
            gp = cluster_groups_id(S, g_resid, g_contig);
        } else if (g_method == "hier") {
            Linkage lk;
            if (g_linkage == "average") lk = Linkage::average;
            else if (g_linkage == "single") lk = Linkage::single;
            else if (g_linkage == "complete") lk = Linkage::complete;
            else throw InputError("unknown linkage '" + g_linkage + "'");
            gp = cluster_groups_hier(S, g_cutoff, lk, g_contig);
        } else {
            throw InputError("unknown grouping method '" + g_method + "'");
        }
        write_groups(g_out, gp);
    } else if (c_keys->parsed()) {
        const Mat S = read_sigma(k_sigma);
        const GroupPartition gp = read_groups(k_groups, S.rows());
        const KeySelection ks = select_key_variables(S, gp, k_c);
        std::vector<long> out;
        for (Index k : ks.all_keys()) out.push_back(k + 1);
        if (k_out.empty())
            for (long k : out) std::cout << k << '\n';
        else
            write_integers(k_out, out);
    } else if (c_solve->parsed()) {
        const Mat S = read_sigma(s_sigma);
        const GroupPartition gp = read_groups(s_groups, S.rows());
        SolverConfig cfg;
        cfg.method = parse_method(s_method);
        cfg.m = s_m;
        cfg.tol = s_tol;
        cfg.max_sweeps = s_sweeps;
        if (s_m < 1) throw InputError("--m must be at least 1");
        SolveResult r;
        if (!s_keys.empty())
            r = solve_with_key_ci(S, gp, read_keys(s_keys, gp), cfg);
        else
            r = solve_blockwise(S, gp, cfg, worker_count(s_threads));
        write_matrix(s_out, r.S);
        const auto [ls, ld] = feasibility_margins(S, r.S, s_m);
        std::ofstream rep(s_out + ".report.txt");
        rep << std::setprecision(12) << "method=" << method_name(cfg.method) << "\nm=" << s_m
            << "\nsweeps=" << r.sweeps << "\nconverged=" << (r.converged ? 1 : 0) << "\nobjective=" << r.objective
            << "\nlambda_min_S=" << ls << "\nlambda_min_D=" << ld << '\n';
    } else if (c_sample->parsed()) {
        const Mat Sig = read_sigma(a_sigma);
        const Mat S = read_matrix(a_s);
        const Index p = Sig.rows();
        if (S.rows() != p || S.cols() != p) throw InputError("--s must match --sigma in size");
        Mat X = read_matrix(a_input);
        if (X.cols() != p) {
            if (X.cols() == 1 && X.rows() == p)
                X.transposeInPlace();
            else
                throw InputError("--input must have p columns or be a length-p vector");
        }
        Mat out;
        if (!a_keys.empty()) {
            if (a_groups.empty()) throw InputError("--keys needs --groups");
            const GroupPartition gp = read_groups(a_groups, p);
            const KeySelection ks = read_keys(a_keys, gp);
            const StarProblem sp = star_problem(Sig, gp, ks);
            const KnockoffModel star = build_model(sp.Sigma, submatrix(S, sp.keys, sp.keys), a_m);
            out = sample_ci_knockoffs_rows(X, build_ci_sampler(Sig, gp, ks, star), a_seed);
        } else {
            out = sample_knockoffs_rows(X, build_model(Sig, S, a_m), a_seed);
        }
        write_matrix(a_out, out);
    } else if (c_lasso->parsed()) {
        Mat A = read_sigma(l_gram);
        const Vec r = read_vector(l_r);
        if (r.size() != A.rows()) throw InputError("--r length does not match --gram");
        if (l_ridge > 0) A.diagonal().array() += l_ridge;
        double lam = l_lambda;
        if (l_auto) {
            if (!(l_n > 0)) throw InputError("--auto needs --n");
            const double lmax = r.cwiseAbs().maxCoeff();
            if (!(lmax > 0)) throw InputError("r is identically zero");
            lam = pseudo_validate(r, A, l_n, lambda_grid(lmax, 0.01 * lmax, 20), l_seed).lambda;
        } else if (!(lam >= 0)) {
            throw InputError("give --lambda X (X >= 0) or --auto");
        }
        const Vec beta = lasso_cd(A, r, lam);
        std::cerr << std::setprecision(10) << "lambda=" << lam << '\n';
        write_vector(l_out, beta);
    } else if (c_filter->parsed()) {
        const Mat sc = read_matrix(f_scores);
        if (f_m < 1 || sc.cols() != f_m + 1) throw InputError("--scores must have m+1 columns");
        GroupScores gs{sc.col(0), sc.rightCols(f_m)};
        const WStatistics w = knockoff_W(gs);
        const SelectionResult sel = multiple_knockoff_filter(w.W, w.kappa, w.T, f_q, f_m);
        std::ostringstream o;
        o << std::setprecision(12) << "group,kappa,T,W,selected\n";
        std::vector<char> chosen(sc.rows(), 0);
        for (int g : sel.selected) chosen[g] = 1;
        for (Index g = 0; g < sc.rows(); ++g)
            o << g + 1 << ',' << w.kappa[g] << ',' << w.T(g) << ',' << w.W(g) << ',' << int(chosen[g]) << '\n';
        if (f_out.empty()) {
            std::cout << o.str();
        } else {
            std::ofstream out(f_out);
            if (!out) throw InputError("cannot write " + f_out);
            out << o.str();
        }
        if (!f_causal.empty()) {
            std::vector<int> causal;
            for (long c : read_integers(f_causal)) causal.push_back(static_cast<int>(c - 1));
            const Metrics mt = power_fdr(sel.selected, causal, static_cast<int>(sc.rows()));
            (f_out.empty() ? std::cerr : std::cout) << "power=" << mt.power << ", fdp=" << mt.fdp << '\n';
        }
    } else if (c_sim->parsed()) {
        const ExperimentResult res = run_experiment(read_scenario(m_spec));
        write_experiment(m_out, res);
        std::cout << "power=" << res.power_mean << ", fdp=" << res.fdr_mean << '\n';
    } else if (c_exch->parsed()) {
        const Mat X = read_matrix(e_x);
        const Mat Xt = read_matrix(e_xt);
        const GroupPartition gp = read_groups(e_groups, X.cols());
        const ExchangeabilityReport rep = exchangeability_check(X, Xt, gp, e_thresh);
        if (!e_out.empty()) {
            std::ofstream out(e_out);
            if (!out) throw InputError("cannot write " + e_out);
            out << std::setprecision(10) << "i,j,copy,corr_x,corr_xk,cross_group\n";
            for (const auto& d : rep.pairs)
                out << d.i + 1 << ',' << d.j + 1 << ',' << d.copy << ',' << d.corr_x << ',' << d.corr_xk << ','
                    << (d.cross_group ? 1 : 0) << '\n';
        }
        std::cout << "max_cross_deviation=" << rep.max_cross_deviation
                  << ", max_within_deviation=" << rep.max_within_deviation
                  << ", flagged=" << (rep.flagged ? 1 : 0) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gk::InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const gk::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
