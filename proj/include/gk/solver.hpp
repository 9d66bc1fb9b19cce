#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gk/grouping.hpp"
#include "gk/linalg.hpp"

namespace gk {

enum class Method { eSDP, SDP, MVR, ME };
enum class Alternation { back_to_back, pca_only, cd_only };
enum class StepKind { diag, offdiag, pca };

Method parse_method(const std::string& s);
std::string method_name(Method m);

struct SweepInfo {
    int sweep = 0;
    double objective = 0.0;
    double max_abs_change = 0.0;
};

struct SolverConfig {
    Method method = Method::ME;
    int m = 1;
    double tol = 1e-4;           // relative objective change
    double s_change_tol = 1e-4;  // max |dS_ij| over a sweep
    int max_sweeps = 100;
    double epsilon = 1e-6;       // boundary slack
    Alternation alternation = Alternation::back_to_back;
    double brent_tol = 1e-8;
    int brent_max_iter = 100;
    int refactor_every = 10;
    double drift_tol = 1e-6;
    std::function<void(const SweepInfo&)> on_sweep;
};

struct SolveResult {
    Mat S;
    int sweeps = 0;
    bool converged = false;
    double objective = 0.0;
    std::vector<double> objective_history;  // entry 0 is the initial point
    // One entry per refactorization check: Frobenius distance between the
    // maintained and fresh factors (NaN if the fresh one failed), and the
    // relative entrywise reconstruction gap that FactorizationDrift tests.
    std::vector<double> drift_history;
    std::vector<double> reconstruction_history;
};

struct FeasibleInterval {
    double lo = 0.0, hi = 0.0;
    bool pinned() const { return lo == 0.0 && hi == 0.0; }
    double clamp(double d) const { return d < lo ? lo : (d > hi ? hi : d); }
};

// Inputs to a single coordinate step. Diagonal and PCA steps read the *_jj
// forms (for PCA these are v'D^{-1}v etc.); off-diagonal steps read all.
struct StepContext {
    QuadraticForms q;
    double sigma_ij = 0.0;
    double s_ij = 0.0;
    double group_weight = 1.0;  // 1/|A_g|^2 for the SDP loss
    // PCA-SDP only: the group's blocks and the direction.
    const Mat* sigma_block = nullptr;
    const Mat* s_block = nullptr;
    const Vec* v = nullptr;
};

FeasibleInterval feasible_interval(const QuadraticForms& q, StepKind kind, double eps);

// Change in the (lower-is-better) objective from a step of size delta.
double step_loss_change(Method method, StepKind kind, const StepContext& ctx, int m, double delta);

double optimal_delta(Method method, StepKind kind, const StepContext& ctx, int m,
                     const FeasibleInterval& iv, double brent_tol = 1e-8, int brent_max_iter = 100);

double objective(const Mat& Sigma, const Mat& S, const GroupPartition& partition, int m, Method method);

// tau = min{1, (m+1)/m * lambda_min(B Sigma B)}, B = blockdiag(Sigma_g^{-1/2}).
double equi_scale(const Mat& Sigma, const GroupPartition& partition, int m);
Mat solve_equi(const Mat& Sigma, const GroupPartition& partition, int m);

// Eigenvectors of each Sigma_g (groups of size > 1), zero-padded to length p,
// followed by the p standard basis vectors.
std::vector<Vec> pca_directions(const Mat& Sigma, const GroupPartition& partition);

SolveResult solve_group_knockoffs(const Mat& Sigma, const GroupPartition& partition,
                                  const SolverConfig& config);

Mat extend_star_S(const Mat& Sigma, const GroupPartition& partition, const KeySelection& keys,
                  const Mat& S_star);

// Sigma restricted to the keys, with the induced partition of the keys.
struct StarProblem {
    std::vector<Index> keys;  // sorted original indices
    Mat Sigma;
    GroupPartition partition;
};
StarProblem star_problem(const Mat& Sigma, const GroupPartition& partition, const KeySelection& keys);

SolveResult solve_with_key_ci(const Mat& Sigma, const GroupPartition& partition,
                              const KeySelection& keys, const SolverConfig& config);

// Any method, including eSDP, through one entry point.
SolveResult solve(const Mat& Sigma, const GroupPartition& partition, const SolverConfig& config);

// Connected components of the union of Sigma's nonzero pattern and the groups.
std::vector<std::vector<Index>> independent_blocks(const Mat& Sigma, const GroupPartition& partition);

// Solves each independent block separately, `threads` at a time.
SolveResult solve_blockwise(const Mat& Sigma, const GroupPartition& partition,
                            const SolverConfig& config, int threads);

// Smallest eigenvalues of S and (m+1)/m Sigma - S.
std::pair<double, double> feasibility_margins(const Mat& Sigma, const Mat& S, int m);

}  // namespace gk
