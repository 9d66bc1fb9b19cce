#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gk/grouping.hpp"
#include "gk/linalg.hpp"
#include "gk/solver.hpp"

namespace gk {

enum class CovKind { block, er_cov, er_prec, ar1, ar1_corr, toeplitz, gkci };
enum class Placement { random, contiguous };

CovKind parse_cov_kind(const std::string& s);
std::string cov_kind_name(CovKind k);

struct CovParams {
    Index block_size = 5;     // block
    double rho = 0.75;        // block, toeplitz
    double gamma = 0.25;      // block: cross-block correlation is gamma * rho
    Index er_block = 10;      // er_cov, er_prec
    double er_prob = 0.1;
    double ar_alpha = 3.0;    // ar1 rho_j ~ Beta(alpha, beta)
    double ar_beta = 1.0;
    Index ci_group = 5;       // gkci: group size
    Index ci_keys = 1;        //       keys per group
    double ci_key_rho = 0.6;  //       AR(1) correlation between consecutive keys
    double min_eig = 0.001;
};

// Always returns a correlation matrix with lambda_min >= min_eig (up to the
// final rescale).
Mat gen_cov(CovKind kind, Index p, const CovParams& params, std::uint64_t seed);

struct SimData {
    Mat X;
    Vec y;
    Vec beta;
    std::vector<Index> causal;  // sorted
};

SimData gen_data(const Mat& Sigma, Index n, Index k, double effect_sd, Placement placement, std::uint64_t seed);

struct ScenarioSpec {
    CovKind cov_kind = CovKind::ar1;
    Index p = 200;
    Index n = 800;
    Index k = 20;
    double effect_sd = 1.0;
    int m = 1;
    Method method = Method::ME;
    double q = 0.1;
    double c = 1.0;
    int replicates = 10;
    std::uint64_t seed = 1;
    double cutoff = 0.5;
    int lambda_count = 10;
    double lambda_ratio = 0.01;  // smallest / largest lambda in the grid
    Placement placement = Placement::random;
    bool placement_set = false;  // ar1_corr defaults to contiguous
    int threads = 0;             // 0: GK_THREADS or hardware concurrency
    int max_sweeps = 100;
    double solver_tol = 1e-4;
    CovParams cov;
};

ScenarioSpec parse_scenario(const std::string& text);
ScenarioSpec read_scenario(const std::string& path);

struct ReplicateResult {
    int replicate = 0;
    bool ok = false;
    std::string error;
    double power = 0.0;
    double fdp = 0.0;
    int selected = 0;
    int groups = 0;
    int causal_groups = 0;
    double solve_seconds = 0.0;
    bool regularized = false;
};

struct ExperimentResult {
    ScenarioSpec spec;
    std::vector<ReplicateResult> replicates;
    int failed = 0;
    double power_mean = 0, power_se = 0;
    double fdr_mean = 0, fdr_se = 0;
    double solve_seconds_mean = 0;
};

ReplicateResult run_replicate(const ScenarioSpec& spec, int replicate);
ExperimentResult run_experiment(const ScenarioSpec& spec);

// Deterministic summary and per-replicate CSV; timings go to path + ".timing.csv".
void write_experiment(const std::string& path, const ExperimentResult& res);
std::string experiment_csv(const ExperimentResult& res);

int worker_count(int requested);

}  // namespace gk
