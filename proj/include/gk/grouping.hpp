#pragma once

#include <vector>

#include "gk/linalg.hpp"

namespace gk {

// Group ids are 0-based internally; files use 1-based ids.
struct GroupPartition {
    std::vector<int> assignment;              // variable -> group
    std::vector<std::vector<Index>> members;  // group -> sorted variables
    bool contiguous = false;

    Index num_vars() const { return static_cast<Index>(assignment.size()); }
    Index num_groups() const { return static_cast<Index>(members.size()); }
    std::size_t max_group_size() const;

    // Builds members/contiguous from arbitrary labels, relabelling groups
    // in order of their first member.
    static GroupPartition from_labels(const std::vector<long>& labels);
    static GroupPartition singletons(Index p);
    static GroupPartition single_group(Index p);
    // Consecutive blocks of `size` (last block may be shorter).
    static GroupPartition blocks(Index p, Index size);
};

struct KeySelection {
    std::vector<std::vector<Index>> keys;      // per group, sorted
    std::vector<std::vector<Index>> non_keys;  // per group, sorted
    double threshold_c = 0.5;

    std::vector<Index> all_keys() const;  // sorted
    bool all_are_keys() const;
};

enum class Linkage { average, single, complete };

GroupPartition cluster_groups_hier(const Mat& Sigma, double cutoff = 0.5,
                                   Linkage linkage = Linkage::average,
                                   bool adjacency_constrained = false);

GroupPartition cluster_groups_id(const Mat& Sigma, double resid_threshold = 0.25,
                                 bool contiguous = false);

KeySelection select_key_variables(const Mat& Sigma, const GroupPartition& partition,
                                  double c = 0.5);

// Mean over non-keys of eta_j/zeta_j (1 when the group has no non-keys).
double key_explained_ratio(const Mat& Sigma, const GroupPartition& partition,
                           const std::vector<Index>& keys, int group);

Mat submatrix(const Mat& A, const std::vector<Index>& rows, const std::vector<Index>& cols);

}  // namespace gk
