#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <functional>
#include <random>

#include "gk/errors.hpp"
#include "gk/grouping.hpp"
#include "oracles.hpp"

using namespace gk;

namespace {

Mat block_cor(Index p, Index size, double rho, double cross) {
    Mat S(p, p);
    for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) S(i, j) = i == j ? 1.0 : (i / size == j / size ? rho : cross);
    return S;
}

std::vector<int> labels_of(const GroupPartition& g) { return g.assignment; }

// Single linkage cut at h = connected components of {d_ij <= h}.
std::vector<int> single_linkage_components(const Mat& Sigma, double cutoff) {
    const Index p = Sigma.rows();
    std::vector<int> lab(p, -1);
    int next = 0;
    for (Index s = 0; s < p; ++s) {
        if (lab[s] >= 0) continue;
        std::vector<Index> stack{s};
        lab[s] = next;
        while (!stack.empty()) {
            const Index u = stack.back();
            stack.pop_back();
            for (Index v = 0; v < p; ++v)
                if (lab[v] < 0 && 1 - std::abs(Sigma(u, v)) <= 1 - cutoff) {
                    lab[v] = next;
                    stack.push_back(v);
                }
        }
        ++next;
    }
    return lab;
}

// eta/zeta ratio from explicit inverses.
double ratio_oracle(const Mat& Sigma, const std::vector<Index>& group, const std::vector<Index>& keys) {
    std::vector<Index> dag;
    for (Index j : group)
        if (std::find(keys.begin(), keys.end(), j) == keys.end()) dag.push_back(j);
    if (dag.empty()) return 1.0;
    std::vector<Index> rest;
    for (Index j = 0; j < Sigma.rows(); ++j)
        if (std::find(dag.begin(), dag.end(), j) == dag.end()) rest.push_back(j);
    auto explained = [&](const std::vector<Index>& by, Index j) {
        if (by.empty()) return 0.0;
        oracle::M B(by.size(), by.size());
        oracle::V s(by.size());
        for (std::size_t a = 0; a < by.size(); ++a) {
            s(a) = Sigma(by[a], j);
            for (std::size_t b = 0; b < by.size(); ++b) B(a, b) = Sigma(by[a], by[b]);
        }
        return s.dot(oracle::inverse(B) * s);
    };
    double sum = 0;
    for (Index j : dag) {
        const double e = explained(keys, j), z = explained(rest, j);
        sum += z <= 1e-12 ? 1.0 : std::clamp(e / z, 0.0, 1.0);
    }
    return sum / double(dag.size());
}

}  // namespace

TEST_CASE("partition from labels") {
    const GroupPartition g = GroupPartition::from_labels({7, 7, 3, 9, 3});
    CHECK(g.assignment == std::vector<int>{0, 0, 1, 2, 1});
    CHECK(g.num_groups() == 3);
    CHECK(g.members[1] == std::vector<Index>{2, 4});
    CHECK_FALSE(g.contiguous);
    CHECK(GroupPartition::blocks(7, 3).contiguous);
    CHECK(GroupPartition::blocks(7, 3).members[2] == std::vector<Index>{6});
    CHECK(GroupPartition::single_group(4).num_groups() == 1);
    CHECK(GroupPartition::singletons(4).num_groups() == 4);
}

TEST_CASE("hierarchical clustering examples") {
    CHECK(cluster_groups_hier(Mat::Identity(6, 6), 0.5).num_groups() == 6);

    Mat two(2, 2);
    two << 1, 0.9, 0.9, 1;
    CHECK(cluster_groups_hier(two, 0.5).num_groups() == 1);

    const Mat B = block_cor(15, 5, 0.75, 0.1875);
    const GroupPartition g = cluster_groups_hier(B, 0.5);
    CHECK(labels_of(g) == oracle::brute_average_linkage(B, 0.5));
    CHECK(labels_of(g) == labels_of(GroupPartition::blocks(15, 5)));
}

TEST_CASE("average linkage matches brute force") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const Index p = 3 + trial % 12;
        const Mat S = oracle::random_cor(p, rng, 0.05);
        for (double cut : {0.2, 0.4, 0.6}) CHECK(labels_of(cluster_groups_hier(S, cut)) == oracle::brute_average_linkage(S, cut));
    }
}

TEST_CASE("single linkage equals threshold-graph components") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 30; ++trial) {
        const Index p = 3 + trial % 15;
        const Mat S = oracle::random_cor(p, rng, 0.05);
        CHECK(labels_of(cluster_groups_hier(S, 0.4, Linkage::single)) == single_linkage_components(S, 0.4));
    }
}

TEST_CASE("complete linkage on a chain") {
    // 0-1 and 1-2 close, 0-2 far: single links all three, complete stops at two
    Mat S = Mat::Identity(3, 3);
    S(0, 1) = S(1, 0) = 0.9;
    S(1, 2) = S(2, 1) = 0.8;
    S(0, 2) = S(2, 0) = 0.3;
    CHECK(cluster_groups_hier(S, 0.5, Linkage::single).num_groups() == 1);
    CHECK(labels_of(cluster_groups_hier(S, 0.5, Linkage::complete)) == std::vector<int>{0, 0, 1});
}

TEST_CASE("clustering ignores signs and adjacency mode is contiguous") {
    std::mt19937_64 rng(13);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 20; ++trial) {
        const Index p = 4 + trial % 10;
        const Mat S = oracle::random_cor(p, rng, 0.05);
        Vec sg(p);
        for (Index i = 0; i < p; ++i) sg(i) = coin(rng) ? 1.0 : -1.0;
        const Mat F = sg.asDiagonal() * S * sg.asDiagonal();
        for (Linkage lk : {Linkage::average, Linkage::single, Linkage::complete})
            CHECK(labels_of(cluster_groups_hier(S, 0.4, lk)) == labels_of(cluster_groups_hier(F, 0.4, lk)));
        CHECK(cluster_groups_hier(S, 0.3, Linkage::average, true).contiguous);
    }
}

TEST_CASE("interpolative decomposition grouping") {
    CHECK(cluster_groups_id(Mat::Identity(5, 5)).num_groups() == 5);
    CHECK(cluster_groups_id(Mat::Identity(1, 1)).num_groups() == 1);

    Mat twin = Mat::Identity(3, 3);
    twin(0, 1) = twin(1, 0) = 1 - 1e-9;
    const GroupPartition g = cluster_groups_id(twin);
    CHECK(g.num_groups() == 2);
    CHECK(g.assignment[0] == g.assignment[1]);

    const Mat B = block_cor(20, 5, 0.9, 0.05);
    CHECK(labels_of(cluster_groups_id(B, 0.25)) == labels_of(GroupPartition::blocks(20, 5)));
    CHECK(labels_of(cluster_groups_id(B, 0.25, true)) == labels_of(GroupPartition::blocks(20, 5)));

    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        const Mat S = oracle::random_cor(12, rng, 0.05);
        CHECK(cluster_groups_id(S, 0.3, true).contiguous);
        CHECK(cluster_groups_id(S, 0.3).num_vars() == 12);
    }

    Mat bad(2, 2);
    bad << 1, 2, 2, 1;
    CHECK_THROWS_AS(cluster_groups_id(bad), NotPositiveDefinite);
}

TEST_CASE("key selection examples") {
    std::mt19937_64 rng(15);
    const Mat S = oracle::random_cor(9, rng);
    const GroupPartition g = GroupPartition::blocks(9, 3);
    const KeySelection all = select_key_variables(S, g, 1.0);
    for (Index k = 0; k < 3; ++k) CHECK(all.keys[k] == g.members[k]);
    CHECK(all.all_are_keys());

    // near-duplicate pair, weakly tied to a third variable
    Mat T = Mat::Identity(3, 3);
    T(0, 1) = T(1, 0) = 0.999;
    T(0, 2) = T(2, 0) = 0.1;
    T(1, 2) = T(2, 1) = 0.1;
    const GroupPartition tg = GroupPartition::from_labels({0, 0, 1});
    const KeySelection ks = select_key_variables(T, tg, 0.5);
    CHECK(ks.keys[0].size() == 1);
    CHECK(ks.non_keys[0].size() == 1);
    CHECK(ratio_oracle(T, tg.members[0], ks.keys[0]) >= 0.5);
    CHECK(ks.keys[1] == std::vector<Index>{2});
    CHECK(ks.non_keys[1].empty());
}

TEST_CASE("key selection invariants") {
    std::mt19937_64 rng(16);
    for (int trial = 0; trial < 25; ++trial) {
        const Index p = 6 + trial % 10;
        const Mat S = oracle::random_cor(p, rng, 0.2);
        const GroupPartition g = GroupPartition::blocks(p, 2 + trial % 4);
        std::vector<KeySelection> by_c;
        for (double c : {0.0, 0.3, 0.5, 0.8, 0.95}) {
            const KeySelection ks = select_key_variables(S, g, c);
            for (Index k = 0; k < g.num_groups(); ++k) {
                CHECK(!ks.keys[k].empty());
                std::vector<Index> u = ks.keys[k];
                u.insert(u.end(), ks.non_keys[k].begin(), ks.non_keys[k].end());
                std::sort(u.begin(), u.end());
                CHECK(u == g.members[k]);
                const double r = ratio_oracle(S, g.members[k], ks.keys[k]);
                CHECK((ks.non_keys[k].empty() || r >= c - 1e-12));
                CHECK(key_explained_ratio(S, g, ks.keys[k], int(k)) == doctest::Approx(r).epsilon(1e-8));
            }
            by_c.push_back(ks);
        }
        for (std::size_t a = 0; a + 1 < by_c.size(); ++a)
            for (Index k = 0; k < g.num_groups(); ++k)
                CHECK(std::includes(by_c[a + 1].keys[k].begin(), by_c[a + 1].keys[k].end(),
                                    by_c[a].keys[k].begin(), by_c[a].keys[k].end()));
    }
}

TEST_CASE("key selection for an externally independent group") {
    // group {0,1} is independent of the rest: zeta = 0 for a non-key, ratio counts as 1
    Mat S = Mat::Identity(4, 4);
    S(0, 1) = S(1, 0) = 0.5;
    S(2, 3) = S(3, 2) = 0.4;
    const GroupPartition g = GroupPartition::from_labels({0, 0, 1, 1});
    const KeySelection ks = select_key_variables(S, g, 0.9);
    CHECK(ks.keys[0].size() == 1);
    CHECK(ks.keys[1].size() == 1);
    CHECK_THROWS_AS(select_key_variables(S, g, 1.5), InputError);
}
