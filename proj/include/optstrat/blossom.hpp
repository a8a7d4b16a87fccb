#pragma once

#include <tuple>
#include <vector>

namespace optstrat {

/// Exact maximum-weight matching on a general graph via the primal-dual
/// blossom method, O(V^3). Edges are (u, v, weight) with u != v; weights
/// may be any finite doubles. With max_cardinality the matching first
/// maximizes the number of matched vertices, then the weight among those.
///
/// Returns mate[v] = partner of v, or -1 if v is unmatched.
std::vector<int> max_weight_matching(
    int n_vertices,
    const std::vector<std::tuple<int, int, double>>& edges,
    bool max_cardinality);

}  // namespace optstrat
