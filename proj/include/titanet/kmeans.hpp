#pragma once

// Seeded k-means with k-means++ initialization, multiple restarts, and
// deterministic tie-breaking (lowest index wins everywhere). Empty clusters
// are reseeded to the point farthest from its current center.

#include <vector>

#include "titanet/rng.hpp"
#include "titanet/tensor.hpp"

namespace titanet {

struct KmeansResult {
    std::vector<int> labels;  // [n], values in [0, k)
    double inertia = 0.0;     // sum of squared distances to assigned centers
};

// points: [n, d]. Requires 1 <= k <= n.
KmeansResult kmeans(const Tensor& points, int k, Rng& rng, int restarts = 10, int max_iters = 100);

}  // namespace titanet
