#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/mesh.hpp"
#include "corthick/random.hpp"

namespace corthick {

/// Connected group of in-region vertices within a geodesic radius of a
/// center vertex.
struct Patch {
    int id = 0;
    std::uint32_t center = 0;
    double radius = 0.0; // mm, geodesic
    std::vector<std::uint32_t> vertexIds;
};

namespace detail {

/// Dijkstra over mesh edges from one source; geodesic distances are
/// approximated by shortest edge paths, which is accurate enough at patch
/// granularity.
inline std::vector<double> dijkstra(
    const std::vector<std::vector<std::pair<std::uint32_t, double>>>& adj,
    std::uint32_t source) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(adj.size(), inf);
    using Node = std::pair<double, std::uint32_t>;
    std::priority_queue<Node, std::vector<Node>, std::greater<>> pq;
    dist[source] = 0;
    pq.emplace(0.0, source);
    while (!pq.empty()) {
        auto [d, v] = pq.top();
        pq.pop();
        if (d > dist[v]) continue;
        for (auto [w, len] : adj[v]) {
            double nd = d + len;
            if (nd < dist[w]) {
                dist[w] = nd;
                pq.emplace(nd, w);
            }
        }
    }
    return dist;
}

} // namespace detail

/// Covers the in-region vertices with `targetCount` patches: centers by
/// seeded farthest-point sampling, patch membership by geodesic balls whose
/// shared radius starts at sqrt(area/targetCount) and grows by 10% until
/// every in-region vertex is covered. Deterministic for a fixed seed.
inline std::vector<Patch> placePatches(const SurfaceMesh& mesh, int targetCount,
                                       std::uint64_t seed) {
    if (targetCount < 1) throw DataError("placePatches: targetCount must be >= 1");
    std::vector<std::uint32_t> inRegion;
    for (std::uint32_t v = 0; v < mesh.vertexCount(); ++v)
        if (mesh.inRegion(v)) inRegion.push_back(v);
    if (inRegion.size() < std::size_t(targetCount))
        throw InsufficientRegion("placePatches: fewer in-region vertices (" +
                                 std::to_string(inRegion.size()) + ") than patches (" +
                                 std::to_string(targetCount) + ")");

    auto adj = mesh.edgeAdjacency();
    const double inf = std::numeric_limits<double>::infinity();

    Rng rng(seed);
    std::vector<std::uint32_t> centers;
    std::vector<std::vector<double>> centerDist; // per center, distance to all vertices
    std::vector<double> nearest(mesh.vertexCount(), inf);

    std::uint32_t first = inRegion[std::size_t(rng.below(inRegion.size()))];
    centers.push_back(first);
    centerDist.push_back(detail::dijkstra(adj, first));
    for (std::size_t v = 0; v < nearest.size(); ++v) nearest[v] = centerDist[0][v];

    while (centers.size() < std::size_t(targetCount)) {
        // farthest in-region vertex from the chosen centers; ties broken by index
        std::uint32_t far = inRegion[0];
        double best = -1;
        for (std::uint32_t v : inRegion) {
            if (nearest[v] > best) {
                best = nearest[v];
                far = v;
            }
        }
        centers.push_back(far);
        centerDist.push_back(detail::dijkstra(adj, far));
        const auto& d = centerDist.back();
        for (std::size_t v = 0; v < nearest.size(); ++v)
            nearest[v] = std::min(nearest[v], d[v]);
    }

    double radius = std::sqrt(std::max(mesh.surfaceArea(), 1e-12) / double(targetCount));
    for (;;) {
        bool covered = true;
        for (std::uint32_t v : inRegion) {
            if (nearest[v] > radius) {
                covered = false;
                break;
            }
        }
        if (covered) break;
        radius *= 1.1;
    }

    std::vector<Patch> patches(static_cast<std::size_t>(targetCount));
    for (int p = 0; p < targetCount; ++p) {
        Patch& patch = patches[std::size_t(p)];
        patch.id = p;
        patch.center = centers[std::size_t(p)];
        patch.radius = radius;
        for (std::uint32_t v : inRegion)
            if (centerDist[std::size_t(p)][v] <= radius) patch.vertexIds.push_back(v);
    }
    return patches;
}

} // namespace corthick
