#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/geometry.hpp"

namespace corthick {

/// Triangle mesh along the cortex center. Normals are unit vectors;
/// `region` flags vertices inside the target VOI; `thickness` (mm) and
/// `patchMultiplicity` are filled by the estimation pipeline.
struct SurfaceMesh {
    std::vector<Vec3> vertices;
    std::vector<Vec3> normals;
    std::vector<std::array<std::uint32_t, 3>> triangles;
    std::vector<float> thickness;         // empty or one value per vertex
    std::vector<std::uint8_t> region;     // empty means all in-region
    std::vector<std::int32_t> patchMultiplicity;

    std::size_t vertexCount() const { return vertices.size(); }

    bool inRegion(std::size_t v) const { return region.empty() || region[v] != 0; }

    std::size_t inRegionCount() const {
        if (region.empty()) return vertices.size();
        std::size_t n = 0;
        for (auto r : region) n += (r != 0);
        return n;
    }

    double surfaceArea() const {
        double a = 0;
        for (const auto& t : triangles)
            a += triangleArea(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        return a;
    }

    /// Checks index ranges, unit normals (1e-6) and that each edge is shared
    /// by at most two triangles (manifold-orientable).
    void validate() const {
        if (normals.size() != vertices.size())
            throw DataError("SurfaceMesh: normals count != vertex count");
        if (!thickness.empty() && thickness.size() != vertices.size())
            throw DataError("SurfaceMesh: thickness count != vertex count");
        if (!region.empty() && region.size() != vertices.size())
            throw DataError("SurfaceMesh: region count != vertex count");
        for (const auto& n : normals) {
            if (std::abs(n.norm() - 1.0) > 1e-6)
                throw DataError("SurfaceMesh: non-unit normal");
        }
        std::map<std::pair<std::uint32_t, std::uint32_t>, int> edgeUse;
        for (const auto& t : triangles) {
            for (int e = 0; e < 3; ++e) {
                std::uint32_t a = t[e], b = t[(e + 1) % 3];
                if (a >= vertices.size() || b >= vertices.size())
                    throw DataError("SurfaceMesh: triangle index out of range");
                if (a == b) throw DataError("SurfaceMesh: degenerate triangle edge");
                if (a > b) std::swap(a, b);
                if (++edgeUse[{a, b}] > 2)
                    throw DataError("SurfaceMesh: edge shared by more than two triangles");
            }
        }
    }

    /// Undirected adjacency with edge lengths, for geodesic approximations.
    std::vector<std::vector<std::pair<std::uint32_t, double>>> edgeAdjacency() const {
        std::vector<std::vector<std::pair<std::uint32_t, double>>> adj(vertices.size());
        std::map<std::pair<std::uint32_t, std::uint32_t>, bool> seen;
        for (const auto& t : triangles) {
            for (int e = 0; e < 3; ++e) {
                std::uint32_t a = t[e], b = t[(e + 1) % 3];
                std::uint32_t lo = std::min(a, b), hi = std::max(a, b);
                if (seen.emplace(std::make_pair(lo, hi), true).second) {
                    double len = (vertices[a] - vertices[b]).norm();
                    adj[a].emplace_back(b, len);
                    adj[b].emplace_back(a, len);
                }
            }
        }
        return adj;
    }
};

} // namespace corthick
