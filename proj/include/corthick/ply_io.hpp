#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/mesh.hpp"

namespace corthick {

// ASCII PLY mesh I/O. Vertices carry x y z nx ny nz plus the optional
// per-vertex properties "thickness" (float, mm), "patch_multiplicity" (int)
// and "region" (uchar VOI flag). Faces must be triangles.

namespace detail {
inline std::string plyTrim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}
} // namespace detail

inline SurfaceMesh readPly(const std::filesystem::path& path) {
    std::ifstream in(path);
    const std::string file = path.string();
    if (!in) throw DataError(file + ": cannot open");

    std::string line;
    if (!std::getline(in, line) || detail::plyTrim(line) != "ply")
        throw DataError(file + ": not a PLY file");

    struct Prop { std::string name; };
    std::vector<Prop> vertexProps;
    std::size_t nVerts = 0, nFaces = 0;
    std::string element;
    bool ascii = false;

    while (std::getline(in, line)) {
        std::istringstream iss(line);
        std::string tok;
        iss >> tok;
        if (tok == "format") {
            std::string fmt;
            iss >> fmt;
            ascii = (fmt == "ascii");
        } else if (tok == "comment") {
            continue;
        } else if (tok == "element") {
            std::size_t count;
            iss >> element >> count;
            if (element == "vertex") nVerts = count;
            else if (element == "face") nFaces = count;
            else throw DataError(file + ": unsupported element " + element);
        } else if (tok == "property") {
            if (element == "vertex") {
                std::string type, name;
                iss >> type >> name;
                if (type == "list") throw DataError(file + ": list property on vertex");
                vertexProps.push_back({name});
            }
            // face property assumed to be the standard vertex index list
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!ascii) throw DataError(file + ": only ASCII PLY is supported");
    if (nVerts == 0) throw DataError(file + ": no vertices");

    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
    int ith = -1, imult = -1, iregion = -1;
    for (std::size_t p = 0; p < vertexProps.size(); ++p) {
        const std::string& n = vertexProps[p].name;
        int idx = int(p);
        if (n == "x") ix = idx;
        else if (n == "y") iy = idx;
        else if (n == "z") iz = idx;
        else if (n == "nx") inx = idx;
        else if (n == "ny") iny = idx;
        else if (n == "nz") inz = idx;
        else if (n == "thickness") ith = idx;
        else if (n == "patch_multiplicity") imult = idx;
        else if (n == "region") iregion = idx;
    }
    if (ix < 0 || iy < 0 || iz < 0) throw DataError(file + ": missing x/y/z properties");
    if (inx < 0 || iny < 0 || inz < 0)
        throw DataError(file + ": missing nx/ny/nz normal properties");

    SurfaceMesh mesh;
    mesh.vertices.resize(nVerts);
    mesh.normals.resize(nVerts);
    if (ith >= 0) mesh.thickness.resize(nVerts, 0.f);
    if (imult >= 0) mesh.patchMultiplicity.resize(nVerts, 0);
    if (iregion >= 0) mesh.region.resize(nVerts, 1);

    std::vector<double> row(vertexProps.size());
    for (std::size_t v = 0; v < nVerts; ++v) {
        if (!std::getline(in, line)) throw DataError(file + ": truncated vertex list");
        std::istringstream iss(line);
        for (auto& r : row)
            if (!(iss >> r)) throw DataError(file + ": short vertex row");
        mesh.vertices[v] = {row[std::size_t(ix)], row[std::size_t(iy)], row[std::size_t(iz)]};
        mesh.normals[v] = {row[std::size_t(inx)], row[std::size_t(iny)], row[std::size_t(inz)]};
        if (ith >= 0) mesh.thickness[v] = float(row[std::size_t(ith)]);
        if (imult >= 0) mesh.patchMultiplicity[v] = std::int32_t(row[std::size_t(imult)]);
        if (iregion >= 0) mesh.region[v] = std::uint8_t(row[std::size_t(iregion)] != 0);
    }
    mesh.triangles.reserve(nFaces);
    for (std::size_t f = 0; f < nFaces; ++f) {
        if (!std::getline(in, line)) throw DataError(file + ": truncated face list");
        std::istringstream iss(line);
        std::size_t cnt;
        if (!(iss >> cnt)) throw DataError(file + ": bad face row");
        if (cnt != 3) throw DataError(file + ": non-triangle face");
        std::array<std::uint32_t, 3> t{};
        for (auto& idx : t)
            if (!(iss >> idx)) throw DataError(file + ": short face row");
        mesh.triangles.push_back(t);
    }
    mesh.validate();
    return mesh;
}

inline std::string plyToString(const SurfaceMesh& mesh) {
    mesh.validate();
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertexCount() << '\n';
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "property float nx\nproperty float ny\nproperty float nz\n";
    bool hasTh = !mesh.thickness.empty();
    bool hasMult = !mesh.patchMultiplicity.empty();
    bool hasRegion = !mesh.region.empty();
    if (hasTh) out << "property float thickness\n";
    if (hasMult) out << "property int patch_multiplicity\n";
    if (hasRegion) out << "property uchar region\n";
    out << "element face " << mesh.triangles.size() << '\n';
    out << "property list uchar int vertex_indices\n";
    out << "end_header\n";

    char buf[256];
    for (std::size_t v = 0; v < mesh.vertexCount(); ++v) {
        const Vec3& p = mesh.vertices[v];
        const Vec3& n = mesh.normals[v];
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.9g %.9g %.9g", float(p.x),
                      float(p.y), float(p.z), float(n.x), float(n.y), float(n.z));
        out << buf;
        if (hasTh) {
            std::snprintf(buf, sizeof buf, " %.9g", mesh.thickness[v]);
            out << buf;
        }
        if (hasMult) out << ' ' << mesh.patchMultiplicity[v];
        if (hasRegion) out << ' ' << int(mesh.region[v]);
        out << '\n';
    }
    for (const auto& t : mesh.triangles)
        out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    return out.str();
}

inline void writePly(const SurfaceMesh& mesh, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError(path.string() + ": cannot write");
    f << plyToString(mesh);
}

} // namespace corthick
