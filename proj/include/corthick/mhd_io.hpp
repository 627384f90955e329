#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/volume.hpp"

namespace corthick {

// MetaImage (.mhd text header + .raw) reader/writer. Supported element
// types: MET_SHORT (16-bit signed) and MET_FLOAT (32-bit IEEE), little
// endian. The nonstandard key DensityCalibrated carries the calibration
// flag; readers that do not know it ignore it.

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<double> parseNumbers(const std::string& s, std::size_t expect,
                                         const std::string& key, const std::string& file) {
    std::istringstream iss(s);
    std::vector<double> out;
    double v;
    while (iss >> v) out.push_back(v);
    if (out.size() != expect)
        throw DataError(file + ": key " + key + " expects " + std::to_string(expect) +
                        " values, got " + std::to_string(out.size()));
    return out;
}

} // namespace detail

inline Volume readMetaImage(const std::filesystem::path& headerPath) {
    std::ifstream in(headerPath);
    if (!in) throw DataError(headerPath.string() + ": cannot open");
    const std::string file = headerPath.string();

    std::string objectType, elementType, dataFile;
    std::vector<double> dimSize, spacing, offset{0, 0, 0};
    int nDims = 0;
    bool calibrated = false;

    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        if (key == "ObjectType") objectType = val;
        else if (key == "NDims") nDims = std::stoi(val);
        else if (key == "DimSize") dimSize = detail::parseNumbers(val, 3, key, file);
        else if (key == "ElementSpacing") spacing = detail::parseNumbers(val, 3, key, file);
        else if (key == "Offset") offset = detail::parseNumbers(val, 3, key, file);
        else if (key == "ElementType") elementType = val;
        else if (key == "ElementDataFile") dataFile = val;
        else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
            if (val == "True") throw DataError(file + ": big-endian data not supported");
        } else if (key == "DensityCalibrated") calibrated = (val == "True");
        // other keys (BinaryData, CompressedData, ...) are ignored
    }
    if (objectType != "Image") throw DataError(file + ": ObjectType must be Image");
    if (nDims != 3) throw DataError(file + ": NDims must be 3");
    if (dimSize.empty()) throw DataError(file + ": missing DimSize");
    if (spacing.empty()) throw DataError(file + ": missing ElementSpacing");
    if (elementType.empty()) throw DataError(file + ": missing ElementType");
    if (dataFile.empty()) throw DataError(file + ": missing ElementDataFile");
    if (elementType != "MET_SHORT" && elementType != "MET_FLOAT")
        throw DataError(file + ": unsupported ElementType " + elementType);

    Volume vol;
    for (int i = 0; i < 3; ++i) {
        if (dimSize[i] < 1) throw DataError(file + ": DimSize must be positive");
        vol.dims[std::size_t(i)] = std::size_t(dimSize[std::size_t(i)]);
    }
    vol.spacing = {spacing[0], spacing[1], spacing[2]};
    vol.origin = {offset[0], offset[1], offset[2]};
    vol.calibrated = calibrated;

    std::filesystem::path rawPath = headerPath.parent_path() / dataFile;
    std::ifstream raw(rawPath, std::ios::binary);
    if (!raw) throw DataError(rawPath.string() + ": cannot open");
    std::size_t n = vol.voxelCount();
    vol.data.resize(n);
    if (elementType == "MET_FLOAT") {
        raw.read(reinterpret_cast<char*>(vol.data.data()),
                 std::streamsize(n * sizeof(float)));
        if (std::size_t(raw.gcount()) != n * sizeof(float))
            throw DataError(rawPath.string() + ": raw file shorter than DimSize product");
    } else {
        std::vector<std::int16_t> buf(n);
        raw.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * sizeof(std::int16_t)));
        if (std::size_t(raw.gcount()) != n * sizeof(std::int16_t))
            throw DataError(rawPath.string() + ": raw file shorter than DimSize product");
        for (std::size_t i = 0; i < n; ++i) vol.data[i] = float(buf[i]);
    }
    vol.validate();
    return vol;
}

/// Header text for a MET_FLOAT volume whose data lives in `rawFilename`.
inline std::string metaImageHeader(const Volume& vol, const std::string& rawFilename) {
    char num[96];
    std::ostringstream hdr;
    hdr << "ObjectType = Image\n";
    hdr << "NDims = 3\n";
    hdr << "BinaryData = True\n";
    hdr << "BinaryDataByteOrderMSB = False\n";
    hdr << "DimSize = " << vol.dims[0] << ' ' << vol.dims[1] << ' ' << vol.dims[2] << '\n';
    std::snprintf(num, sizeof num, "ElementSpacing = %.9g %.9g %.9g\n", vol.spacing.x,
                  vol.spacing.y, vol.spacing.z);
    hdr << num;
    std::snprintf(num, sizeof num, "Offset = %.9g %.9g %.9g\n", vol.origin.x, vol.origin.y,
                  vol.origin.z);
    hdr << num;
    hdr << "ElementType = MET_FLOAT\n";
    if (vol.calibrated) hdr << "DensityCalibrated = True\n";
    hdr << "ElementDataFile = " << rawFilename << '\n';
    return hdr.str();
}

inline std::string metaImageRawBytes(const Volume& vol) {
    return std::string(reinterpret_cast<const char*>(vol.data.data()),
                       vol.data.size() * sizeof(float));
}

/// Writes `headerPath` (.mhd) and a sibling .raw with MET_FLOAT data.
inline void writeMetaImage(const Volume& vol, const std::filesystem::path& headerPath) {
    vol.validate();
    std::filesystem::path rawPath = headerPath;
    rawPath.replace_extension(".raw");

    std::ofstream out(headerPath);
    if (!out) throw DataError(headerPath.string() + ": cannot write");
    out << metaImageHeader(vol, rawPath.filename().string());

    std::ofstream raw(rawPath, std::ios::binary);
    if (!raw) throw DataError(rawPath.string() + ": cannot write");
    std::string bytes = metaImageRawBytes(vol);
    raw.write(bytes.data(), std::streamsize(bytes.size()));
}

} // namespace corthick
