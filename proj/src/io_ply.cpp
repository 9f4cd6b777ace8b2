// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gsdyn/io.hpp"

namespace gsdyn {

namespace {

const std::array<const char*, 14> kProps = {"x",       "y",       "z",      "rot_0",
                                            "rot_1",   "rot_2",   "rot_3",  "scale_0",
                                            "scale_1", "scale_2", "red",    "green",
                                            "blue",    "opacity"};

}  // namespace

void write_gaussians_ply(const std::string& path, const GaussianFrame& frame) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << frame.size() << "\n";
    for (const char* p : kProps) out << "property float " << p << "\n";
    out << "end_header\n";
    std::vector<float> row(kProps.size());
    for (int i = 0; i < frame.size(); ++i) {
        size_t k = static_cast<size_t>(i);
        const Vec3& c = frame.center[k];
        const Vec4& q = frame.rot[k];
        const Vec3& s = frame.scale[k];
        const Vec3& col = frame.color[k];
        double vals[14] = {c.x(), c.y(), c.z(), q[0],    q[1],    q[2],    q[3],
                           s.x(), s.y(), s.z(), col.x(), col.y(), col.z(), frame.opacity[k]};
        for (size_t j = 0; j < 14; ++j) row[j] = static_cast<float>(vals[j]);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path);
}

GaussianFrame read_gaussians_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw IoError(path + ": not a ply file");
    if (!std::getline(in, line) || line != "format binary_little_endian 1.0")
        throw IoError(path + ": unsupported ply format (need binary_little_endian 1.0)");
    long vertex_count = -1;
    // slot of each known property in file order, -1 while unseen
    std::vector<int> file_order;
    std::array<int, 14> prop_slot;
    prop_slot.fill(-1);
    bool in_vertex_element = false;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string name;
            long count = 0;
            ls >> name >> count;
            if (name != "vertex")
                throw IoError(path + ": unexpected element '" + name + "'");
            vertex_count = count;
            in_vertex_element = true;
            continue;
        }
        if (word == "property") {
            if (!in_vertex_element) throw IoError(path + ": property before element");
            std::string type, name;
            ls >> type >> name;
            if (type != "float")
                throw IoError(path + ": property '" + name + "' has type '" + type +
                              "', expected float");
            int known = -1;
            for (size_t j = 0; j < kProps.size(); ++j)
                if (name == kProps[j]) known = static_cast<int>(j);
            if (known < 0) throw IoError(path + ": unknown property '" + name + "'");
            if (prop_slot[static_cast<size_t>(known)] >= 0)
                throw IoError(path + ": duplicate property '" + name + "'");
            prop_slot[static_cast<size_t>(known)] = static_cast<int>(file_order.size());
            file_order.push_back(known);
            continue;
        }
        throw IoError(path + ": malformed header line '" + line + "'");
    }
    if (vertex_count < 0) throw IoError(path + ": missing vertex element");
    for (size_t j = 0; j < kProps.size(); ++j)
        if (prop_slot[j] < 0)
            throw IoError(path + ": missing property '" + std::string(kProps[j]) + "'");

    GaussianFrame frame;
    frame.resize(static_cast<int>(vertex_count));
    size_t stride = file_order.size();
    std::vector<float> row(stride);
    for (long i = 0; i < vertex_count; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(stride * sizeof(float)));
        if (!in) throw IoError(path + ": truncated vertex data");
        double v[14];
        for (size_t j = 0; j < 14; ++j) v[j] = row[static_cast<size_t>(prop_slot[j])];
        size_t k = static_cast<size_t>(i);
        frame.center[k] = Vec3(v[0], v[1], v[2]);
        frame.rot[k] = Vec4(v[3], v[4], v[5], v[6]).normalized();
        frame.scale[k] = Vec3(v[7], v[8], v[9]);
        frame.color[k] = Vec3(v[10], v[11], v[12]);
        frame.opacity[k] = v[13];
    }
    return frame;
}

}  // namespace gsdyn
