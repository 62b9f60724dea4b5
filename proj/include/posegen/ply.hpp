#pragma once

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "posegen/geometry.hpp"

namespace posegen {

// ASCII PLY, vertices only. Recognized properties are float x/y/z and uchar
// red/green/blue (colors land in attrs as three columns, raw 0..255).
// Unknown properties are skipped with a warning on stderr.

inline void write_ply(const std::string& path, const PointCloud& pc, bool with_color = false) {
    pc.check_attrs();
    if (with_color && pc.attrs.cols() < 3) {
        throw std::invalid_argument("write_ply: color output needs >= 3 attribute columns");
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("write_ply: cannot open " + path);
    }
    out << "ply\nformat ascii 1.0\nelement vertex " << pc.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n";
    if (with_color) {
        out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    out << "end_header\n";
    char buf[96];
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const Vec3& p = pc.points[i];
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", p.x(), p.y(), p.z());
        out << buf;
        if (with_color) {
            for (int c = 0; c < 3; ++c) {
                const double v = pc.attrs(static_cast<Eigen::Index>(i), c);
                const int byte = std::max(0, std::min(255, static_cast<int>(std::lround(v))));
                out << ' ' << byte;
            }
        }
        out << "\n";
    }
    if (!out) {
        throw std::runtime_error("write_ply: write failed for " + path);
    }
}

inline PointCloud read_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("read_ply: cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line) || line != "ply") {
        throw std::runtime_error("read_ply: missing ply magic in " + path);
    }
    std::size_t vertex_count = 0;
    bool in_vertex_element = false;
    bool seen_format = false;
    // Column role per vertex property: 0..2 = x/y/z, 3..5 = rgb, -1 = skip.
    std::vector<int> roles;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment") continue;
        if (tok == "format") {
            std::string kind;
            ls >> kind;
            if (kind != "ascii") {
                throw std::runtime_error("read_ply: only ascii format is supported: " + path);
            }
            seen_format = true;
        } else if (tok == "element") {
            std::string name;
            std::size_t count = 0;
            ls >> name >> count;
            if (name == "vertex") {
                vertex_count = count;
                in_vertex_element = true;
            } else {
                if (count > 0) {
                    throw std::runtime_error("read_ply: unsupported element '" + name + "' in " + path);
                }
                in_vertex_element = false;
            }
        } else if (tok == "property") {
            if (!in_vertex_element) continue;
            std::string type, name;
            ls >> type >> name;
            if (type == "list") {
                throw std::runtime_error("read_ply: list properties unsupported in " + path);
            }
            int role = -1;
            if (name == "x") role = 0;
            else if (name == "y") role = 1;
            else if (name == "z") role = 2;
            else if (name == "red") role = 3;
            else if (name == "green") role = 4;
            else if (name == "blue") role = 5;
            if (role < 0) {
                std::cerr << "read_ply: skipping unknown property '" << name << "' in " << path << "\n";
            }
            roles.push_back(role);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!seen_format) {
        throw std::runtime_error("read_ply: missing format line in " + path);
    }
    bool has_xyz[3] = {false, false, false};
    bool has_color = false;
    for (int r : roles) {
        if (r >= 0 && r < 3) has_xyz[r] = true;
        if (r >= 3) has_color = true;
    }
    if (!has_xyz[0] || !has_xyz[1] || !has_xyz[2]) {
        throw std::runtime_error("read_ply: vertex element lacks x/y/z in " + path);
    }
    PointCloud pc;
    pc.points.reserve(vertex_count);
    if (has_color) pc.attrs.setZero(static_cast<Eigen::Index>(vertex_count), 3);
    for (std::size_t i = 0; i < vertex_count; ++i) {
        if (!std::getline(in, line)) {
            throw std::runtime_error("read_ply: truncated vertex data in " + path);
        }
        std::istringstream ls(line);
        Vec3 p = Vec3::Zero();
        for (int role : roles) {
            double v = 0.0;
            if (!(ls >> v)) {
                throw std::runtime_error("read_ply: malformed vertex row in " + path);
            }
            if (role >= 0 && role < 3) p[role] = v;
            else if (role >= 3) pc.attrs(static_cast<Eigen::Index>(i), role - 3) = v;
        }
        pc.points.push_back(p);
    }
    return pc;
}

}  // namespace posegen
