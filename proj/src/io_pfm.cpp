// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <sstream>

#include "gsdyn/io.hpp"

namespace gsdyn {

void write_pfm(const std::string& path, const ImageF& img) {
    if (img.ch != 1) throw IoError("pfm: only grayscale supported");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
    // PFM stores rows bottom-up
    std::vector<float> row(static_cast<size_t>(img.width));
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x)
            row[static_cast<size_t>(x)] = static_cast<float>(img.at(x, y, 0));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path);
}

ImageF read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    if (magic != "Pf" || w <= 0 || h <= 0) throw IoError(path + ": not a grayscale pfm");
    if (scale >= 0.0) throw IoError(path + ": big-endian pfm not supported");
    in.get();  // single whitespace after the header
    ImageF img(w, h, 1);
    std::vector<float> row(static_cast<size_t>(w));
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw IoError(path + ": truncated pfm data");
        for (int x = 0; x < w; ++x) img.at(x, y, 0) = row[static_cast<size_t>(x)];
    }
    return img;
}

}  // namespace gsdyn
