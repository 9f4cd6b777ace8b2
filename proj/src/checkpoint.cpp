// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "gsdyn/common.hpp"

namespace gsdyn {

namespace {

constexpr char kMagic[8] = {'G', 'S', 'D', 'Y', 'N', 'C', 'K', '1'};

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint " + path + ": truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

nlohmann::json config_json(const UNetConfig& cfg) {
    return nlohmann::json::parse(unet_config_to_json_string(cfg));
}

UNetConfig config_from_json(const nlohmann::json& j) {
    return unet_config_from_json_string(j.dump());
}

}  // namespace

void save_checkpoint(const std::string& path, const UNetConfig& cfg, UNetParams& params,
                     const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint " + path + ": cannot open for writing");
    os.write(kMagic, 8);
    nlohmann::json header = {{"format", "gsdyn-checkpoint-v1"},
                             {"config", config_json(cfg)},
                             {"epoch", meta.epoch},
                             {"seed", meta.seed}};
    std::string hs = header.dump();
    write_u32(os, static_cast<uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (ad::Param* p : params.all()) {
        write_u32(os, static_cast<uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        const auto& shape = p->value.shape();
        write_u32(os, static_cast<uint32_t>(shape.size()));
        for (int d : shape) write_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!os) throw IoError("checkpoint " + path + ": write failed");
}

void load_checkpoint(const std::string& path, UNetConfig& cfg, UNetParams& params,
                     CheckpointMeta& meta) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint " + path + ": cannot open");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("checkpoint " + path + ": bad magic");
    uint32_t hlen = read_u32(is, path);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    if (!is) throw IoError("checkpoint " + path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint " + path + ": bad header json: " + e.what());
    }
    if (header.value("format", "") != "gsdyn-checkpoint-v1")
        throw IoError("checkpoint " + path + ": unknown format tag");
    cfg = config_from_json(header.at("config"));
    meta.epoch = header.value("epoch", 0);
    meta.seed = header.value("seed", uint64_t{0});

    // Allocate the parameter set at the stored shapes, then fill by name.
    Rng rng(0);
    params.init(cfg, rng);
    std::set<std::string> pending;
    for (ad::Param* p : params.all()) pending.insert(p->name);
    while (is.peek() != EOF) {
        uint32_t nlen = read_u32(is, path);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t rank = read_u32(is, path);
        if (rank > 3) throw IoError("checkpoint " + path + ": bad rank for " + name);
        std::vector<int> shape(rank);
        size_t count = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(read_u32(is, path));
            count *= static_cast<size_t>(shape[d]);
        }
        ad::Param* target = nullptr;
        for (ad::Param* p : params.all())
            if (p->name == name) target = p;
        if (!target) throw IoError("checkpoint " + path + ": unknown tensor " + name);
        if (pending.count(name) == 0)
            throw IoError("checkpoint " + path + ": duplicate tensor " + name);
        if (target->value.shape() != shape)
            throw IoError("checkpoint " + path + ": shape mismatch for " + name);
        is.read(reinterpret_cast<char*>(target->value.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!is) throw IoError("checkpoint " + path + ": truncated tensor " + name);
        if (!target->value.all_finite())
            throw IoError("checkpoint " + path + ": non-finite values in " + name);
        pending.erase(name);
    }
    if (!pending.empty())
        throw IoError("checkpoint " + path + ": missing tensor " + *pending.begin());
}

}  // namespace gsdyn
