#include "mmcd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmcd/errors.hpp"
#include "mmcd/sha256.hpp"

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace mmcd {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'C', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

using nlohmann::json;

std::vector<Parameter*> sorted_by_name(std::vector<Parameter*> leaves) {
    for (const Parameter* p : leaves)
        if (p->name.empty()) throw InvalidArgument("cannot serialize unnamed parameter");
    std::sort(leaves.begin(), leaves.end(),
              [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
    return leaves;
}

std::vector<float> to_f32(const Tensor& t) {
    std::vector<float> out(static_cast<std::size_t>(t.numel()));
    for (long i = 0; i < t.numel(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_hash,
                     const std::vector<Parameter*>& leaves) {
    const auto sorted = sorted_by_name(leaves);
    json dir = json::array();
    std::uint64_t offset = 0;
    for (const Parameter* p : sorted) {
        json e;
        e["name"] = p->name;
        e["shape"] = p->value.shape();
        e["frozen"] = !p->trainable;
        e["buffer"] = p->buffer;
        e["offset"] = offset;
        e["count"] = p->value.numel();
        dir.push_back(std::move(e));
        offset += static_cast<std::uint64_t>(p->value.numel());
    }
    json header;
    header["config_hash"] = config_hash;
    header["leaves"] = std::move(dir);
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(kMagic, 8);
    const std::uint32_t ver = kVersion;
    f.write(reinterpret_cast<const char*>(&ver), 4);
    const std::uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Parameter* p : sorted) {
        const auto buf = to_f32(p->value);
        f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    }
    if (!f) throw IoError("write failed: " + path);
}

namespace {

struct Staged {
    Shape shape;
    bool frozen = false;
    bool buffer = false;
    std::vector<float> values;
};

struct Archive {
    std::string config_hash;
    std::vector<std::pair<std::string, Staged>> entries;
};

Archive parse_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 20 || std::memcmp(raw.data(), kMagic, 8) != 0)
        throw IncompatibleCheckpoint("not a checkpoint archive: " + path);
    std::uint32_t ver = 0;
    std::memcpy(&ver, raw.data() + 8, 4);
    if (ver != kVersion) throw IncompatibleCheckpoint("unsupported checkpoint version");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, raw.data() + 12, 8);
    if (20 + hlen > raw.size()) throw IncompatibleCheckpoint("truncated checkpoint header");
    json header;
    try {
        header = json::parse(raw.substr(20, hlen));
    } catch (const json::exception&) {
        throw IncompatibleCheckpoint("corrupt checkpoint header");
    }
    Archive a;
    const char* payload = raw.data() + 20 + hlen;
    const std::uint64_t payload_count = (raw.size() - 20 - hlen) / 4;
    try {
        a.config_hash = header.at("config_hash").get<std::string>();
        for (const json& e : header.at("leaves")) {
            Staged s;
            s.shape = e.at("shape").get<Shape>();
            s.frozen = e.at("frozen").get<bool>();
            s.buffer = e.at("buffer").get<bool>();
            const std::uint64_t off = e.at("offset").get<std::uint64_t>();
            const std::uint64_t cnt = e.at("count").get<std::uint64_t>();
            if (cnt != static_cast<std::uint64_t>(shape_numel(s.shape)) || off + cnt > payload_count)
                throw IncompatibleCheckpoint("corrupt checkpoint directory");
            s.values.resize(cnt);
            std::memcpy(s.values.data(), payload + off * 4, cnt * 4);
            a.entries.emplace_back(e.at("name").get<std::string>(), std::move(s));
        }
    } catch (const json::exception&) {
        throw IncompatibleCheckpoint("corrupt checkpoint header fields");
    }
    return a;
}

}  // namespace

std::string read_checkpoint_hash(const std::string& path) { return parse_archive(path).config_hash; }

void load_checkpoint(const std::string& path, const std::string& expected_hash,
                     const std::vector<Parameter*>& leaves) {
    const Archive a = parse_archive(path);
    if (!expected_hash.empty() && a.config_hash != expected_hash)
        throw IncompatibleCheckpoint("checkpoint was written for a different configuration (hash " +
                                     a.config_hash + ", expected " + expected_hash + ")");
    const auto sorted = sorted_by_name(leaves);
    if (sorted.size() != a.entries.size())
        throw IncompatibleCheckpoint("checkpoint leaf count mismatch");
    // Validate everything before mutating anything.
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& [name, s] = a.entries[i];
        if (sorted[i]->name != name)
            throw IncompatibleCheckpoint("checkpoint leaf name mismatch: " + name + " vs " + sorted[i]->name);
        if (sorted[i]->value.shape() != s.shape)
            throw IncompatibleCheckpoint("checkpoint leaf shape mismatch: " + name);
        if (sorted[i]->buffer != s.buffer)
            throw IncompatibleCheckpoint("checkpoint leaf kind mismatch: " + name);
    }
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& s = a.entries[i].second;
        Parameter& p = *sorted[i];
        for (long k = 0; k < p.value.numel(); ++k)
            p.value[k] = static_cast<double>(s.values[static_cast<std::size_t>(k)]);
        p.trainable = !s.frozen;
        p.zero_grad();
    }
}

std::string frozen_digest(const std::vector<Parameter*>& leaves) {
    Sha256 h;
    for (const Parameter* p : sorted_by_name(leaves)) {
        if (p->trainable || p->buffer) continue;
        h.update(p->name);
        const auto buf = to_f32(p->value);
        h.update(buf.data(), buf.size() * 4);
    }
    return h.hex_digest();
}

}  // namespace mmcd
