// Versioned binary checkpoint container.
//
// Layout (all integers little-endian):
//   magic "GUMMP" | format version u32 | header length u64 | header JSON
//   | tensor count u64 | tensor records | checksum u64
// A tensor record is: name length u64, UTF-8 name, rank u64, extents u64
// each, then values as IEEE-754 binary64. The header JSON carries the config
// snapshot, epoch counter, Adam step counter and the RNG state (hex string).
// The trailing checksum is 64-bit FNV-1a over every preceding byte.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gummp/config.hpp"
#include "gummp/errors.hpp"
#include "gummp/model.hpp"
#include "gummp/training.hpp"

namespace gummp {

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[5] = {'G', 'U', 'M', 'M', 'P'};

inline uint64_t fnv1a64(const uint8_t* p, size_t n) {
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

struct Checkpoint {
    Config config;
    size_t epoch = 0;
    uint64_t adam_step = 0;
    uint64_t rng_state = 0;
    std::vector<std::pair<std::string, NdArray>> tensors;

    static Checkpoint capture(const Config& cfg, Trainer& trainer) {
        Checkpoint c;
        c.config = cfg;
        c.epoch = trainer.epochs_done();
        c.adam_step = trainer.adam().step;
        c.rng_state = trainer.rng_state();
        size_t idx = 0;
        trainer.params().visit([&](const std::string& name, NdArray& a) {
            c.tensors.emplace_back("param/" + name, a);
            ++idx;
        });
        idx = 0;
        trainer.params().visit([&](const std::string& name, NdArray&) {
            c.tensors.emplace_back("adam_m/" + name, trainer.adam().m[idx]);
            c.tensors.emplace_back("adam_v/" + name, trainer.adam().v[idx]);
            ++idx;
        });
        return c;
    }

    // Splits the flat tensor list back into params + moments; shapes are
    // validated against the config-derived model.
    void restore(ModelParams& params, AdamState& adam, size_t vocab_size) const {
        ModelDims dims = ModelDims::from(config.model, vocab_size);
        SeededRng dummy(0);
        params = ModelParams::init(dims, dummy);
        adam = AdamState::init(params);
        adam.step = adam_step;
        size_t cursor = 0;
        auto next = [&](const std::string& want) -> const NdArray& {
            if (cursor >= tensors.size())
                throw VersionError("checkpoint is missing tensor " + want);
            if (tensors[cursor].first != want)
                throw VersionError("checkpoint tensor order mismatch: found " +
                                   tensors[cursor].first + ", expected " + want);
            return tensors[cursor++].second;
        };
        auto assign = [&](const std::string& name, NdArray& dst, const NdArray& src) {
            if (src.shape != dst.shape)
                throw VersionError("checkpoint tensor " + name + " has shape " +
                                   shape_str(src.shape) + ", expected " + shape_str(dst.shape));
            dst = src;
        };
        params.visit([&](const std::string& name, NdArray& a) {
            assign(name, a, next("param/" + name));
        });
        size_t idx = 0;
        params.visit([&](const std::string& name, NdArray&) {
            assign(name, adam.m[idx], next("adam_m/" + name));
            assign(name, adam.v[idx], next("adam_v/" + name));
            ++idx;
        });
        if (cursor != tensors.size())
            throw VersionError("checkpoint holds " + std::to_string(tensors.size() - cursor) +
                               " unexpected extra tensors");
    }
};

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& buf, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    put_u64(buf, bits);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) {
        if (pos + n > buf.size())
            throw IntegrityError(std::string("checkpoint truncated while reading ") + what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64(const char* what) {
        uint64_t bits = u64(what);
        double d;
        std::memcpy(&d, &bits, sizeof(d));
        return d;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
    std::string buf;
    buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u32(buf, kCheckpointVersion);

    char rng_hex[19];
    std::snprintf(rng_hex, sizeof(rng_hex), "0x%016llx",
                  static_cast<unsigned long long>(c.rng_state));
    nlohmann::json header{{"config", c.config},
                          {"epoch", c.epoch},
                          {"adam_step", c.adam_step},
                          {"rng_state", std::string(rng_hex)}};
    std::string header_text = header.dump();
    detail::put_u64(buf, header_text.size());
    buf += header_text;

    detail::put_u64(buf, c.tensors.size());
    for (const auto& [name, a] : c.tensors) {
        detail::put_u64(buf, name.size());
        buf += name;
        detail::put_u64(buf, a.shape.size());
        for (size_t e : a.shape) detail::put_u64(buf, e);
        for (double d : a.data) detail::put_f64(buf, d);
    }
    uint64_t checksum = fnv1a64(reinterpret_cast<const uint8_t*>(buf.data()), buf.size());
    detail::put_u64(buf, checksum);
    return buf;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
    if (buf.size() < sizeof(kCheckpointMagic) + 4 + 8)
        throw IntegrityError("checkpoint too short to be valid");
    if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw IntegrityError("checkpoint magic bytes mismatch");
    uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<uint64_t>(static_cast<uint8_t>(buf[buf.size() - 8 + i])) << (8 * i);
    uint64_t computed =
        fnv1a64(reinterpret_cast<const uint8_t*>(buf.data()), buf.size() - 8);
    if (stored != computed) throw IntegrityError("checkpoint checksum mismatch");

    detail::Reader r{buf, sizeof(kCheckpointMagic)};
    uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint format version " + std::to_string(version) +
                           ", expected " + std::to_string(kCheckpointVersion));
    Checkpoint c;
    uint64_t header_len = r.u64("header length");
    std::string header_text = r.bytes(header_len, "header");
    nlohmann::json header = nlohmann::json::parse(header_text, nullptr, false);
    if (header.is_discarded()) throw IntegrityError("checkpoint header is not valid JSON");
    c.config = header.at("config").get<Config>();
    c.epoch = header.value("epoch", size_t{0});
    c.adam_step = header.value("adam_step", uint64_t{0});
    c.rng_state = std::stoull(header.value("rng_state", std::string("0x0")), nullptr, 16);

    uint64_t count = r.u64("tensor count");
    for (uint64_t i = 0; i < count; ++i) {
        uint64_t name_len = r.u64("tensor name length");
        std::string name = r.bytes(name_len, "tensor name");
        uint64_t rank = r.u64("tensor rank");
        std::vector<size_t> shape;
        size_t numel = 1;
        for (uint64_t d = 0; d < rank; ++d) {
            shape.push_back(r.u64("tensor extent"));
            numel *= shape.back();
        }
        NdArray a(shape);
        for (size_t d = 0; d < numel; ++d) a.data[d] = r.f64("tensor values");
        c.tensors.emplace_back(std::move(name), std::move(a));
    }
    if (r.pos != buf.size() - 8)
        throw IntegrityError("checkpoint holds trailing bytes after the tensor records");
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::string buf = serialize_checkpoint(c);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IntegrityError("cannot write checkpoint " + path);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw IntegrityError("short write on checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IntegrityError("cannot read checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(buf);
}

}  // namespace gummp
