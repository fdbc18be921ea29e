// SPDX-License-Identifier: Apache-2.0
#include "stg/numerics/checkpoint.hpp"

#include <cstring>
#include <unordered_map>

#include "stg/io/binary.hpp"

namespace stg::num {

using io::FormatError;

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
    io::ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    for (const auto& [name, t] : tensors) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape) w.u32(static_cast<std::uint32_t>(e));
        w.raw(t.data.data(), t.data.size() * sizeof(float));
    }
    return w.buffer();
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
    io::ByteReader r(bytes, source);
    char magic[4] = {};
    if (r.remaining() < 4) throw FormatError(FormatError::Kind::BadMagic, source + ": bad magic (file too short)");
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(FormatError::Kind::BadMagic, source + ": bad magic");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw FormatError(FormatError::Kind::BadVersion,
                          source + ": unsupported checkpoint version " + std::to_string(version));
    NamedTensors out;
    while (r.remaining() > 0) {
        const std::uint32_t len = r.u32("name length");
        auto name_bytes = r.take(len, "name");
        std::string name(name_bytes.begin(), name_bytes.end());
        const std::uint32_t rank = r.u32("rank of " + name);
        Shape shape(rank);
        for (auto& e : shape) {
            e = r.u32("extent of " + name);
            if (e == 0) throw FormatError(FormatError::Kind::Schema, source + ": zero extent in " + name);
        }
        Tensor<float> t(shape);
        r.read(t.data.data(), t.size() * sizeof(float), "payload of " + name);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

NamedTensors collect(std::span<const ParameterSet<float>* const> sets) {
    NamedTensors out;
    for (const auto* set : sets)
        for (const auto& p : *set) out.emplace_back(p->name, p->value);
    return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const ParameterSet<float>* const> sets) {
    io::write_file_atomic(path, encode_checkpoint(collect(sets)));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path), path.string());
}

void load_checkpoint_into(const std::filesystem::path& path, std::span<ParameterSet<float>* const> sets) {
    NamedTensors loaded = load_checkpoint(path);
    std::unordered_map<std::string, Tensor<float>*> by_name;
    for (auto& [name, t] : loaded) by_name[name] = &t;
    for (auto* set : sets) {
        for (auto& p : *set) {
            auto it = by_name.find(p->name);
            if (it == by_name.end())
                throw FormatError(FormatError::Kind::Schema, path.string() + ": missing tensor " + p->name);
            if (it->second->shape != p->value.shape)
                throw FormatError(FormatError::Kind::Geometry,
                                  path.string() + ": shape mismatch for " + p->name + ": " +
                                      shape_str(it->second->shape) + " vs " + shape_str(p->value.shape));
            p->value = *it->second;
        }
    }
}

std::string parameter_hash(std::span<const ParameterSet<float>* const> sets) {
    return io::sha256_hex(encode_checkpoint(collect(sets)));
}

}  // namespace stg::num
