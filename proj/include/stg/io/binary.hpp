// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stg::io {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume little-endian hosts");

class FormatError : public std::runtime_error {
   public:
    enum class Kind { BadMagic, BadVersion, Truncated, TrailingBytes, Geometry, Io, Schema };
    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

   private:
    Kind kind_;
};

class ByteWriter {
   public:
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void f32(float v) { raw(&v, sizeof v); }
    void bytes(std::string_view s) { raw(s.data(), s.size()); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    const std::vector<std::uint8_t>& buffer() const { return buf_; }

   private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
   public:
    ByteReader(std::span<const std::uint8_t> data, std::string source)
        : data_(data), source_(std::move(source)) {}

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

    void need(std::size_t n, const std::string& what) const {
        if (remaining() < n) {
            throw FormatError(FormatError::Kind::Truncated,
                              source_ + ": truncated payload reading " + what + ": expected " +
                                  std::to_string(pos_ + n) + " bytes, file has " +
                                  std::to_string(data_.size()));
        }
    }
    std::uint32_t u32(const std::string& what) {
        std::uint32_t v;
        read(&v, sizeof v, what);
        return v;
    }
    void read(void* out, std::size_t n, const std::string& what) {
        need(n, what);
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    std::span<const std::uint8_t> take(std::size_t n, const std::string& what) {
        need(n, what);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

   private:
    std::span<const std::uint8_t> data_;
    std::string source_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

}  // namespace stg::io
