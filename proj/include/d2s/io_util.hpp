#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#if defined(__unix__) || defined(__APPLE__)
#include <unistd.h>
#endif

#include "d2s/errors.hpp"

// All on-disk formats are little-endian with IEEE-754 floats. The helpers
// below assume a little-endian host (checked at compile time) and write
// through a temp file that is flushed and renamed into place, so a failed
// write never leaves a partial file behind.

static_assert(std::endian::native == std::endian::little,
              "on-disk formats require a little-endian host");

namespace d2s {

class BinaryWriter {
  public:
    explicit BinaryWriter(const std::string& path)
        : final_path_(path), tmp_path_(path + ".tmp"), out_(tmp_path_, std::ios::binary | std::ios::trunc) {
        if (!out_) {
            throw FormatError("cannot open for writing: " + tmp_path_);
        }
    }

    ~BinaryWriter() {
        if (!committed_) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_path_, ec);
        }
    }

    void write_bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) {
            throw FormatError("write failed: " + tmp_path_);
        }
    }

    void write_u16(std::uint16_t v) { write_bytes(&v, sizeof v); }
    void write_u32(std::uint32_t v) { write_bytes(&v, sizeof v); }
    void write_u64(std::uint64_t v) { write_bytes(&v, sizeof v); }
    void write_f32(float v) { write_bytes(&v, sizeof v); }
    void write_f32s(const float* p, std::size_t n) { write_bytes(p, n * sizeof(float)); }
    void write_magic(const char magic[4]) { write_bytes(magic, 4); }

    void write_id(const std::string& id) {
        if (id.size() > 0xffff) {
            throw FormatError("id longer than 65535 bytes: " + id.substr(0, 32) + "...");
        }
        write_u16(static_cast<std::uint16_t>(id.size()));
        write_bytes(id.data(), id.size());
    }

    // Flush to disk, fsync, then rename over the final path.
    void commit() {
        out_.flush();
        if (!out_) {
            throw FormatError("flush failed: " + tmp_path_);
        }
        out_.close();
        std::FILE* f = std::fopen(tmp_path_.c_str(), "rb+");
        if (f != nullptr) {
            std::fflush(f);
#if defined(__unix__) || defined(__APPLE__)
            ::fsync(::fileno(f));
#endif
            std::fclose(f);
        }
        std::error_code ec;
        std::filesystem::rename(tmp_path_, final_path_, ec);
        if (ec) {
            throw FormatError("rename failed for " + final_path_ + ": " + ec.message());
        }
        committed_ = true;
    }

  private:
    std::string final_path_;
    std::string tmp_path_;
    std::ofstream out_;
    bool committed_ = false;
};

class BinaryReader {
  public:
    explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) {
            throw FormatError("cannot open for reading: " + path);
        }
    }

    const std::string& path() const { return path_; }

    std::size_t offset() const { return offset_; }

    void read_bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError(path_ + ": truncated at byte offset " + std::to_string(offset_));
        }
        offset_ += n;
    }

    std::uint16_t read_u16() { std::uint16_t v; read_bytes(&v, sizeof v); return v; }
    std::uint32_t read_u32() { std::uint32_t v; read_bytes(&v, sizeof v); return v; }
    std::uint64_t read_u64() { std::uint64_t v; read_bytes(&v, sizeof v); return v; }
    float read_f32() { float v; read_bytes(&v, sizeof v); return v; }
    void read_f32s(float* p, std::size_t n) { read_bytes(p, n * sizeof(float)); }

    // Labeled variants: on truncation the error names the field being read.
    std::uint16_t read_u16(const char* field) { return labeled<std::uint16_t>(field, [&] { return read_u16(); }); }
    std::uint32_t read_u32(const char* field) { return labeled<std::uint32_t>(field, [&] { return read_u32(); }); }
    std::uint64_t read_u64(const char* field) { return labeled<std::uint64_t>(field, [&] { return read_u64(); }); }
    float read_f32(const char* field) { return labeled<float>(field, [&] { return read_f32(); }); }
    void read_f32s(float* p, std::size_t n, const char* field) {
        labeled<int>(field, [&] { read_f32s(p, n); return 0; });
    }

    void expect_magic(const char magic[4], const std::string& format_name) {
        char got[4];
        read_bytes(got, 4);
        if (std::memcmp(got, magic, 4) != 0) {
            throw FormatError(path_ + ": bad magic, not a " + format_name + " file");
        }
    }
    void expect_magic(const char magic[4]) { expect_magic(magic, std::string(magic, 4)); }

    void expect_version(std::uint32_t expected, const std::string& format_name) {
        const std::uint32_t v = read_u32();
        if (v != expected) {
            throw FormatError(path_ + ": unsupported " + format_name + " version " +
                              std::to_string(v));
        }
    }
    void expect_version(std::uint32_t expected) { expect_version(expected, "format"); }

    std::string read_id() {
        const std::uint16_t n = read_u16();
        std::string s(n, '\0');
        read_bytes(s.data(), n);
        return s;
    }

    // True when the stream is exactly at end of file.
    bool at_eof() {
        return in_.peek() == std::char_traits<char>::eof();
    }

  private:
    template <typename T, typename Fn>
    T labeled(const char* field, Fn&& fn) {
        try {
            return fn();
        } catch (const FormatError& e) {
            throw FormatError(std::string(e.what()) + " while reading " + field);
        }
    }

    std::string path_;
    std::ifstream in_;
    std::size_t offset_ = 0;
};

// Whole-file text write with the same flush-fsync-rename discipline as
// BinaryWriter.
inline void write_text_atomic(const std::string& body, const std::string& path) {
    BinaryWriter w(path);
    w.write_bytes(body.data(), body.size());
    w.commit();
}

// FNV-1a 64-bit digest of a file's bytes, rendered as 16 hex chars.
inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open for digest: " + path);
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof buf);
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<std::uint8_t>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return std::string(hex);
}

}  // namespace d2s
