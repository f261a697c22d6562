// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/image.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace corea {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

/// Little-endian fixed-width binary writer for checkpoint files.
class ByteWriter {
public:
    explicit ByteWriter(std::ostream& s) : s_(s) {}

    void magic(const char tag[5]) { s_.write(tag, 4); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void vec3(const Vec3& v) {
        f64(v.x());
        f64(v.y());
        f64(v.z());
    }
    void f64_array(const double* p, size_t n) { raw(p, 8 * n); }

private:
    void raw(const void* p, size_t n) { s_.write(reinterpret_cast<const char*>(p), std::streamsize(n)); }
    std::ostream& s_;
};

class ByteReader {
public:
    ByteReader(std::istream& s, std::string name) : s_(s), name_(std::move(name)) {}

    void magic(const char tag[5]) {
        char buf[4];
        raw(buf, 4);
        if (std::memcmp(buf, tag, 4) != 0)
            throw io_error(name_ + ": bad magic, expected " + std::string(tag, 4));
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    Vec3 vec3() {
        double x = f64(), y = f64(), z = f64();
        return Vec3(x, y, z);
    }
    void f64_array(double* p, size_t n) { raw(p, 8 * n); }

private:
    void raw(void* p, size_t n) {
        s_.read(reinterpret_cast<char*>(p), std::streamsize(n));
        if (s_.gcount() != std::streamsize(n)) throw io_error(name_ + ": truncated file");
    }
    std::istream& s_;
    std::string name_;
};

} // namespace corea
