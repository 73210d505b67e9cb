#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "siclab/common.hpp"

namespace siclab::detail {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

class ByteWriter {
public:
    void raw(std::string_view s) { out_.append(s); }

    template <class T>
    void put(T value) {
        char buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        out_.append(buf, sizeof(T));
    }

    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    void expect_magic(std::string_view magic) {
        if (data_.substr(pos_, magic.size()) != magic)
            throw FormatError("bad magic, expected \"" + std::string(magic) + "\"");
        pos_ += magic.size();
    }

    template <class T>
    T get() {
        if (data_.size() - pos_ < sizeof(T)) throw FormatError("truncated stream");
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace siclab::detail
