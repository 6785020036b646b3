#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace apr::binio {

// Little-endian byte sink for the on-disk formats.
class Writer {
   public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v)); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

    const std::vector<char> &buffer() const noexcept { return buf_; }
    std::size_t size() const noexcept { return buf_.size(); }

   private:
    template <typename U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    std::vector<char> buf_;
};

class Reader {
   public:
    Reader(const char *data, std::size_t size) : data_(data), size_(size) {}
    explicit Reader(const std::vector<char> &buf) : Reader(buf.data(), buf.size()) {}

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(data_ + pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(get<std::uint8_t>()); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    std::int64_t i64() { return static_cast<std::int64_t>(get<std::uint64_t>()); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

    std::size_t position() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == size_; }

   private:
    void need(std::size_t n) const {
        if (size_ - pos_ < n) fail(ErrorKind::Decode, "truncated record");
    }

    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }

    const char *data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::string &path);
void write_file(const std::string &path, const std::vector<char> &bytes);

}  // namespace apr::binio
