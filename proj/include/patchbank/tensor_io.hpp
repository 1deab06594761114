#pragma once

// UFT1 tensor container.
//
//   offset  size  field
//   0       4     magic "UFT1" (0x55 0x46 0x54 0x31)
//   4       1     dtype code (1 = IEEE-754 binary32)
//   5       1     ndim, 1..4
//   6       2     zero padding
//   8       8*nd  dims, little-endian u64
//   ...           row-major little-endian payload, product(dims) elements
//
// Only binary32 is defined in format version 1.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "patchbank/error.hpp"

namespace patchbank {

inline constexpr std::array<std::uint8_t, 4> kTensorMagic{0x55, 0x46, 0x54, 0x31};
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::size_t kTensorHeaderBytes = 8;
inline constexpr std::size_t kMaxTensorRank = 4;
inline constexpr int kTensorFormatVersion = 1;

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<std::uint64_t> d, std::vector<float> v) : dims(std::move(d)), data(std::move(v)) {}

    std::size_t ndim() const { return dims.size(); }

    std::uint64_t element_count() const {
        std::uint64_t n = 1;
        for (auto d : dims) {
            n *= d;
        }
        return n;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Throws FormatError when the tensor cannot be represented in a UFT1 file.
inline void validate_tensor(const Tensor& t) {
    if (t.dims.empty() || t.dims.size() > kMaxTensorRank) {
        throw FormatError("tensor rank must be in [1, 4], got " + std::to_string(t.dims.size()));
    }
    for (auto d : t.dims) {
        if (d < 1) {
            throw FormatError("tensor dims must be >= 1");
        }
    }
    if (t.element_count() != t.data.size()) {
        throw FormatError("tensor payload has " + std::to_string(t.data.size()) + " elements, dims imply " +
                          std::to_string(t.element_count()));
    }
}

namespace detail {

inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    } else {
        return v;
    }
}

}  // namespace detail

// Serializes a tensor to its exact on-disk byte image.
inline std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    validate_tensor(t);
    std::vector<std::uint8_t> out;
    out.reserve(kTensorHeaderBytes + 8 * t.dims.size() + 4 * t.data.size());
    out.insert(out.end(), kTensorMagic.begin(), kTensorMagic.end());
    out.push_back(kDtypeFloat32);
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    out.push_back(0);
    out.push_back(0);
    for (auto d : t.dims) {
        detail::put_u64_le(out, d);
    }
    const std::size_t base = out.size();
    out.resize(base + 4 * t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const std::uint32_t bits = detail::to_le(std::bit_cast<std::uint32_t>(t.data[i]));
        std::memcpy(out.data() + base + 4 * i, &bits, 4);
    }
    return out;
}

inline Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kTensorHeaderBytes || !std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin())) {
        throw FormatError("not a UFT1 file");
    }
    if (bytes[4] != kDtypeFloat32) {
        throw FormatError("unsupported dtype " + std::to_string(bytes[4]));
    }
    const std::size_t ndim = bytes[5];
    if (ndim < 1 || ndim > kMaxTensorRank) {
        throw FormatError("tensor rank must be in [1, 4], got " + std::to_string(ndim));
    }
    if (bytes[6] != 0 || bytes[7] != 0) {
        throw FormatError("nonzero header padding");
    }
    const std::size_t dims_end = kTensorHeaderBytes + 8 * ndim;
    if (bytes.size() < dims_end) {
        throw FormatError("size mismatch: truncated dims");
    }
    Tensor t;
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        const std::uint64_t d = detail::get_u64_le(bytes.data() + kTensorHeaderBytes + 8 * i);
        if (d < 1) {
            throw FormatError("tensor dims must be >= 1");
        }
        if (count > (std::uint64_t{1} << 40) / d) {
            throw FormatError("size mismatch: dims too large");
        }
        count *= d;
        t.dims.push_back(d);
    }
    if (bytes.size() - dims_end != count * 4) {
        throw FormatError("size mismatch: dims imply " + std::to_string(count * 4) + " payload bytes, found " +
                          std::to_string(bytes.size() - dims_end));
    }
    t.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + dims_end + 4 * i, 4);
        t.data[i] = std::bit_cast<float>(detail::to_le(bits));
    }
    return t;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open: " + path.string());
    }
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) {
        throw IoError("read failed: " + path.string());
    }
    return bytes;
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    write_bytes(path, encode_tensor(t));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    try {
        return decode_tensor(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace patchbank
