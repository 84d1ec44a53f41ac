#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "egsa/tensor.hpp"

namespace egsa {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// 8-bit image with 1 (PGM) or 3 (PPM) interleaved channels.
struct Image8 {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;
};

// Netpbm binary formats, maxval 255. P5 carries 1 channel, P6 carries 3.
std::vector<std::uint8_t> encode_pnm(const Image8& image);
Image8 decode_pnm(std::span<const std::uint8_t> bytes);

// Depth file: "DMAP", u32 height, u32 width, u32 CRC32 of payload, then
// height*width little-endian float32 values, row-major.
std::vector<std::uint8_t> encode_dmap(const Tensor4& depth);
Tensor4 decode_dmap(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
/// Writes to a sibling temporary file, then renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// [0,1] float planes to 8-bit with round-to-nearest, and back (v / 255).
Image8 to_image8(const Tensor4& t);
Tensor4 from_image8(const Image8& image);

// Little-endian primitives shared by the binary formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    std::span<const std::uint8_t> take(std::size_t n);
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const;
    std::span<const std::uint8_t> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace egsa
