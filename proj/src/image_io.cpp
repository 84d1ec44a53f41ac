#include "egsa/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace egsa {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large buffers.
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
        crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(chunk));
        pos += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u32(out, bits);
}

void ByteReader::need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
        throw FormatError(what_ + ": truncated, needed " + std::to_string(n) + " more bytes", pos_);
    }
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}

float ByteReader::f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_pnm(const Image8& image) {
    if (image.channels != 1 && image.channels != 3) throw ContractError("encode_pnm: channels must be 1 or 3");
    const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) +
                               " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

namespace {

// Parses one whitespace-delimited header integer, skipping '#' comments.
int pnm_int(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError("pnm: expected integer in header", pos);
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        v = v * 10 + (bytes[pos] - '0');
        if (v > 1'000'000) throw FormatError("pnm: header value too large", pos);
        ++pos;
    }
    return static_cast<int>(v);
}

}  // namespace

Image8 decode_pnm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw FormatError("pnm: expected magic P5 or P6", 0);
    }
    Image8 img;
    img.channels = bytes[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    img.width = pnm_int(bytes, pos);
    img.height = pnm_int(bytes, pos);
    const int maxval = pnm_int(bytes, pos);
    if (maxval != 255) throw FormatError("pnm: only maxval 255 is supported", pos);
    if (img.width < 1 || img.height < 1) throw FormatError("pnm: empty image", pos);
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("pnm: missing header terminator", pos);
    ++pos;
    const std::size_t need = static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (bytes.size() - pos < need) throw FormatError("pnm: truncated payload", bytes.size());
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return img;
}

std::vector<std::uint8_t> encode_dmap(const Tensor4& depth) {
    if (depth.batch() != 1 || depth.channels() != 1) {
        throw DimensionError("encode_dmap: expected a (1, 1, H, W) depth map, got " + depth.shape().str());
    }
    std::vector<std::uint8_t> payload;
    payload.reserve(depth.size() * 4);
    for (float v : depth.data()) put_f32(payload, v);
    std::vector<std::uint8_t> out{'D', 'M', 'A', 'P'};
    put_u32(out, static_cast<std::uint32_t>(depth.height()));
    put_u32(out, static_cast<std::uint32_t>(depth.width()));
    put_u32(out, crc32(payload));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Tensor4 decode_dmap(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "dmap");
    auto magic = r.take(4);
    if (std::memcmp(magic.data(), "DMAP", 4) != 0) throw FormatError("dmap: bad magic", 0);
    const std::uint32_t h = r.u32();
    const std::uint32_t w = r.u32();
    if (h == 0 || w == 0 || h > 65536 || w > 65536) throw FormatError("dmap: invalid dimensions", 4);
    const std::uint32_t expected = r.u32();
    const std::size_t payload_offset = r.offset();
    auto payload = r.take(static_cast<std::size_t>(h) * w * 4);
    if (crc32(payload) != expected) throw FormatError("dmap: payload CRC32 mismatch", payload_offset);
    ByteReader pr(payload, "dmap payload");
    std::vector<float> values(static_cast<std::size_t>(h) * w);
    for (auto& v : values) v = pr.f32();
    return Tensor4(Shape{1, 1, static_cast<int>(h), static_cast<int>(w)}, std::move(values));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, bytes);
    std::filesystem::rename(tmp, path);
}

Image8 to_image8(const Tensor4& t) {
    if (t.batch() != 1 || (t.channels() != 1 && t.channels() != 3)) {
        throw DimensionError("to_image8: expected (1, 1|3, H, W), got " + t.shape().str());
    }
    Image8 img{t.height(), t.width(), t.channels(), {}};
    img.pixels.resize(t.size());
    const std::size_t plane = t.shape().plane();
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < t.channels(); ++c) {
            const float v = std::clamp(t[c * plane + p], 0.0f, 1.0f);
            img.pixels[p * t.channels() + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return img;
}

Tensor4 from_image8(const Image8& image) {
    Tensor4 t(Shape{1, image.channels, image.height, image.width});
    const std::size_t plane = t.shape().plane();
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < image.channels; ++c)
            t[c * plane + p] = static_cast<float>(image.pixels[p * image.channels + c]) / 255.0f;
    return t;
}

}  // namespace egsa
