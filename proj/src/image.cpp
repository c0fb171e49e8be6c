#include "cfrl/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace cfrl {

namespace {

uint8_t to_byte(float v) {
    float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + path);
}

void put_u32be(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>(v >> 16));
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v));
}

void png_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32be(out, static_cast<uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    uint32_t crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                         static_cast<uInt>(body.size()));
    put_u32be(out, crc);
}

}  // namespace

void write_ppm(const std::string& path, const std::vector<float>& frame, int h, int w) {
    if (static_cast<size_t>(h) * w != frame.size()) throw std::invalid_argument("frame size mismatch");
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + frame.size() * 3);
    for (float v : frame) {
        char b = static_cast<char>(to_byte(v));
        out.push_back(b);
        out.push_back(b);
        out.push_back(b);
    }
    write_file(path, out);
}

std::vector<float> read_ppm(const std::string& path, int* out_h, int* out_w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    in >> magic >> w >> h >> maxv;
    if (magic != "P6" || maxv != 255) throw IoError("not an 8-bit P6 ppm: " + path);
    in.get();  // single whitespace after header
    std::vector<float> frame(static_cast<size_t>(w) * h);
    for (auto& v : frame) {
        char rgb[3];
        if (!in.read(rgb, 3)) throw IoError("truncated ppm: " + path);
        v = static_cast<float>(static_cast<uint8_t>(rgb[0])) / 255.0f;
    }
    if (out_h) *out_h = h;
    if (out_w) *out_w = w;
    return frame;
}

void write_png_gray(const std::string& path, const std::vector<float>& frame, int h, int w) {
    if (static_cast<size_t>(h) * w != frame.size()) throw std::invalid_argument("frame size mismatch");
    // raw scanlines, filter byte 0 per row
    std::string raw;
    raw.reserve(static_cast<size_t>(h) * (w + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back('\0');
        for (int x = 0; x < w; ++x)
            raw.push_back(static_cast<char>(to_byte(frame[static_cast<size_t>(y) * w + x])));
    }
    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::string comp(comp_cap, '\0');
    if (compress2(reinterpret_cast<Bytef*>(comp.data()), &comp_cap,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  Z_BEST_SPEED) != Z_OK)
        throw IoError("png deflate failed for " + path);
    comp.resize(comp_cap);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    put_u32be(ihdr, static_cast<uint32_t>(w));
    put_u32be(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(0);   // grayscale
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // no interlace
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", comp);
    png_chunk(out, "IEND", "");
    write_file(path, out);
}

std::vector<float> tile_frames(const RasterObs& obs, int gap, int* out_h, int* out_w) {
    int W = obs.k * obs.w + (obs.k - 1) * gap;
    std::vector<float> img(static_cast<size_t>(obs.h) * W, 0.0f);
    for (int f = 0; f < obs.k; ++f) {
        int x0 = f * (obs.w + gap);
        for (int y = 0; y < obs.h; ++y)
            for (int x = 0; x < obs.w; ++x)
                img[static_cast<size_t>(y) * W + x0 + x] = obs.at(y, x, f);
    }
    if (out_h) *out_h = obs.h;
    if (out_w) *out_w = W;
    return img;
}

void write_cf_panel_png(const std::string& path, const RasterObs& original, const RasterObs& cf) {
    if (!original.same_shape(cf)) throw std::invalid_argument("panel rasters differ in shape");
    const int gap = 2;
    int h = 0, w = 0;
    std::vector<float> top = tile_frames(original, gap, &h, &w);
    std::vector<float> bottom = tile_frames(cf, gap, nullptr, nullptr);
    int H = 2 * h + gap;
    std::vector<float> img(static_cast<size_t>(H) * w, 0.15f);
    std::memcpy(img.data(), top.data(), sizeof(float) * top.size());
    std::memcpy(img.data() + static_cast<size_t>(h + gap) * w, bottom.data(),
                sizeof(float) * bottom.size());
    write_png_gray(path, img, H, w);
}

}  // namespace cfrl
