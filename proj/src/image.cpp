#include "msp/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace msp {

int64_t Mask::count() const {
    int64_t n = 0;
    for (uint8_t b : v) n += (b != 0);
    return n;
}

/*================================ conversions ===============================*/

Tensor image_to_chw(const Image& img) {
    Tensor t({img.channels, img.height, img.width});
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at(c, y, x) = img.at(y, x, c);
    return t;
}

Image chw_to_image(const Tensor& t, bool clamp01) {
    if (t.rank() != 3) {
        throw std::invalid_argument("chw_to_image: rank must be 3");
    }
    Image img(t.dim(1), t.dim(2), t.dim(0));
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double v = t.at(c, y, x);
                if (clamp01) v = std::clamp(v, 0.0, 1.0);
                img.at(y, x, c) = v;
            }
    return img;
}

Tensor mask_to_tensor(const Mask& m) {
    Tensor t({m.height, m.width});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = m.v[static_cast<size_t>(i)] ? 1.0 : 0.0;
    return t;
}

/*================================ resampling ================================*/

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("resize_bilinear: output size must be >= 1");
    }
    Image out(out_h, out_w, img.channels);
    double sy = static_cast<double>(img.height) / out_h;
    double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0    = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c   = std::clamp(y0, 0, img.height - 1);
        int y1c   = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0    = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c   = std::clamp(x0, 0, img.width - 1);
            int x1c   = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < img.channels; ++c) {
                double v = (1 - wy) * ((1 - wx) * img.at(y0c, x0c, c) + wx * img.at(y0c, x1c, c)) +
                           wy * ((1 - wx) * img.at(y1c, x0c, c) + wx * img.at(y1c, x1c, c));
                out.at(y, x, c) = v;
            }
        }
    }
    return out;
}

// Exact box-filter average with fractional pixel coverage, then 0.5 threshold.
Mask resize_mask_rect(const Mask& m, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("resize_mask_rect: output size must be >= 1");
    }
    Mask out(out_h, out_w);
    double sy = static_cast<double>(m.height) / out_h;
    double sx = static_cast<double>(m.width) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double ya = oy * sy, yb = (oy + 1) * sy;
        int iy0 = static_cast<int>(std::floor(ya));
        int iy1 = std::min(m.height, static_cast<int>(std::ceil(yb)));
        for (int ox = 0; ox < out_w; ++ox) {
            double xa = ox * sx, xb = (ox + 1) * sx;
            int ix0 = static_cast<int>(std::floor(xa));
            int ix1 = std::min(m.width, static_cast<int>(std::ceil(xb)));
            double acc = 0.0, area = 0.0;
            for (int iy = iy0; iy < iy1; ++iy) {
                double hy = std::min<double>(iy + 1, yb) - std::max<double>(iy, ya);
                for (int ix = ix0; ix < ix1; ++ix) {
                    double hx = std::min<double>(ix + 1, xb) - std::max<double>(ix, xa);
                    double w  = hy * hx;
                    area += w;
                    if (m.at(iy, ix)) acc += w;
                }
            }
            out.at(oy, ox) = (area > 0.0 && acc / area >= 0.5) ? 1 : 0;
        }
    }
    return out;
}

BBox mask_bbox(const Mask& m) {
    BBox b{m.height, m.width, 0, 0};
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x)) {
                b.y0 = std::min(b.y0, y);
                b.x0 = std::min(b.x0, x);
                b.y1 = std::max(b.y1, y + 1);
                b.x1 = std::max(b.x1, x + 1);
            }
    if (b.y1 <= b.y0) b = BBox{0, 0, 0, 0};
    return b;
}

/*================================== PNG io ==================================*/

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, crc);
}

void write_png(const std::string& path, const uint8_t* pixels, int h, int w, int channels) {
    uint8_t color_type = channels == 1 ? 0 : 2;
    size_t stride      = static_cast<size_t>(w) * channels;
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(h) * (stride + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), pixels + y * stride, pixels + (y + 1) * stride);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw std::runtime_error("write_png: deflate failed");
    }
    comp.resize(comp_len);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(w));
    put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);           // bit depth
    ihdr.push_back(color_type);  // 0 gray, 2 rgb
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("write_png: cannot open " + path);
    }
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

struct DecodedPng {
    int h = 0, w = 0, channels = 0;
    std::vector<uint8_t> pixels;  // h*w*channels
};

DecodedPng read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("read_png: cannot open " + path);
    }
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0) {
        throw std::runtime_error("read_png: not a PNG file: " + path);
    }
    size_t pos = 8;
    int w = 0, h = 0, bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<uint8_t> idat;
    while (pos + 8 <= buf.size()) {
        uint32_t len = get_u32(buf.data() + pos);
        if (pos + 12 + len > buf.size()) {
            throw std::runtime_error("read_png: truncated chunk");
        }
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const uint8_t* data = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w          = static_cast<int>(get_u32(data));
            h          = static_cast<int>(get_u32(data + 4));
            bit_depth  = data[8];
            color_type = data[9];
            interlace  = data[12];
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0 || bit_depth != 8 || interlace != 0) {
        throw std::runtime_error("read_png: unsupported format (need 8-bit non-interlaced)");
    }
    int src_channels;
    switch (color_type) {
        case 0: src_channels = 1; break;
        case 2: src_channels = 3; break;
        case 4: src_channels = 2; break;
        case 6: src_channels = 4; break;
        default: throw std::runtime_error("read_png: unsupported color type");
    }
    size_t stride  = static_cast<size_t>(w) * src_channels;
    uLongf raw_len = static_cast<uLongf>(static_cast<size_t>(h) * (stride + 1));
    std::vector<uint8_t> raw(raw_len);
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        throw std::runtime_error("read_png: inflate failed");
    }
    // undo scanline filters in place
    std::vector<uint8_t> img(static_cast<size_t>(h) * stride);
    int bpp = src_channels;
    for (int y = 0; y < h; ++y) {
        uint8_t filter   = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* s = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        uint8_t* d       = img.data() + static_cast<size_t>(y) * stride;
        const uint8_t* up = y > 0 ? img.data() + static_cast<size_t>(y - 1) * stride : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            int a = x >= static_cast<size_t>(bpp) ? d[x - bpp] : 0;
            int b = up ? up[x] : 0;
            int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
            int v;
            switch (filter) {
                case 0: v = s[x]; break;
                case 1: v = s[x] + a; break;
                case 2: v = s[x] + b; break;
                case 3: v = s[x] + (a + b) / 2; break;
                case 4: v = s[x] + paeth(a, b, c); break;
                default: throw std::runtime_error("read_png: bad filter byte");
            }
            d[x] = static_cast<uint8_t>(v);
        }
    }
    DecodedPng out;
    out.h        = h;
    out.w        = w;
    out.channels = src_channels;
    out.pixels   = std::move(img);
    return out;
}

uint8_t to_byte(double v) {
    return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png_rgb(const std::string& path, const Image& img) {
    if (img.channels != 3) {
        throw std::invalid_argument("write_png_rgb: image must have 3 channels");
    }
    std::vector<uint8_t> px(static_cast<size_t>(img.height) * img.width * 3);
    for (size_t i = 0; i < px.size(); ++i) px[i] = to_byte(img.v[i]);
    write_png(path, px.data(), img.height, img.width, 3);
}

void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w) {
    if (pixels.size() != static_cast<size_t>(h) * w) {
        throw std::invalid_argument("write_png_gray: size mismatch");
    }
    write_png(path, pixels.data(), h, w, 1);
}

void write_mask_png(const std::string& path, const Mask& m) {
    std::vector<uint8_t> px(m.v.size());
    for (size_t i = 0; i < px.size(); ++i) px[i] = m.v[i] ? 255 : 0;
    write_png(path, px.data(), m.height, m.width, 1);
}

Image read_png_rgb(const std::string& path) {
    DecodedPng d = read_png(path);
    Image img(d.h, d.w, 3);
    for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) {
            const uint8_t* p = d.pixels.data() + (static_cast<size_t>(y) * d.w + x) * d.channels;
            for (int c = 0; c < 3; ++c) {
                uint8_t b = d.channels >= 3 ? p[c] : p[0];
                img.at(y, x, c) = b / 255.0;
            }
        }
    return img;
}

Mask read_mask_png(const std::string& path) {
    DecodedPng d = read_png(path);
    Mask m(d.h, d.w);
    for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) {
            const uint8_t* p = d.pixels.data() + (static_cast<size_t>(y) * d.w + x) * d.channels;
            m.at(y, x) = p[0] >= 128 ? 1 : 0;
        }
    return m;
}

}  // namespace msp
