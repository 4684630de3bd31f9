#ifndef __MSP_IMAGE_HPP__
#define __MSP_IMAGE_HPP__

#include <cstdint>
#include <string>
#include <vector>

#include "msp/tensor.hpp"

namespace msp {

// RGB image, values in [0,1], row-major HxWxC.
struct Image {
    int height = 0;
    int width  = 0;
    int channels = 0;
    std::vector<double> v;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          v(static_cast<size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int c) {
        return v[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return v[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
};

// Binary map, values in {0,1}.
struct Mask {
    int height = 0;
    int width  = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int h, int w, uint8_t fill = 0)
        : height(h), width(w), v(static_cast<size_t>(h) * w, fill) {}

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
    int64_t count() const;  // number of 1 pixels
    bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }
};

/*================================ conversions ===============================*/

Tensor image_to_chw(const Image& img);          // [C,H,W]
Image chw_to_image(const Tensor& t, bool clamp01 = true);
Tensor mask_to_tensor(const Mask& m);           // [H,W] of 0.0/1.0

/*================================ resampling ================================*/

Image resize_bilinear(const Image& img, int out_h, int out_w);
// area-average then threshold at 0.5
Mask resize_mask_rect(const Mask& m, int out_h, int out_w);

struct BBox {
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open [y0,y1) x [x0,x1)
    int height() const { return y1 - y0; }
    int width() const { return x1 - x0; }
    int64_t area() const { return static_cast<int64_t>(height()) * width(); }
    bool empty() const { return y1 <= y0 || x1 <= x0; }
};

BBox mask_bbox(const Mask& m);

/*================================== PNG io ==================================*/

// Minimal PNG support (8-bit gray / RGB / RGBA, non-interlaced) on top of zlib.
// Writes are deterministic, which the reproducibility checks rely on.
void write_png_rgb(const std::string& path, const Image& img);
void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w);
void write_mask_png(const std::string& path, const Mask& m);  // 0 / 255

Image read_png_rgb(const std::string& path);
Mask read_mask_png(const std::string& path);  // >=128 -> 1

}  // namespace msp

#endif  // __MSP_IMAGE_HPP__
