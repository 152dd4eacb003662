#include "subjectdiff/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "subjectdiff/error.hpp"

namespace sdiff {

Tensor Image::to_chw() const {
    Tensor t({c, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) t.v[((int64_t)ch * h + y) * w + x] = at(y, x, ch);
    return t;
}

Image Image::from_chw(const Tensor& t) {
    SDIFF_CHECK(t.ndim() == 3, ErrorKind::Input, "from_chw expects [C,H,W]");
    Image img(t.shape[1], t.shape[2], t.shape[0]);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) img.at(y, x, ch) = t.v[((int64_t)ch * img.h + y) * img.w + x];
    return img;
}

void write_png(const std::string& path, const Image& img) {
    SDIFF_CHECK(img.c == 1 || img.c == 3, ErrorKind::Input, "write_png supports 1 or 3 channels");
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), std::fclose);
    SDIFF_CHECK(fp != nullptr, ErrorKind::Io, "cannot open for write: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::Io, "png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.w, img.h, 8, img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row((size_t)img.w * img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                real v = img.at(y, x, ch);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                row[(size_t)x * img.c + ch] = (png_byte)std::lround(v * 255.0);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), std::fclose);
    SDIFF_CHECK(fp != nullptr, ErrorKind::Io, "cannot open for read: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::Io, "png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int channels = png_get_channels(png, info);
    SDIFF_CHECK(channels == 1 || channels == 3, ErrorKind::Io, "unsupported png channel count");

    Image img((int)h, (int)w, channels);
    std::vector<png_byte> row((size_t)w * channels);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch) img.at((int)y, (int)x, ch) = row[(size_t)x * channels + ch] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

real psnr(const Image& a, const Image& b) {
    SDIFF_CHECK(a.v.size() == b.v.size(), ErrorKind::Input, "psnr size mismatch");
    real mse = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        real d = a.v[i] - b.v[i];
        mse += d * d;
    }
    mse /= (real)a.v.size();
    if (mse <= 0) return 1e9;
    return 10.0 * std::log10(1.0 / mse);
}

real mean_abs_diff(const Image& a, const Image& b) {
    SDIFF_CHECK(a.v.size() == b.v.size(), ErrorKind::Input, "mad size mismatch");
    real s = 0;
    for (size_t i = 0; i < a.v.size(); ++i) s += std::abs(a.v[i] - b.v[i]);
    return s / (real)a.v.size();
}

bool images_equal(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w || a.c != b.c) return false;
    for (size_t i = 0; i < a.v.size(); ++i)
        if (a.v[i] != b.v[i]) return false;
    return true;
}

Image edge_map(const Image& img) {
    Image out(img.h, img.w, 1);
    auto lum = [&](int y, int x) {
        y = std::max(0, std::min(img.h - 1, y));
        x = std::max(0, std::min(img.w - 1, x));
        real s = 0;
        for (int ch = 0; ch < img.c; ++ch) s += img.at(y, x, ch);
        return s / img.c;
    };
    real mx = 1e-12;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            real gx = (lum(y - 1, x + 1) + 2 * lum(y, x + 1) + lum(y + 1, x + 1)) -
                      (lum(y - 1, x - 1) + 2 * lum(y, x - 1) + lum(y + 1, x - 1));
            real gy = (lum(y + 1, x - 1) + 2 * lum(y + 1, x) + lum(y + 1, x + 1)) -
                      (lum(y - 1, x - 1) + 2 * lum(y - 1, x) + lum(y - 1, x + 1));
            real g = std::sqrt(gx * gx + gy * gy);
            out.at(y, x, 0) = g;
            mx = std::max(mx, g);
        }
    for (auto& v : out.v) v /= mx;
    return out;
}

real edge_recall(const Image& want, const Image& have, real threshold) {
    SDIFF_CHECK(want.h == have.h && want.w == have.w, ErrorKind::Input, "edge_recall size mismatch");
    int64_t total = 0, hit = 0;
    for (int y = 0; y < want.h; ++y)
        for (int x = 0; x < want.w; ++x) {
            if (want.at(y, x, 0) < threshold) continue;
            ++total;
            bool found = false;
            for (int dy = -1; dy <= 1 && !found; ++dy)
                for (int dx = -1; dx <= 1 && !found; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= want.h || xx < 0 || xx >= want.w) continue;
                    if (have.at(yy, xx, 0) >= threshold) found = true;
                }
            if (found) ++hit;
        }
    if (total == 0) return 1.0;
    return (real)hit / (real)total;
}

Image resize_nearest(const Image& img, int oh, int ow) {
    Image out(oh, ow, img.c);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            int sy = (int)((int64_t)y * img.h / oh);
            int sx = (int)((int64_t)x * img.w / ow);
            for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(sy, sx, ch);
        }
    return out;
}

}  // namespace sdiff
