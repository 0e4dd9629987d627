#include "xoftr/image_ops.hpp"

#include <algorithm>
#include <cmath>

namespace xoftr {

bool bilinear_sample(const Grid& g, double x, double y, double* out) {
    if (x < 0.0 || y < 0.0 || x > g.cols - 1.0 || y > g.rows - 1.0) return false;
    int x0 = int(std::floor(x)), y0 = int(std::floor(y));
    int x1 = std::min(x0 + 1, g.cols - 1), y1 = std::min(y0 + 1, g.rows - 1);
    double fx = x - x0, fy = y - y0;
    *out = (1 - fy) * ((1 - fx) * g.at(y0, x0) + fx * g.at(y0, x1)) +
           fy * ((1 - fx) * g.at(y1, x0) + fx * g.at(y1, x1));
    return true;
}

Grid resize_bilinear(const Grid& g, int out_rows, int out_cols) {
    if (g.empty()) throw ValidationError("resize of empty grid");
    Grid out(out_rows, out_cols);
    double sy = double(g.rows) / out_rows, sx = double(g.cols) / out_cols;
    for (int r = 0; r < out_rows; ++r) {
        double y = (r + 0.5) * sy - 0.5;
        y = std::clamp(y, 0.0, double(g.rows - 1));
        for (int c = 0; c < out_cols; ++c) {
            double x = (c + 0.5) * sx - 0.5;
            x = std::clamp(x, 0.0, double(g.cols - 1));
            double v = 0.0;
            bilinear_sample(g, x, y, &v);
            out.at(r, c) = v;
        }
    }
    return out;
}

Grid resize_nearest(const Grid& g, int out_rows, int out_cols) {
    if (g.empty()) throw ValidationError("resize of empty grid");
    Grid out(out_rows, out_cols);
    double sy = double(g.rows) / out_rows, sx = double(g.cols) / out_cols;
    for (int r = 0; r < out_rows; ++r) {
        int y = std::min(int((r + 0.5) * sy), g.rows - 1);
        for (int c = 0; c < out_cols; ++c) {
            int x = std::min(int((c + 0.5) * sx), g.cols - 1);
            out.at(r, c) = g.at(y, x);
        }
    }
    return out;
}

Vec2 apply_homography(const Mat3& h, const Vec2& p) {
    Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
    return Vec2(q.x() / q.z(), q.y() / q.z());
}

Grid warp_homography(const Grid& src, const Mat3& h, int out_rows, int out_cols, double fill,
                     Grid* mask) {
    Mat3 hinv = h.inverse();
    Grid out(out_rows, out_cols, fill);
    if (mask) *mask = Grid(out_rows, out_cols, 0.0);
    for (int r = 0; r < out_rows; ++r)
        for (int c = 0; c < out_cols; ++c) {
            Vec2 p = apply_homography(hinv, Vec2(c, r));
            double v;
            if (bilinear_sample(src, p.x(), p.y(), &v)) {
                out.at(r, c) = v;
                if (mask) mask->at(r, c) = 1.0;
            }
        }
    return out;
}

Grid gaussian_blur(const Grid& g, int ksize, double sigma) {
    if (ksize % 2 == 0 || ksize < 3) throw ValidationError("blur kernel must be odd and >= 3");
    int rad = ksize / 2;
    std::vector<double> k(ksize);
    double sum = 0.0;
    for (int i = 0; i < ksize; ++i) {
        double d = i - rad;
        k[i] = std::exp(-0.5 * d * d / (sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    Grid tmp(g.rows, g.cols);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            double s = 0.0;
            for (int i = 0; i < ksize; ++i) s += k[i] * g.at(r, clampi(c + i - rad, g.cols));
            tmp.at(r, c) = s;
        }
    Grid out(g.rows, g.cols);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            double s = 0.0;
            for (int i = 0; i < ksize; ++i) s += k[i] * tmp.at(clampi(r + i - rad, g.rows), c);
            out.at(r, c) = s;
        }
    return out;
}

Grid pad_to_multiple(const Grid& g, int m, Grid* mask) {
    int nr = round_up(g.rows, m), nc = round_up(g.cols, m);
    Grid out(nr, nc, 0.0);
    if (mask) *mask = Grid(nr, nc, 0.0);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            out.at(r, c) = g.at(r, c);
            if (mask) mask->at(r, c) = 1.0;
        }
    return out;
}

Grid to_gray(const ImageRGB& img) {
    Grid out(img.rows(), img.cols());
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = 0.299 * img.r.v[i] + 0.587 * img.g.v[i] + 0.114 * img.b.v[i];
    return out;
}

void rgb_to_hsv(double r, double g, double b, double* h, double* s, double* v) {
    double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    double d = mx - mn;
    *v = mx;
    *s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        *h = 0.0;
        return;
    }
    double hh;
    if (mx == r)
        hh = std::fmod((g - b) / d, 6.0);
    else if (mx == g)
        hh = (b - r) / d + 2.0;
    else
        hh = (r - g) / d + 4.0;
    hh /= 6.0;
    if (hh < 0.0) hh += 1.0;
    *h = hh;
}

void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b) {
    h = h - std::floor(h);  // wrap to [0,1)
    double hh = h * 6.0;
    int i = int(hh) % 6;
    double f = hh - std::floor(hh);
    double p = v * (1.0 - s);
    double q = v * (1.0 - s * f);
    double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: *r = v; *g = t; *b = p; break;
        case 1: *r = q; *g = v; *b = p; break;
        case 2: *r = p; *g = v; *b = t; break;
        case 3: *r = p; *g = q; *b = v; break;
        case 4: *r = t; *g = p; *b = v; break;
        default: *r = v; *g = p; *b = q; break;
    }
}

ImageRGB hsv_jitter(const ImageRGB& img, double hue_shift, double sat_scale, double val_scale) {
    ImageRGB out;
    out.r = Grid(img.rows(), img.cols());
    out.g = Grid(img.rows(), img.cols());
    out.b = Grid(img.rows(), img.cols());
    for (size_t i = 0; i < out.r.v.size(); ++i) {
        double h, s, v;
        rgb_to_hsv(img.r.v[i], img.g.v[i], img.b.v[i], &h, &s, &v);
        h += hue_shift;
        s = clamp01(s * sat_scale);
        v = clamp01(v * val_scale);
        hsv_to_rgb(h, s, v, &out.r.v[i], &out.g.v[i], &out.b.v[i]);
    }
    return out;
}

Grid minmax_normalize(const Grid& g) {
    double mn = g.v[0], mx = g.v[0];
    for (double v : g.v) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    Grid out(g.rows, g.cols);
    if (mx - mn < 1e-12) {
        std::fill(out.v.begin(), out.v.end(), 0.5);
        return out;
    }
    // plain division so min and max land exactly on 0 and 1
    double span = mx - mn;
    for (size_t i = 0; i < g.v.size(); ++i) out.v[i] = (g.v[i] - mn) / span;
    return out;
}

}  // namespace xoftr
