#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <roadstereo/image.hpp>
#include <roadstereo/matcher.hpp>
#include <roadstereo/perspective.hpp>

namespace testing_support {

namespace rs = roadstereo;

inline rs::GrayImage random_image(int w, int h, std::mt19937_64& rng, int lo = 0, int hi = 255) {
    std::uniform_int_distribution<int> dist(lo, hi);
    rs::GrayImage img(w, h);
    for (auto& px : img.data()) px = static_cast<std::uint8_t>(dist(rng));
    return img;
}

/// Shifts every row right by `shift`, filling with `fill`.
inline rs::GrayImage shift_right(const rs::GrayImage& img, int shift, std::uint8_t fill = 0) {
    rs::GrayImage out(img.width(), img.height(), fill);
    for (int v = 0; v < img.height(); ++v)
        for (int u = 0; u < img.width(); ++u)
            if (u - shift >= 0 && u - shift < img.width()) out(u, v) = img(u - shift, v);
    return out;
}

/// Per-test scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("roadstereo_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Direct-loop matcher: every block moment, weight and cost is recomputed
/// from the pixels at the point of use. Only the arithmetic form of each
/// quantity matches the optimized code, so results can be compared exactly.
namespace naive {

constexpr float kInvalid = std::numeric_limits<float>::quiet_NaN();

struct Volume {
    int w, h, depth;
    std::vector<float> c;
    Volume(int w_, int h_, int d_max) : w(w_), h(h_), depth(d_max + 1), c(std::size_t(w_) * h_ * (d_max + 1), kInvalid) {}
    float& at(int u, int v, int d) { return c[(std::size_t(v) * w + u) * depth + d]; }
    float at(int u, int v, int d) const { return c[(std::size_t(v) * w + u) * depth + d]; }
};

inline bool block_inside(const rs::GrayImage& img, int u, int v, int r) {
    return u - r >= 0 && v - r >= 0 && u + r < img.width() && v + r < img.height();
}

inline bool block_covered(const rs::RoadMask* cov, int u, int v, int r) {
    if (!cov) return true;
    for (int dv = -r; dv <= r; ++dv)
        for (int du = -r; du <= r; ++du)
            if (!(*cov)(u + du, v + dv)) return false;
    return true;
}

/// Cost of ref block at (ur, v) against tar block at (ut, v).
inline float cost(const rs::GrayImage& ref, const rs::GrayImage& tar, const rs::RoadMask* cov, int ur, int ut, int v,
                  int r) {
    if (!block_inside(ref, ur, v, r) || !block_inside(tar, ut, v, r) || !block_covered(cov, ut, v, r)) return kInvalid;
    const std::int64_t n = std::int64_t(2 * r + 1) * (2 * r + 1);
    std::int64_t sr = 0, st = 0, srr = 0, stt = 0, srt = 0;
    for (int dv = -r; dv <= r; ++dv)
        for (int du = -r; du <= r; ++du) {
            const std::int64_t a = ref(ur + du, v + dv);
            const std::int64_t b = tar(ut + du, v + dv);
            sr += a;
            st += b;
            srr += a * a;
            stt += b * b;
            srt += a * b;
        }
    const double denom = std::sqrt(double(n * srr - sr * sr)) * std::sqrt(double(n * stt - st * st));
    if (denom == 0.0) return kInvalid;
    return static_cast<float>(1.0 - double(n * srt - sr * st) / denom);
}

inline Volume aggregate(const Volume& raw, const rs::GrayImage& guide, const rs::MatcherParams& p) {
    Volume out(raw.w, raw.h, raw.depth - 1);
    const int R = p.agg_radius;
    for (int v = 0; v < raw.h; ++v)
        for (int u = 0; u < raw.w; ++u)
            for (int d = 0; d < raw.depth; ++d) {
                double num = 0.0, den = 0.0;
                for (int dv = -R; dv <= R; ++dv)
                    for (int du = -R; du <= R; ++du) {
                        const int qu = u + du, qv = v + dv;
                        if (qu < 0 || qv < 0 || qu >= raw.w || qv >= raw.h) continue;
                        const float c = raw.at(qu, qv, d);
                        if (std::isnan(c)) continue;
                        const int gap = int(guide(qu, qv)) - int(guide(u, v));
                        const double w = std::exp(-double(du * du + dv * dv) / (p.sigma0 * p.sigma0)) *
                                         std::exp(-double(gap * gap) / (p.sigma1 * p.sigma1));
                        num += w * double(c);
                        den += w;
                    }
                if (den > 0.0) out.at(u, v, d) = static_cast<float>(num / den);
            }
    return out;
}

struct Result {
    Volume raw_ref, raw_tar, agg_ref, agg_tar;
    rs::DisparityMap wta_ref, wta_tar, consistent, refined;
};

inline rs::DisparityMap wta(const Volume& vol) {
    rs::DisparityMap out(vol.w, vol.h);
    for (int v = 0; v < vol.h; ++v)
        for (int u = 0; u < vol.w; ++u) {
            int best = -1;
            float best_c = 0.0f;
            for (int d = 0; d < vol.depth; ++d) {
                const float c = vol.at(u, v, d);
                if (std::isnan(c)) continue;
                if (best < 0 || c < best_c) {
                    best = d;
                    best_c = c;
                }
            }
            if (best >= 0) out.set(u, v, best);
        }
    return out;
}

inline Result run(const rs::GrayImage& ref, const rs::GrayImage& tar, const rs::MatcherParams& p,
                  const rs::RoadMask* cov = nullptr) {
    const int W = ref.width(), H = ref.height(), r = p.window_radius;
    Result res{Volume(W, H, p.d_max), Volume(W, H, p.d_max), Volume(W, H, p.d_max), Volume(W, H, p.d_max),
               {}, {}, {}, {}};
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u)
            for (int d = 0; d <= p.d_max; ++d) {
                res.raw_ref.at(u, v, d) = cost(ref, tar, cov, u, u - d, v, r);
                res.raw_tar.at(u, v, d) = cost(ref, tar, cov, u + d, u, v, r);
            }
    res.agg_ref = aggregate(res.raw_ref, ref, p);
    res.agg_tar = aggregate(res.raw_tar, tar, p);
    res.wta_ref = wta(res.agg_ref);
    res.wta_tar = wta(res.agg_tar);

    res.consistent = rs::DisparityMap(W, H);
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            if (!res.wta_ref.valid(u, v)) continue;
            const double d = res.wta_ref.raw(u, v);
            const int tu = u - int(d);
            if (tu < 0 || !res.wta_tar.valid(tu, v)) continue;
            const double diff = d - res.wta_tar.raw(tu, v);
            if (diff * diff <= p.delta_r) res.consistent.set(u, v, d);
        }

    res.refined = rs::DisparityMap(W, H);
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            if (!res.consistent.valid(u, v)) continue;
            const int d = int(res.consistent.raw(u, v));
            double out = d;
            if (d >= 1 && d + 1 <= p.d_max) {
                const float cm = res.agg_ref.at(u, v, d - 1), c0 = res.agg_ref.at(u, v, d),
                            cp = res.agg_ref.at(u, v, d + 1);
                if (!std::isnan(cm) && !std::isnan(c0) && !std::isnan(cp)) {
                    const double denom = 2.0 * cm + 2.0 * cp - 4.0 * c0;
                    if (denom > 1e-12) out = d + (double(cm) - double(cp)) / denom;
                }
            }
            res.refined.set(u, v, std::max(0.0, out));
        }
    return res;
}

/// Bitwise comparison of a naive volume with an optimized one.
inline bool same_volume(const Volume& a, const rs::CostVolume& b) {
    if (a.w != b.width() || a.h != b.height() || a.depth != b.depth()) return false;
    for (int v = 0; v < a.h; ++v)
        for (int u = 0; u < a.w; ++u)
            for (int d = 0; d < a.depth; ++d) {
                const float x = a.at(u, v, d), y = b(u, v, d);
                if (std::isnan(x) != std::isnan(y)) return false;
                if (!std::isnan(x) && x != y) return false;
            }
    return true;
}

} // namespace naive

} // namespace testing_support
