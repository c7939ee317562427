#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace roadstereo {

struct PixelCoord {
    int u = 0;
    int v = 0;

    friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Row-major raster of T. Width and height are always >= 1.
template <typename T>
class Raster {
public:
    using value_type = T;

    Raster() = default;

    Raster(int width, int height, T fill = T{}) : width_(width), height_(height) {
        check_dims(width, height);
        data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
    }

    Raster(int width, int height, std::vector<T> data)
        : width_(width), height_(height), data_(std::move(data)) {
        check_dims(width, height);
        if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
            throw Error(ErrorCode::SizeMismatch,
                        "raster payload has " + std::to_string(data_.size()) + " values, expected " +
                            std::to_string(width) + "x" + std::to_string(height));
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    bool contains(int u, int v) const noexcept {
        return u >= 0 && v >= 0 && u < width_ && v < height_;
    }

    T& operator()(int u, int v) noexcept { return data_[index(u, v)]; }
    const T& operator()(int u, int v) const noexcept { return data_[index(u, v)]; }

    std::span<T> row(int v) noexcept {
        return {data_.data() + static_cast<std::size_t>(v) * width_, static_cast<std::size_t>(width_)};
    }
    std::span<const T> row(int v) const noexcept {
        return {data_.data() + static_cast<std::size_t>(v) * width_, static_cast<std::size_t>(width_)};
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }

    bool same_shape(const auto& other) const noexcept {
        return width_ == other.width() && height_ == other.height();
    }

    friend bool operator==(const Raster&, const Raster&) = default;

private:
    static void check_dims(int width, int height) {
        if (width < 1 || height < 1)
            throw Error(ErrorCode::InvalidArgument,
                        "raster dimensions must be positive, got " + std::to_string(width) + "x" +
                            std::to_string(height));
    }

    std::size_t index(int u, int v) const noexcept {
        return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using GrayImage = Raster<std::uint8_t>;

/// Per-pixel road selection; true marks a road pixel.
class RoadMask {
public:
    RoadMask() = default;
    RoadMask(int width, int height, bool fill = false) : bits_(width, height, fill ? 1 : 0) {}

    int width() const noexcept { return bits_.width(); }
    int height() const noexcept { return bits_.height(); }
    bool contains(int u, int v) const noexcept { return bits_.contains(u, v); }

    bool operator()(int u, int v) const noexcept { return bits_(u, v) != 0; }
    void set(int u, int v, bool road) noexcept { bits_(u, v) = road ? 1 : 0; }

    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (auto b : bits_.data()) n += b != 0;
        return n;
    }

    bool same_shape(const auto& other) const noexcept {
        return width() == other.width() && height() == other.height();
    }

    friend bool operator==(const RoadMask&, const RoadMask&) = default;

private:
    Raster<std::uint8_t> bits_;
};

/// Disparity raster whose pixels are either a finite value >= 0 or INVALID.
/// INVALID is stored as NaN internally and is distinct from a disparity of 0.
class DisparityMap {
public:
    static constexpr double kInvalid = std::numeric_limits<double>::quiet_NaN();

    DisparityMap() = default;
    DisparityMap(int width, int height) : values_(width, height, kInvalid) {}

    int width() const noexcept { return values_.width(); }
    int height() const noexcept { return values_.height(); }
    std::size_t size() const noexcept { return values_.size(); }
    bool contains(int u, int v) const noexcept { return values_.contains(u, v); }

    bool valid(int u, int v) const noexcept { return !std::isnan(values_(u, v)); }

    std::optional<double> at(int u, int v) const noexcept {
        const double d = values_(u, v);
        if (std::isnan(d)) return std::nullopt;
        return d;
    }

    /// Raw value; NaN when INVALID.
    double raw(int u, int v) const noexcept { return values_(u, v); }

    void set(int u, int v, double d) {
        if (!std::isfinite(d) || d < 0.0)
            throw Error(ErrorCode::InvalidArgument,
                        "disparity must be finite and >= 0, got " + std::to_string(d));
        values_(u, v) = d;
    }

    void invalidate(int u, int v) noexcept { values_(u, v) = kInvalid; }

    std::size_t valid_count() const noexcept {
        std::size_t n = 0;
        for (double d : values_.data()) n += std::isnan(d) ? 0 : 1;
        return n;
    }

    bool same_shape(const auto& other) const noexcept {
        return width() == other.width() && height() == other.height();
    }

    /// Bitwise comparison, INVALID == INVALID.
    friend bool operator==(const DisparityMap& a, const DisparityMap& b) noexcept {
        if (!a.same_shape(b)) return false;
        const auto da = a.values_.data();
        const auto db = b.values_.data();
        for (std::size_t i = 0; i < da.size(); ++i) {
            const bool na = std::isnan(da[i]);
            const bool nb = std::isnan(db[i]);
            if (na != nb) return false;
            if (!na && da[i] != db[i]) return false;
        }
        return true;
    }

private:
    Raster<double> values_;
};

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
    if (!a.same_shape(b))
        throw Error(ErrorCode::SizeMismatch,
                    std::string(what) + ": " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                        " vs " + std::to_string(b.width()) + "x" + std::to_string(b.height()));
}

} // namespace roadstereo
