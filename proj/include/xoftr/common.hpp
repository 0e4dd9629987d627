#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace xoftr {

using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unreadable/undecodable external input (files, archives).
struct InputError : Error {
    explicit InputError(const std::string& msg) : Error(msg) {}
};

/// Violated contract on in-process data (shapes, ranges, missing fields).
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

/// Dense row-major 2-D grid of doubles. Used for images, depth maps and masks.
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int r, int c, double fill = 0.0) : rows(r), cols(c), v(size_t(r) * c, fill) {}

    double& at(int r, int c) { return v[size_t(r) * cols + c]; }
    double at(int r, int c) const { return v[size_t(r) * cols + c]; }
    bool empty() const { return rows == 0 || cols == 0; }
    size_t size() const { return v.size(); }
    bool same_dims(const Grid& o) const { return rows == o.rows && cols == o.cols; }
};

inline int div_up(int a, int b) { return (a + b - 1) / b; }

/// Next multiple of m that is >= a.
inline int round_up(int a, int m) { return div_up(a, m) * m; }

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

}  // namespace xoftr
