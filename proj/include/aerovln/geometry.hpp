#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace aerovln {

// Meters, right-handed, z up. x is forward at yaw 0, y is left.
struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const Point3&, const Point3&) = default;

    Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Point3 operator*(double s) const { return {x * s, y * s, z * s}; }

    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double norm(const Point3& p) { return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z); }
inline double distance(const Point3& a, const Point3& b) { return norm(a - b); }
inline double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Axis-aligned box. An empty point set yields the degenerate box at the origin.
struct Bounds3 {
    Point3 min;
    Point3 max;

    friend bool operator==(const Bounds3&, const Bounds3&) = default;

    static Bounds3 of(std::span<const Point3> pts) {
        if (pts.empty()) return {};
        Bounds3 b{pts.front(), pts.front()};
        for (const auto& p : pts) b.expand(p);
        return b;
    }

    void expand(const Point3& p) {
        min = {std::min(min.x, p.x), std::min(min.y, p.y), std::min(min.z, p.z)};
        max = {std::max(max.x, p.x), std::max(max.y, p.y), std::max(max.z, p.z)};
    }
};

// Shoelace area; positive for counter-clockwise rings. The ring is implicitly closed.
inline double signed_area(std::span<const Point2> ring) {
    double a = 0.0;
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = ring[i];
        const auto& q = ring[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * a;
}

// Even-odd rule.
inline bool point_in_polygon(const Point2& p, std::span<const Point2> ring) {
    bool inside = false;
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto& a = ring[i];
        const auto& b = ring[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if (p.x < x) inside = !inside;
        }
    }
    return inside;
}

namespace detail {
inline double cross(const Point2& o, const Point2& a, const Point2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}
inline bool on_segment(const Point2& p, const Point2& a, const Point2& b) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
}
}  // namespace detail

// Closed-segment intersection, touching endpoints included.
inline bool segments_intersect(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
    using detail::cross;
    const double d1 = cross(c, d, a), d2 = cross(c, d, b);
    const double d3 = cross(a, b, c), d4 = cross(a, b, d);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
        return true;
    if (d1 == 0 && detail::on_segment(a, c, d)) return true;
    if (d2 == 0 && detail::on_segment(b, c, d)) return true;
    if (d3 == 0 && detail::on_segment(c, a, b)) return true;
    if (d4 == 0 && detail::on_segment(d, a, b)) return true;
    return false;
}

// True when the two closed polygonal regions share any point.
inline bool polygons_overlap(std::span<const Point2> p, std::span<const Point2> q) {
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < q.size(); ++j)
            if (segments_intersect(p[i], p[(i + 1) % p.size()], q[j], q[(j + 1) % q.size()]))
                return true;
    return point_in_polygon(p.front(), q) || point_in_polygon(q.front(), p);
}

// Self-intersection check for a ring (adjacent edges may share their common vertex).
inline bool is_simple_polygon(std::span<const Point2> ring) {
    const std::size_t n = ring.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if (adjacent) continue;
            if (segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n])) return false;
        }
    }
    return true;
}

}  // namespace aerovln
