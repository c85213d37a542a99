#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/error.hpp"
#include "aerovln/geometry.hpp"
#include "aerovln/scene.hpp"

namespace aerovln {

struct Index3 {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t z = 0;

    friend bool operator==(const Index3&, const Index3&) = default;
    friend auto operator<=>(const Index3&, const Index3&) = default;
};

// Dense bitset; the storage behind both occupancy maps.
class BitArray {
public:
    BitArray() = default;
    explicit BitArray(std::size_t n) : size_(n), words_((n + 63) / 64, 0) {}

    std::size_t size() const { return size_; }
    bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
    void set(std::size_t i) { words_[i >> 6] |= std::uint64_t{1} << (i & 63); }
    void reset(std::size_t i) { words_[i >> 6] &= ~(std::uint64_t{1} << (i & 63)); }

    std::size_t count() const {
        std::size_t c = 0;
        for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
        return c;
    }

    friend bool operator==(const BitArray&, const BitArray&) = default;

private:
    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

// Placement of a voxel lattice in the world.
struct GridFrame {
    Point3 origin;
    double voxel_size = 1.0;
    std::array<std::int64_t, 3> dims{1, 1, 1};

    friend bool operator==(const GridFrame&, const GridFrame&) = default;

    std::size_t cell_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }
};

inline std::int64_t dilation_cells(double margin, double voxel_size) {
    return static_cast<std::int64_t>(std::ceil(margin / voxel_size - 1e-12));
}

/// World-aligned frame covering `bounds` grown by the dilation radius plus one
/// guard cell on every side, so dilated cells never touch the grid edge.
inline GridFrame frame_for(const Bounds3& bounds, double voxel_size, double margin) {
    if (!(voxel_size > 0.0)) throw ContractViolation("voxel_size must be positive");
    if (!(margin >= 0.0)) throw ContractViolation("margin must be non-negative");
    const std::int64_t pad = dilation_cells(margin, voxel_size) + 1;
    GridFrame f;
    f.voxel_size = voxel_size;
    const std::array<double, 3> lo{bounds.min.x, bounds.min.y, bounds.min.z};
    const std::array<double, 3> hi{bounds.max.x, bounds.max.y, bounds.max.z};
    std::array<double, 3> origin{};
    for (int a = 0; a < 3; ++a) {
        const auto first = static_cast<std::int64_t>(std::floor(lo[a] / voxel_size)) - pad;
        const auto last = static_cast<std::int64_t>(std::floor(hi[a] / voxel_size)) + pad;
        origin[a] = static_cast<double>(first) * voxel_size;
        f.dims[a] = last - first + 1;
    }
    f.origin = {origin[0], origin[1], origin[2]};
    return f;
}

/// The global voxel map used for collision checks.
class VoxelGrid {
public:
    VoxelGrid() : bits_(1) {}
    explicit VoxelGrid(const GridFrame& frame) : frame_(frame), bits_(frame.cell_count()) {
        if (!(frame.voxel_size > 0.0)) throw ContractViolation("voxel_size must be positive");
        for (auto d : frame.dims)
            if (d <= 0) throw ContractViolation("grid dims must be positive");
    }

    const GridFrame& frame() const { return frame_; }
    const Point3& origin() const { return frame_.origin; }
    double voxel_size() const { return frame_.voxel_size; }
    const std::array<std::int64_t, 3>& dims() const { return frame_.dims; }

    bool in_bounds(const Index3& c) const {
        return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < frame_.dims[0] && c.y < frame_.dims[1] &&
               c.z < frame_.dims[2];
    }

    // Unchecked floor of the world position into lattice coordinates.
    Index3 lattice_of(const Point3& p) const {
        const double s = frame_.voxel_size;
        return {static_cast<std::int64_t>(std::floor((p.x - frame_.origin.x) / s)),
                static_cast<std::int64_t>(std::floor((p.y - frame_.origin.y) / s)),
                static_cast<std::int64_t>(std::floor((p.z - frame_.origin.z) / s))};
    }

    std::optional<Index3> cell_of(const Point3& p) const {
        if (!p.finite()) return std::nullopt;
        auto c = lattice_of(p);
        if (!in_bounds(c)) return std::nullopt;
        return c;
    }

    std::size_t linear(const Index3& c) const {
        return static_cast<std::size_t>(c.x) +
               static_cast<std::size_t>(frame_.dims[0]) *
                   (static_cast<std::size_t>(c.y) + static_cast<std::size_t>(frame_.dims[1]) * static_cast<std::size_t>(c.z));
    }

    bool occupied(const Index3& c) const { return bits_.test(linear(c)); }
    void set_occupied(const Index3& c) { bits_.set(linear(c)); }
    void set_free(const Index3& c) { bits_.reset(linear(c)); }

    std::size_t occupied_count() const { return bits_.count(); }

    std::vector<Index3> occupied_cells() const {
        std::vector<Index3> out;
        for (std::int64_t z = 0; z < frame_.dims[2]; ++z)
            for (std::int64_t y = 0; y < frame_.dims[1]; ++y)
                for (std::int64_t x = 0; x < frame_.dims[0]; ++x)
                    if (occupied({x, y, z})) out.push_back({x, y, z});
        return out;
    }

    Point3 cell_center(const Index3& c) const {
        const double s = frame_.voxel_size;
        return {frame_.origin.x + (c.x + 0.5) * s, frame_.origin.y + (c.y + 0.5) * s, frame_.origin.z + (c.z + 0.5) * s};
    }

    friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

private:
    GridFrame frame_;
    BitArray bits_;
};

/// Marks every cell hit by a point, then grows the set by the dilation radius
/// using repeated face-neighbour (6-connected) dilation. Points outside the
/// frame are ignored.
inline VoxelGrid voxelize_into(std::span<const Point3> points, const GridFrame& frame, double margin) {
    if (!(margin >= 0.0)) throw ContractViolation("margin must be non-negative");
    VoxelGrid grid(frame);
    std::vector<Index3> seeds;
    for (const auto& p : points) {
        if (auto c = grid.cell_of(p); c && !grid.occupied(*c)) {
            grid.set_occupied(*c);
            seeds.push_back(*c);
        }
    }
    const std::int64_t d = dilation_cells(margin, frame.voxel_size);
    if (d == 0) return grid;
    // Repeated 6-neighbourhood dilation equals stamping the L1 ball of radius d.
    std::vector<Index3> ball;
    for (std::int64_t dz = -d; dz <= d; ++dz)
        for (std::int64_t dy = -d; dy <= d; ++dy)
            for (std::int64_t dx = -d; dx <= d; ++dx)
                if (std::abs(dx) + std::abs(dy) + std::abs(dz) <= d && (dx || dy || dz)) ball.push_back({dx, dy, dz});
    for (const auto& s : seeds) {
        for (const auto& o : ball) {
            const Index3 c{s.x + o.x, s.y + o.y, s.z + o.z};
            if (grid.in_bounds(c)) grid.set_occupied(c);
        }
    }
    return grid;
}

inline VoxelGrid voxelize(const PointCloud& cloud, double voxel_size, double margin) {
    if (!(voxel_size > 0.0)) throw ContractViolation("voxel_size must be positive");
    if (!(margin >= 0.0)) throw ContractViolation("margin must be non-negative");
    if (cloud.points.empty()) {
        GridFrame unit;
        unit.voxel_size = voxel_size;
        return VoxelGrid(unit);
    }
    return voxelize_into(cloud.points, frame_for(cloud.bounds, voxel_size, margin), margin);
}

inline bool is_free(const VoxelGrid& grid, const Point3& p) {
    auto c = grid.cell_of(p);
    return c && !grid.occupied(*c);
}

/// Walks every voxel the segment a->b passes through (Amanatides-Woo
/// traversal over half-open cells) and requires each to be in bounds and free.
inline bool segment_free(const VoxelGrid& grid, const Point3& a, const Point3& b) {
    if (!a.finite() || !b.finite()) return false;
    Index3 cur = grid.lattice_of(a);
    const Index3 last = grid.lattice_of(b);
    if (!grid.in_bounds(cur) || !grid.in_bounds(last)) return false;
    if (grid.occupied(cur) || grid.occupied(last)) return false;
    if (cur == last) return true;

    const double s = grid.voxel_size();
    const std::array<double, 3> from{a.x - grid.origin().x, a.y - grid.origin().y, a.z - grid.origin().z};
    const std::array<double, 3> dir{b.x - a.x, b.y - a.y, b.z - a.z};
    std::array<std::int64_t, 3> cell{cur.x, cur.y, cur.z};
    const std::array<std::int64_t, 3> goal{last.x, last.y, last.z};
    std::array<std::int64_t, 3> step{};
    std::array<double, 3> t_max{};
    std::array<double, 3> t_delta{};
    constexpr double inf = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        if (dir[k] > 0.0) {
            step[k] = 1;
            t_max[k] = ((cell[k] + 1) * s - from[k]) / dir[k];
            t_delta[k] = s / dir[k];
        } else if (dir[k] < 0.0) {
            step[k] = -1;
            t_max[k] = (cell[k] * s - from[k]) / dir[k];
            t_delta[k] = -s / dir[k];
        } else {
            t_max[k] = inf;
            t_delta[k] = inf;
        }
    }
    // Upper bound on visited cells guards against rounding at the far end.
    std::int64_t budget = std::abs(goal[0] - cell[0]) + std::abs(goal[1] - cell[1]) + std::abs(goal[2] - cell[2]) + 3;
    while (cell != goal && budget-- > 0) {
        int k = 0;
        if (t_max[1] < t_max[k]) k = 1;
        if (t_max[2] < t_max[k]) k = 2;
        if (t_max[k] > 1.0) break;
        cell[k] += step[k];
        t_max[k] += t_delta[k];
        const Index3 c{cell[0], cell[1], cell[2]};
        if (!grid.in_bounds(c) || grid.occupied(c)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Bird's-eye view

/// Column-wise projection of a voxel grid. max_height is the world z of the
/// top face of the highest occupied voxel in the column, 0 where free.
class BevGrid {
public:
    BevGrid() = default;
    BevGrid(Point2 origin, double cell_size, std::int64_t nx, std::int64_t ny)
        : origin_(origin), cell_size_(cell_size), nx_(nx), ny_(ny),
          occupancy_(static_cast<std::size_t>(nx * ny)), max_height_(static_cast<std::size_t>(nx * ny), 0.0) {
        if (!(cell_size > 0.0) || nx <= 0 || ny <= 0) throw ContractViolation("invalid BEV geometry");
    }

    const Point2& origin() const { return origin_; }
    double cell_size() const { return cell_size_; }
    std::int64_t nx() const { return nx_; }
    std::int64_t ny() const { return ny_; }

    bool in_bounds(std::int64_t i, std::int64_t j) const { return i >= 0 && j >= 0 && i < nx_ && j < ny_; }
    std::size_t linear(std::int64_t i, std::int64_t j) const { return static_cast<std::size_t>(i + nx_ * j); }

    bool occupied(std::int64_t i, std::int64_t j) const { return occupancy_.test(linear(i, j)); }
    double max_height(std::int64_t i, std::int64_t j) const { return max_height_[linear(i, j)]; }

    void set_column(std::int64_t i, std::int64_t j, double height) {
        occupancy_.set(linear(i, j));
        max_height_[linear(i, j)] = height;
    }

    std::optional<std::array<std::int64_t, 2>> cell_of(double x, double y) const {
        const auto i = static_cast<std::int64_t>(std::floor((x - origin_.x) / cell_size_));
        const auto j = static_cast<std::int64_t>(std::floor((y - origin_.y) / cell_size_));
        if (!in_bounds(i, j)) return std::nullopt;
        return std::array<std::int64_t, 2>{i, j};
    }

    Point2 cell_center(std::int64_t i, std::int64_t j) const {
        return {origin_.x + (i + 0.5) * cell_size_, origin_.y + (j + 0.5) * cell_size_};
    }

    // Out-of-bounds positions count as occupied.
    bool occupied_at(double x, double y) const {
        auto c = cell_of(x, y);
        return !c || occupied((*c)[0], (*c)[1]);
    }

    bool has_vegetation() const { return !vegetation_.empty(); }
    bool vegetation(std::int64_t i, std::int64_t j) const {
        return has_vegetation() && vegetation_[linear(i, j)] != 0;
    }
    bool vegetation_at(double x, double y) const {
        auto c = cell_of(x, y);
        return c && vegetation((*c)[0], (*c)[1]);
    }
    void set_vegetation(std::int64_t i, std::int64_t j) {
        if (vegetation_.empty()) vegetation_.assign(max_height_.size(), 0);
        vegetation_[linear(i, j)] = 1;
    }

    std::size_t occupied_count() const { return occupancy_.count(); }

    friend bool operator==(const BevGrid&, const BevGrid&) = default;

private:
    Point2 origin_;
    double cell_size_ = 1.0;
    std::int64_t nx_ = 0;
    std::int64_t ny_ = 0;
    BitArray occupancy_;
    std::vector<double> max_height_;
    std::vector<std::uint8_t> vegetation_;
};

inline BevGrid bev_project(const VoxelGrid& grid) {
    const auto& d = grid.dims();
    BevGrid bev({grid.origin().x, grid.origin().y}, grid.voxel_size(), d[0], d[1]);
    for (std::int64_t j = 0; j < d[1]; ++j) {
        for (std::int64_t i = 0; i < d[0]; ++i) {
            for (std::int64_t k = d[2] - 1; k >= 0; --k) {
                if (grid.occupied({i, j, k})) {
                    bev.set_column(i, j, grid.origin().z + static_cast<double>(k + 1) * grid.voxel_size());
                    break;
                }
            }
        }
    }
    return bev;
}

/// Flags BEV cells whose centre lies under a tree canopy.
inline void mark_vegetation(BevGrid& bev, const std::vector<TreeSpec>& trees) {
    for (const auto& t : trees) {
        for (std::int64_t j = 0; j < bev.ny(); ++j) {
            for (std::int64_t i = 0; i < bev.nx(); ++i) {
                if (distance(bev.cell_center(i, j), t.position) <= t.radius + 0.5 * bev.cell_size())
                    bev.set_vegetation(i, j);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scene maps

struct MapConfig {
    double voxel_size = 1.0;
    double safety_margin = 2.0;
    // Points below this height are treated as ground and left out of the BEV.
    double ground_clearance = 0.5;
    // The global grid always reaches at least this high so flights stay in bounds.
    double ceiling = 130.0;
};

/// The two maps endpoint sampling and planning work on: M_global (dilated,
/// full cloud) and M_bev (undilated, ground removed). Both share one frame.
struct SceneMaps {
    VoxelGrid global;
    BevGrid bev;
};

inline SceneMaps build_scene_maps(const PointCloud& cloud, const std::vector<TreeSpec>& trees, const MapConfig& cfg) {
    auto bounds = cloud.points.empty() ? Bounds3{} : cloud.bounds;
    bounds.max.z = std::max(bounds.max.z, cfg.ceiling);
    const auto frame = frame_for(bounds, cfg.voxel_size, cfg.safety_margin);
    SceneMaps maps;
    maps.global = voxelize_into(cloud.points, frame, cfg.safety_margin);
    std::vector<Point3> raised;
    for (const auto& p : cloud.points)
        if (p.z >= cfg.ground_clearance) raised.push_back(p);
    maps.bev = bev_project(voxelize_into(raised, frame, 0.0));
    mark_vegetation(maps.bev, trees);
    return maps;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw ParseError(0, "truncated grid header");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

}  // namespace detail

/// Binary layout: origin xyz and voxel_size as little-endian f64, dims as
/// little-endian i64, then one packed row per (z, y) with z outermost. Each
/// row holds dims.x bits, least significant bit first, padded to a byte.
inline void write_grid(std::ostream& out, const VoxelGrid& grid) {
    detail::put_u64(out, std::bit_cast<std::uint64_t>(grid.origin().x));
    detail::put_u64(out, std::bit_cast<std::uint64_t>(grid.origin().y));
    detail::put_u64(out, std::bit_cast<std::uint64_t>(grid.origin().z));
    detail::put_u64(out, std::bit_cast<std::uint64_t>(grid.voxel_size()));
    for (auto d : grid.dims()) detail::put_u64(out, static_cast<std::uint64_t>(d));
    const auto& d = grid.dims();
    const std::size_t row_bytes = static_cast<std::size_t>((d[0] + 7) / 8);
    std::vector<char> row(row_bytes);
    for (std::int64_t z = 0; z < d[2]; ++z) {
        for (std::int64_t y = 0; y < d[1]; ++y) {
            std::fill(row.begin(), row.end(), 0);
            for (std::int64_t x = 0; x < d[0]; ++x)
                if (grid.occupied({x, y, z})) row[static_cast<std::size_t>(x / 8)] |= static_cast<char>(1 << (x % 8));
            out.write(row.data(), static_cast<std::streamsize>(row.size()));
        }
    }
}

inline VoxelGrid read_grid(std::istream& in) {
    GridFrame f;
    f.origin.x = std::bit_cast<double>(detail::get_u64(in));
    f.origin.y = std::bit_cast<double>(detail::get_u64(in));
    f.origin.z = std::bit_cast<double>(detail::get_u64(in));
    f.voxel_size = std::bit_cast<double>(detail::get_u64(in));
    for (auto& d : f.dims) d = static_cast<std::int64_t>(detail::get_u64(in));
    if (!(f.voxel_size > 0.0) || f.dims[0] <= 0 || f.dims[1] <= 0 || f.dims[2] <= 0)
        throw ParseError(0, "invalid grid header");
    VoxelGrid grid(f);
    const std::size_t row_bytes = static_cast<std::size_t>((f.dims[0] + 7) / 8);
    std::vector<char> row(row_bytes);
    for (std::int64_t z = 0; z < f.dims[2]; ++z) {
        for (std::int64_t y = 0; y < f.dims[1]; ++y) {
            if (!in.read(row.data(), static_cast<std::streamsize>(row.size()))) throw ParseError(0, "truncated grid body");
            for (std::int64_t x = 0; x < f.dims[0]; ++x)
                if (row[static_cast<std::size_t>(x / 8)] & (1 << (x % 8))) grid.set_occupied({x, y, z});
        }
    }
    return grid;
}

inline nlohmann::json grid_to_json(const VoxelGrid& grid) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : grid.occupied_cells()) cells.push_back({c.x, c.y, c.z});
    return {{"origin", {grid.origin().x, grid.origin().y, grid.origin().z}},
            {"voxel_size", grid.voxel_size()},
            {"dims", grid.dims()},
            {"occupied", std::move(cells)}};
}

inline VoxelGrid grid_from_json(const nlohmann::json& j) {
    try {
        GridFrame f;
        f.origin = {j.at("origin").at(0).get<double>(), j.at("origin").at(1).get<double>(), j.at("origin").at(2).get<double>()};
        f.voxel_size = j.at("voxel_size").get<double>();
        f.dims = j.at("dims").get<std::array<std::int64_t, 3>>();
        VoxelGrid grid(f);
        for (const auto& c : j.at("occupied")) {
            const Index3 idx{c.at(0).get<std::int64_t>(), c.at(1).get<std::int64_t>(), c.at(2).get<std::int64_t>()};
            if (!grid.in_bounds(idx)) throw ParseError(0, "occupied cell outside dims");
            grid.set_occupied(idx);
        }
        return grid;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("grid json: ") + e.what());
    }
}

inline nlohmann::json bev_to_json(const BevGrid& bev) {
    nlohmann::json heights = nlohmann::json::array();
    for (std::int64_t j = 0; j < bev.ny(); ++j) {
        nlohmann::json row = nlohmann::json::array();
        for (std::int64_t i = 0; i < bev.nx(); ++i) row.push_back(bev.max_height(i, j));
        heights.push_back(std::move(row));
    }
    nlohmann::json out{{"origin", {bev.origin().x, bev.origin().y}},
                       {"cell_size", bev.cell_size()},
                       {"dims", {bev.nx(), bev.ny()}},
                       {"max_height", std::move(heights)}};
    if (bev.has_vegetation()) {
        nlohmann::json veg = nlohmann::json::array();
        for (std::int64_t j = 0; j < bev.ny(); ++j)
            for (std::int64_t i = 0; i < bev.nx(); ++i)
                if (bev.vegetation(i, j)) veg.push_back({i, j});
        out["vegetation"] = std::move(veg);
    }
    return out;
}

}  // namespace aerovln
