#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/error.hpp"
#include "aerovln/geometry.hpp"
#include "aerovln/landmark.hpp"
#include "aerovln/strings.hpp"

namespace aerovln {

using Color = std::array<float, 3>;

struct PointCloud {
    std::vector<Point3> points;
    // Either empty or one entry per point.
    std::vector<Color> colors;
    Bounds3 bounds;

    std::size_t size() const { return points.size(); }
    bool has_colors() const { return !colors.empty(); }

    void recompute_bounds() { bounds = Bounds3::of(points); }
};

/// Parses the ASCII point format: one "x y z" or "x y z r g b" per line.
/// Blank lines and lines starting with '#' are skipped. Every point line in a
/// file must use the same arity.
inline PointCloud parse_point_cloud(std::istream& in) {
    PointCloud cloud;
    std::string line;
    std::size_t lineno = 0;
    std::size_t arity = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto fields = split_whitespace(body);
        if (fields.size() != 3 && fields.size() != 6)
            throw ParseError(lineno, "expected 3 or 6 fields, got " + std::to_string(fields.size()));
        if (arity == 0) arity = fields.size();
        if (fields.size() != arity) throw ParseError(lineno, "mixed point arity");
        std::array<double, 6> v{};
        for (std::size_t i = 0; i < fields.size(); ++i) {
            auto d = parse_double(fields[i]);
            if (!d || !std::isfinite(*d))
                throw ParseError(lineno, "bad number '" + std::string(fields[i]) + "'");
            v[i] = *d;
        }
        cloud.points.push_back({v[0], v[1], v[2]});
        if (arity == 6) {
            for (std::size_t i = 3; i < 6; ++i)
                if (v[i] < 0.0 || v[i] > 1.0) throw ParseError(lineno, "color component outside [0,1]");
            cloud.colors.push_back({static_cast<float>(v[3]), static_cast<float>(v[4]), static_cast<float>(v[5])});
        }
    }
    cloud.recompute_bounds();
    return cloud;
}

inline PointCloud load_point_cloud(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open point cloud '" + path.string() + "'");
    return parse_point_cloud(in);
}

inline void write_point_cloud(std::ostream& out, const PointCloud& cloud) {
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const auto& p = cloud.points[i];
        out << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z);
        if (cloud.has_colors()) {
            const auto& c = cloud.colors[i];
            out << ' ' << format_double(c[0]) << ' ' << format_double(c[1]) << ' ' << format_double(c[2]);
        }
        out << '\n';
    }
}

inline void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write point cloud '" + path.string() + "'");
    write_point_cloud(out, cloud);
}

// ---------------------------------------------------------------------------
// Procedural scenes

struct BuildingSpec {
    std::vector<Point2> footprint;  // open ring, counter-clockwise or clockwise
    double height = 0.0;
    std::string label;
};

struct TreeSpec {
    Point2 position;
    double height = 0.0;
    double radius = 3.0;
};

struct SceneSpec {
    std::string scene_id = "scene";
    double extent_x = 0.0;
    double extent_y = 0.0;
    double spacing = 0.5;
    std::uint64_t seed = 0;
    std::vector<BuildingSpec> buildings;
    std::vector<TreeSpec> trees;
};

inline constexpr const char* kTreeLabel = "green tree";

// Octagon approximating a tree canopy footprint.
inline std::vector<Point2> tree_footprint(const TreeSpec& t) {
    std::vector<Point2> ring;
    for (int k = 0; k < 8; ++k) {
        const double a = (k + 0.5) * std::numbers::pi / 4.0;
        ring.push_back({t.position.x + t.radius * std::cos(a), t.position.y + t.radius * std::sin(a)});
    }
    return ring;
}

inline void to_json(nlohmann::json& j, const SceneSpec& s) {
    auto ring = [](const std::vector<Point2>& r) {
        auto a = nlohmann::json::array();
        for (const auto& p : r) a.push_back({p.x, p.y});
        return a;
    };
    j = nlohmann::json{{"scene_id", s.scene_id},
                       {"extent", {s.extent_x, s.extent_y}},
                       {"spacing", s.spacing},
                       {"seed", s.seed},
                       {"buildings", nlohmann::json::array()},
                       {"trees", nlohmann::json::array()}};
    for (const auto& b : s.buildings)
        j["buildings"].push_back({{"footprint", ring(b.footprint)}, {"height", b.height}, {"label", b.label}});
    for (const auto& t : s.trees)
        j["trees"].push_back({{"position", {t.position.x, t.position.y}}, {"height", t.height}, {"radius", t.radius}});
}

inline void from_json(const nlohmann::json& j, SceneSpec& s) {
    try {
        s = SceneSpec{};
        s.scene_id = j.value("scene_id", std::string("scene"));
        const auto& ext = j.at("extent");
        s.extent_x = ext.at(0).get<double>();
        s.extent_y = ext.at(1).get<double>();
        s.spacing = j.value("spacing", 0.5);
        s.seed = j.value("seed", std::uint64_t{0});
        for (const auto& b : j.value("buildings", nlohmann::json::array())) {
            BuildingSpec spec;
            for (const auto& p : b.at("footprint")) spec.footprint.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            spec.height = b.at("height").get<double>();
            spec.label = b.at("label").get<std::string>();
            s.buildings.push_back(std::move(spec));
        }
        for (const auto& t : j.value("trees", nlohmann::json::array())) {
            TreeSpec spec;
            spec.position = {t.at("position").at(0).get<double>(), t.at("position").at(1).get<double>()};
            spec.height = t.at("height").get<double>();
            spec.radius = t.value("radius", 3.0);
            s.trees.push_back(spec);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scene spec: ") + e.what());
    }
}

inline void validate(const SceneSpec& spec) {
    if (!(spec.extent_x > 0.0) || !(spec.extent_y > 0.0)) throw ConfigError("scene extent must be positive");
    if (!(spec.spacing > 0.0)) throw ConfigError("sampling spacing must be positive");
    auto inside = [&](const Point2& p) {
        return p.x >= 0.0 && p.x <= spec.extent_x && p.y >= 0.0 && p.y <= spec.extent_y;
    };
    std::vector<std::vector<Point2>> footprints;
    for (std::size_t i = 0; i < spec.buildings.size(); ++i) {
        const auto& b = spec.buildings[i];
        const auto tag = "building " + std::to_string(i);
        if (b.footprint.size() < 3) throw ConfigError(tag + ": footprint needs at least 3 vertices");
        if (!is_simple_polygon(b.footprint)) throw ConfigError(tag + ": footprint is not a simple polygon");
        if (!(b.height > 0.0)) throw ConfigError(tag + ": height must be positive");
        if (b.label.empty()) throw ConfigError(tag + ": empty label");
        for (const auto& p : b.footprint)
            if (!inside(p)) throw ConfigError(tag + ": footprint leaves the ground extent");
        footprints.push_back(b.footprint);
    }
    for (std::size_t i = 0; i < spec.trees.size(); ++i) {
        const auto& t = spec.trees[i];
        const auto tag = "tree " + std::to_string(i);
        if (!(t.height > 0.0) || !(t.radius > 0.0)) throw ConfigError(tag + ": height and radius must be positive");
        if (t.position.x - t.radius < 0.0 || t.position.y - t.radius < 0.0 ||
            t.position.x + t.radius > spec.extent_x || t.position.y + t.radius > spec.extent_y)
            throw ConfigError(tag + ": canopy leaves the ground extent");
        footprints.push_back(tree_footprint(t));
    }
    for (std::size_t i = 0; i < footprints.size(); ++i)
        for (std::size_t j = i + 1; j < footprints.size(); ++j)
            if (polygons_overlap(footprints[i], footprints[j]))
                throw ConfigError("footprints " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
}

namespace detail {

inline Point2 polygon_centroid(const std::vector<Point2>& ring) {
    const double a = signed_area(ring);
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < ring.size(); ++i) {
        const auto& p = ring[i];
        const auto& q = ring[(i + 1) % ring.size()];
        const double w = p.x * q.y - q.x * p.y;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    return {cx / (6.0 * a), cy / (6.0 * a)};
}

// Cell-centred lattice samples: n = ceil(len / spacing) per axis keeps gaps <= spacing.
inline int sample_count(double len, double spacing) {
    return std::max(1, static_cast<int>(std::ceil(len / spacing - 1e-9)));
}

inline void sample_footprint_surface(const std::vector<Point2>& ring, double z0, double z1, bool roof,
                                     double spacing, std::vector<Point3>& out) {
    const std::size_t n = ring.size();
    const int nh = sample_count(z1 - z0, spacing);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = ring[i];
        const auto& b = ring[(i + 1) % n];
        const int ne = sample_count(distance(a, b), spacing);
        for (int e = 0; e < ne; ++e) {
            const double t = (e + 0.5) / ne;
            const double x = a.x + t * (b.x - a.x);
            const double y = a.y + t * (b.y - a.y);
            for (int k = 0; k < nh; ++k) out.push_back({x, y, z0 + (k + 0.5) * (z1 - z0) / nh});
        }
    }
    if (!roof) return;
    Bounds3 box = Bounds3::of(std::vector<Point3>{{ring[0].x, ring[0].y, 0}});
    for (const auto& p : ring) box.expand({p.x, p.y, 0});
    const int nx = sample_count(box.max.x - box.min.x, spacing);
    const int ny = sample_count(box.max.y - box.min.y, spacing);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const Point2 p{box.min.x + (i + 0.5) * (box.max.x - box.min.x) / nx,
                           box.min.y + (j + 0.5) * (box.max.y - box.min.y) / ny};
            if (point_in_polygon(p, ring)) out.push_back({p.x, p.y, z1});
        }
    }
}

inline std::vector<Point2> closed(std::vector<Point2> ring) {
    if (!ring.empty() && !(ring.front() == ring.back())) ring.push_back(ring.front());
    return ring;
}

}  // namespace detail

struct SynthesizedScene {
    PointCloud cloud;
    std::vector<LandmarkInstance> landmarks;
};

/// Samples the ground plane, building walls and roofs, and tree canopies as
/// surface points at no more than spec.spacing apart. Buildings come first in
/// the landmark list (ids 0..B-1), trees after them.
inline SynthesizedScene synthesize_scene(const SceneSpec& spec) {
    validate(spec);
    SynthesizedScene scene;
    auto& pts = scene.cloud.points;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> jitter(-0.02, 0.02);

    const int gx = detail::sample_count(spec.extent_x, spec.spacing);
    const int gy = detail::sample_count(spec.extent_y, spec.spacing);
    pts.reserve(static_cast<std::size_t>(gx) * static_cast<std::size_t>(gy));
    for (int j = 0; j < gy; ++j)
        for (int i = 0; i < gx; ++i)
            pts.push_back({(i + 0.5) * spec.extent_x / gx, (j + 0.5) * spec.extent_y / gy, jitter(rng)});

    int next_id = 0;
    for (const auto& b : spec.buildings) {
        detail::sample_footprint_surface(b.footprint, 0.0, b.height, true, spec.spacing, pts);
        LandmarkInstance lm;
        lm.id = next_id++;
        lm.contour = detail::closed(b.footprint);
        lm.centroid = detail::polygon_centroid(b.footprint);
        lm.height = b.height;
        lm.area = std::abs(signed_area(b.footprint));
        lm.label = b.label;
        scene.landmarks.push_back(std::move(lm));
    }
    for (const auto& t : spec.trees) {
        // Trunk up to 40% of the height, then a cylindrical canopy.
        const double base = 0.4 * t.height;
        const int nt = detail::sample_count(base, spec.spacing);
        for (int k = 0; k < nt; ++k) pts.push_back({t.position.x, t.position.y, (k + 0.5) * base / nt});
        std::vector<Point2> ring;
        const int nr = detail::sample_count(2.0 * std::numbers::pi * t.radius, spec.spacing);
        std::uniform_real_distribution<double> wobble(-0.1 * spec.spacing, 0.1 * spec.spacing);
        for (int k = 0; k < nr; ++k) {
            const double a = 2.0 * std::numbers::pi * k / nr;
            const double r = std::max(0.0, t.radius - 0.1 * spec.spacing + wobble(rng));
            ring.push_back({t.position.x + r * std::cos(a), t.position.y + r * std::sin(a)});
        }
        detail::sample_footprint_surface(ring, base, t.height, true, spec.spacing, pts);
        LandmarkInstance lm;
        lm.id = next_id++;
        const auto fp = tree_footprint(t);
        lm.contour = detail::closed(fp);
        lm.centroid = t.position;
        lm.height = t.height;
        lm.area = std::abs(signed_area(fp));
        lm.label = kTreeLabel;
        scene.landmarks.push_back(std::move(lm));
    }
    scene.cloud.recompute_bounds();
    return scene;
}

/// Surface area the sampler covers: ground, walls, roofs and canopies.
inline double sampled_surface_area(const SceneSpec& spec) {
    double area = spec.extent_x * spec.extent_y;
    for (const auto& b : spec.buildings) {
        double perimeter = 0.0;
        for (std::size_t i = 0; i < b.footprint.size(); ++i)
            perimeter += distance(b.footprint[i], b.footprint[(i + 1) % b.footprint.size()]);
        area += perimeter * b.height + std::abs(signed_area(b.footprint));
    }
    for (const auto& t : spec.trees) {
        const double canopy = 0.6 * t.height;
        area += 2.0 * std::numbers::pi * t.radius * canopy + std::numbers::pi * t.radius * t.radius;
    }
    return area;
}

/// A block-grid city: one rectangular building per lot, trees in some empty
/// lots. Lots are separated by streets so footprints never overlap.
inline SceneSpec random_city_spec(std::uint64_t seed, double extent, int lots_per_side, double street = 20.0) {
    static constexpr std::array colors{"gray", "blue", "white", "beige", "red", "brown", "black", "silver"};
    static constexpr std::array features{"glass", "brick", "concrete", "steel", "stone", "mirrored"};
    static constexpr std::array types{"building", "tower", "skyscraper", "office", "apartment", "hotel"};

    SceneSpec spec;
    spec.scene_id = "city-" + std::to_string(seed);
    spec.extent_x = spec.extent_y = extent;
    spec.seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double lot = extent / lots_per_side;
    const double usable = lot - street;
    if (usable <= 6.0) throw ConfigError("lots too small for the street width");
    auto pick = [&](const auto& arr) { return std::string(arr[static_cast<std::size_t>(u01(rng) * arr.size()) % arr.size()]); };
    for (int j = 0; j < lots_per_side; ++j) {
        for (int i = 0; i < lots_per_side; ++i) {
            const double x0 = i * lot + street / 2.0;
            const double y0 = j * lot + street / 2.0;
            const double roll = u01(rng);
            if (roll < 0.7) {
                const double w = std::max(6.0, usable * (0.4 + 0.6 * u01(rng)));
                const double d = std::max(6.0, usable * (0.4 + 0.6 * u01(rng)));
                const double ox = x0 + (usable - w) * u01(rng);
                const double oy = y0 + (usable - d) * u01(rng);
                BuildingSpec b;
                b.footprint = {{ox, oy}, {ox + w, oy}, {ox + w, oy + d}, {ox, oy + d}};
                b.height = std::round(15.0 + 75.0 * u01(rng));
                b.label = pick(colors) + " " + pick(features) + " " + pick(types);
                spec.buildings.push_back(std::move(b));
            } else if (roll < 0.85) {
                TreeSpec t;
                t.radius = 3.0 + 1.5 * u01(rng);
                t.position = {x0 + usable / 2.0, y0 + usable / 2.0};
                t.height = std::round(8.0 + 8.0 * u01(rng));
                spec.trees.push_back(t);
            }
        }
    }
    return spec;
}

}  // namespace aerovln
