#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/action.hpp"
#include "aerovln/error.hpp"
#include "aerovln/geometry.hpp"
#include "aerovln/landmark.hpp"
#include "aerovln/occupancy.hpp"

namespace aerovln {

class NoPathError : public Error {
public:
    using Error::Error;
};

// No landmark is tall enough to serve as a target.
class EligibilityError : public Error {
public:
    using Error::Error;
};

class SamplingExhausted : public Error {
public:
    using Error::Error;
};

// A chained segment failed; segment() is 0-based.
class ChainError : public Error {
public:
    ChainError(std::size_t segment, const std::string& what)
        : Error("segment " + std::to_string(segment) + ": " + what), segment_(segment) {}
    std::size_t segment() const noexcept { return segment_; }

private:
    std::size_t segment_;
};

struct TrajGenConfig {
    std::array<double, 2> height_range{20.0, 120.0};
    double landmark_height_threshold = 20.0;  // H_tau
    std::array<double, 2> start_distance_range{60.0, 250.0};  // [r, R]
    std::vector<double> forward_granularities{3.0, 6.0, 9.0};
    std::int64_t max_expansions = 2'000'000;
    std::uint64_t seed = 0;
    double goal_tolerance = 5.0;
    double goal_offset = 10.0;
    int max_sampling_attempts = 1000;

    void validate() const {
        const auto [r, R] = start_distance_range;
        if (!(r > 0.0) || !(r <= R)) throw ConfigError("start_distance_range must satisfy 0 < r <= R");
        if (!(height_range[0] <= height_range[1])) throw ConfigError("height_range min exceeds max");
        if (forward_granularities.empty()) throw ConfigError("forward_granularities is empty");
        for (double g : forward_granularities)
            if (g != 3.0 && g != 6.0 && g != 9.0) throw ConfigError("forward granularities must be 3, 6 or 9 m");
        if (max_expansions <= 0) throw ConfigError("max_expansions must be positive");
        if (!(goal_tolerance > 0.0) || !(goal_offset >= 0.0)) throw ConfigError("bad goal tolerance/offset");
        if (max_sampling_attempts <= 0) throw ConfigError("max_sampling_attempts must be positive");
    }
};

inline void to_json(nlohmann::json& j, const TrajGenConfig& c) {
    j = {{"height_range", c.height_range},
         {"landmark_height_threshold", c.landmark_height_threshold},
         {"start_distance_range", c.start_distance_range},
         {"forward_granularities", c.forward_granularities},
         {"max_expansions", c.max_expansions},
         {"seed", c.seed},
         {"goal_tolerance", c.goal_tolerance},
         {"goal_offset", c.goal_offset},
         {"max_sampling_attempts", c.max_sampling_attempts}};
}

inline void from_json(const nlohmann::json& j, TrajGenConfig& c) {
    TrajGenConfig d;
    c.height_range = j.value("height_range", d.height_range);
    c.landmark_height_threshold = j.value("landmark_height_threshold", d.landmark_height_threshold);
    c.start_distance_range = j.value("start_distance_range", d.start_distance_range);
    c.forward_granularities = j.value("forward_granularities", d.forward_granularities);
    c.max_expansions = j.value("max_expansions", d.max_expansions);
    c.seed = j.value("seed", d.seed);
    c.goal_tolerance = j.value("goal_tolerance", d.goal_tolerance);
    c.goal_offset = j.value("goal_offset", d.goal_offset);
    c.max_sampling_attempts = j.value("max_sampling_attempts", d.max_sampling_attempts);
    c.validate();
}

// ---------------------------------------------------------------------------
// Search costs, in decimetres so they stay integral.

inline constexpr std::int64_t kTurnCost = 1;

inline std::int64_t action_cost(const Action& a) {
    switch (a.kind) {
        case ActionKind::Forward:
        case ActionKind::MoveUp:
        case ActionKind::MoveDown: return static_cast<std::int64_t>(std::llround(a.magnitude * 10.0));
        case ActionKind::TurnLeft:
        case ActionKind::TurnRight: return kTurnCost;
        case ActionKind::Stop: return 0;
    }
    return 0;
}

inline std::int64_t trajectory_cost(const std::vector<Action>& actions) {
    std::int64_t c = 0;
    for (const auto& a : actions) c += action_cost(a);
    return c;
}

inline std::vector<Action> search_actions(const TrajGenConfig& cfg) {
    std::vector<Action> out;
    auto g = cfg.forward_granularities;
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    for (double m : g) out.push_back(Action::forward(m));
    out.push_back(Action::turn_left());
    out.push_back(Action::turn_right());
    out.push_back(Action::up());
    out.push_back(Action::down());
    return out;
}

namespace detail {

// Every reachable position is start + 1.5 m * (xa + xb*sqrt3, ya + yb*sqrt3, 2*zk),
// so search states have exact integer coordinates.
struct LatticeState {
    std::int32_t xa = 0, xb = 0, ya = 0, yb = 0, zk = 0;
    std::int32_t yaw = 0;
    friend bool operator==(const LatticeState&, const LatticeState&) = default;
};

struct LatticeHash {
    std::size_t operator()(const LatticeState& s) const noexcept {
        std::uint64_t h = 0x9E3779B97F4A7C15ull;
        for (std::int32_t v : {s.xa, s.xb, s.ya, s.yb, s.zk, s.yaw}) {
            h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
        }
        return static_cast<std::size_t>(h);
    }
};

// Twice the heading's cosine and sine as a + b*sqrt3.
inline constexpr std::array<std::array<int, 4>, 12> kHeadingCoeffs{{{2, 0, 0, 0},
                                                                    {0, 1, 1, 0},
                                                                    {1, 0, 0, 1},
                                                                    {0, 0, 2, 0},
                                                                    {-1, 0, 0, 1},
                                                                    {0, -1, 1, 0},
                                                                    {-2, 0, 0, 0},
                                                                    {0, -1, -1, 0},
                                                                    {-1, 0, 0, -1},
                                                                    {0, 0, -2, 0},
                                                                    {1, 0, 0, -1},
                                                                    {0, 1, -1, 0}}};

inline LatticeState lattice_step(LatticeState s, const Action& a) {
    switch (a.kind) {
        case ActionKind::Forward: {
            const int units = static_cast<int>(std::lround(a.magnitude / 3.0));
            const auto& c = kHeadingCoeffs[static_cast<std::size_t>(s.yaw / 30)];
            s.xa += units * c[0];
            s.xb += units * c[1];
            s.ya += units * c[2];
            s.yb += units * c[3];
            break;
        }
        case ActionKind::TurnLeft: s.yaw = normalize_yaw(s.yaw + 30); break;
        case ActionKind::TurnRight: s.yaw = normalize_yaw(s.yaw - 30); break;
        case ActionKind::MoveUp: ++s.zk; break;
        case ActionKind::MoveDown: --s.zk; break;
        case ActionKind::Stop: break;
    }
    return s;
}

}  // namespace detail

/// A* over the discrete action space. Positions are exact rollouts of step();
/// states are identified by their lattice coordinates and heading. Costs are
/// metres moved (turns 0.1 m); the heuristic is the straight-line distance to
/// the goal tolerance sphere. Ties go to the smaller heuristic, then FIFO.
inline Trajectory astar_search(const Pose& start, const Point3& goal, const VoxelGrid& grid, const TrajGenConfig& cfg) {
    if (!is_free(grid, start.position)) throw ContractViolation("start pose is not free");
    if (start.yaw < 0 || start.yaw >= 360 || start.yaw % 30 != 0) throw ContractViolation("start yaw not quantized");
    const double tol = cfg.goal_tolerance;
    auto heuristic = [&](const Point3& p) { return 10.0 * std::max(0.0, distance(p, goal) - tol); };

    struct Node {
        Pose pose;
        std::int64_t g;
        std::int32_t parent;
        Action action;
    };
    struct Entry {
        double f;
        double h;
        std::uint64_t seq;
        std::int32_t node;
        detail::LatticeState state;
        bool operator>(const Entry& o) const {
            if (f != o.f) return f > o.f;
            if (h != o.h) return h > o.h;
            return seq > o.seq;
        }
    };

    const auto actions = search_actions(cfg);
    std::vector<Node> nodes;
    std::unordered_map<detail::LatticeState, std::int64_t, detail::LatticeHash> best_g;
    std::unordered_map<detail::LatticeState, bool, detail::LatticeHash> closed;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
    std::uint64_t seq = 0;

    const detail::LatticeState s0{0, 0, 0, 0, 0, start.yaw};
    nodes.push_back({start, 0, -1, Action::stop()});
    best_g[s0] = 0;
    const double h0 = heuristic(start.position);
    open.push({h0, h0, seq++, 0, s0});

    std::int64_t expansions = 0;
    while (!open.empty()) {
        const Entry e = open.top();
        open.pop();
        if (closed.count(e.state)) continue;
        closed.emplace(e.state, true);
        const Node node = nodes[static_cast<std::size_t>(e.node)];
        if (distance(node.pose.position, goal) <= tol) {
            Trajectory t;
            t.start = start;
            t.goal = goal;
            for (std::int32_t i = e.node; nodes[static_cast<std::size_t>(i)].parent >= 0;
                 i = nodes[static_cast<std::size_t>(i)].parent)
                t.actions.push_back(nodes[static_cast<std::size_t>(i)].action);
            std::reverse(t.actions.begin(), t.actions.end());
            t.actions.push_back(Action::stop());
            t.poses = rollout(start, t.actions);
            return t;
        }
        if (++expansions > cfg.max_expansions)
            throw NoPathError("A* exceeded " + std::to_string(cfg.max_expansions) + " expansions");
        for (const auto& a : actions) {
            const auto ns = detail::lattice_step(e.state, a);
            if (closed.count(ns)) continue;
            const std::int64_t g = node.g + action_cost(a);
            auto it = best_g.find(ns);
            if (it != best_g.end() && it->second <= g) continue;
            const Pose np = step(node.pose, a);
            if (!a.is_turn() && !segment_free(grid, node.pose.position, np.position)) continue;
            best_g[ns] = g;
            nodes.push_back({np, g, e.node, a});
            const double h = heuristic(np.position);
            open.push({static_cast<double>(g) + h, h, seq++, static_cast<std::int32_t>(nodes.size() - 1), ns});
        }
    }
    throw NoPathError("goal unreachable: open set exhausted");
}

// ---------------------------------------------------------------------------
// Endpoint sampling

struct Endpoints {
    Pose start;
    Point3 goal;
    int target_id = -1;
};

inline int nearest_heading(double dx, double dy) {
    const double deg = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
    return normalize_yaw(static_cast<int>(std::lround(deg / 30.0)) * 30);
}

/// Point on the ray from the landmark centroid toward `from`, goal_offset
/// beyond where the ray leaves the landmark. nullopt when that point is not
/// short of `from` by more than the goal tolerance.
inline std::optional<Point2> approach_point(const LandmarkInstance& lm, const BevGrid& bev, const Point2& from,
                                            const TrajGenConfig& cfg) {
    const double d = distance(lm.centroid, from);
    if (!(d > 0.0)) return std::nullopt;
    const Point2 dir{(from.x - lm.centroid.x) / d, (from.y - lm.centroid.y) / d};
    const double stepsize = bev.cell_size() / 4.0;
    double t = 0.0;
    for (; t < d; t += stepsize) {
        const Point2 p{lm.centroid.x + t * dir.x, lm.centroid.y + t * dir.y};
        const bool inside = lm.contour.size() >= 4 && point_in_polygon(p, lm.contour);
        const auto cell = bev.cell_of(p.x, p.y);
        const bool occupied = cell && bev.occupied((*cell)[0], (*cell)[1]);
        if (!inside && !occupied) break;
    }
    const double tg = t + cfg.goal_offset;
    if (tg + cfg.goal_tolerance >= d) return std::nullopt;
    return Point2{lm.centroid.x + tg * dir.x, lm.centroid.y + tg * dir.y};
}

inline bool column_clear(const BevGrid& bev, const Point2& p, double altitude) {
    const auto c = bev.cell_of(p.x, p.y);
    return c && (!bev.occupied((*c)[0], (*c)[1]) || bev.max_height((*c)[0], (*c)[1]) < altitude);
}

inline std::vector<const LandmarkInstance*> eligible_landmarks(const std::vector<LandmarkInstance>& landmarks,
                                                               const TrajGenConfig& cfg) {
    std::vector<const LandmarkInstance*> out;
    for (const auto& lm : landmarks)
        if (lm.height >= cfg.landmark_height_threshold) out.push_back(&lm);
    return out;
}

inline Endpoints sample_endpoints(const std::vector<LandmarkInstance>& landmarks, const BevGrid& bev,
                                  const VoxelGrid& grid, const TrajGenConfig& cfg, std::mt19937_64& rng) {
    const auto eligible = eligible_landmarks(landmarks, cfg);
    if (eligible.empty())
        throw EligibilityError("no landmark reaches the height threshold of " +
                               std::to_string(cfg.landmark_height_threshold) + " m");
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    std::uniform_real_distribution<double> altitude(cfg.height_range[0], cfg.height_range[1]);
    std::uniform_real_distribution<double> bearing(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> radius(cfg.start_distance_range[0], cfg.start_distance_range[1]);
    for (int attempt = 0; attempt < cfg.max_sampling_attempts; ++attempt) {
        const auto& lm = *eligible[pick(rng)];
        const double z = cfg.height_range[0] == cfg.height_range[1] ? cfg.height_range[0] : altitude(rng);
        const double phi = bearing(rng);
        const double d = cfg.start_distance_range[0] == cfg.start_distance_range[1] ? cfg.start_distance_range[0]
                                                                                    : radius(rng);
        const Point2 s{lm.centroid.x + d * std::cos(phi), lm.centroid.y + d * std::sin(phi)};
        const Point3 start{s.x, s.y, z};
        if (!is_free(grid, start) || !column_clear(bev, s, z)) continue;
        const auto g = approach_point(lm, bev, s, cfg);
        if (!g) continue;
        const Point3 goal{g->x, g->y, z};
        const auto gc = bev.cell_of(g->x, g->y);
        if (!gc || bev.occupied((*gc)[0], (*gc)[1]) || !is_free(grid, goal)) continue;
        return {{start, nearest_heading(goal.x - start.x, goal.y - start.y)}, goal, lm.id};
    }
    throw SamplingExhausted("no feasible start/goal after " + std::to_string(cfg.max_sampling_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Chaining

/// Builds a trajectory of `segments` A* legs. Each later leg starts at the
/// previous leg's final pose and heads for a different eligible landmark whose
/// centroid lies within [r, R] of it, at the same altitude.
inline Trajectory chain_trajectories(int segments, const std::vector<LandmarkInstance>& landmarks, const BevGrid& bev,
                                     const VoxelGrid& grid, const TrajGenConfig& cfg, std::mt19937_64& rng,
                                     std::vector<Trajectory>* legs = nullptr) {
    if (segments < 1) throw ContractViolation("segments must be >= 1");
    Trajectory out;
    for (int seg = 0; seg < segments; ++seg) {
        const auto index = static_cast<std::size_t>(seg);
        Pose start;
        Point3 goal;
        int target = -1;
        try {
            if (seg == 0) {
                const auto ep = sample_endpoints(landmarks, bev, grid, cfg, rng);
                start = ep.start;
                goal = ep.goal;
                target = ep.target_id;
            } else {
                start = out.poses.back();
                const Point2 here{start.position.x, start.position.y};
                std::vector<const LandmarkInstance*> candidates;
                for (const auto* lm : eligible_landmarks(landmarks, cfg)) {
                    const double d = distance(lm->centroid, here);
                    if (lm->id != out.target_landmark_id && d >= cfg.start_distance_range[0] &&
                        d <= cfg.start_distance_range[1])
                        candidates.push_back(lm);
                }
                if (candidates.empty()) throw SamplingExhausted("no eligible landmark within [r, R]");
                std::shuffle(candidates.begin(), candidates.end(), rng);
                bool found = false;
                for (const auto* lm : candidates) {
                    const auto g = approach_point(*lm, bev, here, cfg);
                    if (!g) continue;
                    const Point3 p{g->x, g->y, start.position.z};
                    const auto gc = bev.cell_of(g->x, g->y);
                    if (!gc || bev.occupied((*gc)[0], (*gc)[1]) || !is_free(grid, p)) continue;
                    goal = p;
                    target = lm->id;
                    found = true;
                    break;
                }
                if (!found) throw SamplingExhausted("no reachable goal near any candidate landmark");
            }
            auto leg = astar_search(start, goal, grid, cfg);
            leg.target_landmark_id = target;
            if (legs) legs->push_back(leg);
            if (seg == 0) {
                out = std::move(leg);
            } else {
                out.actions.pop_back();  // intermediate Stop
                out.actions.insert(out.actions.end(), leg.actions.begin(), leg.actions.end());
                out.poses = rollout(out.start, out.actions);
                out.goal = leg.goal;
            }
            out.target_landmark_id = target;
        } catch (const ChainError&) {
            throw;
        } catch (const Error& e) {
            throw ChainError(index, e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Grid mode

/// Pre-rasterized horizontal lattice of capture points at one altitude.
struct GridLattice {
    Point3 origin;
    double spacing = 3.0;
    std::int64_t nx = 0;
    std::int64_t ny = 0;
    std::vector<std::uint8_t> available;  // row-major, i + nx * j

    bool in_bounds(std::int64_t i, std::int64_t j) const { return i >= 0 && j >= 0 && i < nx && j < ny; }
    bool open(std::int64_t i, std::int64_t j) const {
        return in_bounds(i, j) && available[static_cast<std::size_t>(i + nx * j)] != 0;
    }
    Point3 point(std::int64_t i, std::int64_t j) const {
        return {origin.x + static_cast<double>(i) * spacing, origin.y + static_cast<double>(j) * spacing, origin.z};
    }
};

struct LatticeIndex {
    std::int64_t i = 0;
    std::int64_t j = 0;
    friend bool operator==(const LatticeIndex&, const LatticeIndex&) = default;
};

/// Shortest route over available lattice points using Forward(spacing) along
/// the four axis headings and 30-degree turns. Distance is minimised first,
/// then the number of turns.
inline Trajectory grid_search(const GridLattice& lattice, const LatticeIndex& start, int start_yaw,
                              const LatticeIndex& goal) {
    if (lattice.spacing != 3.0 && lattice.spacing != 6.0 && lattice.spacing != 9.0)
        throw ContractViolation("lattice spacing must be a forward granularity");
    if (static_cast<std::int64_t>(lattice.available.size()) != lattice.nx * lattice.ny)
        throw ContractViolation("availability mask size mismatch");
    if (!lattice.open(start.i, start.j) || !lattice.open(goal.i, goal.j))
        throw ContractViolation("start and goal must be available lattice points");
    if (normalize_yaw(start_yaw) != start_yaw || start_yaw % 30 != 0) throw ContractViolation("start yaw not quantized");

    constexpr std::int64_t kForward = 1'000'000;
    const auto n = static_cast<std::size_t>(lattice.nx * lattice.ny * 12);
    auto id = [&](std::int64_t i, std::int64_t j, int yaw) {
        return static_cast<std::size_t>((i + lattice.nx * j) * 12 + yaw / 30);
    };
    std::vector<std::int64_t> dist(n, std::numeric_limits<std::int64_t>::max());
    std::vector<std::int64_t> parent(n, -1);
    std::vector<Action> via(n);
    using Item = std::pair<std::int64_t, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[id(start.i, start.j, start_yaw)] = 0;
    pq.push({0, id(start.i, start.j, start_yaw)});
    std::int64_t reached = -1;
    while (!pq.empty()) {
        const auto [d, u] = pq.top();
        pq.pop();
        if (d != dist[u]) continue;
        const int yaw = static_cast<int>(u % 12) * 30;
        const auto cell = static_cast<std::int64_t>(u / 12);
        const std::int64_t i = cell % lattice.nx, j = cell / lattice.nx;
        if (i == goal.i && j == goal.j) {
            reached = static_cast<std::int64_t>(u);
            break;
        }
        auto relax = [&](std::size_t v, std::int64_t cost, const Action& a) {
            if (d + cost < dist[v]) {
                dist[v] = d + cost;
                parent[v] = static_cast<std::int64_t>(u);
                via[v] = a;
                pq.push({dist[v], v});
            }
        };
        relax(id(i, j, normalize_yaw(yaw + 30)), 1, Action::turn_left());
        relax(id(i, j, normalize_yaw(yaw - 30)), 1, Action::turn_right());
        if (yaw % 90 == 0) {
            const auto h = heading_vector(yaw);
            const std::int64_t ni = i + std::lround(h.x), nj = j + std::lround(h.y);
            if (lattice.open(ni, nj)) relax(id(ni, nj, yaw), kForward, Action::forward(lattice.spacing));
        }
    }
    if (reached < 0) throw NoPathError("goal lattice point unreachable");

    Trajectory t;
    t.start = {lattice.point(start.i, start.j), start_yaw};
    t.goal = lattice.point(goal.i, goal.j);
    for (auto v = reached; parent[static_cast<std::size_t>(v)] >= 0; v = parent[static_cast<std::size_t>(v)])
        t.actions.push_back(via[static_cast<std::size_t>(v)]);
    std::reverse(t.actions.begin(), t.actions.end());
    t.actions.push_back(Action::stop());
    t.poses = rollout(t.start, t.actions);
    return t;
}

}  // namespace aerovln
