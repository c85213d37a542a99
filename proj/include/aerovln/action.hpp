#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/error.hpp"
#include "aerovln/geometry.hpp"

namespace aerovln {

enum class ActionKind { Forward, TurnLeft, TurnRight, MoveUp, MoveDown, Stop };

inline constexpr double kTurnDegrees = 30.0;
inline constexpr double kVerticalStep = 3.0;

struct Action {
    ActionKind kind = ActionKind::Stop;
    double magnitude = 0.0;  // metres for translations, degrees for turns

    friend bool operator==(const Action&, const Action&) = default;

    static Action forward(double meters) { return {ActionKind::Forward, meters}; }
    static Action turn_left() { return {ActionKind::TurnLeft, kTurnDegrees}; }
    static Action turn_right() { return {ActionKind::TurnRight, kTurnDegrees}; }
    static Action up() { return {ActionKind::MoveUp, kVerticalStep}; }
    static Action down() { return {ActionKind::MoveDown, kVerticalStep}; }
    static Action stop() { return {ActionKind::Stop, 0.0}; }

    bool is_turn() const { return kind == ActionKind::TurnLeft || kind == ActionKind::TurnRight; }
    bool valid() const {
        switch (kind) {
            case ActionKind::Forward: return magnitude == 3.0 || magnitude == 6.0 || magnitude == 9.0;
            case ActionKind::TurnLeft:
            case ActionKind::TurnRight: return magnitude == kTurnDegrees;
            case ActionKind::MoveUp:
            case ActionKind::MoveDown: return magnitude == kVerticalStep;
            case ActionKind::Stop: return magnitude == 0.0;
        }
        return false;
    }
};

inline std::string_view kind_name(ActionKind k) {
    switch (k) {
        case ActionKind::Forward: return "forward";
        case ActionKind::TurnLeft: return "turn_left";
        case ActionKind::TurnRight: return "turn_right";
        case ActionKind::MoveUp: return "move_up";
        case ActionKind::MoveDown: return "move_down";
        case ActionKind::Stop: return "stop";
    }
    return "?";
}

inline ActionKind parse_kind(std::string_view s) {
    for (auto k : {ActionKind::Forward, ActionKind::TurnLeft, ActionKind::TurnRight, ActionKind::MoveUp,
                   ActionKind::MoveDown, ActionKind::Stop})
        if (kind_name(k) == s) return k;
    throw ParseError(0, "unknown action kind '" + std::string(s) + "'");
}

// Compact form used in logs and on the CLI: F3 F6 F9 L R U D S.
inline std::string short_name(const Action& a) {
    switch (a.kind) {
        case ActionKind::Forward: return "F" + std::to_string(static_cast<int>(a.magnitude));
        case ActionKind::TurnLeft: return "L";
        case ActionKind::TurnRight: return "R";
        case ActionKind::MoveUp: return "U";
        case ActionKind::MoveDown: return "D";
        case ActionKind::Stop: return "S";
    }
    return "?";
}

inline Action parse_short(std::string_view s) {
    if (s == "L") return Action::turn_left();
    if (s == "R") return Action::turn_right();
    if (s == "U") return Action::up();
    if (s == "D") return Action::down();
    if (s == "S") return Action::stop();
    if (s == "F3") return Action::forward(3);
    if (s == "F6") return Action::forward(6);
    if (s == "F9") return Action::forward(9);
    throw ParseError(0, "unknown action '" + std::string(s) + "'");
}

/// Yaw is kept as an integer number of degrees, a multiple of 30 in [0, 360).
struct Pose {
    Point3 position;
    int yaw = 0;

    friend bool operator==(const Pose&, const Pose&) = default;
};

inline int normalize_yaw(int deg) { return ((deg % 360) + 360) % 360; }

// Exact unit vectors for the twelve headings; yaw 0 is +x, positive yaw is counter-clockwise.
inline Point2 heading_vector(int yaw) {
    static const std::array<Point2, 12> table = [] {
        const double h = std::sqrt(3.0) / 2.0;
        return std::array<Point2, 12>{{{1, 0}, {h, 0.5}, {0.5, h}, {0, 1}, {-0.5, h}, {-h, 0.5},
                                       {-1, 0}, {-h, -0.5}, {-0.5, -h}, {0, -1}, {0.5, -h}, {h, -0.5}}};
    }();
    const int n = normalize_yaw(yaw);
    if (n % 30 != 0) throw ContractViolation("yaw must be a multiple of 30 degrees");
    return table[static_cast<std::size_t>(n / 30)];
}

inline Pose step(const Pose& p, const Action& a) {
    Pose out = p;
    switch (a.kind) {
        case ActionKind::Forward: {
            const auto h = heading_vector(p.yaw);
            out.position.x += a.magnitude * h.x;
            out.position.y += a.magnitude * h.y;
            break;
        }
        case ActionKind::TurnLeft: out.yaw = normalize_yaw(p.yaw + static_cast<int>(a.magnitude)); break;
        case ActionKind::TurnRight: out.yaw = normalize_yaw(p.yaw - static_cast<int>(a.magnitude)); break;
        case ActionKind::MoveUp: out.position.z += a.magnitude; break;
        case ActionKind::MoveDown: out.position.z -= a.magnitude; break;
        case ActionKind::Stop: break;
    }
    return out;
}

inline std::vector<Pose> rollout(const Pose& start, const std::vector<Action>& actions) {
    std::vector<Pose> poses{start};
    poses.reserve(actions.size() + 1);
    for (const auto& a : actions) poses.push_back(step(poses.back(), a));
    return poses;
}

inline double path_length(const std::vector<Pose>& poses) {
    double len = 0.0;
    for (std::size_t i = 1; i < poses.size(); ++i) len += distance(poses[i - 1].position, poses[i].position);
    return len;
}

struct Trajectory {
    Pose start;
    std::vector<Action> actions;
    std::vector<Pose> poses;
    Point3 goal;
    int target_landmark_id = -1;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;

    double length() const { return path_length(poses); }
};

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json point_to_json(const Point3& p) { return nlohmann::json::array({p.x, p.y, p.z}); }

inline Point3 point_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw ParseError(0, "expected [x, y, z]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json pose_to_json(const Pose& p) { return {{"position", point_to_json(p.position)}, {"yaw", p.yaw}}; }

inline Pose pose_from_json(const nlohmann::json& j) {
    Pose p{point_from_json(j.at("position")), j.at("yaw").get<int>()};
    if (p.yaw < 0 || p.yaw >= 360 || p.yaw % 30 != 0) throw ParseError(0, "yaw must be a multiple of 30 in [0, 360)");
    return p;
}

inline nlohmann::json action_to_json(const Action& a) {
    if (a.kind == ActionKind::Stop) return {{"kind", kind_name(a.kind)}};
    return {{"kind", kind_name(a.kind)}, {"magnitude", a.magnitude}};
}

inline Action action_from_json(const nlohmann::json& j) {
    Action a{parse_kind(j.at("kind").get<std::string>()), j.value("magnitude", 0.0)};
    if (!a.valid()) throw ParseError(0, "invalid magnitude for " + std::string(kind_name(a.kind)));
    return a;
}

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
    nlohmann::json actions = nlohmann::json::array(), poses = nlohmann::json::array();
    for (const auto& a : t.actions) actions.push_back(action_to_json(a));
    for (const auto& p : t.poses) poses.push_back(pose_to_json(p));
    return {{"start", pose_to_json(t.start)},
            {"actions", actions},
            {"poses", poses},
            {"goal", point_to_json(t.goal)},
            {"target_landmark_id", t.target_landmark_id}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    t.start = pose_from_json(j.at("start"));
    for (const auto& a : j.at("actions")) t.actions.push_back(action_from_json(a));
    for (const auto& p : j.at("poses")) t.poses.push_back(pose_from_json(p));
    t.goal = point_from_json(j.at("goal"));
    t.target_landmark_id = j.at("target_landmark_id").get<int>();
    return t;
}

}  // namespace aerovln
