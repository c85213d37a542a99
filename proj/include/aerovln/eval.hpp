#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/action.hpp"
#include "aerovln/error.hpp"
#include "aerovln/occupancy.hpp"

namespace aerovln {

inline constexpr std::size_t kReplayStepCap = 500;
inline constexpr double kSuccessRadius = 20.0;

struct ReplayResult {
    Pose final_pose;
    std::vector<Pose> poses;  // start plus one pose per consumed action
    bool collided = false;
    std::optional<std::size_t> first_collision_step;
    bool stopped = false;  // false when the step cap ended the episode
    double executed_length = 0.0;
};

/// Rolls the actions forward. A move whose segment is blocked leaves the
/// agent in place; later actions are still consumed.
inline ReplayResult replay(const Pose& start, const std::vector<Action>& actions, const VoxelGrid& grid,
                           std::size_t step_cap = kReplayStepCap) {
    ReplayResult r;
    r.poses.push_back(start);
    Pose cur = start;
    for (std::size_t i = 0; i < actions.size() && i < step_cap; ++i) {
        const auto& a = actions[i];
        if (a.kind == ActionKind::Stop) {
            r.poses.push_back(cur);
            r.stopped = true;
            break;
        }
        Pose next = step(cur, a);
        if (!a.is_turn() && !segment_free(grid, cur.position, next.position)) {
            if (!r.collided) r.first_collision_step = i;
            r.collided = true;
            next = cur;
        }
        r.executed_length += distance(cur.position, next.position);
        cur = next;
        r.poses.push_back(cur);
    }
    r.final_pose = cur;
    return r;
}

struct EvalResult {
    double ne = 0.0;
    bool success = false;
    bool oracle_success = false;
    double spl_term = 0.0;
    double executed_length = 0.0;
    double gt_length = 0.0;
};

inline EvalResult score(const ReplayResult& run, const Point3& goal, double gt_length, double radius = kSuccessRadius) {
    if (!(gt_length > 0.0)) throw ContractViolation("ground-truth length must be positive");
    EvalResult e;
    e.ne = distance(run.final_pose.position, goal);
    e.success = e.ne <= radius;
    double closest = e.ne;
    for (const auto& p : run.poses) closest = std::min(closest, distance(p.position, goal));
    e.oracle_success = closest <= radius;
    e.executed_length = run.executed_length;
    e.gt_length = gt_length;
    e.spl_term = e.success ? gt_length / std::max(gt_length, run.executed_length) : 0.0;
    return e;
}

struct Metrics {
    std::size_t episodes = 0;
    double ne = 0.0;
    double sr = 0.0;
    double osr = 0.0;
    double spl = 0.0;
};

inline Metrics aggregate(const std::vector<EvalResult>& results) {
    if (results.empty()) throw ContractViolation("aggregate needs at least one result");
    Metrics m;
    m.episodes = results.size();
    for (const auto& r : results) {
        m.ne += r.ne;
        m.sr += r.success ? 1.0 : 0.0;
        m.osr += r.oracle_success ? 1.0 : 0.0;
        m.spl += r.spl_term;
    }
    const double n = static_cast<double>(results.size());
    m.ne /= n;
    m.sr /= n;
    m.osr /= n;
    m.spl /= n;
    return m;
}

// ---------------------------------------------------------------------------
// Predictions and reports

struct Prediction {
    std::string episode_id;
    std::vector<Action> actions;
};

// Actions may be objects ({"kind": ..., "magnitude": ...}) or compact strings ("F6").
inline Prediction prediction_from_json(const nlohmann::json& j) {
    Prediction p;
    p.episode_id = j.at("episode_id").get<std::string>();
    for (const auto& a : j.at("actions"))
        p.actions.push_back(a.is_string() ? parse_short(a.get<std::string>()) : action_from_json(a));
    return p;
}

inline nlohmann::json eval_result_to_json(const EvalResult& e) {
    return {{"ne", e.ne},
            {"success", e.success},
            {"oracle_success", e.oracle_success},
            {"spl_term", e.spl_term},
            {"executed_length", e.executed_length},
            {"gt_length", e.gt_length}};
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
    return {{"episodes", m.episodes}, {"NE", m.ne}, {"SR", m.sr}, {"OSR", m.osr}, {"SPL", m.spl}};
}

inline std::string metrics_table(const Metrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "episodes  NE(m)     SR      OSR     SPL\n%-9zu %-9.3f %-7.4f %-7.4f %-7.4f\n",
                  m.episodes, m.ne, m.sr, m.osr, m.spl);
    return buf;
}

}  // namespace aerovln
