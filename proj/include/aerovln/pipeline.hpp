#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/action.hpp"
#include "aerovln/dataset.hpp"
#include "aerovln/error.hpp"
#include "aerovln/eval.hpp"
#include "aerovln/instructions.hpp"
#include "aerovln/keyframe.hpp"
#include "aerovln/occupancy.hpp"
#include "aerovln/scene.hpp"
#include "aerovln/segmentation.hpp"
#include "aerovln/trajgen.hpp"
#include "aerovln/vlm.hpp"

namespace aerovln {

inline constexpr int kConfigSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

/// Where one scene comes from. Either a procedural city (city_seed set), a
/// spec file, or a point cloud with an optional spec for labels and trees.
struct SceneSource {
    std::optional<std::uint64_t> city_seed;
    double city_extent = 400.0;
    int city_lots = 5;
    std::filesystem::path spec_path;
    std::filesystem::path cloud_path;
};

struct PipelineConfig {
    int schema_version = kConfigSchemaVersion;
    std::optional<std::uint64_t> seed;
    int workers = 1;
    std::vector<SceneSource> scenes;
    MapConfig map;
    double min_landmark_area = 20.0;
    std::array<int, 2> segments{1, 2};
    TrajGenConfig trajgen;
    InstructionConfig instructions;
    MemoryBankConfig memory;
    double tree_height = kDefaultTreeHeight;
    VlmConfig vlm;
    int retry_factor = 5;
    double success_radius = kSuccessRadius;

    std::uint64_t require_seed() const {
        if (!seed) throw ConfigError("generation needs a seed");
        return *seed;
    }

    void validate() const {
        if (schema_version != kConfigSchemaVersion)
            throw ConfigError("unsupported config schema_version " + std::to_string(schema_version));
        if (workers < 1) throw ConfigError("workers must be >= 1");
        if (scenes.empty()) throw ConfigError("config lists no scenes");
        for (const auto& s : scenes) {
            if (!s.city_seed && s.spec_path.empty() && s.cloud_path.empty())
                throw ConfigError("scene entry needs city, spec or cloud");
            for (const auto& p : {s.spec_path, s.cloud_path})
                if (!p.empty() && !std::filesystem::exists(p)) throw ConfigError("missing file " + p.string());
        }
        if (!(map.voxel_size > 0.0) || map.safety_margin < 0.0) throw ConfigError("bad map config");
        if (segments[0] < 1 || segments[0] > segments[1]) throw ConfigError("segments must satisfy 1 <= min <= max");
        if (!(instructions.coref_threshold > 0.0 && instructions.coref_threshold <= 1.0))
            throw ConfigError("coref_threshold must lie in (0, 1]");
        if (retry_factor < 1) throw ConfigError("retry_factor must be >= 1");
        if (!(success_radius > 0.0)) throw ConfigError("success_radius must be positive");
        trajgen.validate();
        memory.validate();
    }
};

inline MapConfig map_config_from_json(const nlohmann::json& j) {
    MapConfig d;
    return {j.value("voxel_size", d.voxel_size), j.value("safety_margin", d.safety_margin),
            j.value("ground_clearance", d.ground_clearance), j.value("ceiling", d.ceiling)};
}

inline nlohmann::json map_config_to_json(const MapConfig& m) {
    return {{"voxel_size", m.voxel_size},
            {"safety_margin", m.safety_margin},
            {"ground_clearance", m.ground_clearance},
            {"ceiling", m.ceiling}};
}

// The API key is never read from the file; it comes from the environment.
inline VlmConfig vlm_config_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    VlmConfig c;
    c.mode = parse_vlm_mode(j.value("mode", std::string("mock")));
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model = j.value("model", c.model);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    if (j.contains("cache_dir")) c.cache_dir = base / j.at("cache_dir").get<std::string>();
    c.apply_env();
    return c;
}

/// Relative paths resolve against `base`, normally the config file's directory.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = ".") {
    PipelineConfig c;
    try {
        c.schema_version = j.value("schema_version", kConfigSchemaVersion);
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        c.workers = j.value("workers", c.workers);
        for (const auto& s : j.value("scenes", nlohmann::json::array())) {
            SceneSource src;
            if (s.contains("city")) {
                const auto& city = s.at("city");
                src.city_seed = city.at("seed").get<std::uint64_t>();
                src.city_extent = city.value("extent", src.city_extent);
                src.city_lots = city.value("lots_per_side", src.city_lots);
            }
            if (s.contains("spec")) src.spec_path = base / s.at("spec").get<std::string>();
            if (s.contains("cloud")) src.cloud_path = base / s.at("cloud").get<std::string>();
            c.scenes.push_back(std::move(src));
        }
        if (j.contains("map")) c.map = map_config_from_json(j.at("map"));
        c.min_landmark_area = j.value("min_landmark_area", c.min_landmark_area);
        c.segments = j.value("segments", c.segments);
        if (j.contains("trajgen")) c.trajgen = j.at("trajgen").get<TrajGenConfig>();
        if (j.contains("instructions")) {
            const auto& ij = j.at("instructions");
            c.instructions.image_refs = ij.value("image_refs", c.instructions.image_refs);
            c.instructions.coref_threshold = ij.value("coref_threshold", c.instructions.coref_threshold);
        }
        if (j.contains("memory")) c.memory = memory_config_from_json(j.at("memory"));
        c.tree_height = j.value("tree_height", c.tree_height);
        c.vlm = vlm_config_from_json(j.value("vlm", nlohmann::json::object()), base);
        c.retry_factor = j.value("retry_factor", c.retry_factor);
        c.success_radius = j.value("success_radius", c.success_radius);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(j, path.parent_path().empty() ? "." : path.parent_path());
}

// ---------------------------------------------------------------------------
// Scene preparation

struct SceneContext {
    std::string scene_id;
    std::optional<SceneSpec> spec;
    SceneMaps maps;
    std::vector<LandmarkInstance> landmarks;  // captioned

    const LandmarkInstance* landmark(int id) const {
        for (const auto& lm : landmarks)
            if (lm.id == id) return &lm;
        return nullptr;
    }
};

inline SceneSpec load_scene_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scene spec " + path.string());
    try {
        return nlohmann::json::parse(in).get<SceneSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scene spec " + path.string() + ": " + e.what());
    }
}

inline std::vector<std::string> landmark_view_refs(const std::string& scene_id, int landmark_id, std::size_t n) {
    std::vector<std::string> refs;
    for (std::size_t k = 0; k < n; ++k)
        refs.push_back(scene_id + "/landmark_" + std::to_string(landmark_id) + "/view_" + std::to_string(k));
    return refs;
}

/// Builds maps, segments landmarks and captions them.
inline SceneContext prepare_scene(const SceneSource& src, const PipelineConfig& cfg, VlmClient& vlm) {
    SceneContext ctx;
    if (src.city_seed) ctx.spec = random_city_spec(*src.city_seed, src.city_extent, src.city_lots);
    if (!src.spec_path.empty()) ctx.spec = load_scene_spec(src.spec_path);
    PointCloud cloud;
    if (!src.cloud_path.empty()) {
        cloud = load_point_cloud(src.cloud_path);
        ctx.scene_id = ctx.spec ? ctx.spec->scene_id : src.cloud_path.stem().string();
    } else {
        cloud = synthesize_scene(*ctx.spec).cloud;
        ctx.scene_id = ctx.spec->scene_id;
    }
    const std::vector<TreeSpec> no_trees;
    ctx.maps = build_scene_maps(cloud, ctx.spec ? ctx.spec->trees : no_trees, cfg.map);
    ctx.landmarks = extract_instances(ctx.maps.bev, cfg.min_landmark_area);
    if (ctx.spec) assign_labels(ctx.landmarks, *ctx.spec);
    for (auto& lm : ctx.landmarks)
        lm = caption_instance(lm, landmark_view_refs(ctx.scene_id, lm.id, cfg.instructions.image_refs), vlm);
    return ctx;
}

inline std::vector<SceneContext> prepare_scenes(const PipelineConfig& cfg, VlmClient& vlm) {
    std::vector<SceneContext> out;
    for (const auto& s : cfg.scenes) out.push_back(prepare_scene(s, cfg, vlm));
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t k = 0; k < i; ++k)
            if (out[i].scene_id == out[k].scene_id) throw ConfigError("duplicate scene id " + out[i].scene_id);
    return out;
}

// ---------------------------------------------------------------------------
// Generation

struct LogRecord {
    std::string stage;
    std::string episode_id;
    double duration_ms = 0.0;
    std::string outcome;  // "ok" or a rejection reason
};

inline nlohmann::json log_record_to_json(const LogRecord& r) {
    return {{"stage", r.stage}, {"episode_id", r.episode_id}, {"duration_ms", r.duration_ms}, {"outcome", r.outcome}};
}

struct AttemptResult {
    std::optional<Episode> episode;
    std::string rejected_stage;
    std::string rejected_reason;
    std::vector<LogRecord> log;
};

struct StageCounts {
    std::size_t accepted = 0;
    std::map<std::string, std::size_t> rejected;
};

struct GenerationReport {
    std::size_t requested = 0;
    std::size_t produced = 0;
    std::size_t attempts = 0;
    std::size_t budget = 0;
    bool complete = true;
    double wall_time_s = 0.0;
    int workers = 1;
    std::map<std::string, StageCounts> stages;  // keyed by stage name
};

inline nlohmann::json generation_report_to_json(const GenerationReport& r) {
    nlohmann::json stages = nlohmann::json::object();
    for (const auto& [name, c] : r.stages) stages[name] = {{"accepted", c.accepted}, {"rejected", c.rejected}};
    return {{"requested", r.requested},
            {"produced", r.produced},
            {"attempts", r.attempts},
            {"budget", r.budget},
            {"complete", r.complete},
            {"wall_time_s", r.wall_time_s},
            {"workers", r.workers},
            {"episodes_per_second", r.wall_time_s > 0.0 ? static_cast<double>(r.produced) / r.wall_time_s : 0.0},
            {"stages", std::move(stages)}};
}

inline std::string episode_id_for(const std::string& scene_id, std::size_t attempt) {
    std::string n = std::to_string(attempt);
    if (n.size() < 6) n.insert(0, 6 - n.size(), '0');
    return scene_id + "-" + n;
}

// Each attempt draws from its own stream so results never depend on scheduling.
inline std::uint64_t attempt_seed(std::uint64_t seed, std::size_t attempt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(attempt), static_cast<std::uint32_t>(attempt >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

/// Index of the chained leg that owns action `i` of the concatenated actions.
inline std::size_t leg_of_action(const std::vector<Trajectory>& legs, std::size_t i) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < legs.size(); ++k) {
        const std::size_t n = legs[k].actions.size() - (k + 1 < legs.size() ? 1 : 0);
        if (i < offset + n) return k;
        offset += n;
    }
    return legs.empty() ? 0 : legs.size() - 1;
}

/// Wraps a trajectory into an episode with a generated instruction. Each
/// sub-trajectory describes the landmark of the leg it ends in; without legs
/// the trajectory's own target is used.
inline Episode annotate_trajectory(const std::string& id, const SceneContext& scene, Trajectory traj,
                                   const std::vector<Trajectory>& legs, const PipelineConfig& cfg, VlmClient& vlm) {
    Episode ep;
    ep.episode_id = id;
    ep.scene_id = scene.scene_id;
    ep.image_refs = default_image_refs(id, traj.poses.size());
    auto subs = split_subtrajectories(traj);
    for (auto& st : subs) {
        if (!legs.empty()) st.landmark_hint = legs[leg_of_action(legs, st.end - 1)].target_landmark_id;
        st.key_image_ref = ep.image_refs[st.terminal_pose_index];
    }
    auto caption_for = [&](const SubTrajectory& st) {
        const auto* lm = scene.landmark(st.landmark_hint.value_or(traj.target_landmark_id));
        if (!lm || !lm->caption) throw ContractViolation("sub-trajectory landmark has no caption");
        return *lm->caption;
    };
    ep.instruction = refine_coreference(generate_instruction(subs, caption_for, vlm), bow_embed,
                                        cfg.instructions.coref_threshold);
    ep.trajectory = std::move(traj);
    return ep;
}

struct ReplayCheck {
    bool ok = true;
    std::string reason;  // collision, missed_goal, unstopped
};

/// Replays the ground-truth actions on the scene and checks the run reaches
/// its own goal without touching an occupied voxel.
inline ReplayCheck self_replay(const Trajectory& t, const VoxelGrid& grid, double radius) {
    const auto run = replay(t.start, t.actions, grid, std::max(kReplayStepCap, t.actions.size()));
    if (run.collided) return {false, "collision"};
    if (!run.stopped) return {false, "unstopped"};
    const double gt = t.length();
    const auto s = score(run, t.goal, gt > 0.0 ? gt : 1.0, radius);
    if (!s.success || !s.oracle_success) return {false, "missed_goal"};
    return {};
}

/// One generation attempt end to end. Never throws for data problems; the
/// failing stage and reason come back instead.
inline AttemptResult generate_attempt(std::size_t attempt, const PipelineConfig& cfg,
                                      const std::vector<SceneContext>& scenes, VlmClient& vlm) {
    using clock = std::chrono::steady_clock;
    AttemptResult res;
    const auto& scene = scenes[attempt % scenes.size()];
    const auto id = episode_id_for(scene.scene_id, attempt);
    const auto seed = attempt_seed(cfg.require_seed(), attempt);
    std::mt19937_64 rng(seed);

    auto t0 = clock::now();
    auto finish = [&](const std::string& stage, const std::string& outcome) {
        const auto now = clock::now();
        res.log.push_back({stage, id, std::chrono::duration<double, std::milli>(now - t0).count(), outcome});
        t0 = now;
        if (outcome != "ok") {
            res.rejected_stage = stage;
            res.rejected_reason = outcome;
        }
        return outcome == "ok";
    };

    std::uniform_int_distribution<int> nseg(cfg.segments[0], cfg.segments[1]);
    std::vector<Trajectory> legs;
    Trajectory traj;
    try {
        traj = chain_trajectories(nseg(rng), scene.landmarks, scene.maps.bev, scene.maps.global, cfg.trajgen, rng, &legs);
    } catch (const Error& e) {
        const std::string what = e.what();
        const bool search = what.find("A*") != std::string::npos || what.find("unreachable") != std::string::npos;
        const std::string reason = search ? "no_path" : "sampling";
        finish("trajgen", reason);
        return res;
    }
    finish("trajgen", "ok");

    Episode ep;
    try {
        ep = annotate_trajectory(id, scene, std::move(traj), legs, cfg, vlm);
    } catch (const Error&) {
        finish("instructions", "vlm_error");
        return res;
    }
    finish("instructions", "ok");
    ep.meta.seed = seed;
    ep.meta.extra = {{"attempt", attempt}};

    const auto verdict = filter_episode(ep, cfg.tree_height, &scene.maps.bev);
    if (!finish("filter", verdict.accepted ? "ok" : verdict.reason)) return res;

    const auto check = self_replay(ep.trajectory, scene.maps.global, cfg.success_radius);
    if (!finish("replay", check.ok ? "ok" : check.reason)) return res;

    res.episode = std::move(ep);
    return res;
}

inline constexpr std::array<const char*, 4> kStages{"trajgen", "instructions", "filter", "replay"};

/// Runs attempts in waves across a worker pool and keeps the first `count`
/// successes in attempt order, so output is identical for any worker count.
/// `sink` receives each accepted episode in order; `log` gets JSON lines.
inline GenerationReport run_generate(const PipelineConfig& cfg, const std::vector<SceneContext>& scenes,
                                     std::size_t count, VlmClient& vlm,
                                     const std::function<void(const Episode&)>& sink,
                                     std::ostream* log = nullptr) {
    cfg.validate();
    cfg.require_seed();
    if (scenes.empty()) throw ConfigError("no prepared scenes");
    const auto t_begin = std::chrono::steady_clock::now();
    GenerationReport report;
    report.requested = count;
    report.budget = count * static_cast<std::size_t>(cfg.retry_factor);
    report.workers = cfg.workers;
    for (const char* s : kStages) report.stages[s];

    std::size_t next = 0;
    while (report.produced < count && next < report.budget) {
        const std::size_t need = count - report.produced;
        const std::size_t wave = std::min(report.budget - next, std::max(need, static_cast<std::size_t>(cfg.workers)));
        std::vector<AttemptResult> results(wave);
        std::atomic<std::size_t> cursor{0};
        std::mutex err_mutex;
        std::exception_ptr failure;
        auto work = [&] {
            for (std::size_t k; (k = cursor.fetch_add(1)) < wave;) {
                try {
                    results[k] = generate_attempt(next + k, cfg, scenes, vlm);
                } catch (...) {
                    std::lock_guard lock(err_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        };
        const auto nthreads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), wave);
        if (nthreads <= 1) {
            work();
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work);
        }
        if (failure) std::rethrow_exception(failure);

        for (std::size_t k = 0; k < wave && report.produced < count; ++k) {
            auto& r = results[k];
            ++report.attempts;
            for (const auto& rec : r.log) {
                auto& st = report.stages[rec.stage];
                if (rec.outcome == "ok")
                    ++st.accepted;
                else
                    ++st.rejected[rec.outcome];
                if (log) *log << log_record_to_json(rec).dump() << '\n';
            }
            if (r.episode) {
                sink(*r.episode);
                ++report.produced;
            }
        }
        next += wave;
    }
    report.complete = report.produced == count;
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    return report;
}

inline GenerationReport run_generate(const PipelineConfig& cfg, const std::vector<SceneContext>& scenes,
                                     std::size_t count, VlmClient& vlm, std::vector<Episode>& out,
                                     std::ostream* log = nullptr) {
    return run_generate(cfg, scenes, count, vlm, [&](const Episode& e) { out.push_back(e); }, log);
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
    std::string episode_id;  // empty when the line did not parse
    std::size_t line = 0;
    std::string check;       // schema, kinematics, collision, filter, replay, scene
    std::string detail;
};

struct ValidationReport {
    std::size_t episodes = 0;
    std::vector<Violation> violations;

    bool clean() const { return violations.empty(); }
};

inline nlohmann::json validation_report_to_json(const ValidationReport& r) {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& x : r.violations)
        v.push_back({{"episode_id", x.episode_id}, {"line", x.line}, {"check", x.check}, {"detail", x.detail}});
    return {{"episodes", r.episodes}, {"violation_count", r.violations.size()}, {"violations", std::move(v)}};
}

inline constexpr double kPoseTolerance = 1e-6;

/// Re-checks one episode. Scene-dependent checks are skipped when `scene`
/// is null.
inline std::vector<Violation> validate_episode(const Episode& e, std::size_t line, const SceneContext* scene,
                                               const PipelineConfig& cfg) {
    std::vector<Violation> out;
    auto flag = [&](std::string check, std::string detail) {
        out.push_back({e.episode_id, line, std::move(check), std::move(detail)});
    };
    const auto& t = e.trajectory;
    for (std::size_t i = 0; i < t.actions.size(); ++i)
        if (!t.actions[i].valid()) flag("kinematics", "invalid action at index " + std::to_string(i));
    if (t.actions.empty() || t.actions.back().kind != ActionKind::Stop) flag("kinematics", "actions do not end in stop");
    const auto expect = rollout(t.start, t.actions);
    if (t.poses.empty() || !(t.poses.front() == t.start)) flag("kinematics", "first pose differs from start");
    for (std::size_t i = 0; i < std::min(expect.size(), t.poses.size()); ++i) {
        const auto& a = expect[i];
        const auto& b = t.poses[i];
        if (distance(a.position, b.position) > kPoseTolerance || a.yaw != b.yaw) {
            flag("kinematics", "pose " + std::to_string(i) + " does not follow from the actions");
            break;
        }
    }
    const auto verdict = filter_episode(e, cfg.tree_height, scene ? &scene->maps.bev : nullptr);
    if (!verdict.accepted) flag("filter", verdict.reason);
    if (!scene) {
        flag("scene", "unknown scene " + e.scene_id);
        return out;
    }
    for (std::size_t i = 0; i + 1 < t.poses.size(); ++i) {
        if (!segment_free(scene->maps.global, t.poses[i].position, t.poses[i + 1].position)) {
            flag("collision", "segment " + std::to_string(i) + " crosses occupied space");
            break;
        }
    }
    const auto check = self_replay(t, scene->maps.global, cfg.success_radius);
    if (!check.ok && check.reason != "collision") flag("replay", check.reason);
    return out;
}

/// Reads a dataset line by line. Malformed lines become schema violations;
/// a schema version mismatch aborts with SchemaVersionError.
inline ValidationReport run_validate(std::istream& in, const std::vector<SceneContext>& scenes,
                                     const PipelineConfig& cfg) {
    ValidationReport report;
    std::set<std::string> seen;
    std::string text;
    for (std::size_t line = 1; std::getline(in, text); ++line) {
        if (trim(text).empty()) continue;
        ++report.episodes;
        Episode e;
        try {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(text);
            } catch (const nlohmann::json::exception& ex) {
                throw ParseError(line, ex.what());
            }
            e = episode_from_json(j, line);
        } catch (const SchemaVersionError&) {
            throw;
        } catch (const ParseError& ex) {
            report.violations.push_back({"", line, "schema", ex.what()});
            continue;
        }
        if (!seen.insert(e.episode_id).second)
            report.violations.push_back({e.episode_id, line, "schema", "duplicate episode id"});
        const SceneContext* scene = nullptr;
        for (const auto& s : scenes)
            if (s.scene_id == e.scene_id) scene = &s;
        auto v = validate_episode(e, line, scene, cfg);
        report.violations.insert(report.violations.end(), v.begin(), v.end());
    }
    return report;
}

inline ValidationReport run_validate(const std::filesystem::path& path, const std::vector<SceneContext>& scenes,
                                     const PipelineConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset " + path.string());
    return run_validate(in, scenes, cfg);
}

}  // namespace aerovln
