#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <random>

#include "aerovln/aerovln.hpp"
#include "aerovln/http_transport.hpp"

namespace fs = std::filesystem;
using namespace aerovln;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolations = 1;
constexpr int kExitConfig = 2;

std::unique_ptr<VlmClient> make_vlm(const VlmConfig& cfg) {
    std::shared_ptr<Transport> transport;
    if (cfg.mode == VlmMode::live) transport = std::make_shared<HttpTransport>();
    return std::make_unique<VlmClient>(cfg, transport);
}

VlmConfig vlm_from_flag(const std::string& mode, const std::string& cache_dir) {
    VlmConfig c;
    c.mode = parse_vlm_mode(mode);
    if (!cache_dir.empty()) c.cache_dir = cache_dir;
    c.apply_env();
    return c;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, path.string() + ": " + e.what());
    }
}

// Loads the config and builds every scene it lists.
struct Loaded {
    PipelineConfig cfg;
    std::unique_ptr<VlmClient> vlm;
    std::vector<SceneContext> scenes;

    const SceneContext& scene(const std::string& id) const {
        for (const auto& s : scenes)
            if (s.scene_id == id) return s;
        throw ConfigError("scene " + id + " is not in the config");
    }
};

Loaded load(const fs::path& config) {
    Loaded l;
    l.cfg = load_pipeline_config(config);
    l.vlm = make_vlm(l.cfg.vlm);
    l.scenes = prepare_scenes(l.cfg, *l.vlm);
    return l;
}

// ---------------------------------------------------------------------------

struct SceneSynthArgs {
    std::string spec;
    std::uint64_t city_seed = 0;
    double extent = 400.0;
    int lots = 5;
    std::string out;
};

int scene_synth(const SceneSynthArgs& a) {
    SceneSpec spec = a.spec.empty() ? random_city_spec(a.city_seed, a.extent, a.lots) : load_scene_spec(a.spec);
    const auto scene = synthesize_scene(spec);
    fs::create_directories(a.out);
    write_json(fs::path(a.out) / "spec.json", spec);
    write_point_cloud(fs::path(a.out) / "cloud.xyz", scene.cloud);
    write_json(fs::path(a.out) / "landmarks_gt.json", instances_to_json(scene.landmarks));
    std::printf("%s: %zu points, %zu landmarks\n", spec.scene_id.c_str(), scene.cloud.points.size(),
                scene.landmarks.size());
    return kExitOk;
}

struct MapArgs {
    std::string cloud;
    std::string spec;
    MapConfig map;
};

SceneMaps maps_from(const MapArgs& a, std::optional<SceneSpec>& spec) {
    if (!a.spec.empty()) spec = load_scene_spec(a.spec);
    const auto cloud = load_point_cloud(a.cloud);
    return build_scene_maps(cloud, spec ? spec->trees : std::vector<TreeSpec>{}, a.map);
}

int voxelize_cmd(const MapArgs& a, const std::string& out_dir) {
    std::optional<SceneSpec> spec;
    const auto maps = maps_from(a, spec);
    fs::create_directories(out_dir);
    std::ofstream grid(fs::path(out_dir) / "grid.bin", std::ios::binary);
    write_grid(grid, maps.global);
    write_json(fs::path(out_dir) / "bev.json", bev_to_json(maps.bev));
    const auto& d = maps.global.dims();
    std::printf("grid %lldx%lldx%lld, %zu occupied voxels\n", static_cast<long long>(d[0]),
                static_cast<long long>(d[1]), static_cast<long long>(d[2]), maps.global.occupied_cells().size());
    return kExitOk;
}

int segment_cmd(const MapArgs& a, double min_area, const VlmConfig& vlm_cfg, const std::string& out) {
    std::optional<SceneSpec> spec;
    const auto maps = maps_from(a, spec);
    auto lms = extract_instances(maps.bev, min_area);
    if (spec) assign_labels(lms, *spec);
    auto vlm = make_vlm(vlm_cfg);
    const std::string scene_id = spec ? spec->scene_id : fs::path(a.cloud).stem().string();
    for (auto& lm : lms) lm = caption_instance(lm, landmark_view_refs(scene_id, lm.id, 3), *vlm);
    write_json(out, instances_to_json(lms));
    std::printf("%zu landmarks\n", lms.size());
    return kExitOk;
}

nlohmann::json trajectory_record(const std::string& id, const std::string& scene_id, const Trajectory& t,
                                 const std::vector<Trajectory>& legs) {
    nlohmann::json legs_j = nlohmann::json::array();
    for (const auto& l : legs) legs_j.push_back({{"target", l.target_landmark_id}, {"actions", l.actions.size()}});
    return {{"episode_id", id}, {"scene_id", scene_id}, {"trajectory", trajectory_to_json(t)}, {"legs", legs_j}};
}

int trajgen_cmd(const std::string& config, std::size_t count, const std::string& out) {
    const auto l = load(config);
    const auto seed = l.cfg.require_seed();
    std::ofstream os(out);
    if (!os) throw ConfigError("cannot write " + out);
    std::size_t produced = 0, attempt = 0;
    const std::size_t budget = count * static_cast<std::size_t>(l.cfg.retry_factor);
    for (; produced < count && attempt < budget; ++attempt) {
        const auto& scene = l.scenes[attempt % l.scenes.size()];
        std::mt19937_64 rng(attempt_seed(seed, attempt));
        std::uniform_int_distribution<int> nseg(l.cfg.segments[0], l.cfg.segments[1]);
        std::vector<Trajectory> legs;
        try {
            const auto t = chain_trajectories(nseg(rng), scene.landmarks, scene.maps.bev, scene.maps.global,
                                              l.cfg.trajgen, rng, &legs);
            os << trajectory_record(episode_id_for(scene.scene_id, attempt), scene.scene_id, t, legs).dump() << '\n';
            ++produced;
        } catch (const Error& e) {
            std::fprintf(stderr, "attempt %zu: %s\n", attempt, e.what());
        }
    }
    std::printf("%zu trajectories in %zu attempts\n", produced, attempt);
    return produced == count ? kExitOk : kExitViolations;
}

int instruct_cmd(const std::string& config, const std::string& in_path, const std::string& out) {
    const auto l = load(config);
    std::ifstream in(in_path);
    if (!in) throw ConfigError("cannot open " + in_path);
    std::vector<Episode> eps;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(n, e.what());
        }
        const auto& scene = l.scene(j.at("scene_id").get<std::string>());
        auto t = trajectory_from_json(j.at("trajectory"));
        // Only the leg lengths and targets matter for landmark hints.
        std::vector<Trajectory> legs;
        for (const auto& leg : j.value("legs", nlohmann::json::array())) {
            legs.emplace_back();
            legs.back().actions.resize(leg.at("actions").get<std::size_t>());
            legs.back().target_landmark_id = leg.at("target").get<int>();
        }
        eps.push_back(annotate_trajectory(j.at("episode_id").get<std::string>(), scene, std::move(t), legs, l.cfg, *l.vlm));
    }
    write_episodes(eps, fs::path(out));
    std::printf("%zu episodes\n", eps.size());
    return kExitOk;
}

int dataset_filter(const std::string& in, const std::string& out, const std::string& config, double tree_height) {
    const auto eps = read_episodes(fs::path(in));
    std::vector<Episode> kept;
    std::map<std::string, std::size_t> rejected;
    std::optional<Loaded> l;
    if (!config.empty()) l = load(config);
    for (const auto& e : eps) {
        const BevGrid* bev = l ? &l->scene(e.scene_id).maps.bev : nullptr;
        const auto v = filter_episode(e, tree_height, bev);
        if (v.accepted) {
            kept.push_back(e);
        } else {
            ++rejected[v.reason];
            std::fprintf(stderr, "%s\t%s\n", e.episode_id.c_str(), v.reason.c_str());
        }
    }
    write_episodes(kept, fs::path(out));
    std::cout << nlohmann::json{{"accepted", kept.size()}, {"rejected", rejected}}.dump() << '\n';
    return kExitOk;
}

int dataset_split(const std::string& in, const std::string& assignment, const std::string& out_dir) {
    const auto splits = split_dataset(read_episodes(fs::path(in)), SceneAssignment::from_json(read_json(assignment)));
    fs::create_directories(out_dir);
    for (const auto& s : splits) {
        write_episodes(s.episodes, fs::path(out_dir) / (to_string(s.name) + ".jsonl"));
        std::printf("%s\t%zu\n", to_string(s.name).c_str(), s.episodes.size());
    }
    return kExitOk;
}

int dataset_stats(const std::string& in, bool json) {
    const auto stats = compute_stats(read_episodes(fs::path(in)));
    if (json)
        std::cout << stats_to_json(stats).dump(2) << '\n';
    else
        std::cout << stats_table(stats);
    return kExitOk;
}

int eval_cmd(const std::string& config, const std::string& dataset, const std::string& predictions, bool json) {
    const auto l = load(config);
    std::map<std::string, Episode> by_id;
    for (auto& e : read_episodes(fs::path(dataset))) by_id.emplace(e.episode_id, std::move(e));
    std::ifstream in(predictions);
    if (!in) throw ConfigError("cannot open " + predictions);
    std::vector<EvalResult> results;
    nlohmann::json per_episode = nlohmann::json::object();
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (trim(line).empty()) continue;
        Prediction p;
        try {
            p = prediction_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(n, e.what());
        }
        auto it = by_id.find(p.episode_id);
        if (it == by_id.end()) throw ParseError(n, "unknown episode " + p.episode_id);
        const auto& e = it->second;
        const auto run = replay(e.trajectory.start, p.actions, l.scene(e.scene_id).maps.global);
        results.push_back(score(run, e.trajectory.goal, e.trajectory.length(), l.cfg.success_radius));
        per_episode[p.episode_id] = eval_result_to_json(results.back());
    }
    const auto m = aggregate(results);
    if (json)
        std::cout << nlohmann::json{{"metrics", metrics_to_json(m)}, {"episodes", per_episode}}.dump(2) << '\n';
    else
        std::cout << metrics_table(m);
    return kExitOk;
}

struct KeyframeArgs {
    std::string dataset;
    std::string episode;
    std::string config;
    std::string memory;
    std::string tokens_dir;
    std::uint64_t synthetic_seed = 0;
    std::size_t synthetic_dim = 16;
    std::string out;
    std::string merge_log;
};

int keyframe_cmd(const KeyframeArgs& a) {
    std::optional<Episode> ep;
    for (auto& e : read_episodes(fs::path(a.dataset)))
        if (e.episode_id == a.episode) ep = std::move(e);
    if (!ep) throw ConfigError("episode " + a.episode + " not in " + a.dataset);
    MemoryBankConfig mem;
    std::optional<Loaded> l;
    if (!a.config.empty()) {
        l = load(a.config);
        mem = l->cfg.memory;
    }
    if (!a.memory.empty()) mem = memory_config_from_json(read_json(a.memory));

    const auto& poses = ep->trajectory.poses;
    Visibility vis;
    if (l) {
        const auto& scene = l->scene(ep->scene_id);
        vis = compute_visibility(poses, scene.landmarks, scene.maps.global);
    } else {
        for (std::size_t f = 0; f < poses.size(); ++f) vis[f] = {0};
    }

    std::vector<TokenMatrix> frames;
    std::mt19937_64 rng(a.synthetic_seed);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    for (std::size_t f = 0; f < poses.size(); ++f) {
        const auto fi = static_cast<std::int64_t>(f);
        if (!a.tokens_dir.empty()) {
            frames.push_back(read_tokens(fs::path(a.tokens_dir) / ("frame_" + std::to_string(f) + ".bin"), fi));
        } else {
            std::vector<float> data(mem.current_tokens * a.synthetic_dim);
            for (auto& v : data) v = gauss(rng);
            frames.emplace_back(mem.current_tokens, a.synthetic_dim, std::move(data), fi);
        }
    }
    const auto res = compress_trajectory(ep->trajectory.actions, vis, frames, mem);
    write_tokens(fs::path(a.out), res.observation);
    if (!a.merge_log.empty()) write_json(a.merge_log, merge_log_json(res.merges));
    std::printf("keyframes %zu, merges %zu, bank %zu, observation %zux%zu\n", res.keyframes.size(), res.merges.size(),
                res.bank.size(), res.observation.rows(), res.observation.dim());
    return kExitOk;
}

int generate_cmd(const std::string& config, std::size_t count, const std::string& out, const std::string& report_path,
                 const std::string& log_path, int workers) {
    auto l = load(config);
    if (workers > 0) l.cfg.workers = workers;
    std::ofstream os(out);
    if (!os) throw ConfigError("cannot write " + out);
    std::ofstream log;
    if (!log_path.empty()) log.open(log_path);
    const auto report = run_generate(l.cfg, l.scenes, count, *l.vlm,
                                     [&](const Episode& e) { os << canonical_line(e) << '\n'; },
                                     log_path.empty() ? nullptr : &log);
    const auto j = generation_report_to_json(report);
    if (!report_path.empty()) write_json(report_path, j);
    std::cout << j.dump(2) << '\n';
    if (!report.complete) {
        std::fprintf(stderr, "retry budget exhausted: %zu of %zu episodes\n", report.produced, report.requested);
        return kExitViolations;
    }
    return kExitOk;
}

int validate_cmd(const std::string& config, const std::string& dataset, const std::string& report_path) {
    const auto l = load(config);
    const auto report = run_validate(fs::path(dataset), l.scenes, l.cfg);
    const auto j = validation_report_to_json(report);
    if (!report_path.empty()) write_json(report_path, j);
    for (const auto& v : report.violations)
        std::printf("line %zu\t%s\t%s\t%s\n", v.line, v.episode_id.c_str(), v.check.c_str(), v.detail.c_str());
    std::printf("%zu episodes, %zu violations\n", report.episodes, report.violations.size());
    return report.clean() ? kExitOk : kExitViolations;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Aerial vision-language navigation data toolkit"};
    app.require_subcommand(1);

    auto* scene = app.add_subcommand("scene", "Scene utilities");
    scene->require_subcommand(1);
    SceneSynthArgs synth;
    auto* synth_cmd = scene->add_subcommand("synth", "Synthesize a point cloud from a spec or a random city");
    auto* spec_opt = synth_cmd->add_option("--spec", synth.spec, "Scene spec JSON")->check(CLI::ExistingFile);
    synth_cmd->add_option("--city-seed", synth.city_seed, "Seed for a random block city")->excludes(spec_opt);
    synth_cmd->add_option("--extent", synth.extent, "City side length in metres");
    synth_cmd->add_option("--lots", synth.lots, "Lots per side");
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();

    MapArgs map_args;
    auto add_map_opts = [&](CLI::App* c) {
        c->add_option("--cloud", map_args.cloud, "Point cloud (x y z per line)")->required()->check(CLI::ExistingFile);
        c->add_option("--spec", map_args.spec, "Scene spec for labels and trees")->check(CLI::ExistingFile);
        c->add_option("--voxel-size", map_args.map.voxel_size, "Voxel edge in metres");
        c->add_option("--margin", map_args.map.safety_margin, "Safety margin in metres");
    };
    std::string out_path;
    auto* vox = app.add_subcommand("voxelize", "Build the occupancy grid and BEV map");
    add_map_opts(vox);
    vox->add_option("--out", out_path, "Output directory")->required();

    double min_area = 20.0;
    std::string vlm_mode = "mock", cache_dir;
    auto* seg = app.add_subcommand("segment", "Extract and caption landmark instances");
    add_map_opts(seg);
    seg->add_option("--min-area", min_area, "Smallest footprint kept, m^2");
    seg->add_option("--vlm", vlm_mode, "mock, replay or live")->check(CLI::IsMember({"mock", "replay", "live"}));
    seg->add_option("--cache-dir", cache_dir, "Replay source or record target");
    seg->add_option("--out", out_path, "Landmark JSON")->required();

    std::string config, in_path, dataset, predictions, report_path, log_path, assignment;
    std::size_t count = 0;
    bool json = false;
    int workers = 0;
    auto add_config = [&](CLI::App* c) {
        c->add_option("--config", config, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
    };

    auto* tg = app.add_subcommand("trajgen", "Sample trajectories only");
    add_config(tg);
    tg->add_option("--count", count, "Trajectories to produce")->required();
    tg->add_option("--out", out_path, "Output JSONL")->required();

    auto* ins = app.add_subcommand("instruct", "Write instructions for trajectories");
    add_config(ins);
    ins->add_option("--in", in_path, "Trajectory JSONL from trajgen")->required()->check(CLI::ExistingFile);
    ins->add_option("--out", out_path, "Episode JSONL")->required();

    auto* ds = app.add_subcommand("dataset", "Dataset maintenance");
    ds->require_subcommand(1);
    double tree_height = kDefaultTreeHeight;
    auto* dsf = ds->add_subcommand("filter", "Drop episodes that break the filter rules");
    dsf->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
    dsf->add_option("--out", out_path)->required();
    dsf->add_option("--config", config, "Config whose scenes enable the canopy rule")->check(CLI::ExistingFile);
    dsf->add_option("--tree-height", tree_height, "Canopy height in metres");
    auto* dss = ds->add_subcommand("split", "Split by scene into train and test sets");
    dss->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
    dss->add_option("--assignment", assignment, "JSON with train/test_seen/test_unseen scene lists")
        ->required()
        ->check(CLI::ExistingFile);
    dss->add_option("--out-dir", out_path)->required();
    auto* dst = ds->add_subcommand("stats", "Corpus statistics");
    dst->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
    dst->add_flag("--json", json);

    auto* ev = app.add_subcommand("eval", "Score predicted actions");
    add_config(ev);
    ev->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
    ev->add_option("--predictions", predictions, "JSONL of {episode_id, actions}")->required()->check(CLI::ExistingFile);
    ev->add_flag("--json", json);

    KeyframeArgs kf;
    auto* kfc = app.add_subcommand("keyframe", "Compress an episode's frame tokens into one observation");
    kfc->add_option("--dataset", kf.dataset)->required()->check(CLI::ExistingFile);
    kfc->add_option("--episode", kf.episode)->required();
    kfc->add_option("--config", kf.config, "Config for scene visibility and memory settings")->check(CLI::ExistingFile);
    kfc->add_option("--memory", kf.memory, "Memory bank JSON")->check(CLI::ExistingFile);
    kfc->add_option("--tokens-dir", kf.tokens_dir, "Directory of frame_<i>.bin token files");
    kfc->add_option("--synthetic-seed", kf.synthetic_seed, "Seed for random tokens when no directory is given");
    kfc->add_option("--synthetic-dim", kf.synthetic_dim, "Token width for random tokens");
    kfc->add_option("--out", kf.out, "Observation token file")->required();
    kfc->add_option("--merge-log", kf.merge_log, "Merge log JSON");

    auto* gen = app.add_subcommand("generate", "End-to-end episode generation");
    add_config(gen);
    gen->add_option("--count", count)->required();
    gen->add_option("--out", out_path, "Episode JSONL")->required();
    gen->add_option("--report", report_path, "Generation report JSON");
    gen->add_option("--log", log_path, "Stage log, JSON lines");
    gen->add_option("--workers", workers, "Override the config worker count");

    auto* val = app.add_subcommand("validate", "Re-check every episode invariant");
    add_config(val);
    val->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
    val->add_option("--report", report_path, "Validation report JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*synth_cmd) return scene_synth(synth);
        if (*vox) return voxelize_cmd(map_args, out_path);
        if (*seg) return segment_cmd(map_args, min_area, vlm_from_flag(vlm_mode, cache_dir), out_path);
        if (*tg) return trajgen_cmd(config, count, out_path);
        if (*ins) return instruct_cmd(config, in_path, out_path);
        if (*dsf) return dataset_filter(in_path, out_path, config, tree_height);
        if (*dss) return dataset_split(in_path, assignment, out_path);
        if (*dst) return dataset_stats(in_path, json);
        if (*ev) return eval_cmd(config, dataset, predictions, json);
        if (*kfc) return keyframe_cmd(kf);
        if (*gen) return generate_cmd(config, count, out_path, report_path, log_path, workers);
        if (*val) return validate_cmd(config, dataset, report_path);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitViolations;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitViolations;
    }
    return kExitOk;
}
