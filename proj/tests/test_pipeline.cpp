#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "aerovln/pipeline.hpp"

using namespace aerovln;

namespace {

nlohmann::json fixture_json() {
    return nlohmann::json::parse(R"({
        "schema_version": 1,
        "seed": 7,
        "workers": 1,
        "scenes": [{"city": {"seed": 21, "extent": 400, "lots_per_side": 5}}],
        "segments": [1, 2],
        "trajgen": {"start_distance_range": [40, 90], "height_range": [20, 100], "max_expansions": 200000},
        "vlm": {"mode": "mock"}
    })");
}

struct Fixture {
    PipelineConfig cfg;
    std::unique_ptr<VlmClient> vlm;
    std::vector<SceneContext> scenes;
};

Fixture& fixture() {
    static Fixture f = [] {
        Fixture x;
        x.cfg = pipeline_config_from_json(fixture_json());
        x.vlm = std::make_unique<VlmClient>(x.cfg.vlm);
        x.scenes = prepare_scenes(x.cfg, *x.vlm);
        return x;
    }();
    return f;
}

std::string generate_text(const PipelineConfig& cfg, std::size_t count, GenerationReport* report = nullptr) {
    auto& f = fixture();
    std::ostringstream out;
    auto r = run_generate(cfg, f.scenes, count, *f.vlm, [&](const Episode& e) { out << canonical_line(e) << '\n'; });
    if (report) *report = r;
    return out.str();
}

const std::vector<Episode>& batch200() {
    static const std::vector<Episode> eps = [] {
        std::vector<Episode> v;
        const auto r = run_generate(fixture().cfg, fixture().scenes, 200, *fixture().vlm, v);
        EXPECT_TRUE(r.complete);
        return v;
    }();
    return eps;
}

std::string lines_of(const std::vector<Episode>& eps) {
    std::ostringstream out;
    write_episodes(eps, out);
    return out.str();
}

}  // namespace

TEST(Config, ParsesFixture) {
    const auto& c = fixture().cfg;
    EXPECT_EQ(c.seed, 7u);
    ASSERT_EQ(c.scenes.size(), 1u);
    EXPECT_EQ(*c.scenes[0].city_seed, 21u);
    EXPECT_EQ(c.trajgen.max_expansions, 200000);
    EXPECT_EQ(c.vlm.mode, VlmMode::mock);
}

TEST(Config, Rejections) {
    auto bad = [](auto mutate) {
        auto j = fixture_json();
        mutate(j);
        return j;
    };
    EXPECT_THROW(pipeline_config_from_json(bad([](auto& j) { j["schema_version"] = 2; })), ConfigError);
    EXPECT_THROW(pipeline_config_from_json(bad([](auto& j) { j["scenes"] = nlohmann::json::array(); })), ConfigError);
    EXPECT_THROW(pipeline_config_from_json(bad([](auto& j) { j["workers"] = 0; })), ConfigError);
    EXPECT_THROW(pipeline_config_from_json(bad([](auto& j) { j["segments"] = {3, 1}; })), ConfigError);
    EXPECT_THROW(pipeline_config_from_json(bad([](auto& j) { j["scenes"][0] = {{"spec", "no/such/file.json"}}; })),
                 ConfigError);
    EXPECT_THROW(pipeline_config_from_json(bad([](auto& j) { j["trajgen"]["start_distance_range"] = {90, 40}; })),
                 ConfigError);
}

TEST(Config, SeedIsMandatoryForGeneration) {
    auto j = fixture_json();
    j.erase("seed");
    const auto cfg = pipeline_config_from_json(j);
    EXPECT_THROW(cfg.require_seed(), ConfigError);
    std::vector<Episode> out;
    EXPECT_THROW(run_generate(cfg, fixture().scenes, 1, *fixture().vlm, out), ConfigError);
}

TEST(Config, LoadsRelativeSpecPath) {
    const auto dir = std::filesystem::temp_directory_path() / "aerovln_cfg_test";
    std::filesystem::create_directories(dir / "scenes");
    {
        std::ofstream(dir / "scenes" / "a.json") << nlohmann::json(random_city_spec(3, 200, 3)).dump();
        auto j = fixture_json();
        j["scenes"] = nlohmann::json::array({{{"spec", "scenes/a.json"}}});
        std::ofstream(dir / "config.json") << j.dump();
    }
    const auto cfg = load_pipeline_config(dir / "config.json");
    EXPECT_EQ(cfg.scenes[0].spec_path, dir / "scenes" / "a.json");
    EXPECT_EQ(load_scene_spec(cfg.scenes[0].spec_path).scene_id, "city-3");
    std::filesystem::remove_all(dir);
}

TEST(Generate, CountZeroIsEmpty) {
    GenerationReport r;
    EXPECT_EQ(generate_text(fixture().cfg, 0, &r), "");
    EXPECT_TRUE(r.complete);
    EXPECT_EQ(r.attempts, 0u);
}

TEST(Generate, ByteIdenticalAcrossRuns) {
    const auto a = generate_text(fixture().cfg, 10);
    const auto b = generate_text(fixture().cfg, 10);
    EXPECT_EQ(a, b);
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 10);
}

TEST(Generate, WorkerCountDoesNotChangeOutput) {
    auto cfg = fixture().cfg;
    const auto one = generate_text(cfg, 10);
    cfg.workers = 3;
    EXPECT_EQ(generate_text(cfg, 10), one);
}

TEST(Generate, SeedChangesOutput) {
    auto cfg = fixture().cfg;
    const auto a = generate_text(cfg, 5);
    cfg.seed = 8;
    EXPECT_NE(generate_text(cfg, 5), a);
}

TEST(Generate, TwoHundredPassFilterAndReplay) {
    const auto& eps = batch200();
    ASSERT_EQ(eps.size(), 200u);
    const auto& scene = fixture().scenes[0];
    for (const auto& e : eps) {
        EXPECT_TRUE(filter_episode(e, kDefaultTreeHeight, &scene.maps.bev).accepted) << e.episode_id;
        // Downstream check with the evaluation module, independent of the generator.
        const auto run = replay(e.trajectory.start, e.trajectory.actions, scene.maps.global);
        EXPECT_FALSE(run.collided) << e.episode_id;
        EXPECT_TRUE(score(run, e.trajectory.goal, e.trajectory.length()).success) << e.episode_id;
        EXPECT_FALSE(e.instruction.text.empty());
        EXPECT_EQ(e.image_refs.size(), e.trajectory.poses.size());
    }
}

TEST(Generate, ReportCountsAddUp) {
    GenerationReport r;
    generate_text(fixture().cfg, 20, &r);
    EXPECT_EQ(r.produced, 20u);
    EXPECT_LE(r.attempts, r.budget);
    std::size_t rejected = 0;
    for (const auto& [name, c] : r.stages)
        for (const auto& [why, n] : c.rejected) rejected += n;
    EXPECT_EQ(rejected + r.produced, r.attempts);
    EXPECT_EQ(r.stages.at("replay").accepted, r.produced);
    const auto j = generation_report_to_json(r);
    EXPECT_TRUE(j.contains("wall_time_s"));
    EXPECT_EQ(j.at("stages").size(), 4u);
}

TEST(Generate, BudgetExhaustionGivesPartialOutput) {
    auto cfg = fixture().cfg;
    cfg.trajgen.max_expansions = 1;  // every search fails
    GenerationReport r;
    EXPECT_EQ(generate_text(cfg, 3, &r), "");
    EXPECT_FALSE(r.complete);
    EXPECT_EQ(r.attempts, 15u);
    EXPECT_EQ(r.stages.at("trajgen").rejected.at("no_path"), 15u);
}

TEST(Generate, LogsAreJsonLines) {
    std::ostringstream log;
    std::vector<Episode> out;
    run_generate(fixture().cfg, fixture().scenes, 3, *fixture().vlm, out, &log);
    std::istringstream in(log.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("stage") && j.contains("episode_id") && j.contains("duration_ms"));
        ++n;
    }
    EXPECT_GE(n, 3u * 4u);
}

TEST(Generate, LandmarkHintsFollowLegs) {
    std::vector<Trajectory> legs(2);
    legs[0].actions = {Action::forward(3), Action::forward(3), Action::stop()};
    legs[1].actions = {Action::turn_left(), Action::stop()};
    EXPECT_EQ(leg_of_action(legs, 0), 0u);
    EXPECT_EQ(leg_of_action(legs, 1), 0u);
    EXPECT_EQ(leg_of_action(legs, 2), 1u);
    EXPECT_EQ(leg_of_action(legs, 3), 1u);
}

TEST(Validate, FreshFileIsClean) {
    std::istringstream in(lines_of(batch200()));
    const auto r = run_validate(in, fixture().scenes, fixture().cfg);
    EXPECT_EQ(r.episodes, 200u);
    EXPECT_TRUE(r.clean()) << validation_report_to_json(r).dump();
}

TEST(Validate, CorruptedPoseFlaggedWithEpisodeId) {
    auto eps = std::vector<Episode>(batch200().begin(), batch200().begin() + 5);
    eps[3].trajectory.poses[1].position.x += 0.5;
    std::istringstream in(lines_of(eps));
    const auto r = run_validate(in, fixture().scenes, fixture().cfg);
    ASSERT_FALSE(r.clean());
    bool found = false;
    for (const auto& v : r.violations) {
        EXPECT_EQ(v.episode_id, eps[3].episode_id);
        found |= v.check == "kinematics";
    }
    EXPECT_TRUE(found);
}

TEST(Validate, InjectedLongEpisodeIsTooLong) {
    auto e = batch200().front();
    e.episode_id = "injected";
    auto& t = e.trajectory;
    t.actions.clear();
    for (int i = 0; i < 151; ++i) t.actions.push_back(i % 2 ? Action::turn_right() : Action::turn_left());
    t.actions.push_back(Action::stop());
    ASSERT_EQ(t.actions.size(), 152u);
    t.poses = rollout(t.start, t.actions);
    e.image_refs = default_image_refs(e.episode_id, t.poses.size());
    std::istringstream in(lines_of({e}));
    const auto r = run_validate(in, fixture().scenes, fixture().cfg);
    bool too_long = false;
    for (const auto& v : r.violations) {
        EXPECT_EQ(v.episode_id, "injected");
        too_long |= v.check == "filter" && v.detail == "too_long";
    }
    EXPECT_TRUE(too_long);
}

TEST(Validate, SchemaProblems) {
    std::istringstream bad_line(lines_of({batch200()[0]}) + "{not json\n");
    const auto r = run_validate(bad_line, fixture().scenes, fixture().cfg);
    ASSERT_EQ(r.violations.size(), 1u);
    EXPECT_EQ(r.violations[0].check, "schema");
    EXPECT_EQ(r.violations[0].line, 2u);

    auto j = episode_to_json(batch200()[0]);
    j["schema_version"] = 9;
    std::istringstream wrong_version(j.dump() + "\n");
    EXPECT_THROW(run_validate(wrong_version, fixture().scenes, fixture().cfg), SchemaVersionError);
}

TEST(Validate, UnknownSceneAndCollision) {
    auto e = batch200()[0];
    e.scene_id = "elsewhere";
    std::istringstream in(lines_of({e}));
    const auto r = run_validate(in, fixture().scenes, fixture().cfg);
    ASSERT_EQ(r.violations.size(), 1u);
    EXPECT_EQ(r.violations[0].check, "scene");

    // Drive straight through the tallest landmark.
    const auto& scene = fixture().scenes[0];
    const auto tallest = *std::max_element(scene.landmarks.begin(), scene.landmarks.end(),
                                           [](const auto& a, const auto& b) { return a.height < b.height; });
    auto c = batch200()[0];
    c.episode_id = "through-wall";
    c.trajectory.start = {{tallest.centroid.x - 30.0, tallest.centroid.y, 10.0}, 0};
    c.trajectory.actions.assign(7, Action::forward(9));
    c.trajectory.actions.push_back(Action::stop());
    c.trajectory.poses = rollout(c.trajectory.start, c.trajectory.actions);
    c.image_refs = default_image_refs(c.episode_id, c.trajectory.poses.size());
    std::istringstream in2(lines_of({c}));
    const auto r2 = run_validate(in2, fixture().scenes, fixture().cfg);
    bool collision = false;
    for (const auto& v : r2.violations) collision |= v.check == "collision";
    EXPECT_TRUE(collision);
}

TEST(Validate, GeneratedFilesAreCleanForSeveralSeeds) {
    for (std::uint64_t seed : {1u, 2u, 3u, 99u}) {
        auto cfg = fixture().cfg;
        cfg.seed = seed;
        std::istringstream in(generate_text(cfg, 25));
        const auto r = run_validate(in, fixture().scenes, cfg);
        EXPECT_EQ(r.episodes, 25u);
        EXPECT_TRUE(r.clean()) << "seed " << seed << ": " << validation_report_to_json(r).dump();
    }
}

TEST(Generate, ThroughputSmoke) {
    auto cfg = fixture().cfg;
    GenerationReport one, two;
    generate_text(cfg, 20, &one);
    cfg.workers = 2;
    generate_text(cfg, 20, &two);
    EXPECT_GT(generation_report_to_json(one).at("episodes_per_second").get<double>(), 0.0);
    EXPECT_GT(generation_report_to_json(two).at("episodes_per_second").get<double>(), 0.0);
    EXPECT_EQ(two.workers, 2);
}
