#include <gtest/gtest.h>

#include <random>
#include <set>
#include <utility>

#include "aerovln/segmentation.hpp"

using namespace aerovln;

namespace {

using Cell = std::pair<std::int64_t, std::int64_t>;

BevGrid bev_with(std::int64_t nx, std::int64_t ny, const std::vector<Cell>& cells, double height = 10.0) {
    BevGrid bev({0.0, 0.0}, 1.0, nx, ny);
    for (auto [i, j] : cells) bev.set_column(i, j, height);
    return bev;
}

BevGrid random_bev(std::mt19937_64& rng, std::int64_t n, double fill) {
    BevGrid bev({-5.0, 3.0}, 1.0, n, n);
    std::bernoulli_distribution occ(fill);
    std::uniform_real_distribution<double> h(1.0, 80.0);
    for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t i = 0; i < n; ++i)
            if (occ(rng)) bev.set_column(i, j, h(rng));
    return bev;
}

// Oracle: depth-first flood fill with an explicit stack, counting components and their sizes.
std::vector<std::size_t> flood_fill_sizes(const BevGrid& bev) {
    std::set<Cell> seen;
    std::vector<std::size_t> sizes;
    for (std::int64_t j = 0; j < bev.ny(); ++j) {
        for (std::int64_t i = 0; i < bev.nx(); ++i) {
            if (!bev.occupied(i, j) || seen.count({i, j})) continue;
            std::vector<Cell> stack{{i, j}};
            seen.insert({i, j});
            std::size_t size = 0;
            while (!stack.empty()) {
                auto [a, b] = stack.back();
                stack.pop_back();
                ++size;
                for (Cell n : {Cell{a + 1, b}, Cell{a - 1, b}, Cell{a, b + 1}, Cell{a, b - 1}}) {
                    if (!bev.in_bounds(n.first, n.second) || !bev.occupied(n.first, n.second) || seen.count(n)) continue;
                    seen.insert(n);
                    stack.push_back(n);
                }
            }
            sizes.push_back(size);
        }
    }
    return sizes;
}

std::vector<Point2> centers(const BevGrid& bev, const std::vector<Cell>& cells) {
    std::vector<Point2> out;
    for (auto [i, j] : cells) out.push_back(bev.cell_center(i, j));
    return out;
}

std::vector<Point2> open_ring(std::vector<Point2> ring) {
    ring.pop_back();
    return ring;
}

class ScriptedTransport : public Transport {
public:
    explicit ScriptedTransport(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string post(const std::string&, const std::string&, const std::vector<std::pair<std::string, std::string>>&,
                     double) override {
        const auto& r = replies_[std::min(calls, replies_.size() - 1)];
        ++calls;
        return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", r}}}}}}}.dump();
    }
    std::size_t calls = 0;

private:
    std::vector<std::string> replies_;
};

VlmClient live_client(std::shared_ptr<Transport> t) {
    VlmConfig cfg;
    cfg.mode = VlmMode::live;
    cfg.endpoint = "http://localhost:1/v1/chat/completions";
    return VlmClient(cfg, std::move(t));
}

}  // namespace

TEST(ExtractInstances, AllFreeGridHasNoInstances) {
    BevGrid bev({0.0, 0.0}, 1.0, 20, 20);
    EXPECT_TRUE(extract_instances(bev, 0.0).empty());
}

TEST(ExtractInstances, SingleBlock) {
    std::vector<Cell> cells;
    for (int j = 5; j < 15; ++j)
        for (int i = 5; i < 15; ++i) cells.push_back({i, j});
    const auto bev = bev_with(20, 20, cells, 30.0);
    const auto inst = extract_instances(bev, 20.0);
    ASSERT_EQ(inst.size(), 1u);
    EXPECT_DOUBLE_EQ(inst[0].area, 100.0);
    EXPECT_DOUBLE_EQ(inst[0].height, 30.0);
    EXPECT_NEAR(inst[0].centroid.x, 10.0, 1e-12);
    EXPECT_NEAR(inst[0].centroid.y, 10.0, 1e-12);
    EXPECT_FALSE(inst[0].caption.has_value());
    // Boundary ring of a 10x10 block: 36 cells plus the closing repeat.
    EXPECT_EQ(inst[0].contour.size(), 37u);
    EXPECT_TRUE(is_simple_polygon(open_ring(inst[0].contour)));
}

TEST(ExtractInstances, MinAreaFiltersSmallComponents) {
    const auto bev = bev_with(10, 10, {{1, 1}, {2, 1}, {6, 6}});
    EXPECT_EQ(extract_instances(bev, 0.0).size(), 2u);
    EXPECT_EQ(extract_instances(bev, 2.0).size(), 1u);
    EXPECT_EQ(extract_instances(bev, 3.0).size(), 0u);
    EXPECT_THROW(extract_instances(bev, -1.0), ContractViolation);
}

TEST(ExtractInstances, DiagonalNeighboursAreSeparateComponents) {
    const auto bev = bev_with(5, 5, {{1, 1}, {2, 2}});
    EXPECT_EQ(extract_instances(bev, 0.0).size(), 2u);
}

TEST(TraceBoundary, ThinLShapeMatchesHandTrace) {
    // X .
    // X .
    // X X X   (cells offset by (2, 2))
    const std::vector<Cell> shape{{2, 2}, {3, 2}, {4, 2}, {2, 3}, {2, 4}};
    const auto bev = bev_with(8, 8, shape);
    const auto inst = extract_instances(bev, 0.0);
    ASSERT_EQ(inst.size(), 1u);
    const std::vector<Cell> hand{{2, 2}, {3, 2}, {4, 2}, {3, 2}, {2, 3}, {2, 4}, {2, 3}, {2, 2}};
    EXPECT_EQ(inst[0].contour, centers(bev, hand));
}

TEST(TraceBoundary, ThickLShapeMatchesHandTrace) {
    // XX
    // XX
    // XXXX
    // XXXX
    std::vector<Cell> shape;
    for (int i = 0; i < 4; ++i) shape.push_back({1 + i, 1}), shape.push_back({1 + i, 2});
    for (int j = 3; j < 5; ++j) shape.push_back({1, j}), shape.push_back({2, j});
    const auto bev = bev_with(8, 8, shape);
    const auto inst = extract_instances(bev, 0.0);
    ASSERT_EQ(inst.size(), 1u);
    const std::vector<Cell> hand{{1, 1}, {2, 1}, {3, 1}, {4, 1}, {4, 2}, {3, 2}, {2, 3},
                                 {2, 4}, {1, 4}, {1, 3}, {1, 2}, {1, 1}};
    EXPECT_EQ(inst[0].contour, centers(bev, hand));
    EXPECT_TRUE(is_simple_polygon(open_ring(inst[0].contour)));
    EXPECT_DOUBLE_EQ(inst[0].area, 12.0);
}

TEST(TraceBoundary, SingleAndPairCells) {
    const auto bev = bev_with(6, 6, {{1, 1}, {3, 3}, {4, 3}});
    const auto inst = extract_instances(bev, 0.0);
    ASSERT_EQ(inst.size(), 2u);
    EXPECT_EQ(inst[0].contour, centers(bev, {{1, 1}, {1, 1}}));
    EXPECT_EQ(inst[1].contour, centers(bev, {{3, 3}, {4, 3}, {3, 3}}));
}

TEST(ExtractInstances, ComponentCountMatchesFloodFillOn50RandomGrids) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto bev = random_bev(rng, 12 + trial % 20, 0.25 + 0.01 * (trial % 30));
        auto sizes = flood_fill_sizes(bev);
        const auto inst = extract_instances(bev, 0.0);
        ASSERT_EQ(inst.size(), sizes.size()) << "trial " << trial;
        std::multiset<double> got, want;
        for (const auto& i : inst) got.insert(i.area);
        for (auto s : sizes) want.insert(static_cast<double>(s));
        EXPECT_EQ(got, want) << "trial " << trial;
    }
}

TEST(ExtractInstances, AreaSumProperty) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const auto bev = random_bev(rng, 25, 0.4);
        const double total = static_cast<double>(bev.occupied_count());
        double all = 0.0, filtered = 0.0;
        for (const auto& i : extract_instances(bev, 0.0)) all += i.area;
        for (const auto& i : extract_instances(bev, 4.0)) filtered += i.area;
        EXPECT_DOUBLE_EQ(all, total);
        EXPECT_LE(filtered, total);
    }
}

TEST(ExtractInstances, ContourProperties) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 40; ++trial) {
        const auto bev = random_bev(rng, 20, 0.5);
        const auto labels = label_components(bev);
        const auto inst = extract_instances(bev, 0.0);
        for (std::size_t k = 0; k < inst.size(); ++k) {
            const auto& c = inst[k].contour;
            ASSERT_GE(c.size(), 2u);
            EXPECT_EQ(c.front(), c.back());
            double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
            for (const auto& p : c) {
                auto cell = bev.cell_of(p.x, p.y);
                ASSERT_TRUE(cell);
                const auto [i, j] = *cell;
                EXPECT_EQ(labels.at(i, j), static_cast<int>(k));
                bool touches_free = false;
                for (int dj = -1; dj <= 1; ++dj)
                    for (int di = -1; di <= 1; ++di)
                        if ((di || dj) && (!bev.in_bounds(i + di, j + dj) || !bev.occupied(i + di, j + dj)))
                            touches_free = true;
                EXPECT_TRUE(touches_free);
                minx = std::min(minx, p.x), maxx = std::max(maxx, p.x);
                miny = std::min(miny, p.y), maxy = std::max(maxy, p.y);
            }
            EXPECT_GE(inst[k].centroid.x, minx - 1e-9);
            EXPECT_LE(inst[k].centroid.x, maxx + 1e-9);
            EXPECT_GE(inst[k].centroid.y, miny - 1e-9);
            EXPECT_LE(inst[k].centroid.y, maxy + 1e-9);
            EXPECT_GT(inst[k].height, 0.0);
        }
    }
}

TEST(ExtractInstances, RectanglesGiveSimplePerimeterContours) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> side(2, 12);
    for (int trial = 0; trial < 40; ++trial) {
        const int w = side(rng), h = side(rng);
        std::vector<Cell> cells;
        for (int j = 0; j < h; ++j)
            for (int i = 0; i < w; ++i) cells.push_back({2 + i, 3 + j});
        const auto bev = bev_with(20, 20, cells);
        const auto inst = extract_instances(bev, 0.0);
        ASSERT_EQ(inst.size(), 1u);
        const auto ring = open_ring(inst[0].contour);
        EXPECT_EQ(ring.size(), static_cast<std::size_t>(2 * (w + h) - 4));
        EXPECT_GE(ring.size(), 3u);
        EXPECT_TRUE(is_simple_polygon(ring));
    }
}

TEST(ExtractInstances, SynthesizedCityMatchesGroundTruth) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto spec = random_city_spec(seed, 300.0, 4);
        const auto scene = synthesize_scene(spec);
        const MapConfig cfg;
        const auto maps = build_scene_maps(scene.cloud, spec.trees, cfg);
        const auto inst = extract_instances(maps.bev, 20.0);
        ASSERT_EQ(inst.size(), scene.landmarks.size()) << "seed " << seed;
        for (const auto& gt : scene.landmarks) {
            const LandmarkInstance* best = nullptr;
            for (const auto& i : inst)
                if (!best || distance(i.centroid, gt.centroid) < distance(best->centroid, gt.centroid)) best = &i;
            EXPECT_LT(distance(best->centroid, gt.centroid), 1.0);
            EXPECT_LE(std::abs(best->height - gt.height), cfg.voxel_size + 1e-9) << gt.label.value_or("");
            if (gt.label != kTreeLabel) {
                EXPECT_TRUE(is_simple_polygon(open_ring(best->contour)));
            }
        }
    }
}

TEST(AssignLabels, UsesFootprintContainment) {
    const auto spec = random_city_spec(4, 300.0, 3);
    const auto scene = synthesize_scene(spec);
    const auto maps = build_scene_maps(scene.cloud, spec.trees, {});
    auto inst = extract_instances(maps.bev, 20.0);
    assign_labels(inst, spec);
    std::multiset<std::string> got, want;
    for (const auto& i : inst)
        if (*i.label != "building") { got.insert(*i.label); }
    for (std::size_t k = 0; k < spec.trees.size(); ++k) want.insert(kTreeLabel);
    for (const auto& b : spec.buildings)
        if (b.label != "building") want.insert(b.label);
    EXPECT_EQ(got, want);
}

TEST(Caption, MockFromGroundTruthLabel) {
    VlmClient vlm(VlmConfig{});
    LandmarkInstance inst;
    inst.label = "blue glass tower, 30m";
    inst.area = 1500.0;
    const auto out = caption_instance(inst, {"frame_0007"}, vlm);
    ASSERT_TRUE(out.caption);
    EXPECT_EQ(*out.caption, (Caption{"blue", "glass", "large", "tower"}));
    EXPECT_FALSE(inst.caption.has_value());
}

TEST(Caption, MockSizeBuckets) {
    EXPECT_EQ(mock::caption_from_label("red brick office", 199.9).size, "small");
    EXPECT_EQ(mock::caption_from_label("red brick office", 200.0).size, "medium");
    EXPECT_EQ(mock::caption_from_label("red brick office", 999.0).size, "medium");
    EXPECT_EQ(mock::caption_from_label("red brick office", 1000.0).size, "large");
    EXPECT_EQ(mock::caption_from_label("green tree", 30.0), (Caption{"green", "plain", "small", "tree"}));
}

TEST(Caption, ParsesRecordedKeyValueReply) {
    const auto c = parse_caption("color: blue, feature: Steel, glass, size: medium size, type: building");
    ASSERT_TRUE(c);
    EXPECT_EQ(*c, (Caption{"blue", "Steel, glass", "medium size", "building"}));
}

TEST(Caption, ParsesJsonReplyWithProse) {
    const auto c = parse_caption(
        "Sure.\n```json\n{\"color\": \"white\", \"feature\": [\"arched roof\", \"glass\"], \"size\": \"large\", "
        "\"type\": \"stadium\"}\n```");
    ASSERT_TRUE(c);
    EXPECT_EQ(*c, (Caption{"white", "arched roof, glass", "large", "stadium"}));
}

TEST(Caption, MissingTypeIsCaptionErrorAfterRetries) {
    const std::string bad = "color: blue, feature: glass, size: large";
    EXPECT_FALSE(parse_caption(bad));
    auto t = std::make_shared<ScriptedTransport>(std::vector<std::string>{bad});
    auto vlm = live_client(t);
    LandmarkInstance inst;
    try {
        caption_instance(inst, {}, vlm, 2);
        FAIL() << "expected CaptionError";
    } catch (const CaptionError& e) {
        EXPECT_EQ(e.raw_reply(), bad);
    }
    EXPECT_EQ(t->calls, 3u);
}

TEST(Caption, RetrySucceedsAfterMalformedReply) {
    auto t = std::make_shared<ScriptedTransport>(
        std::vector<std::string>{"no idea", R"({"color":"red","feature":"brick","size":"small","type":"house"})"});
    auto vlm = live_client(t);
    const auto out = caption_instance(LandmarkInstance{}, {}, vlm, 2);
    EXPECT_EQ(out.caption->type, "house");
    EXPECT_EQ(t->calls, 2u);
}

TEST(InstancesJson, RoundTrip) {
    const auto spec = random_city_spec(8, 200.0, 2);
    const auto scene = synthesize_scene(spec);
    auto inst = extract_instances(build_scene_maps(scene.cloud, spec.trees, {}).bev, 20.0);
    assign_labels(inst, spec);
    inst[0].caption = Caption{"a", "b", "c", "d"};
    const auto back = instances_from_json(nlohmann::json::parse(instances_to_json(inst).dump()));
    EXPECT_EQ(back, inst);
}
