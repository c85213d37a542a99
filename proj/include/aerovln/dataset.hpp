#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/action.hpp"
#include "aerovln/error.hpp"
#include "aerovln/instructions.hpp"
#include "aerovln/occupancy.hpp"
#include "aerovln/text.hpp"

namespace aerovln {

inline constexpr int kEpisodeSchemaVersion = 1;

// A file written with a different episode schema.
class SchemaVersionError : public ParseError {
public:
    SchemaVersionError(std::size_t line, int found)
        : ParseError(line, "unsupported schema_version " + std::to_string(found) + " (expected " +
                               std::to_string(kEpisodeSchemaVersion) + ")"),
          found_(found) {}
    int found() const noexcept { return found_; }

private:
    int found_;
};

struct EpisodeMeta {
    std::string engine = "synthetic";
    std::uint64_t seed = 0;
    std::map<std::string, std::string> timestamps;
    nlohmann::json extra = nlohmann::json::object();  // unknown keys, kept verbatim

    friend bool operator==(const EpisodeMeta&, const EpisodeMeta&) = default;
};

struct Episode {
    std::string episode_id;
    std::string scene_id;
    Trajectory trajectory;
    Instruction instruction;
    std::vector<std::string> image_refs;     // one per pose
    std::set<std::size_t> damaged_images;    // indices into image_refs
    EpisodeMeta meta;
    nlohmann::json extra = nlohmann::json::object();

    friend bool operator==(const Episode&, const Episode&) = default;
};

inline std::vector<std::string> default_image_refs(const std::string& episode_id, std::size_t poses) {
    std::vector<std::string> refs;
    refs.reserve(poses);
    for (std::size_t i = 0; i < poses; ++i) refs.push_back(episode_id + "/" + default_image_ref(i));
    return refs;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json episode_to_json(const Episode& e) {
    nlohmann::json meta = e.meta.extra;
    meta["engine"] = e.meta.engine;
    meta["seed"] = e.meta.seed;
    meta["timestamps"] = e.meta.timestamps;
    nlohmann::json j = e.extra;
    j["schema_version"] = kEpisodeSchemaVersion;
    j["episode_id"] = e.episode_id;
    j["scene_id"] = e.scene_id;
    j["trajectory"] = trajectory_to_json(e.trajectory);
    j["instruction"] = instruction_to_json(e.instruction);
    j["image_refs"] = e.image_refs;
    j["damaged_images"] = e.damaged_images;
    j["meta"] = std::move(meta);
    return j;
}

inline Episode episode_from_json(const nlohmann::json& j, std::size_t line = 0) {
    if (!j.is_object()) throw ParseError(line, "episode must be a JSON object");
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kEpisodeSchemaVersion) throw SchemaVersionError(line, version);
        Episode e;
        e.episode_id = j.at("episode_id").get<std::string>();
        e.scene_id = j.at("scene_id").get<std::string>();
        e.trajectory = trajectory_from_json(j.at("trajectory"));
        e.instruction = instruction_from_json(j.at("instruction"));
        e.image_refs = j.at("image_refs").get<std::vector<std::string>>();
        e.damaged_images = j.value("damaged_images", std::set<std::size_t>{});
        const auto& meta = j.at("meta");
        e.meta.engine = meta.at("engine").get<std::string>();
        e.meta.seed = meta.at("seed").get<std::uint64_t>();
        e.meta.timestamps = meta.value("timestamps", std::map<std::string, std::string>{});
        for (const auto& [k, v] : meta.items())
            if (k != "engine" && k != "seed" && k != "timestamps") e.meta.extra[k] = v;
        static const std::unordered_set<std::string> known{"schema_version", "episode_id", "scene_id",
                                                           "trajectory",     "instruction", "image_refs",
                                                           "damaged_images", "meta"};
        for (const auto& [k, v] : j.items())
            if (!known.count(k)) e.extra[k] = v;
        if (e.trajectory.poses.size() != e.trajectory.actions.size() + 1)
            throw ParseError(line, "episode " + e.episode_id + ": pose count must be action count + 1");
        if (e.image_refs.size() != e.trajectory.poses.size())
            throw ParseError(line, "episode " + e.episode_id + ": image_refs must have one entry per pose");
        for (auto idx : e.damaged_images)
            if (idx >= e.image_refs.size()) throw ParseError(line, "damaged image index out of range");
        return e;
    } catch (const ParseError& err) {
        if (err.line() == 0 && line > 0) throw ParseError(line, err.what());
        throw;
    } catch (const nlohmann::json::exception& err) {
        throw ParseError(line, err.what());
    }
}

/// Keys sorted, no whitespace, doubles in shortest round-trip form.
inline std::string canonical_line(const Episode& e) { return episode_to_json(e).dump(); }

// ---------------------------------------------------------------------------
// JSONL I/O

inline std::size_t write_episodes(const std::vector<Episode>& episodes, std::ostream& out) {
    for (const auto& e : episodes) out << canonical_line(e) << '\n';
    return episodes.size();
}

inline std::size_t write_episodes(const std::vector<Episode>& episodes, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    const auto n = write_episodes(episodes, out);
    if (!out) throw Error("write failed: " + path.string());
    return n;
}

inline std::vector<Episode> read_episodes(std::istream& in) {
    std::vector<Episode> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, std::string("malformed JSON: ") + e.what());
        }
        auto ep = episode_from_json(j, lineno);
        if (!seen.insert(ep.episode_id).second)
            throw IntegrityError("line " + std::to_string(lineno) + ": duplicate episode_id " + ep.episode_id);
        out.push_back(std::move(ep));
    }
    return out;
}

inline std::vector<Episode> read_episodes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_episodes(in);
}

// ---------------------------------------------------------------------------
// Filtering

inline constexpr std::size_t kMinActions = 2;
inline constexpr std::size_t kMaxActions = 150;
inline constexpr double kDefaultTreeHeight = 15.0;

struct FilterVerdict {
    bool accepted = true;
    std::string reason;  // too_short, too_long, below_tree_canopy, damaged_image

    static FilterVerdict accept() { return {}; }
    static FilterVerdict reject(std::string why) { return {false, std::move(why)}; }
};

/// Checks run in a fixed order; the first failing rule names the verdict.
/// Without a BEV map the canopy rule is skipped.
inline FilterVerdict filter_episode(const Episode& e, double tree_height = kDefaultTreeHeight,
                                    const BevGrid* bev = nullptr) {
    const auto n = e.trajectory.actions.size();
    if (n < kMinActions) return FilterVerdict::reject("too_short");
    if (n > kMaxActions) return FilterVerdict::reject("too_long");
    if (bev && bev->has_vegetation()) {
        for (const auto& p : e.trajectory.poses)
            if (p.position.z < tree_height && bev->vegetation_at(p.position.x, p.position.y))
                return FilterVerdict::reject("below_tree_canopy");
    }
    if (!e.damaged_images.empty()) return FilterVerdict::reject("damaged_image");
    return FilterVerdict::accept();
}

struct FilterReport {
    std::vector<Episode> accepted;
    std::map<std::string, std::size_t> rejected;  // reason -> count
    std::vector<std::pair<std::string, std::string>> log;  // episode id, reason
};

inline FilterReport filter_dataset(const std::vector<Episode>& episodes, double tree_height = kDefaultTreeHeight,
                                   const BevGrid* bev = nullptr) {
    FilterReport r;
    for (const auto& e : episodes) {
        const auto v = filter_episode(e, tree_height, bev);
        if (v.accepted) {
            r.accepted.push_back(e);
        } else {
            ++r.rejected[v.reason];
            r.log.emplace_back(e.episode_id, v.reason);
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Splitting

enum class SplitName { train, test_seen, test_unseen };

inline constexpr std::array<SplitName, 3> kSplitNames{SplitName::train, SplitName::test_seen, SplitName::test_unseen};

inline std::string to_string(SplitName s) {
    switch (s) {
        case SplitName::train: return "train";
        case SplitName::test_seen: return "test_seen";
        case SplitName::test_unseen: return "test_unseen";
    }
    return "?";
}

struct SceneAssignment {
    std::array<std::set<std::string>, 3> scenes;  // indexed by SplitName

    std::set<std::string>& operator[](SplitName s) { return scenes[static_cast<std::size_t>(s)]; }
    const std::set<std::string>& operator[](SplitName s) const { return scenes[static_cast<std::size_t>(s)]; }

    static SceneAssignment from_json(const nlohmann::json& j) {
        SceneAssignment a;
        for (auto s : kSplitNames) {
            if (!j.contains(to_string(s))) continue;
            for (const auto& id : j.at(to_string(s))) {
                if (!a[s].insert(id.get<std::string>()).second)
                    throw ConfigError("scene " + id.get<std::string>() + " listed twice in " + to_string(s));
            }
        }
        return a;
    }
};

struct DatasetSplit {
    SplitName name = SplitName::train;
    std::set<std::string> scenes;
    std::vector<Episode> episodes;
};

/// Scene-driven partition. Every scene must sit in exactly one allowlist.
inline std::array<DatasetSplit, 3> split_dataset(const std::vector<Episode>& episodes, const SceneAssignment& assign) {
    std::map<std::string, SplitName> owner;
    for (auto s : kSplitNames) {
        for (const auto& scene : assign[s]) {
            auto [it, inserted] = owner.emplace(scene, s);
            if (!inserted)
                throw ConfigError("scene " + scene + " assigned to both " + to_string(it->second) + " and " + to_string(s));
        }
    }
    std::array<DatasetSplit, 3> out;
    for (auto s : kSplitNames) {
        out[static_cast<std::size_t>(s)].name = s;
        out[static_cast<std::size_t>(s)].scenes = assign[s];
    }
    for (const auto& e : episodes) {
        auto it = owner.find(e.scene_id);
        if (it == owner.end()) throw ConfigError("scene " + e.scene_id + " is not assigned to any split");
        out[static_cast<std::size_t>(it->second)].episodes.push_back(e);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Statistics

inline constexpr double kLengthBucket = 50.0;
inline constexpr double kHeightBucket = 10.0;

struct CorpusStats {
    std::size_t episodes = 0;
    std::size_t total_actions = 0;
    std::map<std::string, std::size_t> actions;         // kind name -> count
    std::map<int, std::size_t> forward_granularity;     // metres -> count
    std::map<std::int64_t, std::size_t> length_hist;    // bucket lower edge (m) -> count
    std::map<std::int64_t, std::size_t> height_hist;    // start altitude bucket lower edge (m) -> count
    std::size_t vocab_size = 0;
    std::size_t total_tokens = 0;
    double mean_instruction_length = 0.0;
    std::map<std::string, std::size_t> nouns;
    std::map<std::string, std::size_t> verbs;

    friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

inline std::int64_t bucket_of(double v, double width) { return static_cast<std::int64_t>(std::floor(v / width) * width); }

inline CorpusStats compute_stats(const std::vector<Episode>& episodes) {
    CorpusStats s;
    std::set<std::string> vocab;
    for (const auto& e : episodes) {
        ++s.episodes;
        for (const auto& a : e.trajectory.actions) {
            ++s.total_actions;
            ++s.actions[std::string(kind_name(a.kind))];
            if (a.kind == ActionKind::Forward) ++s.forward_granularity[static_cast<int>(a.magnitude)];
        }
        ++s.length_hist[bucket_of(e.trajectory.length(), kLengthBucket)];
        ++s.height_hist[bucket_of(e.trajectory.start.position.z, kHeightBucket)];
        for (const auto& tok : e.instruction.tokens()) {
            ++s.total_tokens;
            vocab.insert(tok);
            switch (text::tag_word(tok)) {
                case text::Tag::noun: ++s.nouns[tok]; break;
                case text::Tag::verb: ++s.verbs[tok]; break;
                case text::Tag::other: break;
            }
        }
    }
    s.vocab_size = vocab.size();
    if (s.episodes > 0) s.mean_instruction_length = static_cast<double>(s.total_tokens) / static_cast<double>(s.episodes);
    return s;
}

template <class K>
nlohmann::json histogram_json(const std::map<K, std::size_t>& h, double width) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [lo, n] : h) out.push_back({{"lo", lo}, {"hi", static_cast<double>(lo) + width}, {"count", n}});
    return out;
}

inline nlohmann::json stats_to_json(const CorpusStats& s) {
    nlohmann::json gran = nlohmann::json::object();
    for (const auto& [m, n] : s.forward_granularity) gran[std::to_string(m)] = n;
    return {{"episodes", s.episodes},
            {"total_actions", s.total_actions},
            {"actions", s.actions},
            {"forward_granularity", gran},
            {"length_histogram_m", histogram_json(s.length_hist, kLengthBucket)},
            {"height_histogram_m", histogram_json(s.height_hist, kHeightBucket)},
            {"vocab_size", s.vocab_size},
            {"total_tokens", s.total_tokens},
            {"mean_instruction_length", s.mean_instruction_length},
            {"nouns", s.nouns},
            {"verbs", s.verbs}};
}

namespace detail {

inline std::vector<std::pair<std::string, std::size_t>> top_n(const std::map<std::string, std::size_t>& m, std::size_t n) {
    std::vector<std::pair<std::string, std::size_t>> v(m.begin(), m.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (v.size() > n) v.resize(n);
    return v;
}

}  // namespace detail

inline std::string stats_table(const CorpusStats& s) {
    std::ostringstream out;
    out << "episodes " << s.episodes << ", actions " << s.total_actions << ", vocab " << s.vocab_size
        << ", mean instruction length " << s.mean_instruction_length << "\n\naction\tcount\n";
    for (const auto& [k, n] : s.actions) out << k << '\t' << n << '\n';
    out << "\nforward(m)\tcount\n";
    for (const auto& [m, n] : s.forward_granularity) out << m << '\t' << n << '\n';
    out << "\nlength(m)\tcount\n";
    for (const auto& [lo, n] : s.length_hist) out << "[" << lo << ", " << lo + static_cast<std::int64_t>(kLengthBucket) << ")\t" << n << '\n';
    out << "\nheight(m)\tcount\n";
    for (const auto& [lo, n] : s.height_hist) out << "[" << lo << ", " << lo + static_cast<std::int64_t>(kHeightBucket) << ")\t" << n << '\n';
    out << "\ntop nouns:";
    for (const auto& [w, n] : detail::top_n(s.nouns, 10)) out << ' ' << w << '(' << n << ')';
    out << "\ntop verbs:";
    for (const auto& [w, n] : detail::top_n(s.verbs, 10)) out << ' ' << w << '(' << n << ')';
    out << '\n';
    return out.str();
}

}  // namespace aerovln
