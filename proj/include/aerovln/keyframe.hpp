#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/action.hpp"
#include "aerovln/error.hpp"
#include "aerovln/landmark.hpp"
#include "aerovln/occupancy.hpp"

namespace aerovln {

/// N x D row-major embedding matrix for one frame.
class TokenMatrix {
public:
    TokenMatrix() = default;
    TokenMatrix(std::size_t n, std::size_t d, std::vector<float> data, std::int64_t frame_index = 0)
        : n_(n), d_(d), data_(std::move(data)), frame_index_(frame_index) {
        if (n_ == 0 || d_ == 0) throw ContractViolation("token matrix needs N >= 1 and D >= 1");
        if (data_.size() != n_ * d_) throw ContractViolation("token data size is not N * D");
        for (float v : data_)
            if (!std::isfinite(v)) throw ContractViolation("token matrix entries must be finite");
    }
    TokenMatrix(std::size_t n, std::size_t d, std::int64_t frame_index = 0)
        : TokenMatrix(n, d, std::vector<float>(n * d, 0.0f), frame_index) {}

    std::size_t rows() const { return n_; }
    std::size_t dim() const { return d_; }
    std::int64_t frame_index() const { return frame_index_; }
    void set_frame_index(std::int64_t f) { frame_index_ = f; }

    float* row(std::size_t i) { return data_.data() + i * d_; }
    const float* row(std::size_t i) const { return data_.data() + i * d_; }
    float& at(std::size_t i, std::size_t k) { return data_[i * d_ + k]; }
    float at(std::size_t i, std::size_t k) const { return data_[i * d_ + k]; }
    const std::vector<float>& data() const { return data_; }

    friend bool operator==(const TokenMatrix& a, const TokenMatrix& b) {
        return a.n_ == b.n_ && a.d_ == b.d_ && a.data_ == b.data_;
    }

private:
    std::size_t n_ = 0;
    std::size_t d_ = 0;
    std::vector<float> data_;
    std::int64_t frame_index_ = 0;
};

// ---------------------------------------------------------------------------
// Binary token files: little-endian u64 N, u64 D, then N*D float32.

inline void write_tokens(std::ostream& out, const TokenMatrix& m) {
    static_assert(std::endian::native == std::endian::little, "token files assume a little-endian host");
    const std::uint64_t hdr[2]{m.rows(), m.dim()};
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    out.write(reinterpret_cast<const char*>(m.data().data()), static_cast<std::streamsize>(m.data().size() * sizeof(float)));
}

inline TokenMatrix read_tokens(std::istream& in, std::int64_t frame_index = 0) {
    std::uint64_t hdr[2]{};
    if (!in.read(reinterpret_cast<char*>(hdr), sizeof hdr)) throw ParseError(0, "truncated token header");
    if (hdr[0] == 0 || hdr[1] == 0 || hdr[0] > (1u << 24) || hdr[1] > (1u << 16))
        throw ParseError(0, "implausible token matrix shape");
    std::vector<float> data(hdr[0] * hdr[1]);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float))))
        throw ParseError(0, "truncated token data");
    try {
        return TokenMatrix(hdr[0], hdr[1], std::move(data), frame_index);
    } catch (const ContractViolation& e) {
        throw ParseError(0, e.what());
    }
}

inline void write_tokens(const std::filesystem::path& path, const TokenMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    write_tokens(out, m);
    if (!out) throw Error("cannot write " + path.string());
}

inline TokenMatrix read_tokens(const std::filesystem::path& path, std::int64_t frame_index = 0) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return read_tokens(in, frame_index);
    } catch (const ParseError& e) {
        throw ParseError(0, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Keyframe candidates

struct MemoryBankConfig {
    std::size_t capacity = 2;         // K
    std::size_t pooled_tokens = 1;    // per historical keyframe
    double similarity_threshold = 0.9;
    std::size_t current_tokens = 256;
    std::size_t window = 2;           // candidate frames on each side of a change point

    void validate() const {
        if (capacity < 1) throw ConfigError("memory bank capacity must be at least 1");
        if (pooled_tokens < 1) throw ConfigError("pooled token count must be at least 1");
        if (current_tokens < 1) throw ConfigError("current-frame token count must be at least 1");
        if (!(similarity_threshold > 0.0 && similarity_threshold <= 1.0))
            throw ConfigError("similarity threshold must lie in (0, 1]");
    }
};

inline MemoryBankConfig memory_config_from_json(const nlohmann::json& j) {
    MemoryBankConfig c;
    c.capacity = j.value("capacity", c.capacity);
    c.pooled_tokens = j.value("pooled_tokens", c.pooled_tokens);
    c.similarity_threshold = j.value("similarity_threshold", c.similarity_threshold);
    c.current_tokens = j.value("current_tokens", c.current_tokens);
    c.window = j.value("window", c.window);
    c.validate();
    return c;
}

inline nlohmann::json memory_config_to_json(const MemoryBankConfig& c) {
    return {{"capacity", c.capacity},
            {"pooled_tokens", c.pooled_tokens},
            {"similarity_threshold", c.similarity_threshold},
            {"current_tokens", c.current_tokens},
            {"window", c.window}};
}

struct Candidate {
    std::size_t transition_index = 0;
    std::size_t first_frame = 0;  // inclusive
    std::size_t last_frame = 0;   // inclusive

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Action kinds after the slight-turn rule: a lone turn directly followed by
/// Forward counts as Forward.
inline std::vector<ActionKind> effective_kinds(const std::vector<Action>& actions) {
    std::vector<ActionKind> out;
    out.reserve(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) {
        const auto k = actions[i].kind;
        const bool lone = actions[i].is_turn() && (i == 0 || actions[i - 1].kind != k) &&
                          (i + 1 == actions.size() || actions[i + 1].kind != k);
        const bool merges = lone && i + 1 < actions.size() && actions[i + 1].kind == ActionKind::Forward;
        out.push_back(merges ? ActionKind::Forward : k);
    }
    return out;
}

/// Frame i is the view after i actions, so there are actions.size() + 1 frames.
inline std::vector<Candidate> select_candidates(const std::vector<Action>& actions, std::size_t window) {
    const auto kinds = effective_kinds(actions);
    const std::size_t last = actions.size();
    std::vector<Candidate> out;
    for (std::size_t i = 1; i < kinds.size(); ++i) {
        if (kinds[i] == kinds[i - 1]) continue;
        out.push_back({i, i > window ? i - window : 0, std::min(last, i + window)});
    }
    return out;
}

struct KeyframeSet {
    std::size_t transition_index = 0;
    std::vector<std::size_t> frame_indices;
    std::vector<TokenMatrix> frames;  // filled by attach_tokens

    const TokenMatrix& reference() const {
        if (frames.empty()) throw ContractViolation("keyframe set has no frames");
        return frames.front();
    }
};

using Visibility = std::map<std::size_t, std::set<int>>;

inline std::vector<KeyframeSet> confirm_keyframes(const std::vector<Candidate>& candidates, const Visibility& visibility) {
    std::vector<KeyframeSet> out;
    for (const auto& c : candidates) {
        KeyframeSet ks;
        ks.transition_index = c.transition_index;
        for (std::size_t f = c.first_frame; f <= c.last_frame; ++f) {
            auto it = visibility.find(f);
            if (it == visibility.end()) throw ContractViolation("no visibility entry for frame " + std::to_string(f));
            if (!it->second.empty()) ks.frame_indices.push_back(f);
        }
        if (!ks.frame_indices.empty()) out.push_back(std::move(ks));
    }
    return out;
}

inline void attach_tokens(KeyframeSet& ks, const std::vector<TokenMatrix>& frames) {
    ks.frames.clear();
    for (auto f : ks.frame_indices) {
        if (f >= frames.size()) throw ContractViolation("frame " + std::to_string(f) + " has no tokens");
        ks.frames.push_back(frames[f]);
    }
}

// ---------------------------------------------------------------------------
// Landmark visibility from scene geometry

struct VisibilityConfig {
    double half_fov_deg = 60.0;
    double max_range = 300.0;
    double sample_step = 0.5;
    double footprint_tolerance = 3.5;  // safety margin plus one and a half cells
};

inline double distance_to_ring(const Point2& p, const std::vector<Point2>& ring) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const auto& a = ring[i];
        const auto& b = ring[i + 1];
        const double dx = b.x - a.x, dy = b.y - a.y;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        best = std::min(best, distance(p, Point2{a.x + t * dx, a.y + t * dy}));
    }
    if (ring.size() == 1) best = distance(p, ring[0]);
    return best;
}

inline bool near_footprint(const Point2& p, const LandmarkInstance& lm, double tol) {
    if (lm.contour.size() >= 4 && point_in_polygon(p, lm.contour)) return true;
    return distance_to_ring(p, lm.contour) <= tol;
}

/// A landmark is visible when its centroid lies inside the horizontal field
/// of view and the sight line towards it is first blocked by the landmark
/// itself (or not at all).
inline bool landmark_visible(const Pose& pose, const LandmarkInstance& lm, const VoxelGrid& grid,
                             const VisibilityConfig& cfg = {}) {
    const Point2 eye{pose.position.x, pose.position.y};
    const double range = distance(eye, lm.centroid);
    if (range > cfg.max_range) return false;
    if (range > 0.0) {
        const auto h = heading_vector(pose.yaw);
        const double cos_angle = (h.x * (lm.centroid.x - eye.x) + h.y * (lm.centroid.y - eye.y)) / range;
        if (cos_angle < std::cos(cfg.half_fov_deg * std::numbers::pi / 180.0) - 1e-12) return false;
    }
    const Point3 target{lm.centroid.x, lm.centroid.y, std::min(pose.position.z, std::max(0.5, lm.height - 1.0))};
    const double len = distance(pose.position, target);
    const int steps = std::max(1, static_cast<int>(std::ceil(len / cfg.sample_step)));
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const Point3 p = pose.position + (target - pose.position) * t;
        if (!is_free(grid, p)) return near_footprint({p.x, p.y}, lm, cfg.footprint_tolerance);
    }
    return true;
}

inline Visibility compute_visibility(const std::vector<Pose>& poses, const std::vector<LandmarkInstance>& landmarks,
                                     const VoxelGrid& grid, const VisibilityConfig& cfg = {}) {
    Visibility vis;
    for (std::size_t f = 0; f < poses.size(); ++f) {
        auto& seen = vis[f];
        for (const auto& lm : landmarks)
            if (landmark_visible(poses[f], lm, grid, cfg)) seen.insert(lm.id);
    }
    return vis;
}

// ---------------------------------------------------------------------------
// Token merging

struct MergeEvent {
    std::int64_t frame_index = 0;
    std::size_t running_token = 0;
    std::size_t frame_token = 0;
    double similarity = 0.0;
};

inline double cosine(const float* a, const float* b, std::size_t d) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        ab += static_cast<double>(a[k]) * b[k];
        aa += static_cast<double>(a[k]) * a[k];
        bb += static_cast<double>(b[k]) * b[k];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

/// Folds every later frame of the set into the reference: pairs above the
/// threshold are matched greedily by descending similarity (ties to the lower
/// running index, then the lower frame index), matched running tokens become
/// the mean of everything merged into them, unmatched frame tokens are dropped.
inline TokenMatrix merge_tokens(const KeyframeSet& set, double threshold, std::vector<MergeEvent>* log = nullptr) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ContractViolation("merge threshold must lie in (0, 1]");
    TokenMatrix running = set.reference();
    const std::size_t n = running.rows(), d = running.dim();
    std::vector<std::uint32_t> count(n, 1);

    struct Pair {
        double sim;
        std::size_t i, j;
    };
    std::vector<Pair> pairs;
    for (std::size_t f = 1; f < set.frames.size(); ++f) {
        const auto& frame = set.frames[f];
        if (frame.dim() != d) throw ContractViolation("all frames of a keyframe set must share D");
        pairs.clear();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < frame.rows(); ++j) {
                const double s = cosine(running.row(i), frame.row(j), d);
                if (s > threshold) pairs.push_back({s, i, j});
            }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
            if (a.sim != b.sim) return a.sim > b.sim;
            if (a.i != b.i) return a.i < b.i;
            return a.j < b.j;
        });
        std::vector<char> used_i(n, 0), used_j(frame.rows(), 0);
        for (const auto& p : pairs) {
            if (used_i[p.i] || used_j[p.j]) continue;
            used_i[p.i] = used_j[p.j] = 1;
            const float c = static_cast<float>(++count[p.i]);
            float* dst = running.row(p.i);
            const float* src = frame.row(p.j);
            for (std::size_t k = 0; k < d; ++k) dst[k] += (src[k] - dst[k]) / c;
            if (log) log->push_back({frame.frame_index(), p.i, p.j, p.sim});
        }
    }
    return running;
}

// ---------------------------------------------------------------------------
// Grid pooling

/// Averages tokens into out_tokens groups. When both N and out_tokens are
/// perfect squares the tokens are read as a square grid and pooled in 2D
/// blocks; otherwise contiguous runs of the row order are pooled. Group edges
/// are floor(k * size / groups), so groups are equal whenever sizes divide.
inline TokenMatrix grid_pool(const TokenMatrix& m, std::size_t out_tokens) {
    const std::size_t n = m.rows(), d = m.dim();
    if (out_tokens < 1 || out_tokens > n) throw ContractViolation("grid_pool needs 1 <= out_tokens <= N");
    auto isqrt = [](std::size_t v) {
        auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(v))));
        return r * r == v ? r : std::size_t{0};
    };
    auto edge = [](std::size_t k, std::size_t size, std::size_t groups) { return k * size / groups; };

    TokenMatrix out(out_tokens, d, m.frame_index());
    std::vector<double> acc(d);
    auto emit = [&](std::size_t g, const std::vector<std::size_t>& rows) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (auto r : rows)
            for (std::size_t k = 0; k < d; ++k) acc[k] += m.at(r, k);
        for (std::size_t k = 0; k < d; ++k) out.at(g, k) = static_cast<float>(acc[k] / static_cast<double>(rows.size()));
    };

    const std::size_t side = isqrt(n), gside = isqrt(out_tokens);
    std::vector<std::size_t> rows;
    if (side && gside) {
        for (std::size_t gy = 0; gy < gside; ++gy)
            for (std::size_t gx = 0; gx < gside; ++gx) {
                rows.clear();
                for (std::size_t y = edge(gy, side, gside); y < edge(gy + 1, side, gside); ++y)
                    for (std::size_t x = edge(gx, side, gside); x < edge(gx + 1, side, gside); ++x) rows.push_back(y * side + x);
                emit(gy * gside + gx, rows);
            }
        return out;
    }
    for (std::size_t g = 0; g < out_tokens; ++g) {
        rows.clear();
        for (std::size_t r = edge(g, n, out_tokens); r < edge(g + 1, n, out_tokens); ++r) rows.push_back(r);
        emit(g, rows);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Memory bank

using MemoryBank = std::deque<TokenMatrix>;  // oldest first

inline void memory_push(MemoryBank& bank, TokenMatrix keyframe, const MemoryBankConfig& cfg) {
    if (keyframe.rows() != cfg.pooled_tokens)
        throw ContractViolation("keyframe must be pooled to " + std::to_string(cfg.pooled_tokens) + " tokens");
    bank.push_back(std::move(keyframe));
    while (bank.size() > cfg.capacity) bank.pop_front();
}

inline TokenMatrix assemble_observation(const MemoryBank& bank, const TokenMatrix& current, const MemoryBankConfig& cfg) {
    if (current.rows() != cfg.current_tokens)
        throw ContractViolation("current frame must have " + std::to_string(cfg.current_tokens) + " tokens");
    const std::size_t d = current.dim();
    std::vector<float> data;
    std::size_t rows = 0;
    for (const auto& kf : bank) {
        if (kf.dim() != d) throw ContractViolation("memory bank and current frame disagree on D");
        if (kf.rows() != cfg.pooled_tokens) throw ContractViolation("memory bank entry has the wrong token count");
        data.insert(data.end(), kf.data().begin(), kf.data().end());
        rows += kf.rows();
    }
    data.insert(data.end(), current.data().begin(), current.data().end());
    rows += current.rows();
    return TokenMatrix(rows, d, std::move(data), current.frame_index());
}

struct ObservationResult {
    TokenMatrix observation;
    std::vector<KeyframeSet> keyframes;
    std::vector<MergeEvent> merges;
    MemoryBank bank;
};

/// Runs candidates, confirmation, merging, pooling and the bank over a whole
/// trajectory; the last frame is the current observation.
inline ObservationResult compress_trajectory(const std::vector<Action>& actions, const Visibility& visibility,
                                             const std::vector<TokenMatrix>& frames, const MemoryBankConfig& cfg) {
    cfg.validate();
    if (frames.size() != actions.size() + 1) throw ContractViolation("need one token matrix per frame");
    ObservationResult res;
    res.keyframes = confirm_keyframes(select_candidates(actions, cfg.window), visibility);
    for (auto& ks : res.keyframes) {
        attach_tokens(ks, frames);
        const auto merged = merge_tokens(ks, cfg.similarity_threshold, &res.merges);
        memory_push(res.bank, grid_pool(merged, std::min(cfg.pooled_tokens, merged.rows())), cfg);
    }
    res.observation = assemble_observation(res.bank, frames.back(), cfg);
    return res;
}

inline nlohmann::json merge_log_json(const std::vector<MergeEvent>& events) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : events)
        out.push_back({{"frame", e.frame_index}, {"running_token", e.running_token}, {"frame_token", e.frame_token},
                       {"similarity", e.similarity}});
    return out;
}

}  // namespace aerovln
