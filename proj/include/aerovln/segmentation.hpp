#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aerovln/error.hpp"
#include "aerovln/geometry.hpp"
#include "aerovln/landmark.hpp"
#include "aerovln/occupancy.hpp"
#include "aerovln/scene.hpp"
#include "aerovln/strings.hpp"
#include "aerovln/vlm.hpp"

namespace aerovln {

// Captioning reply never parsed into the four-field record.
class CaptionError : public Error {
public:
    CaptionError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
    const std::string& raw_reply() const { return raw_; }

private:
    std::string raw_;
};

struct CellIndex {
    std::int64_t i = 0;
    std::int64_t j = 0;
    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// 4-connected labeling of occupied BEV cells. Labels are assigned in raster
/// order (row j ascending, then i) of each component's first cell; -1 is free.
struct ComponentLabels {
    std::int64_t nx = 0;
    std::int64_t ny = 0;
    std::vector<int> label;
    std::vector<std::vector<CellIndex>> cells;  // per label, in BFS order

    int at(std::int64_t i, std::int64_t j) const {
        if (i < 0 || j < 0 || i >= nx || j >= ny) return -1;
        return label[static_cast<std::size_t>(i + nx * j)];
    }
};

inline ComponentLabels label_components(const BevGrid& bev) {
    ComponentLabels out;
    out.nx = bev.nx();
    out.ny = bev.ny();
    out.label.assign(static_cast<std::size_t>(out.nx * out.ny), -1);
    std::deque<CellIndex> queue;
    for (std::int64_t j = 0; j < out.ny; ++j) {
        for (std::int64_t i = 0; i < out.nx; ++i) {
            if (!bev.occupied(i, j) || out.at(i, j) >= 0) continue;
            const int id = static_cast<int>(out.cells.size());
            out.cells.emplace_back();
            out.label[bev.linear(i, j)] = id;
            queue.push_back({i, j});
            while (!queue.empty()) {
                const auto c = queue.front();
                queue.pop_front();
                out.cells[id].push_back(c);
                static constexpr std::array<std::array<int, 2>, 4> kNeighbors{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
                for (const auto& [di, dj] : kNeighbors) {
                    const std::int64_t ni = c.i + di, nj = c.j + dj;
                    if (!bev.in_bounds(ni, nj) || !bev.occupied(ni, nj) || out.at(ni, nj) >= 0) continue;
                    out.label[bev.linear(ni, nj)] = id;
                    queue.push_back({ni, nj});
                }
            }
        }
    }
    return out;
}

// Moore neighborhood, counterclockwise with y pointing up, starting east.
inline constexpr std::array<std::array<int, 2>, 8> kMoore{
    {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};

inline int moore_index(std::int64_t di, std::int64_t dj) {
    for (int k = 0; k < 8; ++k)
        if (kMoore[k][0] == di && kMoore[k][1] == dj) return k;
    throw ContractViolation("cells are not 8-adjacent");
}

/// Outer boundary of one component as a closed cell sequence (front == back).
/// Starts at the component's first cell in raster order with the west
/// neighbour as backtrack, sweeps counterclockwise, and stops when the
/// start-to-second-cell move is about to repeat.
inline std::vector<CellIndex> trace_boundary(const ComponentLabels& labels, int id) {
    const auto& cells = labels.cells.at(static_cast<std::size_t>(id));
    CellIndex start = cells.front();
    for (const auto& c : cells)
        if (c.j < start.j || (c.j == start.j && c.i < start.i)) start = c;

    std::vector<CellIndex> contour{start};
    CellIndex cur = start;
    int back = 4;
    const std::size_t limit = 4 * cells.size() + 8;
    while (contour.size() <= limit) {
        int found = -1;
        for (int step = 1; step < 8; ++step) {
            const int k = (back + step) % 8;
            if (labels.at(cur.i + kMoore[k][0], cur.j + kMoore[k][1]) == id) {
                found = k;
                break;
            }
        }
        if (found < 0) break;  // isolated cell
        const CellIndex next{cur.i + kMoore[found][0], cur.j + kMoore[found][1]};
        if (cur == start && contour.size() > 1 && next == contour[1]) break;
        const int prev = (found + 7) % 8;
        const CellIndex prev_cell{cur.i + kMoore[prev][0], cur.j + kMoore[prev][1]};
        back = moore_index(prev_cell.i - next.i, prev_cell.j - next.j);
        contour.push_back(next);
        cur = next;
    }
    if (contour.size() == 1 || !(contour.back() == start)) contour.push_back(start);
    return contour;
}

/// One landmark per 4-connected component with area >= min_area. Components
/// narrower than two cells can produce contours that revisit cells; captions
/// are left unset.
inline std::vector<LandmarkInstance> extract_instances(const BevGrid& bev, double min_area) {
    if (!(min_area >= 0.0)) throw ContractViolation("min_area must be >= 0");
    const auto labels = label_components(bev);
    const double cell_area = bev.cell_size() * bev.cell_size();
    std::vector<LandmarkInstance> out;
    for (std::size_t id = 0; id < labels.cells.size(); ++id) {
        const auto& cells = labels.cells[id];
        const double area = static_cast<double>(cells.size()) * cell_area;
        if (area < min_area) continue;
        LandmarkInstance inst;
        inst.id = static_cast<int>(out.size());
        inst.area = area;
        double sx = 0.0, sy = 0.0;
        for (const auto& c : cells) {
            const auto p = bev.cell_center(c.i, c.j);
            sx += p.x;
            sy += p.y;
            inst.height = std::max(inst.height, bev.max_height(c.i, c.j));
        }
        inst.centroid = {sx / static_cast<double>(cells.size()), sy / static_cast<double>(cells.size())};
        for (const auto& c : trace_boundary(labels, static_cast<int>(id))) inst.contour.push_back(bev.cell_center(c.i, c.j));
        out.push_back(std::move(inst));
    }
    return out;
}

/// Copies ground-truth labels onto extracted instances whose centroid falls
/// inside a building footprint or tree canopy. Everything else is labeled "building".
inline void assign_labels(std::vector<LandmarkInstance>& instances, const SceneSpec& spec) {
    for (auto& inst : instances) {
        inst.label = "building";
        for (const auto& b : spec.buildings) {
            if (point_in_polygon(inst.centroid, b.footprint)) {
                inst.label = b.label;
                break;
            }
        }
        for (const auto& t : spec.trees)
            if (distance(inst.centroid, t.position) <= t.radius) inst.label = kTreeLabel;
    }
}

// ---------------------------------------------------------------------------
// Captions

namespace detail {

inline std::string json_field_text(const nlohmann::json& v) {
    if (v.is_string()) return std::string(trim(v.get<std::string>()));
    if (v.is_array()) {
        std::string s;
        for (const auto& e : v) {
            if (!s.empty()) s += ", ";
            s += json_field_text(e);
        }
        return s;
    }
    if (v.is_null()) return {};
    return v.dump();
}

inline std::optional<Caption> caption_from_json_text(const std::string& text) {
    const auto open = text.find('{');
    const auto close = text.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) return std::nullopt;
    const auto j = nlohmann::json::parse(text.begin() + static_cast<std::ptrdiff_t>(open),
                                         text.begin() + static_cast<std::ptrdiff_t>(close) + 1, nullptr, false);
    if (!j.is_object()) return std::nullopt;
    Caption c;
    std::array<std::pair<const char*, std::string*>, 4> fields{
        {{"color", &c.color}, {"feature", &c.feature}, {"size", &c.size}, {"type", &c.type}}};
    for (auto& [key, dst] : fields) {
        auto it = j.find(key);
        if (it == j.end()) return std::nullopt;
        *dst = json_field_text(*it);
        if (dst->empty()) return std::nullopt;
    }
    return c;
}

inline std::string clean_value(std::string v) {
    v = std::string(trim(v));
    while (!v.empty() && (v.back() == ',' || v.back() == '.' || v.back() == ';' || v.back() == '"' || v.back() == '\''))
        v.pop_back();
    while (!v.empty() && (v.front() == '"' || v.front() == '\'')) v.erase(v.begin());
    return std::string(trim(v));
}

// "color: blue, feature: Steel, glass, size: medium size, type: building"
inline std::optional<Caption> caption_from_pairs(const std::string& text) {
    const auto lower = to_lower(text);
    static constexpr std::array<const char*, 4> kKeys{"color", "feature", "size", "type"};
    std::array<std::size_t, 4> key_pos{}, value_pos{};
    for (std::size_t k = 0; k < kKeys.size(); ++k) {
        const std::string key = kKeys[k];
        std::size_t found = std::string::npos;
        for (std::size_t p = lower.find(key); p != std::string::npos; p = lower.find(key, p + 1)) {
            if (p > 0 && std::isalpha(static_cast<unsigned char>(lower[p - 1]))) continue;
            std::size_t q = p + key.size();
            while (q < lower.size() && (lower[q] == ' ' || lower[q] == '"' || lower[q] == '\'')) ++q;
            if (q < lower.size() && lower[q] == ':') {
                found = p;
                value_pos[k] = q + 1;
                break;
            }
        }
        if (found == std::string::npos) return std::nullopt;
        key_pos[k] = found;
    }
    Caption c;
    std::array<std::string*, 4> dst{&c.color, &c.feature, &c.size, &c.type};
    for (std::size_t k = 0; k < kKeys.size(); ++k) {
        std::size_t end = text.size();
        for (std::size_t o = 0; o < kKeys.size(); ++o)
            if (key_pos[o] >= value_pos[k] && key_pos[o] < end) end = key_pos[o];
        *dst[k] = clean_value(text.substr(value_pos[k], end - value_pos[k]));
        if (dst[k]->empty()) return std::nullopt;
    }
    return c;
}

}  // namespace detail

/// Accepts a JSON object or "key: value" pairs; nullopt when any field is missing.
inline std::optional<Caption> parse_caption(const std::string& reply) {
    if (auto c = detail::caption_from_json_text(reply)) return c;
    return detail::caption_from_pairs(reply);
}

inline VlmRequest caption_request(const LandmarkInstance& inst, const std::vector<std::string>& view_refs) {
    VlmRequest req;
    req.task = VlmTask::landmark_caption;
    req.messages.push_back({"system", prompts::kCaptionSystem, {}});
    req.messages.push_back({"user", prompts::kCaptionUser, view_refs});
    req.mock_context = {{"label", inst.label.value_or("building")}, {"area", inst.area}};
    return req;
}

inline LandmarkInstance caption_instance(const LandmarkInstance& inst, const std::vector<std::string>& view_refs,
                                         VlmClient& vlm, int max_retries = 2) {
    const auto req = caption_request(inst, view_refs);
    std::string raw;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        raw = vlm.complete(req);
        if (auto c = parse_caption(raw)) {
            auto out = inst;
            out.caption = *c;
            return out;
        }
    }
    throw CaptionError("caption reply lacks color/feature/size/type", raw);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json caption_to_json(const Caption& c) {
    return {{"color", c.color}, {"feature", c.feature}, {"size", c.size}, {"type", c.type}};
}

inline Caption caption_from_json(const nlohmann::json& j) {
    return {j.at("color").get<std::string>(), j.at("feature").get<std::string>(), j.at("size").get<std::string>(),
            j.at("type").get<std::string>()};
}

inline nlohmann::json instance_to_json(const LandmarkInstance& inst) {
    nlohmann::json contour = nlohmann::json::array();
    for (const auto& p : inst.contour) contour.push_back({p.x, p.y});
    nlohmann::json j{{"id", inst.id},
                     {"contour", contour},
                     {"centroid", {inst.centroid.x, inst.centroid.y}},
                     {"height", inst.height},
                     {"area", inst.area}};
    if (inst.caption) j["caption"] = caption_to_json(*inst.caption);
    if (inst.label) j["label"] = *inst.label;
    return j;
}

inline LandmarkInstance instance_from_json(const nlohmann::json& j) {
    LandmarkInstance inst;
    inst.id = j.at("id").get<int>();
    for (const auto& p : j.at("contour")) inst.contour.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    inst.centroid = {j.at("centroid").at(0).get<double>(), j.at("centroid").at(1).get<double>()};
    inst.height = j.at("height").get<double>();
    inst.area = j.at("area").get<double>();
    if (j.contains("caption")) inst.caption = caption_from_json(j.at("caption"));
    if (j.contains("label")) inst.label = j.at("label").get<std::string>();
    return inst;
}

inline nlohmann::json instances_to_json(const std::vector<LandmarkInstance>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& inst : v) a.push_back(instance_to_json(inst));
    return a;
}

inline std::vector<LandmarkInstance> instances_from_json(const nlohmann::json& j) {
    std::vector<LandmarkInstance> v;
    for (const auto& e : j) v.push_back(instance_from_json(e));
    return v;
}

}  // namespace aerovln
