#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aerovln/geometry.hpp"

namespace aerovln {

// Structured landmark description as returned by the captioning model.
struct Caption {
    std::string color;
    std::string feature;
    std::string size;
    std::string type;

    friend bool operator==(const Caption&, const Caption&) = default;
};

// Segmented scene object. contour is a closed ring: front() == back().
struct LandmarkInstance {
    int id = 0;
    std::vector<Point2> contour;
    Point2 centroid;
    double height = 0.0;
    double area = 0.0;
    std::optional<Caption> caption;
    // Ground-truth label; only synthesized scenes know it.
    std::optional<std::string> label;

    friend bool operator==(const LandmarkInstance&, const LandmarkInstance&) = default;
};

// Footprint-area size bucket used for captions.
inline std::string size_bucket(double area_m2) {
    if (area_m2 < 200.0) return "small";
    if (area_m2 < 1000.0) return "medium";
    return "large";
}

}  // namespace aerovln
