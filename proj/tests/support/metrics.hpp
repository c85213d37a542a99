#pragma once

#include <gtest/gtest.h>
#include <cmath>
#include <random>
#include "aerovln/eval.hpp"
#include "aerovln/trajgen.hpp"

namespace support {

using namespace aerovln;

inline VoxelGrid open_grid() {
    GridFrame f;
    f.origin = {-100, -100, 0};
    f.voxel_size = 1.0;
    f.dims = {200, 200, 60};
    return VoxelGrid(f);
}

inline ReplayResult path_result(const std::vector<Point3>& positions) {
    ReplayResult r;
    for (const auto& p : positions) r.poses.push_back({p, 0});
    for (std::size_t i = 1; i < positions.size(); ++i) r.executed_length += distance(positions[i - 1], positions[i]);
    r.final_pose = r.poses.back();
    r.stopped = true;
    return r;
}

struct FixtureEpisode {
    Point3 goal;
    std::vector<Point3> path;
    double gt;
};

// Expected aggregates were computed separately from the same table.
inline const std::vector<FixtureEpisode> kFixture{
        {{20, -17, 34}, {{-35, 53, 32}, {-8, 36, 31}, {25, -20, 34}, {31, -14, 34}}, 126},
        {{27, 38, -13}, {{9, 30, -18}, {6, -51, 33}, {39, 50, -34}, {28, 36, 33}}, 139},
        {{-22, 28, -13}, {{-53, 38, -16}, {20, -7, -1}, {-45, 32, 35}, {-43, 37, -19}, {-11, -18, -16}}, 71},
        {{1, 14, 13}, {{12, -33, 55}, {51, -8, -31}, {-34, -55, 35}, {-3, 18, 13}}, 165},
        {{13, 38, -26}, {{48, 23, 17}, {39, -31, -30}, {-1, -14, -43}, {-35, -13, 3}}, 172},
        {{40, -22, -7}, {{19, -17, -18}, {60, 30, 31}, {-1, 50, -39}, {27, 29, 38}, {50, -44, -18}}, 72},
        {{34, -32, -28}, {{-60, 55, -41}, {-4, 30, -30}, {28, -35, -30}}, 197},
        {{19, 37, -7}, {{7, 52, -5}, {24, -7, -35}, {24, 34, -7}, {-22, -25, -43}, {12, 24, 33}}, 84},
        {{27, -28, 23}, {{54, -35, 40}, {-11, -38, 5}, {48, -32, -20}}, 110},
        {{-35, 34, 29}, {{59, 34, 32}, {21, -51, -45}, {-31, -53, 6}, {-44, 60, 46}, {-28, 24, 32}}, 64},
        {{-10, 22, 34}, {{-40, -49, -44}, {19, -47, 43}, {60, 16, 11}}, 174},
        {{40, -37, 36}, {{11, -37, 9}, {29, -20, -60}}, 51},
        {{-5, -37, -17}, {{-47, 21, 49}, {6, -43, -13}}, 73},
        {{-16, 19, -17}, {{-20, -26, 33}, {-2, 21, -4}, {46, 31, 43}, {45, -33, -9}, {15, 50, -3}}, 127},
        {{36, -23, -14}, {{-21, -10, -35}, {41, -26, -14}, {-2, 27, -59}}, 50},
        {{2, -40, -12}, {{24, -56, -33}, {17, -1, 10}, {3, 10, 43}, {-54, -5, -18}, {7, -44, -7}}, 60},
        {{-12, 37, -27}, {{-52, 52, -43}, {-38, -57, 50}, {-17, -21, 57}, {-28, 3, -40}, {-14, 46, -1}}, 131},
        {{22, 38, 1}, {{-56, 38, -45}, {-45, -14, -6}, {21, -37, 4}}, 200},
        {{-28, -34, 15}, {{43, 56, 53}, {-37, -36, 18}}, 165},
        {{-23, -13, 32}, {{-5, -47, 60}, {16, 30, 29}}, 88},
        {{15, 31, -20}, {{60, -60, 5}, {-45, -35, -12}, {8, 13, -8}}, 134},
        {{33, -18, -9}, {{55, 44, -25}, {15, -15, -3}, {38, -21, -9}, {31, -14, -6}}, 78},
        {{-10, 5, -11}, {{40, -1, 13}, {-21, -24, 26}, {27, 58, -36}, {-1, 22, 9}, {-54, -28, -12}}, 186},
        {{-14, -7, 12}, {{23, -20, -24}, {28, 8, 43}, {60, -43, 37}}, 43},
        {{24, -12, 19}, {{-23, -29, 22}, {6, -11, 34}, {-24, -37, 54}, {23, -24, 23}}, 185},
        {{8, -32, -23}, {{-6, 18, -19}, {-36, 38, -51}}, 168},
        {{-8, -36, -7}, {{60, 49, 42}, {-5, -39, -36}, {31, 0, 45}}, 88},
        {{-32, 19, -25}, {{15, -26, -44}, {-26, 27, -29}}, 77},
        {{34, -10, -19}, {{23, 54, -43}, {44, 28, 59}, {39, -13, -19}, {-47, -44, -17}}, 125},
        {{2, 40, 2}, {{-58, 17, -25}, {-12, -43, 12}, {-26, -39, 4}}, 85},
        {{-13, 30, -24}, {{34, 9, -36}, {-44, 44, -44}, {26, 28, -31}, {-28, -57, 21}, {-12, 34, -23}}, 28},
        {{20, -21, -5}, {{-1, -16, -23}, {1, 53, 26}, {14, -3, 56}, {10, 22, -56}}, 194},
        {{-4, -17, 9}, {{21, -14, 4}, {2, -14, 60}, {-40, -52, 4}, {34, 10, -26}, {-35, -37, -4}}, 139},
        {{1, 39, -40}, {{34, -46, -6}, {-54, -24, 36}, {11, 29, -35}}, 142},
        {{19, -14, 27}, {{25, 21, 24}, {-20, 23, 5}, {21, -22, 2}}, 95},
        {{34, -33, -13}, {{31, -29, -21}, {23, -20, -28}, {39, -36, -13}, {19, 8, 41}, {9, -27, -16}}, 108},
        {{-21, -34, 4}, {{19, -20, 36}, {-24, -32, 7}}, 32},
        {{-20, -28, 21}, {{-10, -54, -8}, {-35, 27, -43}, {-43, -14, -59}, {-3, -14, 36}}, 126},
        {{-9, -25, 3}, {{-19, -60, 34}, {26, 16, 46}, {43, 6, -8}, {31, 20, 39}, {-4, -35, -44}}, 49},
        {{25, 12, 23}, {{3, -3, 33}, {-32, 58, -55}, {48, 29, -3}, {47, 24, 21}, {21, 24, 19}}, 114},
        {{40, 28, 6}, {{-19, 53, 41}, {1, 17, 15}}, 141},
        {{-5, 12, 8}, {{55, -46, -58}, {-29, 49, 7}, {55, 58, 31}, {30, 54, -6}}, 61},
        {{-21, -16, -39}, {{-26, -53, -47}, {-16, -19, -39}}, 39},
        {{-21, -35, -8}, {{-50, 7, -13}, {11, -39, -47}, {-14, -28, 40}, {-59, 43, 43}}, 167},
        {{25, 28, 15}, {{19, 36, -29}, {40, -56, 26}, {38, -42, 37}, {51, -15, -26}, {9, -60, -2}}, 82},
        {{6, 16, -33}, {{-34, -17, -52}, {15, 39, -45}, {17, 6, -35}}, 20},
        {{-30, -20, 40}, {{-34, 52, 29}, {-35, -31, 0}, {46, -8, 19}, {14, -50, 38}, {23, -7, 37}}, 155},
        {{9, 26, -6}, {{-29, -14, 34}, {-35, -41, 1}, {-58, 28, 32}}, 52},
        {{-5, 12, -10}, {{-9, 46, 27}, {-40, -11, -12}, {-4, 58, 13}, {21, -45, 33}, {2, 4, -10}}, 50},
        {{40, 6, -30}, {{3, -45, 14}, {-36, -44, 6}, {45, 3, -30}, {-47, 17, 17}}, 122},
};
inline constexpr double kFixtureNe = 43.18577887487771;
inline constexpr double kFixtureSr = 0.34;
inline constexpr double kFixtureOsr = 0.46;
inline constexpr double kFixtureSpl = 0.2099226895172924;

inline void expect_rel(double got, double want) { EXPECT_LE(std::abs(got - want), 1e-9 * std::max(1.0, std::abs(want))); }

}  // namespace support
