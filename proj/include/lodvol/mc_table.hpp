#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace lodvol::mc {

/// Cube corner c sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
struct CubeEdge {
    std::uint8_t lo = 0;  // corner with the smaller coordinate along `axis`
    std::uint8_t hi = 0;
    std::uint8_t axis = 0;
};

/// Edges 0-3 run along x, 4-7 along y, 8-11 along z.
const std::array<CubeEdge, 12>& cube_edges();

using Triangle = std::array<std::uint8_t, 3>;  // cube edge indices

/// Triangulation per corner sign mask (bit c set = corner c is interior). Ambiguous faces
/// always separate the interior corners, so two cells sharing a face agree on its crossing
/// segments and the surface is closed across cells. Triangles wind counter-clockwise when
/// seen from the exterior.
const std::array<std::vector<Triangle>, 256>& case_table();

}  // namespace lodvol::mc
