#include "lodvol/mc_table.hpp"

#include <map>
#include <stdexcept>

#include "lodvol/core.hpp"

namespace lodvol::mc {

namespace {

Vec3 corner_position(int c) { return Vec3{double(c & 1), double((c >> 1) & 1), double((c >> 2) & 1)}; }

std::array<CubeEdge, 12> make_edges() {
    std::array<CubeEdge, 12> edges{};
    int e = 0;
    for (std::uint8_t axis = 0; axis < 3; ++axis) {
        const int bit = 1 << axis;
        for (int c = 0; c < 8; ++c) {
            if (c & bit) continue;
            edges[e++] = CubeEdge{static_cast<std::uint8_t>(c), static_cast<std::uint8_t>(c | bit), axis};
        }
    }
    return edges;
}

int edge_between(int a, int b) {
    const auto& edges = cube_edges();
    for (int e = 0; e < 12; ++e) {
        if ((edges[e].lo == a && edges[e].hi == b) || (edges[e].lo == b && edges[e].hi == a)) return e;
    }
    throw std::logic_error("corners do not share a cube edge");
}

/// Six faces, corners listed counter-clockwise around the outward normal.
std::array<std::array<int, 4>, 6> make_faces() {
    std::array<std::array<int, 4>, 6> faces{};
    int f = 0;
    for (int axis = 0; axis < 3; ++axis) {
        const int u = 1 << ((axis + 1) % 3);
        const int v = 1 << ((axis + 2) % 3);
        for (int side = 0; side < 2; ++side) {
            const int base = side ? (1 << axis) : 0;
            // (0,0) (1,0) (1,1) (0,1) in (u, v) is counter-clockwise around +axis
            std::array<int, 4> ring{base, base | u, base | u | v, base | v};
            if (!side) std::swap(ring[1], ring[3]);
            faces[f++] = ring;
        }
    }
    return faces;
}

bool share_face(int e0, int e1) {
    const auto& edges = cube_edges();
    const CubeEdge& a = edges[e0];
    const CubeEdge& b = edges[e1];
    for (int axis = 0; axis < 3; ++axis) {
        if (axis == a.axis || axis == b.axis) continue;
        if (((a.lo >> axis) & 1) == ((b.lo >> axis) & 1)) return true;
    }
    return false;
}

// A chord between two crossings on the same cube face would lie in that face and be shared
// with the neighbouring cell's surface, so pick a triangulation of the loop that has none.
void triangulate_loop(const std::vector<int>& loop, std::vector<Triangle>& out) {
    const std::size_t n = loop.size();
    constexpr int kInf = 1 << 20;
    std::vector<std::vector<int>> cost(n, std::vector<int>(n, 0));
    std::vector<std::vector<std::size_t>> split(n, std::vector<std::size_t>(n, 0));
    auto chord = [&](std::size_t i, std::size_t j) {
        const bool side = j == i + 1 || (i == 0 && j == n - 1);
        return (!side && share_face(loop[i], loop[j])) ? 1 : 0;
    };
    for (std::size_t len = 2; len < n; ++len) {
        for (std::size_t i = 0; i + len < n; ++i) {
            const std::size_t j = i + len;
            cost[i][j] = kInf;
            for (std::size_t k = i + 1; k < j; ++k) {
                const int c = cost[i][k] + cost[k][j] + chord(i, k) + chord(k, j);
                if (c < cost[i][j]) {
                    cost[i][j] = c;
                    split[i][j] = k;
                }
            }
        }
    }
    if (cost[0][n - 1] != 0) throw std::logic_error("no face-free triangulation of a surface loop");
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, n - 1}};
    while (!stack.empty()) {
        const auto [i, j] = stack.back();
        stack.pop_back();
        if (j < i + 2) continue;
        const std::size_t k = split[i][j];
        out.push_back(Triangle{static_cast<std::uint8_t>(loop[i]), static_cast<std::uint8_t>(loop[k]),
                               static_cast<std::uint8_t>(loop[j])});
        stack.push_back({i, k});
        stack.push_back({k, j});
    }
}

std::vector<Triangle> triangulate(int mask, const std::array<std::array<int, 4>, 6>& faces) {
    // next[entry edge] = exit edge of the same face segment
    std::map<int, int> next;
    for (const auto& ring : faces) {
        std::array<bool, 4> inside{};
        for (int i = 0; i < 4; ++i) inside[i] = (mask >> ring[i]) & 1;
        for (int i = 0; i < 4; ++i) {
            const int prev = (i + 3) % 4;
            if (!inside[i] || inside[prev]) continue;
            int last = i;
            while (inside[(last + 1) % 4]) last = (last + 1) % 4;
            const int entry = edge_between(ring[prev], ring[i]);
            const int exit = edge_between(ring[last], ring[(last + 1) % 4]);
            if (!next.emplace(entry, exit).second) throw std::logic_error("edge entered twice");
        }
    }
    std::vector<Triangle> tris;
    std::map<int, bool> used;
    for (const auto& [start, unused] : next) {
        if (used[start]) continue;
        std::vector<int> loop;
        int e = start;
        do {
            used[e] = true;
            loop.push_back(e);
            e = next.at(e);
        } while (e != start);
        triangulate_loop(loop, tris);
    }
    return tris;
}

Vec3 edge_midpoint(int e) {
    const auto& edge = cube_edges()[e];
    return (corner_position(edge.lo) + corner_position(edge.hi)) * 0.5;
}

std::array<std::vector<Triangle>, 256> make_table() {
    const auto faces = make_faces();
    std::array<std::vector<Triangle>, 256> table;
    for (int mask = 0; mask < 256; ++mask) table[mask] = triangulate(mask, faces);

    // Orient so that a lone interior corner 0 gets a normal pointing away from it.
    const Triangle& t = table[1].at(0);
    const Vec3 n = cross(edge_midpoint(t[1]) - edge_midpoint(t[0]), edge_midpoint(t[2]) - edge_midpoint(t[0]));
    if (dot(n, Vec3{1, 1, 1}) < 0.0) {
        for (auto& tris : table) {
            for (auto& tri : tris) std::swap(tri[1], tri[2]);
        }
    }
    return table;
}

}  // namespace

const std::array<CubeEdge, 12>& cube_edges() {
    static const std::array<CubeEdge, 12> edges = make_edges();
    return edges;
}

const std::array<std::vector<Triangle>, 256>& case_table() {
    static const std::array<std::vector<Triangle>, 256> table = make_table();
    return table;
}

}  // namespace lodvol::mc
