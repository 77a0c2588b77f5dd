#include <array>
#include <cstdint>
#include <vector>

#include "avatar/geometry.hpp"

namespace avatar::geometry {

namespace {

#include "mc_tables.inc"

// Corner i of a cell sits at (ix, iy, iz) + kCorner[i].
constexpr std::array<std::array<int, 3>, 8> kCorner = {{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
}};

constexpr std::array<std::array<int, 2>, 12> kEdgeCorners = {{
    {0, 1}, {1, 2}, {3, 2}, {0, 3},
    {4, 5}, {5, 6}, {7, 6}, {4, 7},
    {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

}  // namespace

Mesh marching_cubes(const ScalarGrid& grid, double iso) {
    grid.validate();
    Mesh mesh;
    const std::size_t n = grid.size();
    // Vertex ids keyed by grid edge (3 per grid point, one per axis) plus one
    // slot per grid point for crossings that land exactly on a corner.
    std::vector<std::int32_t> slot(4 * n, -1);

    auto corner_id = [&](int x, int y, int z) { return grid.index(x, y, z); };

    auto vertex_for = [&](int x0, int y0, int z0, int x1, int y1, int z1) -> std::uint32_t {
        // Orient so (x0,y0,z0) is the lower corner; the edge is then keyed by
        // that corner and the axis it runs along.
        if (x1 < x0 || y1 < y0 || z1 < z0) {
            std::swap(x0, x1);
            std::swap(y0, y1);
            std::swap(z0, z1);
        }
        const std::size_t a = corner_id(x0, y0, z0), b = corner_id(x1, y1, z1);
        const double va = grid.values[a], vb = grid.values[b];
        const double t = (iso - va) / (vb - va);
        std::size_t key;
        Vec3 p;
        if (t <= 0.0) {
            key = 3 * n + a;
            p = grid.position(x0, y0, z0);
        } else if (t >= 1.0) {
            key = 3 * n + b;
            p = grid.position(x1, y1, z1);
        } else {
            const int axis = x1 != x0 ? 0 : (y1 != y0 ? 1 : 2);
            key = 3 * a + axis;
            const Vec3 pa = grid.position(x0, y0, z0), pb = grid.position(x1, y1, z1);
            p = pa + t * (pb - pa);
        }
        if (slot[key] < 0) {
            slot[key] = static_cast<std::int32_t>(mesh.vertices.size());
            mesh.vertices.push_back(p);
        }
        return static_cast<std::uint32_t>(slot[key]);
    };

    for (int ix = 0; ix + 1 < grid.nx; ++ix)
        for (int iy = 0; iy + 1 < grid.ny; ++iy)
            for (int iz = 0; iz + 1 < grid.nz; ++iz) {
                int mask = 0;
                for (int c = 0; c < 8; ++c)
                    if (!(grid.at(ix + kCorner[c][0], iy + kCorner[c][1], iz + kCorner[c][2]) > iso))
                        mask |= 1 << c;
                if (mask == 0 || mask == 255) continue;

                const auto& row = kTriTable[mask];
                for (int i = 0; row[i] >= 0; i += 3) {
                    std::array<std::uint32_t, 3> tri;
                    for (int k = 0; k < 3; ++k) {
                        const auto& e = kEdgeCorners[row[i + k]];
                        const auto& c0 = kCorner[e[0]];
                        const auto& c1 = kCorner[e[1]];
                        tri[k] = vertex_for(ix + c0[0], iy + c0[1], iz + c0[2],
                                            ix + c1[0], iy + c1[1], iz + c1[2]);
                    }
                    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
                    mesh.faces.push_back(tri);
                }
            }

    if (!mesh.faces.empty()) mesh.normals = vertex_normals(mesh);
    return mesh;
}

}  // namespace avatar::geometry
