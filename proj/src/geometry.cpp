#include "avatar/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <string>
#include <utility>

namespace avatar::geometry {

namespace {

// Shared by the kd-tree and the linear scan so both see bit-identical values.
inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    const double dz = a.z() - b.z();
    return dx * dx + dy * dy + dz * dz;
}

struct Candidate {
    double d2;
    std::size_t index;
    bool operator<(const Candidate& o) const {
        return d2 < o.d2 || (d2 == o.d2 && index < o.index);
    }
};

constexpr std::uint32_t kLeafSize = 8;

}  // namespace

void Mesh::validate() const {
    for (std::size_t f = 0; f < faces.size(); ++f)
        for (auto idx : faces[f])
            if (idx >= vertices.size())
                throw ValidationError("face " + std::to_string(f) + " references vertex " +
                                      std::to_string(idx) + " of " + std::to_string(vertices.size()));
    if (!normals.empty()) {
        if (normals.size() != vertices.size())
            throw ValidationError("normal count does not match vertex count");
        for (std::size_t i = 0; i < normals.size(); ++i)
            if (std::abs(normals[i].norm() - 1.0) > 1e-6)
                throw ValidationError("normal " + std::to_string(i) + " is not unit length");
    }
}

bool Mesh::is_closed() const {
    if (faces.empty()) return false;
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> uses;
    for (const auto& f : faces)
        for (int e = 0; e < 3; ++e) {
            auto a = f[e], b = f[(e + 1) % 3];
            ++uses[{std::min(a, b), std::max(a, b)}];
        }
    return std::all_of(uses.begin(), uses.end(), [](const auto& kv) { return kv.second == 2; });
}

int Mesh::genus() const {
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
    std::vector<char> used(vertices.size(), 0);
    for (const auto& f : faces)
        for (int e = 0; e < 3; ++e) {
            auto a = f[e], b = f[(e + 1) % 3];
            edges[{std::min(a, b), std::max(a, b)}] = 1;
            used[a] = 1;
        }
    const long v = std::count(used.begin(), used.end(), 1);
    const long euler = v - static_cast<long>(edges.size()) + static_cast<long>(faces.size());
    return static_cast<int>(1 - euler / 2);
}

double Mesh::surface_area() const {
    double area = 0.0;
    for (const auto& f : faces)
        area += 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
    return area;
}

Bounds Bounds::scaled(double factor) const {
    const Vec3 c = center();
    const Vec3 half = 0.5 * extent() * factor;
    return Bounds{c - half, c + half};
}

Bounds bounds_of(std::span<const Vec3> points) {
    Bounds b;
    for (const auto& p : points) b.extend(p);
    return b;
}

// ---------------------------------------------------------------- kd-tree

KdIndex::KdIndex(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw ValidationError("empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(points_.size()), 0);
}

KdIndex::KdIndex(const PointCloud& cloud) : KdIndex(cloud.points) {
    if (!cloud.normals.empty()) {
        if (cloud.normals.size() != cloud.points.size())
            throw ValidationError("normal count does not match point count");
        normals_ = cloud.normals;
    }
}

std::int32_t KdIndex::build(std::uint32_t begin, std::uint32_t end, int depth) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    Bounds box;
    for (auto i = begin; i < end; ++i) box.extend(points_[order_[i]]);
    int axis;
    box.extent().maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                         const double ca = points_[a][axis], cb = points_[b][axis];
                         return ca < cb || (ca == cb && a < b);
                     });
    const double split = points_[order_[mid]][axis];
    const auto left = build(begin, mid, depth + 1);
    const auto right = build(mid, end, depth + 1);
    Node& n = nodes_[id];
    n.axis = static_cast<std::uint8_t>(axis);
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
}

template <class Heap>
void KdIndex::search(std::int32_t id, const Vec3& q, Heap& heap, std::size_t k) const {
    const Node& n = nodes_[id];
    if (n.left < 0) {
        for (auto i = n.begin; i < n.end; ++i) {
            const std::size_t idx = order_[i];
            const Candidate c{squared_distance(points_[idx], q), idx};
            if (heap.size() < k) {
                heap.push(c);
            } else if (c < heap.top()) {
                heap.pop();
                heap.push(c);
            }
        }
        return;
    }
    // Left child holds coordinates <= split, right child >= split.
    const double diff = q[n.axis] - n.split;
    const auto near = diff <= 0 ? n.left : n.right;
    const auto far = diff <= 0 ? n.right : n.left;
    search(near, q, heap, k);
    // Equal distance must still be visited: a tie may carry a lower index.
    if (heap.size() < k || diff * diff <= heap.top().d2) search(far, q, heap, k);
}

std::vector<Neighbor> KdIndex::knn(const Vec3& query, std::size_t k) const {
    if (k == 0) throw ValidationError("k must be at least 1");
    if (k > points_.size()) throw ValidationError("k exceeds set size");
    std::priority_queue<Candidate> heap;
    search(0, query, heap, k);
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = {heap.top().index, std::sqrt(heap.top().d2)};
        heap.pop();
    }
    return out;
}

Neighbor KdIndex::nearest(const Vec3& query) const { return knn(query, 1).front(); }

std::vector<Neighbor> brute_force_knn(std::span<const Vec3> points, const Vec3& query, std::size_t k) {
    if (points.empty()) throw ValidationError("empty point set");
    if (k == 0) throw ValidationError("k must be at least 1");
    if (k > points.size()) throw ValidationError("k exceeds set size");
    std::vector<Candidate> all(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) all[i] = {squared_distance(points[i], query), i};
    std::partial_sort(all.begin(), all.begin() + static_cast<long>(k), all.end());
    std::vector<Neighbor> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = {all[i].index, std::sqrt(all[i].d2)};
    return out;
}

// ---------------------------------------------------------------- chamfer

namespace {

double directed_mean(const std::vector<Vec3>& from, const KdIndex& to) {
    std::vector<double> d(from.size());
    parallel_for(from.size(), [&](std::size_t i) { d[i] = to.nearest(from[i]).distance; });
    double sum = 0.0;
    for (double v : d) sum += v;
    return sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw ValidationError("empty point cloud");
    const KdIndex ia(a.points), ib(b.points);
    return 0.5 * (directed_mean(a.points, ib) + directed_mean(b.points, ia));
}

PointCloud sample_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
    if (mesh.faces.empty()) throw ValidationError("mesh has no faces");
    if (n == 0) throw ValidationError("sample count must be at least 1");
    mesh.validate();

    std::vector<double> cumulative(mesh.faces.size());
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& t = mesh.faces[f];
        total += 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                           .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]])
                           .norm();
        cumulative[f] = total;
    }
    if (!(total > 0.0)) throw ValidationError("degenerate mesh: zero surface area");

    Rng rng(seed);
    PointCloud out;
    out.points.reserve(n);
    out.normals.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const double pick = rng.uniform() * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        std::size_t f = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                              mesh.faces.size() - 1);
        const auto& t = mesh.faces[f];
        const double r1 = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        const double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
        out.points.push_back(wa * mesh.vertices[t[0]] + wb * mesh.vertices[t[1]] + wc * mesh.vertices[t[2]]);

        Vec3 normal;
        if (!mesh.normals.empty())
            normal = wa * mesh.normals[t[0]] + wb * mesh.normals[t[1]] + wc * mesh.normals[t[2]];
        if (mesh.normals.empty() || normal.norm() < 1e-12)
            normal = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        out.normals.push_back(normal.normalized());
    }
    return out;
}

double mesh_chamfer(const Mesh& a, const Mesh& b, std::size_t samples, std::uint64_t seed) {
    if (a.empty() || b.empty()) throw ValidationError("empty point cloud");
    return chamfer_distance(sample_surface(a, samples, seed), sample_surface(b, samples, seed + 1));
}

std::vector<Vec3> vertex_normals(const Mesh& mesh) {
    std::vector<Vec3> n(mesh.vertices.size(), Vec3::Zero());
    for (const auto& f : mesh.faces) {
        const Vec3 fn = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
        for (auto i : f) n[i] += fn;
    }
    for (auto& v : n) v = v.norm() > 0 ? Vec3(v.normalized()) : Vec3::UnitZ();
    return n;
}

// ---------------------------------------------------------------- grids

ScalarGrid::ScalarGrid(int nx_, int ny_, int nz_, const Bounds& b)
    : nx(nx_), ny(ny_), nz(nz_), bounds(b) {
    if (nx < 2 || ny < 2 || nz < 2) throw ValidationError("grid resolution must be at least 2 per axis");
    values.assign(static_cast<std::size_t>(nx) * ny * nz, 0.0);
}

Vec3 ScalarGrid::spacing() const {
    return bounds.extent().cwiseQuotient(Vec3(nx - 1, ny - 1, nz - 1));
}

Vec3 ScalarGrid::position(int ix, int iy, int iz) const {
    const Vec3 h = spacing();
    return bounds.min + Vec3(ix * h.x(), iy * h.y(), iz * h.z());
}

void ScalarGrid::validate() const {
    if (nx < 2 || ny < 2 || nz < 2) throw ValidationError("grid resolution must be at least 2 per axis");
    if (values.size() != static_cast<std::size_t>(nx) * ny * nz)
        throw ValidationError("grid value count does not match resolution");
    if (!(bounds.min.array() < bounds.max.array()).all())
        throw ValidationError("grid bounds must satisfy min < max");
}

ScalarGrid make_cubic_grid(const Bounds& box, int resolution) {
    if (resolution < 2) throw ValidationError("grid resolution must be at least 2 per axis");
    const Vec3 extent = box.extent();
    const double h = extent.maxCoeff() / (resolution - 1);
    Eigen::Vector3i n;
    Vec3 span;
    for (int a = 0; a < 3; ++a) {
        n[a] = std::max(2, static_cast<int>(std::ceil(extent[a] / h - 1e-9)) + 1);
        span[a] = (n[a] - 1) * h;
    }
    const Vec3 c = box.center();
    return ScalarGrid(n[0], n[1], n[2], Bounds{c - 0.5 * span, c + 0.5 * span});
}

}  // namespace avatar::geometry
