#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "avatar/recon.hpp"
#include "avatar/train.hpp"
#include "fixtures.hpp"

using namespace avatar;

namespace {

struct Scene {
    body::CapsuleBody body;
    std::vector<synth::Image> images;
    std::vector<synth::FrameRecord> frames;
};

Scene scene_of(const synth::SubjectRecord& rec) {
    Scene s;
    s.body = body::CapsuleBody(rec.spec.shape, rec.spec.garment);
    s.frames = rec.frames;
    for (const auto& f : rec.frames) s.images.push_back(synth::read_frame(testing::small_dataset() / f.file));
    return s;
}

recon::Request request_for(const Scene& s, const net::NetParams* params, int resolution) {
    recon::Request r;
    r.beta = s.body.shape();
    r.resolution = resolution;
    r.params = params;
    for (std::size_t k = 0; k < s.frames.size(); ++k)
        r.frames.push_back({&s.images[k], s.frames[k].camera, s.frames[k].pose});
    return r;
}

const synth::Manifest& manifest() {
    static const synth::Manifest m = synth::open_dataset(testing::small_dataset());
    return m;
}

// One model overfit to the training subject, shared by the tests below.
const net::NetParams& overfit_model() {
    static const net::NetParams params = [] {
        const train::Subjects tr(manifest(), testing::small_dataset(), "train");
        train::TrainConfig c;
        c.steps = 1500;
        c.surface_points = 900;
        c.uniform_points = 300;
        c.frames_per_step = 4;
        c.log_every = 1500;
        return train::train(tr, nullptr, c).params;
    }();
    return params;
}

}  // namespace

TEST_CASE("request validation") {
    recon::Request r;
    r.resolution = 8;
    const body::CapsuleBody b;
    r.oracle = &b;
    CHECK_THROWS_WITH_AS(r.validate(), "grid resolution must be at least 16", ValidationError);
    r.resolution = 16;
    CHECK_NOTHROW(r.validate());
    r.oracle = nullptr;
    CHECK_THROWS_AS(r.validate(), ValidationError);
}

TEST_CASE("oracle reconstruction stays within 1.5 voxels") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto spec = synth::random_body(200 + s);
        const body::CapsuleBody b(spec.shape, spec.garment);
        recon::Request r;
        r.beta = spec.shape;
        r.resolution = 64;
        r.oracle = &b;
        const auto out = recon::reconstruct(r, &b);
        const double voxel = geometry::make_cubic_grid(recon::grid_bounds(spec.shape), 64).spacing().maxCoeff();
        REQUIRE(out.report.chamfer);
        MESSAGE("chamfer " << *out.report.chamfer << " = " << *out.report.chamfer / voxel << " voxels");
        CHECK(*out.report.chamfer <= 1.5 * voxel);
        CHECK_FALSE(out.report.empty);
    }
}

TEST_CASE("oracle chamfer does not increase from 32 to 64") {
    const auto spec = synth::random_body(211);
    const body::CapsuleBody b(spec.shape, spec.garment);
    recon::Request r;
    r.beta = spec.shape;
    r.oracle = &b;
    r.resolution = 32;
    const double c32 = *recon::reconstruct(r, &b).report.chamfer;
    r.resolution = 64;
    const double c64 = *recon::reconstruct(r, &b).report.chamfer;
    CHECK(c64 <= c32);
}

TEST_CASE("a grid below iso gives a flagged empty reconstruction") {
    geometry::ScalarGrid grid = geometry::make_cubic_grid(recon::grid_bounds({}), 20);
    std::fill(grid.values.begin(), grid.values.end(), 0.4);
    const auto out = recon::reconstruct_grid(grid, 0.5, nullptr);
    CHECK(out.mesh.faces.empty());
    CHECK(out.report.empty);
    CHECK(out.report.occupied_fraction == 0.0);
    const auto j = nlohmann::json::parse(recon::report_json(out.report, false));
    CHECK(j["warning"] == "empty reconstruction");
    CHECK(j["chamfer"].is_null());
    CHECK_FALSE(j.contains("seconds"));
    CHECK(nlohmann::json::parse(recon::report_json(out.report, true)).contains("seconds"));
}

TEST_CASE("occupied fraction matches the thresholded grid") {
    const auto spec = synth::random_body(213);
    const body::CapsuleBody b(spec.shape, spec.garment);
    recon::Request r;
    r.beta = spec.shape;
    r.resolution = 24;
    r.oracle = &b;
    const auto grid = recon::evaluate_grid(r);
    std::size_t inside = 0;
    for (double v : grid.values) inside += v > 0.5;
    const auto out = recon::reconstruct_grid(grid, 0.5);
    CHECK(out.report.occupied_fraction == static_cast<double>(inside) / static_cast<double>(grid.size()));
    CHECK(out.report.occupied_fraction > 0.0);
}

TEST_CASE("network grid: featureless points, frame order and duplication") {
    const Scene s = scene_of(*manifest().split("val")[0]);
    const auto params = net::NetParams::random(net::NetConfig{}, 5);
    auto req = request_for(s, &params, 16);
    const auto grid = recon::evaluate_grid(req);

    // Points outside every silhouette see all-zero features.
    const body::CapsuleBody fitted(req.beta);
    const auto normals = synth::normal_index(fitted);
    int hits = 0;
    for (int ix = 0; ix < grid.nx; ix += 5)
        for (int iy = 0; iy < grid.ny; iy += 5)
            for (int iz = 0; iz < grid.nz; iz += 5) {
                const Vec3 p = grid.position(ix, iy, iz);
                if (!net::gather_features(fitted, req.frames, {p}).isZero()) continue;
                net::PointQuery q;
                q.p = p;
                q.normal = body::normal_at(normals, p);
                q.features = Eigen::MatrixXd::Zero(synth::kFrameChannels, static_cast<Eigen::Index>(req.frames.size()));
                CHECK(grid.at(ix, iy, iz) == doctest::Approx(net::forward(q.as_batch(), params).occupancy[0]).epsilon(1e-12));
                ++hits;
            }
    CHECK(hits > 0);

    auto reversed = req;
    std::reverse(reversed.frames.begin(), reversed.frames.end());
    auto doubled = req;
    doubled.frames.insert(doubled.frames.end(), req.frames.begin(), req.frames.end());
    const auto g2 = recon::evaluate_grid(reversed), g3 = recon::evaluate_grid(doubled);
    double d2 = 0.0, d3 = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        d2 = std::max(d2, std::abs(grid.values[i] - g2.values[i]));
        d3 = std::max(d3, std::abs(grid.values[i] - g3.values[i]));
    }
    CHECK(d2 < 1e-12);
    CHECK(d3 < 1e-12);
}

TEST_CASE("skinning export") {
    const Scene s = scene_of(*manifest().split("val")[0]);
    const auto zero = net::NetParams::zeros(net::NetConfig{});
    const auto req = request_for(s, &zero, 16);
    recon::Request oracle;
    oracle.beta = s.body.shape();
    oracle.resolution = 24;
    oracle.oracle = &s.body;
    const auto mesh = recon::reconstruct(oracle).mesh;
    const auto w = recon::export_skinning(mesh, req);
    REQUIRE(w.cols() == static_cast<Eigen::Index>(mesh.vertices.size()));
    CHECK((w.array() - 1.0 / body::kJointCount).abs().maxCoeff() < 1e-12);

    const auto ow = recon::export_skinning(mesh, oracle);
    CHECK((ow.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    const auto dir = testing::scratch_dir("skin_csv");
    recon::write_skinning_csv(dir / "w.csv", ow);
    CHECK(recon::read_skinning_csv(dir / "w.csv") == ow);
    CHECK_THROWS_AS(recon::export_skinning(geometry::Mesh{}, req), ValidationError);
    CHECK_THROWS_AS(recon::read_skinning_csv(dir / "missing.csv"), IoError);
}

TEST_CASE("overfit model agrees with the analytic occupancy") {
    const Scene s = scene_of(*manifest().split("train")[0]);
    const auto& params = overfit_model();
    const auto req = request_for(s, &params, 32);
    const auto grid = recon::evaluate_grid(req);
    std::size_t agree = 0;
    for (int ix = 0; ix < grid.nx; ++ix)
        for (int iy = 0; iy < grid.ny; ++iy)
            for (int iz = 0; iz < grid.nz; ++iz)
                agree += (grid.at(ix, iy, iz) >= 0.5) == (s.body.occupancy_at(grid.position(ix, iy, iz)) == 1);
    const double frac = static_cast<double>(agree) / static_cast<double>(grid.size());
    MESSAGE("grid agreement " << frac);
    CHECK(frac >= 0.95);

    const auto out = recon::reconstruct_grid(grid, 0.5, &s.body);
    REQUIRE_FALSE(out.report.empty);
    MESSAGE("chamfer " << *out.report.chamfer);

    // Head-region vertices: those whose analytic skinning is dominated by the head.
    const auto w = recon::export_skinning(out.mesh, req);
    int head = 0, correct = 0;
    for (std::size_t v = 0; v < out.mesh.vertices.size(); ++v) {
        const auto truth = s.body.skin_weights_at(out.mesh.vertices[v]);
        if (std::max_element(truth.begin(), truth.end()) - truth.begin() != body::kHead) continue;
        ++head;
        Eigen::Index arg;
        w.col(static_cast<Eigen::Index>(v)).maxCoeff(&arg);
        correct += arg == body::kHead;
    }
    REQUIRE(head > 0);
    MESSAGE("head vertices " << correct << "/" << head);
    CHECK(correct >= 0.9 * head);
}
