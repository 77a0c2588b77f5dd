#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "avatar/fit.hpp"

using namespace avatar;

namespace {

struct Instance {
    body::BodySpec spec;
    std::vector<body::PoseParams> poses;
    std::vector<synth::Camera> cameras;
};

Instance make_instance(std::uint64_t seed, int frames = 4) {
    Instance in;
    in.spec = synth::random_body(seed);
    const body::CapsuleBody b(in.spec.shape, in.spec.garment);
    Rng rng(seed * 7 + 1);
    for (int k = 0; k < frames; ++k) {
        in.poses.push_back(synth::random_pose(rng));
        in.cameras.push_back(synth::random_camera(b, in.poses.back(), rng, 128, 128));
    }
    return in;
}

fit::FitProblem problem_for(const Instance& in, const fit::NoiseConfig& noise, std::uint64_t seed) {
    return fit::make_problem(in.spec.shape, in.poses, in.cameras, noise, seed);
}

fit::FitParams random_params(const fit::FitProblem& p, Rng& rng) {
    fit::FitParams x;
    x.beta = p.beta0;
    for (auto& v : x.beta.values) v *= 1.0 + rng.uniform(-0.1, 0.1);
    x.poses = p.theta0;
    for (auto& pose : x.poses) {
        for (auto& w : pose.rotations)
            for (int c = 0; c < 3; ++c) w[c] += rng.uniform(-0.3, 0.3);
        for (int c = 0; c < 3; ++c) pose.translation[c] += rng.uniform(-0.05, 0.05);
    }
    return x;
}

double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double floor = 1e-3 * std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
    double worst = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
        const double den = std::max({std::abs(a[k]), std::abs(b[k]), floor, 1e-12});
        worst = std::max(worst, std::abs(a[k] - b[k]) / den);
    }
    return worst;
}

}  // namespace

TEST_CASE("project_joints matches camera projection of forward kinematics") {
    const auto in = make_instance(3, 1);
    const auto px = fit::project_joints(in.spec.shape, in.poses[0], in.cameras[0]);
    const auto& sk = body::Skeleton::standard();
    const auto t = body::forward_kinematics(sk, in.spec.shape, in.poses[0]);
    for (int j = 0; j < body::kJointCount; ++j)
        CHECK((px[j] - in.cameras[0].project(t[j].translation)).norm() < 1e-12);
}

TEST_CASE("problem validation") {
    const auto in = make_instance(5, 1);
    auto p = problem_for(in, {}, 1);
    CHECK_THROWS_WITH_AS(p.validate(), "joint fitting needs at least 2 frames", ValidationError);
}

TEST_CASE("zero noise at ground truth is a fixed point") {
    const auto in = make_instance(11);
    const auto p = problem_for(in, {0.0, 0.0, 0.0}, 2);
    fit::FitConfig cfg;
    cfg.lambda = 0.0;
    const auto r = fit::fit_joint(p, cfg);
    CHECK(r.iterations == 0);
    CHECK(r.residual_history.back() < 1e-8);
    CHECK(r.params.beta == in.spec.shape);
    const auto report = nlohmann::json::parse(fit::fit_report(r));
    for (const auto& f : report["frames"]) {
        CHECK(f["before"].get<double>() < 1e-8);
        CHECK(f["after"].get<double>() < 1e-8);
    }
}

TEST_CASE("data gradient vanishes at ground truth") {
    const auto in = make_instance(13);
    const auto p = problem_for(in, {0.0, 0.0, 0.0}, 3);
    fit::FitParams gt{in.spec.shape, in.poses};
    CHECK(fit::fit_gradient(p, gt, 1e-4, fit::kData).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("regularizer gradient is exactly 2 lambda (x - x0)") {
    const auto in = make_instance(17);
    const auto p = problem_for(in, {}, 4);
    Rng rng(9);
    const auto x = random_params(p, rng);
    const double lambda = 0.37;
    const Eigen::VectorXd g = fit::fit_gradient(p, x, lambda, fit::kRegularizer);
    for (int k = 0; k < body::ShapeParams::kCount; ++k)
        CHECK(g[k] == 2.0 * lambda * (x.beta.values[k] - p.beta0.values[k]));
    const Eigen::VectorXd flat = x.flat();
    for (Eigen::Index k = body::ShapeParams::kCount; k < flat.size(); ++k) CHECK(g[k] == 2.0 * lambda * flat[k]);
}

TEST_CASE("analytic gradient matches central differences at 10 random points") {
    const auto in = make_instance(19, 3);
    const auto p = problem_for(in, {0.1, 0.1, 0.5}, 5);
    Rng rng(21);
    const double h = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = random_params(p, rng);
        const Eigen::VectorXd g = fit::fit_gradient(p, x, 1e-4);
        Eigen::VectorXd flat = x.flat(), fd(flat.size());
        for (Eigen::Index k = 0; k < flat.size(); ++k) {
            Eigen::VectorXd a = flat, b = flat;
            a[k] += h;
            b[k] -= h;
            fd[k] = (fit::fit_energy(p, fit::FitParams::from_flat(a, p.frames()), 1e-4) -
                     fit::fit_energy(p, fit::FitParams::from_flat(b, p.frames()), 1e-4)) /
                    (2.0 * h);
        }
        worst = std::max(worst, max_rel_error(g, fd));
    }
    MESSAGE("max relative gradient error " << worst);
    CHECK(worst < 1e-4);
}

TEST_CASE("perturbed fit recovers shape and reduces residual") {
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto in = make_instance(30 + s);
        const auto p = problem_for(in, {}, 40 + s);
        const auto r = fit::fit_joint(p);
        CHECK(r.residual_history.back() <= 0.1 * r.residual_history.front());
        CHECK(fit::beta_relative_error(r.params.beta, in.spec.shape) <= 0.05);
        for (std::size_t i = 0; i < r.before.size(); ++i) CHECK(r.after[i] <= r.before[i]);
        for (std::size_t k = 1; k < r.energy_history.size(); ++k)
            CHECK(r.energy_history[k] <= r.energy_history[k - 1]);
    }
}

TEST_CASE("diagonal preconditioner keeps energy monotone") {
    const auto in = make_instance(51);
    const auto p = problem_for(in, {}, 52);
    fit::FitConfig cfg;
    cfg.preconditioner = fit::Preconditioner::kDiagonal;
    cfg.lambda = 0.0;
    cfg.max_iters = 200;
    const auto r = fit::fit_joint(p, cfg);
    CHECK(r.iterations > 0);
    for (std::size_t k = 1; k < r.energy_history.size(); ++k) {
        CHECK(r.energy_history[k] <= r.energy_history[k - 1]);
        CHECK(r.residual_history[k] <= r.residual_history[k - 1]);
    }
    CHECK(r.residual_history.back() < r.residual_history.front());
}

TEST_CASE("max_iters bounds the iteration count") {
    const auto in = make_instance(61);
    const auto p = problem_for(in, {}, 62);
    fit::FitConfig cfg;
    cfg.max_iters = 2;
    CHECK(fit::fit_joint(p, cfg).iterations <= 2);
    cfg.max_iters = 0;
    const auto r = fit::fit_joint(p, cfg);
    CHECK(r.iterations == 0);
    CHECK(r.after == r.before);
}

TEST_CASE("non-finite initialization is rejected") {
    const auto in = make_instance(71);
    auto p = problem_for(in, {}, 72);
    p.theta0[1].rotations[2][0] = std::nan("");
    CHECK_THROWS_WITH_AS(fit::fit_joint(p), "invalid initialization", NumericError);
}

TEST_CASE("config validation") {
    fit::FitConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.max_iters = -1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("fit report schema and round trip") {
    const auto in = make_instance(81);
    const auto p = problem_for(in, {}, 82);
    auto r = fit::fit_joint(p);
    auto j = nlohmann::json::parse(fit::fit_report(r, {"a", "b", "c", "d"}));
    CHECK(j["beta_error"].is_null());
    REQUIRE(j["frames"].size() == 4);
    CHECK(j["frames"][2]["id"] == "c");
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(j["frames"][i]["before"].get<double>() == r.before[i]);
        CHECK(j["frames"][i]["after"].get<double>() == r.after[i]);
    }
    r.beta_error = fit::beta_relative_error(r.params.beta, in.spec.shape);
    j = nlohmann::json::parse(fit::fit_report(r));
    CHECK(j["beta_error"].get<double>() == r.beta_error);
    CHECK(j["frames"][0]["id"] == "0");
}

TEST_CASE("problem json round trip") {
    const auto in = make_instance(91);
    const auto p = problem_for(in, {0.1, 0.1, 1.0}, 92);
    const auto q = fit::problem_from_json(fit::to_json(p));
    CHECK(q.beta0 == p.beta0);
    REQUIRE(q.frames() == p.frames());
    for (std::size_t i = 0; i < p.frames(); ++i) {
        CHECK(q.theta0[i].flat() == p.theta0[i].flat());
        for (int j = 0; j < body::kJointCount; ++j) CHECK(q.observations[i][j] == p.observations[i][j]);
        CHECK(q.cameras[i].project(Vec3(0.1, 0.9, -0.2)) == p.cameras[i].project(Vec3(0.1, 0.9, -0.2)));
    }
    CHECK(fit::to_json(q) == fit::to_json(p));
    CHECK_THROWS_AS(fit::problem_from_json("{\"beta0\": [1, 2]}"), ValidationError);
}

TEST_CASE("fitting is deterministic") {
    const auto in = make_instance(101);
    const auto p = problem_for(in, {}, 102);
    const auto a = fit::fit_joint(p), b = fit::fit_joint(p);
    CHECK(a.params.flat() == b.params.flat());
    CHECK(a.residual_history == b.residual_history);
}
