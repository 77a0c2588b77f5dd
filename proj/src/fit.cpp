#include "avatar/fit.hpp"

#include <cmath>

#include "json_io.hpp"

namespace avatar::fit {

using body::kJointCount;
using body::PoseParams;
using body::ShapeParams;

namespace {

constexpr int kBeta = ShapeParams::kCount;
constexpr int kTheta = PoseParams::kCount;
constexpr int kRows = 2 * kJointCount;

using FrameJacobian = Eigen::Matrix<double, kRows, kBeta + kTheta>;
using FrameResidual = Eigen::Matrix<double, kRows, 1>;

Eigen::Matrix<double, 2, 3> projection_jacobian(const synth::Camera& cam) {
    const Mat3 r = cam.rotation();
    Eigen::Matrix<double, 2, 3> p;
    p.row(0) = r.row(0) / cam.scale;
    p.row(1) = -r.row(1) / cam.scale;
    return p;
}

// Residuals of one frame and, optionally, their Jacobian over [beta | theta].
FrameResidual frame_residual(const ShapeParams& beta, const PoseParams& pose, const synth::Camera& cam,
                             const JointPixels& obs, FrameJacobian* jac) {
    const auto& skel = body::Skeleton::standard();
    const body::Transforms t = body::forward_kinematics(skel, beta, pose);
    FrameResidual r;
    for (int j = 0; j < kJointCount; ++j) r.segment<2>(2 * j) = cam.project(t[j].translation) - obs[j];
    if (!jac) return r;

    const auto off_jac = skel.offset_jacobian(beta);
    std::array<Eigen::Matrix<double, 3, kBeta>, kJointCount> dx_dbeta;
    std::array<Mat3, kJointCount> jr;
    for (int j = 0; j < kJointCount; ++j) {
        const int p = skel.parent[j];
        dx_dbeta[j] = p < 0 ? off_jac[j] : Eigen::Matrix<double, 3, kBeta>(dx_dbeta[p] + t[p].rotation * off_jac[j]);
        jr[j] = body::right_jacobian(pose.rotations[j]);
    }
    const auto proj = projection_jacobian(cam);
    jac->setZero();
    for (int m = 0; m < kJointCount; ++m) {
        auto rows = jac->middleRows<2>(2 * m);
        rows.leftCols<kBeta>() = proj * dx_dbeta[m];
        rows.middleCols<3>(kBeta + 3 * kJointCount) = proj;
        // Rotating joint k moves every strict descendant m about x_k.
        for (int k = skel.parent[m]; k >= 0; k = skel.parent[k]) {
            const Mat3& rk = t[k].rotation;
            const Vec3 local = rk.transpose() * (t[m].translation - t[k].translation);
            rows.middleCols<3>(kBeta + 3 * k) = proj * (-rk * body::skew(local) * jr[k]);
        }
    }
    return r;
}

double regularizer(const FitProblem& problem, const FitParams& params) {
    double reg = 0.0;
    for (int k = 0; k < kBeta; ++k) {
        const double d = params.beta.values[k] - problem.beta0.values[k];
        reg += d * d;
    }
    for (const auto& pose : params.poses) reg += pose.flat().squaredNorm();
    return reg;
}

void check_sizes(const FitProblem& problem, const FitParams& params) {
    if (params.poses.size() != problem.frames()) throw ValidationError("fit parameters and problem disagree on frame count");
}

}  // namespace

JointPixels project_joints(const ShapeParams& beta, const PoseParams& pose, const synth::Camera& camera) {
    const auto t = body::forward_kinematics(body::Skeleton::standard(), beta, pose);
    JointPixels out;
    for (int j = 0; j < kJointCount; ++j) out[j] = camera.project(t[j].translation);
    return out;
}

void FitProblem::validate() const {
    if (cameras.size() < 2) throw ValidationError("joint fitting needs at least 2 frames");
    if (observations.size() != cameras.size() || theta0.size() != cameras.size())
        throw ValidationError("fit problem: cameras, observations and initial poses must have equal counts");
    for (const auto& c : cameras) c.validate();
    for (const auto& obs : observations)
        for (const auto& p : obs)
            if (!p.allFinite()) throw ValidationError("fit problem: non-finite observation");
}

Eigen::VectorXd FitParams::flat() const {
    Eigen::VectorXd x(kBeta + kTheta * static_cast<Eigen::Index>(poses.size()));
    for (int k = 0; k < kBeta; ++k) x[k] = beta.values[k];
    for (std::size_t i = 0; i < poses.size(); ++i) x.segment<kTheta>(kBeta + kTheta * static_cast<Eigen::Index>(i)) = poses[i].flat();
    return x;
}

FitParams FitParams::from_flat(const Eigen::VectorXd& x, std::size_t frames) {
    if (x.size() != kBeta + kTheta * static_cast<Eigen::Index>(frames)) throw ValidationError("fit vector has the wrong length");
    FitParams p;
    for (int k = 0; k < kBeta; ++k) p.beta.values[k] = x[k];
    for (std::size_t i = 0; i < frames; ++i)
        p.poses.push_back(PoseParams::from_flat(std::span<const double>(x.data() + kBeta + kTheta * i, kTheta)));
    return p;
}

double fit_energy(const FitProblem& problem, const FitParams& params, double lambda, unsigned terms) {
    check_sizes(problem, params);
    double e = 0.0;
    if (terms & kData)
        for (std::size_t i = 0; i < problem.frames(); ++i)
            e += frame_residual(params.beta, params.poses[i], problem.cameras[i], problem.observations[i], nullptr)
                     .squaredNorm();
    if (terms & kRegularizer) e += lambda * regularizer(problem, params);
    return e;
}

Eigen::VectorXd fit_gradient(const FitProblem& problem, const FitParams& params, double lambda, unsigned terms) {
    check_sizes(problem, params);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(kBeta + kTheta * static_cast<Eigen::Index>(problem.frames()));
    if (terms & kData)
        for (std::size_t i = 0; i < problem.frames(); ++i) {
            FrameJacobian jac;
            const FrameResidual r =
                frame_residual(params.beta, params.poses[i], problem.cameras[i], problem.observations[i], &jac);
            const Eigen::Matrix<double, kBeta + kTheta, 1> gi = 2.0 * jac.transpose() * r;
            g.head<kBeta>() += gi.head<kBeta>();
            g.segment<kTheta>(kBeta + kTheta * static_cast<Eigen::Index>(i)) += gi.tail<kTheta>();
        }
    if (terms & kRegularizer) {
        for (int k = 0; k < kBeta; ++k) g[k] += 2.0 * lambda * (params.beta.values[k] - problem.beta0.values[k]);
        for (std::size_t i = 0; i < problem.frames(); ++i)
            g.segment<kTheta>(kBeta + kTheta * static_cast<Eigen::Index>(i)) += 2.0 * lambda * params.poses[i].flat();
    }
    return g;
}

std::vector<double> frame_rms(const FitProblem& problem, const FitParams& params) {
    check_sizes(problem, params);
    std::vector<double> out;
    for (std::size_t i = 0; i < problem.frames(); ++i) {
        const auto r = frame_residual(params.beta, params.poses[i], problem.cameras[i], problem.observations[i], nullptr);
        out.push_back(std::sqrt(r.squaredNorm() / kJointCount));
    }
    return out;
}

double aggregate_rms(const FitProblem& problem, const FitParams& params) {
    const double data = fit_energy(problem, params, 0.0, kData);
    return std::sqrt(data / (kJointCount * static_cast<double>(problem.frames())));
}

void FitConfig::validate() const {
    if (max_iters < 0) throw ValidationError("fit max_iters must be non-negative");
    if (!(lr > 0.0)) throw ValidationError("fit lr must be positive");
    if (!(lambda >= 0.0)) throw ValidationError("fit lambda must be non-negative");
    if (!(tol >= 0.0)) throw ValidationError("fit tol must be non-negative");
}

FitResult fit_joint(const FitProblem& problem, const FitConfig& config) {
    problem.validate();
    config.validate();
    const std::size_t n = problem.frames();
    FitResult result;
    result.initial.beta = problem.beta0;
    result.initial.poses = problem.theta0;

    Eigen::VectorXd x = result.initial.flat();
    auto energy_at = [&](const Eigen::VectorXd& v) {
        return fit_energy(problem, FitParams::from_flat(v, n), config.lambda);
    };
    double e = energy_at(x);
    if (!std::isfinite(e) || !x.allFinite()) throw NumericError("invalid initialization");

    result.before = frame_rms(problem, result.initial);
    result.energy_history.push_back(e);
    result.residual_history.push_back(aggregate_rms(problem, result.initial));

    constexpr double kArmijo = 1e-4;
    constexpr double kShrink = 0.5;
    constexpr double kDamping = 1e-9;
    double step = config.lr;
    for (int it = 0; it < config.max_iters; ++it) {
        const FitParams current = FitParams::from_flat(x, n);
        const Eigen::VectorXd g = fit_gradient(problem, current, config.lambda);
        if (!g.allFinite()) throw NumericError("non-finite gradient at iteration " + std::to_string(it));
        if (g.squaredNorm() == 0.0) break;

        // Gauss-Newton Hessian (2 J^T J + 2 lambda I) assembled over frames.
        const Eigen::Index dim = x.size();
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
        for (std::size_t i = 0; i < n; ++i) {
            FrameJacobian jac;
            frame_residual(current.beta, current.poses[i], problem.cameras[i], problem.observations[i], &jac);
            const Eigen::Matrix<double, kBeta + kTheta, kBeta + kTheta> hi = 2.0 * jac.transpose() * jac;
            const auto seg = kBeta + kTheta * static_cast<Eigen::Index>(i);
            h.topLeftCorner<kBeta, kBeta>() += hi.topLeftCorner<kBeta, kBeta>();
            h.block<kBeta, kTheta>(0, seg) += hi.topRightCorner<kBeta, kTheta>();
            h.block<kTheta, kBeta>(seg, 0) += hi.bottomLeftCorner<kTheta, kBeta>();
            h.block<kTheta, kTheta>(seg, seg) += hi.bottomRightCorner<kTheta, kTheta>();
        }
        h.diagonal().array() += 2.0 * config.lambda;
        Eigen::VectorXd dir;
        if (config.preconditioner == Preconditioner::kDiagonal) {
            dir = -g.cwiseQuotient(h.diagonal().array().max(kDamping).matrix());
        } else {
            h.diagonal().array() += kDamping * (1.0 + h.diagonal().array());
            dir = -h.ldlt().solve(g);
        }
        const double slope = g.dot(dir);

        double alpha = std::min(config.lr, 2.0 * step);
        double e_new = e;
        Eigen::VectorXd x_new;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + alpha * dir;
            e_new = energy_at(x_new);
            if (std::isfinite(e_new) && e_new <= e + kArmijo * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= kShrink;
        }
        if (!accepted) break;
        step = alpha;
        const double decrease = e - e_new;
        x = x_new;
        e = e_new;
        ++result.iterations;
        result.energy_history.push_back(e);
        result.residual_history.push_back(aggregate_rms(problem, FitParams::from_flat(x, n)));
        if (decrease <= config.tol * std::max(e + decrease, 1e-300)) break;
    }

    result.params = FitParams::from_flat(x, n);
    result.after = frame_rms(problem, result.params);
    return result;
}

double beta_relative_error(const ShapeParams& fitted, const ShapeParams& truth) {
    double worst = 0.0;
    for (int k = 0; k < kBeta; ++k)
        worst = std::max(worst, std::abs(fitted.values[k] - truth.values[k]) / std::abs(truth.values[k]));
    return worst;
}

std::string fit_report(const FitResult& result, const std::vector<std::string>& frame_ids) {
    nlohmann::json j;
    j["frames"] = nlohmann::json::array();
    for (std::size_t i = 0; i < result.before.size(); ++i)
        j["frames"].push_back({{"id", i < frame_ids.size() ? frame_ids[i] : std::to_string(i)},
                               {"before", result.before[i]},
                               {"after", result.after[i]}});
    if (result.beta_error >= 0.0)
        j["beta_error"] = result.beta_error;
    else
        j["beta_error"] = nullptr;
    return j.dump(2) + "\n";
}

FitProblem make_problem(const ShapeParams& beta, const std::vector<PoseParams>& poses,
                        const std::vector<synth::Camera>& cameras, const NoiseConfig& noise, std::uint64_t seed) {
    if (poses.size() != cameras.size()) throw ValidationError("make_problem: poses and cameras differ in count");
    if (!(noise.beta >= 0.0 && noise.theta >= 0.0 && noise.pixels >= 0.0))
        throw ValidationError("noise levels must be non-negative");
    Rng rng(seed);
    FitProblem p;
    p.cameras = cameras;
    for (int k = 0; k < kBeta; ++k) p.beta0.values[k] = beta.values[k] * (1.0 + rng.uniform(-noise.beta, noise.beta));
    for (std::size_t i = 0; i < poses.size(); ++i) {
        JointPixels obs = project_joints(beta, poses[i], cameras[i]);
        for (auto& o : obs) {
            const double du = rng.normal(), dv = rng.normal();
            o += noise.pixels * Vec2(du, dv);
        }
        p.observations.push_back(obs);
        PoseParams init = poses[i];
        for (auto& w : init.rotations)
            for (int c = 0; c < 3; ++c) w[c] += rng.uniform(-noise.theta, noise.theta);
        p.theta0.push_back(init);
    }
    return p;
}

std::string to_json(const FitProblem& problem) {
    nlohmann::json j;
    j["beta0"] = problem.beta0.values;
    j["cameras"] = nlohmann::json::array();
    for (const auto& c : problem.cameras) j["cameras"].push_back(detail::camera_to_json(c));
    j["observations"] = nlohmann::json::array();
    for (const auto& obs : problem.observations) {
        nlohmann::json frame = nlohmann::json::array();
        for (const auto& p : obs) frame.push_back({p.x(), p.y()});
        j["observations"].push_back(frame);
    }
    j["theta0"] = nlohmann::json::array();
    for (const auto& t : problem.theta0) {
        const Eigen::VectorXd f = t.flat();
        j["theta0"].push_back(std::vector<double>(f.data(), f.data() + f.size()));
    }
    return j.dump(1) + "\n";
}

FitProblem problem_from_json(const std::string& text) {
    FitProblem p;
    try {
        const auto j = nlohmann::json::parse(text);
        const auto beta = j.at("beta0").get<std::vector<double>>();
        if (beta.size() != kBeta) throw ValidationError("fit problem: beta0 needs 4 values");
        std::copy(beta.begin(), beta.end(), p.beta0.values.begin());
        for (const auto& c : j.at("cameras")) p.cameras.push_back(detail::camera_from_json(c));
        for (const auto& frame : j.at("observations")) {
            if (frame.size() != kJointCount) throw ValidationError("fit problem: each frame needs 9 joints");
            JointPixels obs;
            for (int k = 0; k < kJointCount; ++k) obs[k] = Vec2(frame[k].at(0).get<double>(), frame[k].at(1).get<double>());
            p.observations.push_back(obs);
        }
        for (const auto& t : j.at("theta0")) p.theta0.push_back(PoseParams::from_flat(t.get<std::vector<double>>()));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("fit problem json: ") + e.what());
    }
    p.validate();
    return p;
}

}  // namespace avatar::fit
