#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "avatar/body.hpp"
#include "avatar/synth.hpp"

namespace avatar::fit {

using JointPixels = std::array<Vec2, body::kJointCount>;

// Pixel positions of every joint of the posed body.
JointPixels project_joints(const body::ShapeParams& beta, const body::PoseParams& pose, const synth::Camera& camera);

struct FitProblem {
    std::vector<synth::Camera> cameras;
    std::vector<JointPixels> observations;
    body::ShapeParams beta0;
    std::vector<body::PoseParams> theta0;

    std::size_t frames() const { return cameras.size(); }
    void validate() const;
};

// One shape for the subject and one pose per frame. Flat layout:
// [beta (4), theta_0 (30), theta_1 (30), ...].
struct FitParams {
    body::ShapeParams beta;
    std::vector<body::PoseParams> poses;

    Eigen::VectorXd flat() const;
    static FitParams from_flat(const Eigen::VectorXd& x, std::size_t frames);
};

enum Terms : unsigned { kData = 1u, kRegularizer = 2u, kAllTerms = 3u };

// E = sum ||project(FK joint) - obs||^2 + lambda (||beta - beta0||^2 + sum ||theta_i||^2).
double fit_energy(const FitProblem& problem, const FitParams& params, double lambda, unsigned terms = kAllTerms);

// Analytic gradient of fit_energy over the flat layout.
Eigen::VectorXd fit_gradient(const FitProblem& problem, const FitParams& params, double lambda,
                             unsigned terms = kAllTerms);

// Per-frame RMS pixel error over joints.
std::vector<double> frame_rms(const FitProblem& problem, const FitParams& params);
double aggregate_rms(const FitProblem& problem, const FitParams& params);

// Metric for the descent direction d = -P^{-1} g. Both run under the same
// Armijo backtracking, so energy is non-increasing either way.
enum class Preconditioner { kDiagonal, kGaussNewton };

struct FitConfig {
    int max_iters = 500;
    double lr = 1.0;  // initial step of the line search
    double lambda = 1e-4;
    double tol = 1e-8;
    Preconditioner preconditioner = Preconditioner::kGaussNewton;

    void validate() const;
};

struct FitResult {
    FitParams initial;
    FitParams params;
    std::vector<double> residual_history;  // aggregate RMS pixels, one per accepted iterate
    std::vector<double> energy_history;
    int iterations = 0;
    std::vector<double> before;  // per-frame RMS at the initialization
    std::vector<double> after;
    // Max relative error of the fitted shape against a reference, when known.
    double beta_error = -1.0;
};

// Preconditioned gradient descent with Armijo backtracking (c = 1e-4,
// shrink 0.5). Stops at max_iters or when the relative decrease < tol.
FitResult fit_joint(const FitProblem& problem, const FitConfig& config = {});

double beta_relative_error(const body::ShapeParams& fitted, const body::ShapeParams& truth);

// {"frames":[{"id","before","after"}],"beta_error":...}
std::string fit_report(const FitResult& result, const std::vector<std::string>& frame_ids = {});

struct NoiseConfig {
    double beta = 0.1;   // relative, uniform in [-beta, beta]
    double theta = 0.1;  // radians, uniform per rotation component
    double pixels = 0.0; // Gaussian observation noise, standard deviation
};

// Observations from ground truth plus noise, and a perturbed initialization.
FitProblem make_problem(const body::ShapeParams& beta, const std::vector<body::PoseParams>& poses,
                        const std::vector<synth::Camera>& cameras, const NoiseConfig& noise, std::uint64_t seed);

std::string to_json(const FitProblem& problem);
FitProblem problem_from_json(const std::string& text);

}  // namespace avatar::fit
