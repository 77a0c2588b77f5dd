#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace avatar {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Failure classes map onto the process exit codes of the CLI and the status
// codes of the C API: validation 2, io 3, numeric 4.
enum class ErrorKind { Validation = 2, Io = 3, Numeric = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& m) : Error(ErrorKind::Validation, m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, m) {}
};

// Seeded generator with platform-independent uniform and normal draws.
// std::uniform_real_distribution and friends are implementation-defined, so
// they are not used anywhere outputs must be reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    // [0, 1)
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // [0, n)
    std::uint64_t below(std::uint64_t n);
    double normal();

    // Derives an independent seed from (seed, stream) pairs.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Worker count used by parallel_for. 0 means hardware concurrency.
void set_thread_count(int threads);
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous static chunks;
// callers write results into per-index slots and reduce sequentially, so
// outputs never depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace avatar
