#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace lflow {

// All geometry is desk-scale: intrinsic dimension d <= 3, coordinate
// dimension <= 4 (spheres are carried as unit vectors in R^{d+1}).
// Bounded-dynamic Eigen types keep everything on the stack.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 4, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 4, 4>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Point left the model's chart domain (hyperbolic disk exit, off-sphere blowup).
struct DomainError : Error {
    using Error::Error;
};

// Multi-start shooting failed to meet the endpoint tolerance.
struct ShootingError : Error {
    ShootingError(const std::string& msg, double best_residual)
        : Error(msg), best_residual(best_residual) {}
    double best_residual;
};

// Analytic derivative requested at a point flagged as L-cut-locus.
struct CutLocusError : Error {
    using Error::Error;
};

// Central-difference step for numeric derivatives of model callbacks.
inline double fd_step(double value) { return 1e-5 * (1.0 + std::abs(value)); }

}  // namespace lflow
