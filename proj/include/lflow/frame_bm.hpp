#pragma once

#include <cstdint>
#include <vector>

#include "lflow/geometry.hpp"

namespace lflow {

// Horizontal frame-bundle SDE driving the g_t-Brownian motion X_t = p u_t:
//
//   dX     = sqrt(2 lambda) u dB    (Stratonovich, Heun discretization)
//   du_i   = horizontal transport along dX
//            - (lambda dt / 2) sum_a (d_t g)(u e_a, u e_i) u e_a
//
// The vertical drift is what keeps u g_t-orthonormal while the metric
// evolves; it is a bounded-variation term and is averaged across the two
// Heun stages. lambda = 1 reproduces the generator Delta_{g_t}; in the
// coupling lambda = tau_bar runs the process at metric time tau_bar * t.

struct OrthonormalFrame {
    Vec x;
    Mat frame;    // coord_dim x dim, columns u e_i
    double time;  // metric time of the frame
};

struct SdeStepConfig {
    double dt = 1e-3;
    double speed_scale = 1.0;  // lambda; noise enters as sqrt(2 lambda)
    int reorthonormalize_every = 1;
};

struct BrownianPath {
    std::vector<double> times;
    std::vector<OrthonormalFrame> states;
    std::vector<Vec> increments;      // the raw N(0, dt I_d) draws
    std::vector<double> defects;      // orthonormality defect of each recorded state
    std::uint64_t seed = 0;
    double max_defect = 0.0;          // max over recorded states
    double max_step_defect = 0.0;     // max pre-reorthonormalization defect (O(dt^{3/2}))
};

OrthonormalFrame init_frame(const MetricModel& model, const Vec& x, double t0);

// max_ij |<u e_i, u e_j>_{g_t} - delta_ij|
double orthonormality_defect(const MetricModel& model, const OrthonormalFrame& frame);

// One Heun step driven by dB ~ N(0, dt I_d). pre_gs_defect (optional)
// reports the orthonormality defect before re-orthonormalization.
OrthonormalFrame step(const MetricModel& model, const OrthonormalFrame& frame, const Vec& dB,
                      const SdeStepConfig& cfg, bool reorthonormalize = true,
                      double* pre_gs_defect = nullptr);

// Deterministic given seed; increments are stored for coupling reuse.
BrownianPath simulate_path(const MetricModel& model, const Vec& x, double s0, double t_end,
                           const SdeStepConfig& cfg, std::uint64_t seed);

// Gram-Schmidt of the columns of frame w.r.t. the bilinear form g.
Mat gram_schmidt(const Mat& g, const Mat& frame);

}  // namespace lflow
