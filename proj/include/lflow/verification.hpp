#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lflow/coupling.hpp"
#include "lflow/frame_bm.hpp"
#include "lflow/lgeodesic.hpp"

namespace lflow {

// Statistical/deterministic checks turning the comparison, supermartingale,
// quadratic-variation and transportation-cost statements into pass/fail
// verdicts with explicit tolerances. One-sided Monte Carlo tests use the
// 3-sigma rule with stderr computed from per-trial statistics.

struct McReport {
    std::string name;
    int n_trials = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
    double bound = 0.0;
    std::string verdict;  // pass | fail | inconclusive
    std::uint64_t seed = 0;
    std::string config_hash;
    nlohmann::ordered_json details;

    bool passed() const { return verdict == "pass"; }
};

// Drift bound V(t) = 4d/sqrt(t) + d C0 sqrt(t)/2 dominating dQ(X_t, t).
struct VBound {
    int d = 2;
    double C0 = 0.0;
    double operator()(double t) const {
        return 4.0 * d / std::sqrt(t) + 0.5 * d * C0 * std::sqrt(t);
    }
    double integral(double t1, double t2) const {
        return 8.0 * d * (std::sqrt(t2) - std::sqrt(t1)) +
               (d * C0 / 3.0) * (std::pow(t2, 1.5) - std::pow(t1, 1.5));
    }
};

struct SupermartingaleCfg {
    Vec x;  // start point == L-base o; empty -> model default
    double s0 = 0.25;
    double t_end = 1.0;
    int n_trials = 10000;
    int grid_points = 10;
    double dt = 1e-3;
    int ode_steps = 128;
    double control_scale = 0.01;
    std::uint64_t seed = 2024;
    int threads = 1;
};

// [0]: the Lemma-3.5 drift test (pass iff every grid pair satisfies
// E[dQ] <= int V + 3 stderr). [1]: the 0.01 V negative control, which passes
// iff the rescaled bound is *violated* somewhere (test power). Both share
// one simulation.
std::vector<McReport> supermartingale_suite(const MetricModel& model,
                                            const SupermartingaleCfg& cfg);
McReport supermartingale_test(const MetricModel& model, const SupermartingaleCfg& cfg);

struct ItoQvCfg {
    Vec x;
    double s0 = 0.25;
    double t_end = 1.0;
    int n_trials = 2000;
    double dt = 1e-3;
    double sample_dt = 5e-3;
    int ode_steps = 128;
    double rel_tol = 0.15;
    std::uint64_t seed = 4096;
    int threads = 1;
};

// Realized quadratic variation of Q(X_t, t) vs the integrated martingale
// coefficient 8t |gammadot(t)|^2 from the minimizing geodesics.
McReport ito_qv_test(const MetricModel& model, const ItoQvCfg& cfg);

struct ComparisonCfg {
    int n_points = 20;
    double tau1_min = 0.1, tau1_max = 0.35;
    double gap_min = 0.25, gap_max = 0.65;
    double fd_h = 0.02;    // spatial stencil (normal-like coordinates)
    double fd_ht = 5e-3;   // time stencil for dQ/dtau2
    double slack = 0.05;
    int ode_steps = 400;
    std::uint64_t seed = 777;
};

// FD Laplacian + FD time derivative of Q against the comparison right-hand
// side d/(sqrt(tau2)-sqrt(tau1)) - Q/(2(tau2-tau1)); cut-flagged points are
// skipped and counted.
McReport comparison_test(const MetricModel& model, const ComparisonCfg& cfg);

struct ThetaCfg {
    Vec x, y;  // empty -> model defaults (antipodal pair on the sphere)
    CouplingConfig coupling;
    double fallback_limit = 0.05;
    bool run_control = true;
    int threads = 1;
};

// Theta monotonicity along the clock grid plus the initial-value inequality;
// optional uncoupled negative control (coupled pair cost < independent pair
// cost at t_end by > 3 sigma). Inconclusive when the fallback rate exceeds
// fallback_limit.
std::vector<McReport> theta_monotonicity_suite(const MetricModel& model, const ThetaCfg& cfg);
McReport theta_monotonicity_test(const MetricModel& model, const ThetaCfg& cfg);

// Default start/base points per model (north pole, origin, disk center).
Vec default_point(const MetricModel& model);
// Default far pair for coupling runs (antipodal on spheres).
std::pair<Vec, Vec> default_pair(const MetricModel& model);

nlohmann::ordered_json report_to_json(const McReport& report);

}  // namespace lflow
