#pragma once

#include <cstdint>
#include <vector>

#include "lflow/frame_bm.hpp"
#include "lflow/lgeodesic.hpp"
#include "lflow/transport.hpp"

namespace lflow {

// Parallel-displacement coupling of a g_{tau1_bar t}- and a g_{tau2_bar t}-
// Brownian motion on one clock t: off the cut-locus proxy the fast process
// is driven by dB~ = u~^{-1} P u dB with P the space-time transport along
// the minimizing L-geodesic between the current positions; near it (tie in
// the shooting candidates, or shooting residual above cut_fallback_tol) the
// increments are drawn independently and Q is refreshed every step until the
// pair recovers.

struct CouplingConfig {
    double tau1_bar = 0.5;
    double tau2_bar = 1.0;
    double s_start = 0.25;
    double t_end = 1.265625;  // s * growth^(theta_points-1) by default
    double dt = 1e-3;
    int n_trials = 2000;
    int q_refresh_every = 5;
    double cut_fallback_tol = 1e-6;
    ShootConfig shoot = ShootConfig{.ode_steps = 200};
    std::uint64_t seed = 1;
    // Theta clock grid {s, s*growth, ...} (snapped to the step grid) and the
    // batch size for the empirical transportation cost.
    int theta_points = 5;
    double theta_growth = 1.5;
    int wl_batch = 64;

    void validate(const MetricModel& model) const;
    std::vector<double> clock_grid() const;
};

struct CoupledState {
    double t = 0.0;
    OrthonormalFrame X, Xt;
    QResult q;
    bool q_valid = false;
    bool fallback_active = false;
    Mat noise_map;  // d x d orthogonal, frozen between Q refreshes
    Vec warm_z;
    bool have_warm = false;
    int steps_since_refresh = 0;
    int fallback_steps = 0;
    int total_steps = 0;
    int q_failures = 0;
    double qv_integrand = 0.0;  // 8t |tau1_bar P gdot(tau1_bar t) - tau2_bar gdot(tau2_bar t)|^2
};

CoupledState init_coupling(const MetricModel& model, const Vec& x, const Vec& y,
                           const CouplingConfig& cfg);

// Advances both marginals by one step; indep supplies the independent draws
// used while the fallback is active. Refreshes Q on schedule.
void coupled_step(const MetricModel& model, CoupledState& state, const Vec& dB,
                  GaussianStream& indep, const CouplingConfig& cfg);

struct TrialRecord {
    std::vector<double> t;        // Q-refresh times
    std::vector<double> q;        // Q(X, tau1_bar t; X~, tau2_bar t)
    std::vector<double> j;        // J(t) = d/sqrt(t)(sqrt(tau1_bar)-sqrt(tau2_bar)) - Q/(2t)
    std::vector<double> qv;       // martingale-coefficient integrand at refresh times
    std::vector<std::uint8_t> fallback;
    std::vector<Vec> x_snap, xt_snap;  // marginal positions on the clock grid
    std::vector<double> clock_grid;
    int fallback_steps = 0;
    int total_steps = 0;
    int q_failures = 0;
};

TrialRecord run_coupling(const MetricModel& model, const Vec& x, const Vec& y,
                         const CouplingConfig& cfg, std::uint64_t trial_seed);

// Empirical Monge-Kantorovich cost between equal-size samples of the two
// marginals with ground cost Q(x_i, tau1; y_j, tau2): exact assignment on
// the n x n matrix, mean cost per pair. n <= 256.
double empirical_wl(const MetricModel& model, const std::vector<Vec>& samples_x, double tau1,
                    const std::vector<Vec>& samples_y, double tau2, const ShootConfig& shoot);

// Normalized transportation cost Theta(t) given W^L at clock t.
double theta_value(int d, double tau1_bar, double tau2_bar, double t, double wl);

double theta(const MetricModel& model, double t, const std::vector<Vec>& samples_x,
             const std::vector<Vec>& samples_y, const CouplingConfig& cfg);

}  // namespace lflow
