#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lflow/geometry.hpp"

namespace lflow {

// Experiment configuration shared by all CLI subcommands. JSON keys mirror
// the field names; --set key=value overrides use dotted paths
// (e.g. shooting.ode_steps=200). RSL_SEED in the environment overrides seed.
struct ExperimentConfig {
    std::string model = "euclidean";
    int dimension = 2;
    double bump_amplitude = 0.3;
    double bump_concentration = 4.0;

    std::uint64_t seed = 12345;
    double dt = 1e-3;
    int n_trials = 1000;
    int threads = 0;  // 0 -> available parallelism

    double s0 = 0.25;
    double t_end = 1.0;
    double tau1_bar = 0.5;
    double tau2_bar = 1.0;

    // qdist endpoints; empty x/y fall back to model defaults
    double tau1 = 0.0;
    double tau2 = 1.0;
    std::vector<double> x, y;

    struct Shooting {
        int ode_steps = 1000;
        int max_iter = 40;
        double jac_step = 1e-5;
        double q_tie_rel = 1e-4;
        double z_sep_tol = 1e-2;
        int n_random_starts = 4;
    } shooting;

    struct Coupling {
        int q_refresh_every = 5;
        double cut_fallback_tol = 1e-6;
        int ode_steps = 200;
        int theta_points = 5;
        double theta_growth = 1.5;
        int wl_batch = 64;
    } coupling;

    struct Verify {
        int grid_points = 10;
        int ode_steps = 128;
        double sample_dt = 5e-3;
        int comparison_points = 20;
        double control_scale = 0.01;
    } verify;

    std::string suite = "all";
    std::string report_input;  // for the report subcommand

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);

    // Throws Error with a field-path message on any violated constraint.
    void validate() const;

    std::unique_ptr<MetricModel> make_configured_model() const;
    std::string hash() const;
    int effective_threads() const;
};

// Reads the file, applies key=value overrides and the RSL_SEED environment
// variable. Parse errors are rethrown as Error with file:line context.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);
ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides);

}  // namespace lflow
