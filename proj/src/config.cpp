#include "lflow/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "lflow/jsonutil.hpp"
#include "lflow/parallel.hpp"

namespace lflow {

using nlohmann::json;

json ExperimentConfig::to_json() const {
    return json{
        {"model", model},
        {"dimension", dimension},
        {"bump_amplitude", bump_amplitude},
        {"bump_concentration", bump_concentration},
        {"seed", seed},
        {"dt", dt},
        {"n_trials", n_trials},
        {"threads", threads},
        {"s0", s0},
        {"t_end", t_end},
        {"tau1_bar", tau1_bar},
        {"tau2_bar", tau2_bar},
        {"tau1", tau1},
        {"tau2", tau2},
        {"x", x},
        {"y", y},
        {"shooting",
         {{"ode_steps", shooting.ode_steps},
          {"max_iter", shooting.max_iter},
          {"jac_step", shooting.jac_step},
          {"q_tie_rel", shooting.q_tie_rel},
          {"z_sep_tol", shooting.z_sep_tol},
          {"n_random_starts", shooting.n_random_starts}}},
        {"coupling",
         {{"q_refresh_every", coupling.q_refresh_every},
          {"cut_fallback_tol", coupling.cut_fallback_tol},
          {"ode_steps", coupling.ode_steps},
          {"theta_points", coupling.theta_points},
          {"theta_growth", coupling.theta_growth},
          {"wl_batch", coupling.wl_batch}}},
        {"verify",
         {{"grid_points", verify.grid_points},
          {"ode_steps", verify.ode_steps},
          {"sample_dt", verify.sample_dt},
          {"comparison_points", verify.comparison_points},
          {"control_scale", verify.control_scale}}},
        {"suite", suite},
        {"report_input", report_input},
    };
}

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error("config field '" + path + key + "': " + e.what());
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    get_if(j, "model", c.model, "");
    get_if(j, "dimension", c.dimension, "");
    get_if(j, "bump_amplitude", c.bump_amplitude, "");
    get_if(j, "bump_concentration", c.bump_concentration, "");
    get_if(j, "seed", c.seed, "");
    get_if(j, "dt", c.dt, "");
    get_if(j, "n_trials", c.n_trials, "");
    get_if(j, "threads", c.threads, "");
    get_if(j, "s0", c.s0, "");
    get_if(j, "t_end", c.t_end, "");
    get_if(j, "tau1_bar", c.tau1_bar, "");
    get_if(j, "tau2_bar", c.tau2_bar, "");
    get_if(j, "tau1", c.tau1, "");
    get_if(j, "tau2", c.tau2, "");
    get_if(j, "x", c.x, "");
    get_if(j, "y", c.y, "");
    get_if(j, "suite", c.suite, "");
    get_if(j, "report_input", c.report_input, "");
    if (j.contains("shooting")) {
        const json& s = j.at("shooting");
        get_if(s, "ode_steps", c.shooting.ode_steps, "shooting.");
        get_if(s, "max_iter", c.shooting.max_iter, "shooting.");
        get_if(s, "jac_step", c.shooting.jac_step, "shooting.");
        get_if(s, "q_tie_rel", c.shooting.q_tie_rel, "shooting.");
        get_if(s, "z_sep_tol", c.shooting.z_sep_tol, "shooting.");
        get_if(s, "n_random_starts", c.shooting.n_random_starts, "shooting.");
    }
    if (j.contains("coupling")) {
        const json& s = j.at("coupling");
        get_if(s, "q_refresh_every", c.coupling.q_refresh_every, "coupling.");
        get_if(s, "cut_fallback_tol", c.coupling.cut_fallback_tol, "coupling.");
        get_if(s, "ode_steps", c.coupling.ode_steps, "coupling.");
        get_if(s, "theta_points", c.coupling.theta_points, "coupling.");
        get_if(s, "theta_growth", c.coupling.theta_growth, "coupling.");
        get_if(s, "wl_batch", c.coupling.wl_batch, "coupling.");
    }
    if (j.contains("verify")) {
        const json& s = j.at("verify");
        get_if(s, "grid_points", c.verify.grid_points, "verify.");
        get_if(s, "ode_steps", c.verify.ode_steps, "verify.");
        get_if(s, "sample_dt", c.verify.sample_dt, "verify.");
        get_if(s, "comparison_points", c.verify.comparison_points, "verify.");
        get_if(s, "control_scale", c.verify.control_scale, "verify.");
    }
    return c;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error("invalid config: " + msg); };
    if (model != "euclidean" && model != "sphere" && model != "hyperbolic" && model != "bump")
        fail("model must be euclidean | sphere | hyperbolic | bump");
    if (dimension < 1 || dimension > 3) fail("dimension must be 1..3");
    if (!(dt > 0.0) || dt > 1e-2) fail("dt must satisfy 0 < dt <= 1e-2");
    if (n_trials < 1) fail("n_trials must be >= 1");
    if (!(s0 > 0.0)) fail("s0 must be > 0");
    if (!(s0 < t_end)) fail("s0 must be < t_end");
    if (!(tau1_bar > 0.0) || !(tau1_bar < tau2_bar)) fail("need 0 < tau1_bar < tau2_bar");
    if (!(tau1 >= 0.0) || !(tau1 < tau2)) fail("need 0 <= tau1 < tau2");
    if (shooting.ode_steps < 8) fail("shooting.ode_steps must be >= 8");
    if (shooting.max_iter < 1) fail("shooting.max_iter must be >= 1");
    if (!(shooting.jac_step > 0.0)) fail("shooting.jac_step must be > 0");
    if (coupling.q_refresh_every < 1) fail("coupling.q_refresh_every must be >= 1");
    if (!(coupling.cut_fallback_tol > 0.0)) fail("coupling.cut_fallback_tol must be > 0");
    if (coupling.wl_batch < 1 || coupling.wl_batch > 256)
        fail("coupling.wl_batch must be in [1, 256]");
    if (coupling.theta_points < 2) fail("coupling.theta_points must be >= 2");
    if (!(coupling.theta_growth > 1.0)) fail("coupling.theta_growth must be > 1");
    if (verify.grid_points < 2 || verify.grid_points > 10)
        fail("verify.grid_points must be in [2, 10]");
    if (!(verify.sample_dt >= dt)) fail("verify.sample_dt must be >= dt");

    // model-dependent windows
    auto m = make_configured_model();
    double horizon = m->horizon();
    if (!(t_end < horizon)) fail("t_end must be below the flow horizon");
    if (!(tau2 < horizon)) fail("tau2 must be below the flow horizon");
    if (!(tau2_bar * t_end < horizon)) fail("tau2_bar * t_end must be below the flow horizon");
    auto check_pt = [&](const std::vector<double>& v, const char* name) {
        if (v.empty()) return;
        if (static_cast<int>(v.size()) != m->coord_dim())
            fail(std::string(name) + " must have " + std::to_string(m->coord_dim()) +
                 " coordinates for this model");
        Vec p(m->coord_dim());
        for (int i = 0; i < m->coord_dim(); ++i) p[i] = v[i];
        if (!m->in_domain(m->project_point(p))) fail(std::string(name) + " outside chart domain");
    };
    check_pt(x, "x");
    check_pt(y, "y");
}

std::unique_ptr<MetricModel> ExperimentConfig::make_configured_model() const {
    if (model == "bump") return make_bump(BumpParams{bump_amplitude, bump_concentration});
    return make_model(model, dimension);
}

std::string ExperimentConfig::hash() const { return config_hash_of(to_json()); }

int ExperimentConfig::effective_threads() const {
    return threads > 0 ? threads : default_threads();
}

namespace {

// --set key=value with dotted paths; the value is parsed as JSON when it is,
// otherwise taken as a string.
void apply_override(json& j, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("override '" + kv + "' must be key=value");
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;
    }
    json* node = &j;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw Error("override '" + kv + "' has an empty key");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
    (*node)[parts.back()] = parsed;
}

ExperimentConfig finalize(json j, const std::vector<std::string>& overrides) {
    for (const auto& kv : overrides) apply_override(j, kv);
    ExperimentConfig cfg = ExperimentConfig::from_json(j);
    if (const char* env = std::getenv("RSL_SEED")) {
        cfg.seed = std::strtoull(env, nullptr, 10);
    }
    cfg.validate();
    return cfg;
}

}  // namespace

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        // translate the byte offset into a line number
        std::size_t line = 1;
        for (std::size_t i = 0; i < e.byte && i < text.size(); ++i)
            if (text[i] == '\n') ++line;
        throw Error(path + ":" + std::to_string(line) + ": " + e.what());
    }
    if (!j.is_object()) throw Error(path + ":1: config root must be a JSON object");
    return finalize(std::move(j), overrides);
}

ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides) {
    return finalize(json::object(), overrides);
}

}  // namespace lflow
