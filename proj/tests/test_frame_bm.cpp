#include <doctest.h>

#include <cmath>
#include <vector>

#include "lflow/frame_bm.hpp"
#include "lflow/rng.hpp"
#include "lflow/verification.hpp"

using namespace lflow;

namespace {

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}
Vec vec3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v;
}

}  // namespace

TEST_CASE("init_frame: identity on flat space, 1/sqrt(c) columns on the sphere") {
    auto flat = make_euclidean(2);
    OrthonormalFrame f = init_frame(*flat, vec2(0.4, -1.0), 0.5);
    CHECK((f.frame - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(orthonormality_defect(*flat, f) <= 1e-12);

    auto sph = make_sphere(2);
    OrthonormalFrame g = init_frame(*sph, vec3(0, 0, 1), 1.0);
    CHECK(orthonormality_defect(*sph, g) <= 1e-12);
    for (int i = 0; i < 2; ++i) {
        CHECK(g.frame.col(i).norm() == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
        CHECK(std::abs(g.frame.col(i).dot(g.x)) <= 1e-14);
    }
}

TEST_CASE("flat step is exactly base += sqrt(2 lambda) dB with frame unchanged") {
    auto flat = make_euclidean(3);
    OrthonormalFrame f = init_frame(*flat, Vec(Vec::Zero(3)), 0.2);
    SdeStepConfig cfg{1e-3, 2.5, 1};
    Vec dB = vec3(0.01, -0.02, 0.005);
    OrthonormalFrame g = step(*flat, f, dB, cfg);
    CHECK((g.x - Vec(std::sqrt(2.0 * 2.5) * dB)).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((g.frame - f.frame).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(g.time == doctest::Approx(0.2 + 2.5 * 1e-3));
}

TEST_CASE("orthonormality defect stays below 1e-6 along 1000-step paths") {
    GaussianStream dummy(1);
    SdeStepConfig cfg{1e-3, 1.0, 1};
    struct Case {
        const char* id;
        double s0, t_end;
    };
    // hyperbolic horizon T = 0.5 only fits ~430 steps at dt = 1e-3
    for (Case c : {Case{"euclidean", 0.25, 1.25}, Case{"sphere", 0.25, 1.25},
                   Case{"bump", 0.25, 1.25}, Case{"hyperbolic", 0.05, 0.48}}) {
        auto m = make_model(c.id, 2);
        BrownianPath p = simulate_path(*m, default_point(*m), c.s0, c.t_end, cfg, 777);
        CHECK(p.max_defect <= 1e-6);
        CHECK(p.max_step_defect <= 1e-3);  // pre-correction leakage diagnostic
    }
}

TEST_CASE("pre-reorthonormalization defect decays with dt (sphere)") {
    auto sph = make_sphere(2);
    Vec x = vec3(0, 0, 1);
    double prev = std::numeric_limits<double>::infinity();
    for (double dt : {4e-3, 1e-3, 2.5e-4}) {
        SdeStepConfig cfg{dt, 1.0, 1};
        BrownianPath p = simulate_path(*sph, x, 0.25, 0.75, cfg, 4040);
        CHECK(p.max_step_defect < prev);
        prev = p.max_step_defect;
    }
    CHECK(prev <= 1e-6);  // dt = 2.5e-4: O(dt^{3/2}) leakage is tiny
}

TEST_CASE("mean-square displacement on flat space: E|X_t - x|^2 = 2 d lambda (t - s0)") {
    auto flat = make_euclidean(2);
    const double lambda = 1.7, s0 = 0.2, t_end = 0.7, dt = 1e-3;
    SdeStepConfig cfg{dt, lambda, 1};
    const int n = 20000;
    double sum = 0.0, sumsq = 0.0;
    for (int trial = 0; trial < n; ++trial) {
        GaussianStream rng(stream_seed(31338, trial));
        OrthonormalFrame f = init_frame(*flat, Vec(Vec::Zero(2)), lambda * s0);
        const double sqrt_dt = std::sqrt(dt);
        for (int k = 0; k < 500; ++k)
            f = step(*flat, f, Vec(sqrt_dt * rng.gauss_vec(2)), cfg);
        double v = f.x.squaredNorm();
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / n;
    double se = std::sqrt((sumsq / n - mean * mean) / (n - 1));
    double expect = 2.0 * 2 * lambda * (t_end - s0);
    CHECK(std::abs(mean - expect) <= 3.0 * se);
}

TEST_CASE("paths are bit-identical for identical seed and config") {
    auto sph = make_sphere(2);
    SdeStepConfig cfg{1e-3, 1.0, 1};
    BrownianPath a = simulate_path(*sph, vec3(0, 0, 1), 0.3, 0.8, cfg, 20240917);
    BrownianPath b = simulate_path(*sph, vec3(0, 0, 1), 0.3, 0.8, cfg, 20240917);
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t k = 0; k < a.states.size(); ++k) {
        CHECK((a.states[k].x - b.states[k].x).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a.states[k].frame - b.states[k].frame).cwiseAbs().maxCoeff() == 0.0);
    }
    BrownianPath c = simulate_path(*sph, vec3(0, 0, 1), 0.3, 0.8, cfg, 20240918);
    CHECK((a.states.back().x - c.states.back().x).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("flat-space weak error is exact up to Monte Carlo noise at every dt") {
    auto flat = make_euclidean(2);
    const double s0 = 0.25, t_end = 0.75;
    const int n = 4000;
    for (double dt : {4e-3, 2e-3, 1e-3}) {
        SdeStepConfig cfg{dt, 1.0, 1};
        int n_steps = (int)std::llround((t_end - s0) / dt);
        double sum = 0.0, sumsq = 0.0;
        for (int trial = 0; trial < n; ++trial) {
            GaussianStream rng(stream_seed(555 + (int)(1e4 * dt), trial));
            OrthonormalFrame f = init_frame(*flat, Vec(Vec::Zero(2)), s0);
            const double sqrt_dt = std::sqrt(dt);
            for (int k = 0; k < n_steps; ++k)
                f = step(*flat, f, Vec(sqrt_dt * rng.gauss_vec(2)), cfg);
            double v = f.x.squaredNorm();
            sum += v;
            sumsq += v * v;
        }
        double mean = sum / n;
        double se = std::sqrt((sumsq / n - mean * mean) / (n - 1));
        CHECK(std::abs(mean - 2.0 * 2 * (t_end - s0)) <= 3.0 * se);
    }
}

TEST_CASE("weak order one on the sphere via coupled grid refinements") {
    // E[|X_T - x0|^2_chordal] has the closed form 2 - 2 e^{-2 sigma(T)},
    // sigma(T) = 0.5 log((1+2T)/(1+2 s0)); levels dt, 2dt, 4dt share one
    // Brownian path so the level differences isolate the weak error.
    auto sph = make_sphere(2);
    Vec x0 = vec3(0, 0, 1);
    const double s0 = 0.25, t_end = 1.018;  // 768 fine steps, divisible by 4
    const double h = 1e-3;
    const int n_fine = 768;
    const int n = 8000;
    std::vector<double> lvl[3];
    for (auto& v : lvl) v.resize(n);
    for (int trial = 0; trial < n; ++trial) {
        GaussianStream rng(stream_seed(991, trial));
        std::vector<Vec> dB(n_fine);
        const double sqrt_dt = std::sqrt(h);
        for (int k = 0; k < n_fine; ++k) dB[k] = sqrt_dt * rng.gauss_vec(2);
        for (int lev = 0; lev < 3; ++lev) {
            int agg = 1 << lev;
            SdeStepConfig cfg{h * agg, 1.0, 1};
            OrthonormalFrame f = init_frame(*sph, x0, s0);
            for (int k = 0; k < n_fine; k += agg) {
                Vec d = dB[k];
                for (int j = 1; j < agg; ++j) d += dB[k + j];
                f = step(*sph, f, d, cfg);
            }
            lvl[lev][trial] = (f.x - x0).squaredNorm();
        }
    }
    auto mean = [&](const std::vector<double>& v) {
        double s = 0;
        for (double a : v) s += a;
        return s / v.size();
    };
    auto sem = [&](const std::vector<double>& v) {
        double m = mean(v), s = 0;
        for (double a : v) s += (a - m) * (a - m);
        return std::sqrt(s / (v.size() - 1) / v.size());
    };
    std::vector<double> d21(n), d42(n);
    for (int i = 0; i < n; ++i) {
        d21[i] = lvl[1][i] - lvl[0][i];
        d42[i] = lvl[2][i] - lvl[1][i];
    }
    // both difference levels statistically resolved
    CHECK(std::abs(mean(d21)) > 5.0 * sem(d21));
    CHECK(std::abs(mean(d42)) > 5.0 * sem(d42));
    double slope = std::log2(std::abs(mean(d42) / mean(d21)));
    CHECK(slope >= 0.7);
    CHECK(slope <= 1.3);
    // the fine level agrees with the closed form within Monte Carlo noise
    double sigma = 0.5 * std::log((1.0 + 2.0 * t_end) / (1.0 + 2.0 * s0));
    double exact = 2.0 - 2.0 * std::exp(-2.0 * sigma);
    CHECK(std::abs(mean(lvl[0]) - exact) <= 3.0 * sem(lvl[0]) + 2e-3);
}

TEST_CASE("hyperbolic disk exits raise DomainError for discard-and-resample") {
    auto hyp = make_hyperbolic(2);
    // a frame parked near the boundary with huge increments must exit
    OrthonormalFrame f = init_frame(*hyp, vec2(0.94, 0.0), 0.01);
    SdeStepConfig cfg{1e-2, 1.0, 1};
    bool exited = false;
    GaussianStream rng(7);
    try {
        for (int k = 0; k < 2000; ++k)
            f = step(*hyp, f, Vec(0.1 * rng.gauss_vec(2)), cfg);
    } catch (const DomainError&) {
        exited = true;
    }
    CHECK(exited);
}

TEST_CASE("step refuses to cross the flow horizon") {
    auto hyp = make_hyperbolic(2);
    OrthonormalFrame f = init_frame(*hyp, vec2(0, 0), 0.4999);
    SdeStepConfig cfg{1e-3, 1.0, 1};
    CHECK_THROWS_AS(step(*hyp, f, vec2(0, 0), cfg), DomainError);
}
