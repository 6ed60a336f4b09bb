#include "gdpo/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gdpo/rng.hpp"

namespace gdpo {

ParamVector grad_of(const DifferentiableLoss& loss, const ParamVector& params) {
    ParamVector grad(params.size(), 0.0);
    double v = loss.value_and_grad(params, grad);
    if (!std::isfinite(v))
        throw NumericError("non-finite loss in '" + std::string(loss.name()) + "'");
    return grad;
}

double fd_check(const DifferentiableLoss& loss, const ParamVector& params,
                double h, std::uint64_t seed, int min_coords) {
    if (!(h > 0)) throw ValidationError("fd_check: step h must be > 0");

    ParamVector analytic = grad_of(loss, params);

    std::vector<std::size_t> coords(params.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > static_cast<std::size_t>(min_coords)) {
        Xoshiro256ss rng(stream_seed(seed, "fd-check", 0));
        rng.shuffle(coords);
        coords.resize(static_cast<std::size_t>(min_coords));
    }

    ParamVector probe = params;
    double max_rel = 0.0;
    for (std::size_t i : coords) {
        const double original = probe[i];
        probe[i] = original + h;
        double f_plus = loss.value(probe);
        probe[i] = original - h;
        double f_minus = loss.value(probe);
        probe[i] = original;
        double numeric = (f_plus - f_minus) / (2.0 * h);
        double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

void adam_step(ParamVector& params, const ParamVector& grads, OptimState& state,
               double lr, const AdamConfig& cfg) {
    if (grads.size() != params.size() || state.m.size() != params.size() ||
        state.v.size() != params.size())
        throw ShapeError("adam_step: parameter/gradient/state sizes disagree");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

double lr_at(const Schedule& schedule, long step) {
    if (schedule.total_steps < 1) throw ValidationError("schedule total_steps must be >= 1");
    if (schedule.warmup_ratio < 0 || schedule.warmup_ratio >= 1)
        throw ValidationError("warmup_ratio must be in [0, 1)");
    if (step < 0 || step > schedule.total_steps)
        throw ValidationError("schedule step " + std::to_string(step) + " out of range 0.." +
                              std::to_string(schedule.total_steps));

    const double warmup_steps = schedule.warmup_ratio * static_cast<double>(schedule.total_steps);
    const double s = static_cast<double>(step);
    if (s < warmup_steps) return schedule.lr_max * s / warmup_steps;
    const double span = static_cast<double>(schedule.total_steps) - warmup_steps;
    const double progress = span > 0 ? (s - warmup_steps) / span : 1.0;
    return schedule.lr_max * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace gdpo
