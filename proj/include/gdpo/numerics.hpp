#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "gdpo/params.hpp"

namespace gdpo {

// A scalar loss over a flat parameter vector. `value` must be a pure function
// of the parameters so finite differences can probe it; `value_and_grad`
// additionally produces the exact analytic gradient.
class DifferentiableLoss {
public:
    virtual ~DifferentiableLoss() = default;
    virtual std::string_view name() const = 0;
    virtual double value(const ParamVector& params) const = 0;
    virtual double value_and_grad(const ParamVector& params,
                                  ParamVector& grad) const = 0;
};

// Analytic gradient; NumericError naming the loss if its value is non-finite.
ParamVector grad_of(const DifferentiableLoss& loss, const ParamVector& params);

// Central finite differences over a seeded random subset of at least
// `min_coords` coordinates (all coordinates when there are fewer). Returns the
// max relative error against the analytic gradient, with denominator
// max(|analytic|, |numeric|, 1e-8).
double fd_check(const DifferentiableLoss& loss, const ParamVector& params,
                double h = 1e-5, std::uint64_t seed = 0, int min_coords = 64);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimState {
    ParamVector m;  // first moment
    ParamVector v;  // second moment
    long step = 0;

    static OptimState zeros(std::size_t n) { return {ParamVector(n, 0.0), ParamVector(n, 0.0), 0}; }
};

// Standard bias-corrected adaptive-moment update, in place.
void adam_step(ParamVector& params, const ParamVector& grads, OptimState& state,
               double lr, const AdamConfig& cfg = {});

// Linear warmup to lr_max over warmup_ratio * total_steps, then cosine decay
// to 0 at total_steps.
struct Schedule {
    double lr_max = 1e-3;
    long total_steps = 1;
    double warmup_ratio = 0.1;
};

double lr_at(const Schedule& schedule, long step);

}  // namespace gdpo
