#pragma once

#include <functional>
#include <vector>

#include "laytext/tensor.hpp"

namespace laytext {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// First/second moments per parameter, zero until the first step. Weight decay
// is decoupled from the moment estimates (AdamW style).
class OptimState {
public:
    OptimState() = default;
    explicit OptimState(const std::vector<Tensor>& params);

    int64_t step_count() const { return step_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    void set_step_count(int64_t s) { step_ = s; }

private:
    friend void adam_step(std::vector<Tensor>&, OptimState&, const AdamConfig&);
    std::vector<std::vector<double>> m_, v_;
    int64_t step_ = 0;
};

// Bias-corrected Adam update from each parameter's .grad buffer. Any
// non-finite gradient aborts before mutating parameters or state.
void adam_step(std::vector<Tensor>& params, OptimState& state, const AdamConfig& cfg);

// Scales all gradients by min(1, max_norm / global_norm). Returns the norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

// Max relative error between analytic gradients and central differences:
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over every entry of
// every parameter. loss_fn must rebuild the loss from the current parameter
// values each call.
double grad_check(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                  double eps = 1e-5);

}  // namespace laytext
