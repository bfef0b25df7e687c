#include "laytext/optim.hpp"

#include <cmath>

namespace laytext {

OptimState::OptimState(const std::vector<Tensor>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor& p : params) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void adam_step(std::vector<Tensor>& params, OptimState& state, const AdamConfig& cfg) {
    if (state.m_.size() != params.size())
        throw ContractError("adam_step: optimizer state built for a different parameter set");
    for (size_t pi = 0; pi < params.size(); ++pi) {
        if (state.m_[pi].size() != static_cast<size_t>(params[pi].numel()))
            throw DimensionError("adam_step: state shape mismatch at parameter " + std::to_string(pi));
        const std::vector<double>& g = params[pi].grad();
        for (size_t i = 0; i < g.size(); ++i)
            if (!std::isfinite(g[i]))
                throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(pi));
    }

    const int64_t t = ++state.step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        std::vector<double>& p = params[pi].data();
        const std::vector<double>& g = params[pi].grad();
        std::vector<double>& m = state.m_[pi];
        std::vector<double>& v = state.v_[pi];
        for (size_t i = 0; i < p.size(); ++i) {
            const double gi = i < g.size() ? g[i] : 0.0;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            const double decayed = p[i] - cfg.lr * cfg.weight_decay * p[i];
            p[i] = decayed - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (Tensor& p : params)
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (Tensor& p : params)
            for (double& g : p.grad()) g *= s;
    }
    return norm;
}

double grad_check(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                  double eps) {
    zero_grads(params);
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is not finite");
    backward(loss);

    double worst = 0.0;
    for (const Tensor& p : params) {
        Tensor& pm = const_cast<Tensor&>(p);
        std::vector<double>& data = pm.data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            double f_plus, f_minus;
            {
                NoGradGuard ng;
                data[i] = saved + eps;
                f_plus = loss_fn().item();
                data[i] = saved - eps;
                f_minus = loss_fn().item();
            }
            data[i] = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
                throw NumericError("grad_check: non-finite loss during finite differences");
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double analytic = pm.grad_at(static_cast<int64_t>(i));
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace laytext
