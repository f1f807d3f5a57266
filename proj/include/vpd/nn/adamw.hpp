#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "vpd/nn/core.hpp"

namespace vpd::nn {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay.
template <class T>
class AdamW {
public:
    AdamW(ParamList<T> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
        for (const auto* p : params_) {
            m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void set_lr(double lr) { config_.lr = lr; }
    double lr() const { return config_.lr; }
    long steps() const { return step_; }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
        const T lr = T(config_.lr);
        const T decay = T(1.0 - config_.lr * config_.weight_decay);
        const T b1 = T(config_.beta1), b2 = T(config_.beta2);
        const T step_size = T(config_.lr / bc1);
        const T inv_bc2_sqrt = T(1.0 / std::sqrt(bc2));
        const T eps = T(config_.eps);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
            v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseAbs2();
            if (lr == T(0)) continue;
            p.value *= decay;
            p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * inv_bc2_sqrt + eps);
        }
    }

private:
    ParamList<T> params_;
    AdamWConfig config_;
    std::vector<Mat<T>> m_;
    std::vector<Mat<T>> v_;
    long step_ = 0;
};

/// Cosine decay from base_lr to 0 over total steps.
inline double cosine_lr(double base_lr, long step, long total) {
    if (total <= 0) return base_lr;
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
std::vector<Mat<T>> snapshot(const ParamList<T>& params) {
    std::vector<Mat<T>> out;
    out.reserve(params.size());
    for (const auto* p : params) out.push_back(p->value);
    return out;
}

template <class T>
void restore(const ParamList<T>& params, const std::vector<Mat<T>>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace vpd::nn
