#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace vpd::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Rng = std::mt19937_64;

/// A trainable tensor and its accumulated gradient. Activations are laid out
/// with one sample (or time step) per column throughout.
template <class T>
struct Param {
    std::string name;
    Mat<T> value;
    Mat<T> grad;

    Param() = default;
    Param(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <class T>
using ParamList = std::vector<Param<T>*>;

template <class T>
void zero_grads(const ParamList<T>& params) {
    for (auto* p : params) p->zero_grad();
}

template <class T>
std::size_t count_parameters(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto* p : params) n += static_cast<std::size_t>(p->value.size());
    return n;
}

/// Fills with N(0, 2 / fan_in).
template <class T>
void init_he(Param<T>& p, Eigen::Index fan_in, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
}

/// Fills with U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <class T>
void init_xavier(Param<T>& p, Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
}

template <class T>
void relu_inplace(Mat<T>& x) {
    x = x.cwiseMax(T(0));
}

/// Gradient through a ReLU given its output.
template <class T>
Mat<T> relu_backward(const Mat<T>& out, const Mat<T>& grad) {
    return (out.array() > T(0)).select(grad, Mat<T>::Zero(grad.rows(), grad.cols()));
}

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

/// Derives an independent 64-bit stream seed from a base seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace vpd::nn
