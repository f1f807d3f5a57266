#pragma once

#include <stdexcept>
#include <vector>

#include "vpd/nn/core.hpp"

namespace vpd::nn {

/// y = W x + b on column batches.
template <class T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in, int out) : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {}

    int in_dim() const { return static_cast<int>(weight.value.cols()); }
    int out_dim() const { return static_cast<int>(weight.value.rows()); }

    void init_he(Rng& rng) {
        nn::init_he(weight, in_dim(), rng);
        bias.value.setZero();
    }
    void init_xavier(Rng& rng) {
        nn::init_xavier(weight, in_dim(), out_dim(), rng);
        bias.value.setZero();
    }

    Mat<T> forward(const Mat<T>& x) {
        input_ = x;
        return infer(x);
    }

    Mat<T> infer(const Mat<T>& x) const {
        Mat<T> y = weight.value * x;
        y.colwise() += bias.value.col(0);
        return y;
    }

    Mat<T> backward(const Mat<T>& grad_out) {
        weight.grad.noalias() += grad_out * input_.transpose();
        bias.grad.col(0) += grad_out.rowwise().sum();
        return weight.value.transpose() * grad_out;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    Param<T> weight;
    Param<T> bias;

private:
    Mat<T> input_;
};

/// Fully connected stack with ReLU between layers (none after the last).
template <class T>
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::string& name, const std::vector<int>& dims) {
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            layers_.emplace_back(name + "." + std::to_string(i), dims[i], dims[i + 1]);
        outputs_.resize(layers_.size());
    }

    void init(Rng& rng) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (i + 1 < layers_.size())
                layers_[i].init_he(rng);
            else
                layers_[i].init_xavier(rng);
        }
    }

    Mat<T> forward(const Mat<T>& x) {
        Mat<T> h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i].forward(h);
            if (i + 1 < layers_.size()) relu_inplace(h);
            outputs_[i] = h;
        }
        return h;
    }

    Mat<T> infer(const Mat<T>& x) const {
        Mat<T> h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i].infer(h);
            if (i + 1 < layers_.size()) relu_inplace(h);
        }
        return h;
    }

    Mat<T> backward(const Mat<T>& grad_out) {
        Mat<T> g = grad_out;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            if (i + 1 < layers_.size()) g = relu_backward(outputs_[i], g);
            g = layers_[i].backward(g);
        }
        return g;
    }

    void collect(ParamList<T>& out) {
        for (auto& l : layers_) l.collect(out);
    }

    int in_dim() const { return layers_.front().in_dim(); }
    int out_dim() const { return layers_.back().out_dim(); }
    std::vector<Linear<T>>& layers() { return layers_; }
    const std::vector<Linear<T>>& layers() const { return layers_; }

private:
    std::vector<Linear<T>> layers_;
    std::vector<Mat<T>> outputs_;
};

/// Batch normalization over columns (samples), one statistic per row.
template <class T>
class BatchNorm1d {
public:
    BatchNorm1d() = default;
    BatchNorm1d(std::string name, int features, double momentum = 0.1, double eps = 1e-5)
        : gamma(name + ".gamma", features, 1),
          beta(name + ".beta", features, 1),
          running_mean(Vec<T>::Zero(features)),
          running_var(Vec<T>::Ones(features)),
          momentum_(momentum),
          eps_(eps) {
        gamma.value.setOnes();
    }

    Mat<T> forward(const Mat<T>& x, bool training) {
        if (!training) return infer(x);
        const auto n = x.cols();
        if (n < 2) throw std::invalid_argument("BatchNorm1d: training batch needs at least 2 columns");
        const Vec<T> mean = x.rowwise().mean();
        centered_ = x.colwise() - mean;
        const Vec<T> var = centered_.array().square().rowwise().mean();
        inv_std_ = (var.array() + T(eps_)).rsqrt();
        xhat_ = centered_.array().colwise() * inv_std_.array();
        const Vec<T> unbiased = var * (T(n) / T(n - 1));
        running_mean = (T(1) - T(momentum_)) * running_mean + T(momentum_) * mean;
        running_var = (T(1) - T(momentum_)) * running_var + T(momentum_) * unbiased;
        Mat<T> y = xhat_.array().colwise() * gamma.value.col(0).array();
        y.colwise() += beta.value.col(0);
        return y;
    }

    Mat<T> infer(const Mat<T>& x) const {
        const Vec<T> scale = gamma.value.col(0).array() * (running_var.array() + T(eps_)).rsqrt();
        Mat<T> y = (x.colwise() - running_mean).array().colwise() * scale.array();
        y.colwise() += beta.value.col(0);
        return y;
    }

    Mat<T> backward(const Mat<T>& grad_out) {
        const T n = T(grad_out.cols());
        gamma.grad.col(0) += grad_out.cwiseProduct(xhat_).rowwise().sum();
        beta.grad.col(0) += grad_out.rowwise().sum();
        const Mat<T> dxhat = grad_out.array().colwise() * gamma.value.col(0).array();
        const Vec<T> sum_dxhat = dxhat.rowwise().sum();
        const Vec<T> sum_dxhat_xhat = dxhat.cwiseProduct(xhat_).rowwise().sum();
        Mat<T> dx = (dxhat * n).colwise() - sum_dxhat;
        dx.array() -= xhat_.array().colwise() * sum_dxhat_xhat.array();
        dx = dx.array().colwise() * (inv_std_.array() / n);
        return dx;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    Param<T> gamma;
    Param<T> beta;
    Vec<T> running_mean;
    Vec<T> running_var;

private:
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    Mat<T> centered_;
    Mat<T> xhat_;
    Vec<T> inv_std_;
};

/// Inverted dropout on individual entries.
template <class T>
class Dropout {
public:
    explicit Dropout(double rate = 0.0) : rate_(rate) {}

    Mat<T> forward(const Mat<T>& x, bool training, Rng& rng) {
        if (!training || rate_ <= 0.0) {
            mask_.resize(0, 0);
            return x;
        }
        std::bernoulli_distribution keep(1.0 - rate_);
        mask_.resize(x.rows(), x.cols());
        const T scale = T(1.0 / (1.0 - rate_));
        for (Eigen::Index i = 0; i < mask_.size(); ++i) mask_.data()[i] = keep(rng) ? scale : T(0);
        return x.cwiseProduct(mask_);
    }

    Mat<T> backward(const Mat<T>& grad_out) const {
        if (mask_.size() == 0) return grad_out;
        return grad_out.cwiseProduct(mask_);
    }

    double rate() const { return rate_; }

private:
    double rate_;
    Mat<T> mask_;
};

/// Mean softmax cross-entropy over columns; writes d(loss)/d(logits).
template <class T>
T softmax_cross_entropy(const Mat<T>& logits, const std::vector<int>& labels, Mat<T>* grad) {
    const auto n = logits.cols();
    Mat<T> probs(logits.rows(), n);
    T loss = 0;
    for (Eigen::Index c = 0; c < n; ++c) {
        const T mx = logits.col(c).maxCoeff();
        Vec<T> e = (logits.col(c).array() - mx).exp();
        const T z = e.sum();
        probs.col(c) = e / z;
        loss -= std::log(probs(labels[c], c));
    }
    loss /= T(n);
    if (grad) {
        *grad = probs;
        for (Eigen::Index c = 0; c < n; ++c) (*grad)(labels[c], c) -= T(1);
        *grad /= T(n);
    }
    return loss;
}

template <class T>
Vec<T> softmax(const Vec<T>& logits) {
    const T mx = logits.maxCoeff();
    Vec<T> e = (logits.array() - mx).exp();
    return e / e.sum();
}

}  // namespace vpd::nn
