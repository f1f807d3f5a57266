#pragma once

#include <vector>

#include "vpd/nn/core.hpp"

namespace vpd::nn {

struct Shape3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    int size() const { return channels * height * width; }
    bool operator==(const Shape3&) const = default;
};

/// 2D convolution over column batches; each column is one C x H x W sample
/// stored channel-major. Implemented as im2col + GEMM.
template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, Shape3 in, int out_channels, int kernel, int stride, int pad)
        : weight(name + ".weight", out_channels, in.channels * kernel * kernel),
          bias(name + ".bias", out_channels, 1),
          in_(in),
          kernel_(kernel),
          stride_(stride),
          pad_(pad) {
        out_.channels = out_channels;
        out_.height = (in.height + 2 * pad - kernel) / stride + 1;
        out_.width = (in.width + 2 * pad - kernel) / stride + 1;
    }

    Shape3 in_shape() const { return in_; }
    Shape3 out_shape() const { return out_; }

    void init_he(Rng& rng) {
        nn::init_he(weight, weight.value.cols(), rng);
        bias.value.setZero();
    }

    /// Keeps the im2col buffers for backward when `training`.
    Mat<T> forward(const Mat<T>& x, bool training) {
        if (!training) return infer(x);
        cols_.resize(static_cast<std::size_t>(x.cols()));
        return run(x, cols_.data());
    }

    Mat<T> infer(const Mat<T>& x) const { return run(x, nullptr); }

    /// Accumulates parameter gradients; returns input gradient when requested.
    Mat<T> backward(const Mat<T>& grad_out, bool need_input_grad) {
        const Eigen::Index batch = grad_out.cols();
        const int positions = out_.height * out_.width;
        Mat<T> dx;
        if (need_input_grad) dx = Mat<T>::Zero(in_.size(), batch);
        RowMat<T> dcols;
        for (Eigen::Index b = 0; b < batch; ++b) {
            Eigen::Map<const RowMat<T>> g(grad_out.col(b).data(), out_.channels, positions);
            const RowMat<T>& cols = cols_[static_cast<std::size_t>(b)];
            weight.grad.noalias() += g * cols.transpose();
            bias.grad.col(0) += g.rowwise().sum();
            if (need_input_grad) {
                dcols.noalias() = weight.value.transpose() * g;
                col2im(dcols, dx.col(b).data());
            }
        }
        return dx;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    Param<T> weight;
    Param<T> bias;

private:
    Mat<T> run(const Mat<T>& x, RowMat<T>* keep) const {
        const Eigen::Index batch = x.cols();
        const int positions = out_.height * out_.width;
        Mat<T> y(out_.size(), batch);
        RowMat<T> scratch;
        for (Eigen::Index b = 0; b < batch; ++b) {
            RowMat<T>& cols = keep ? keep[b] : scratch;
            im2col(x.col(b).data(), cols);
            Eigen::Map<RowMat<T>> out(y.col(b).data(), out_.channels, positions);
            out.noalias() = weight.value * cols;
            out.colwise() += bias.value.col(0);
        }
        return y;
    }

    void im2col(const T* src, RowMat<T>& cols) const {
        const int positions = out_.height * out_.width;
        cols.resize(static_cast<Eigen::Index>(in_.channels) * kernel_ * kernel_, positions);
        for (int c = 0; c < in_.channels; ++c) {
            const T* plane = src + static_cast<std::ptrdiff_t>(c) * in_.height * in_.width;
            for (int ky = 0; ky < kernel_; ++ky) {
                for (int kx = 0; kx < kernel_; ++kx) {
                    T* row = cols.row((c * kernel_ + ky) * kernel_ + kx).data();
                    for (int oy = 0; oy < out_.height; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        T* dst = row + oy * out_.width;
                        if (iy < 0 || iy >= in_.height) {
                            for (int ox = 0; ox < out_.width; ++ox) dst[ox] = T(0);
                            continue;
                        }
                        const T* line = plane + iy * in_.width;
                        for (int ox = 0; ox < out_.width; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            dst[ox] = (ix < 0 || ix >= in_.width) ? T(0) : line[ix];
                        }
                    }
                }
            }
        }
    }

    void col2im(const RowMat<T>& cols, T* dst) const {
        for (int c = 0; c < in_.channels; ++c) {
            T* plane = dst + static_cast<std::ptrdiff_t>(c) * in_.height * in_.width;
            for (int ky = 0; ky < kernel_; ++ky) {
                for (int kx = 0; kx < kernel_; ++kx) {
                    const T* row = cols.row((c * kernel_ + ky) * kernel_ + kx).data();
                    for (int oy = 0; oy < out_.height; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= in_.height) continue;
                        T* line = plane + iy * in_.width;
                        const T* srow = row + oy * out_.width;
                        for (int ox = 0; ox < out_.width; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix >= 0 && ix < in_.width) line[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }

    Shape3 in_;
    Shape3 out_;
    int kernel_ = 1;
    int stride_ = 1;
    int pad_ = 0;
    std::vector<RowMat<T>> cols_;
};

}  // namespace vpd::nn
