#pragma once

// Forward/backward kernels for the fixed layer set used by the CNN and MLP.
// Layouts: sequences are [batch x channels x length], flat features [batch x features].
// Backward kernels accumulate (+=) into parameter gradients and overwrite input gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "namescore/numkit/tensor.hpp"
#include "namescore/util/rng.hpp"

namespace namescore::nk {

namespace detail {

/// Dot product with eight fixed accumulators: vectorizable and order-deterministic.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
    T acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
    T tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

// ---------------------------------------------------------------- embedding

/// indices: B*W row-major token ids; table: [V x D]. Returns [B x D x W].
template <class T>
Tensor<T> embedding_forward(std::span<const std::int32_t> indices, std::size_t batch, std::size_t window,
                            const Tensor<T>& table) {
    require(indices.size() == batch * window, "embedding_forward: index count does not match batch x window");
    const std::size_t rows = table.dim(0);
    const std::size_t d = table.dim(1);
    Tensor<T> out({batch, d, window});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t w = 0; w < window; ++w) {
            const auto idx = indices[b * window + w];
            if (idx < 0 || static_cast<std::size_t>(idx) >= rows)
                throw PreconditionError("embedding_forward: index " + std::to_string(idx) + " out of range");
            const T* row = table.data() + static_cast<std::size_t>(idx) * d;
            for (std::size_t k = 0; k < d; ++k) out.at(b, k, w) = row[k];
        }
    }
    return out;
}

template <class T>
void embedding_backward(std::span<const std::int32_t> indices, std::size_t batch, std::size_t window,
                        const Tensor<T>& grad_out, Tensor<T>& table_grad) {
    const std::size_t d = table_grad.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t w = 0; w < window; ++w) {
            T* row = table_grad.data() + static_cast<std::size_t>(indices[b * window + w]) * d;
            for (std::size_t k = 0; k < d; ++k) row[k] += grad_out.at(b, k, w);
        }
    }
}

// ---------------------------------------------------------------- conv1d

/// "Same" zero-padded cross-correlation. x: [B x Cin x L], kernel: [Cout x Cin x K], K odd.
template <class T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
    const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = kernel.dim(0), ksize = kernel.dim(2);
    if (ksize % 2 == 0) throw PreconditionError("conv1d: even kernel size " + std::to_string(ksize) + " is unsupported");
    require(kernel.dim(1) == cin, "conv1d: kernel input channels do not match input");
    require(bias.size() == cout, "conv1d: bias length does not match output channels");
    const auto pad = static_cast<std::ptrdiff_t>(ksize / 2);
    const auto L = static_cast<std::ptrdiff_t>(len);
    Tensor<T> y({batch, cout, len});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            T* yrow = y.data() + (b * cout + co) * len;
            std::fill(yrow, yrow + len, bias[co]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* xrow = x.data() + (b * cin + ci) * len;
                const T* wrow = kernel.data() + (co * cin + ci) * ksize;
                for (std::size_t k = 0; k < ksize; ++k) {
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pad;
                    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
                    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - off);
                    if (hi > lo) detail::axpy(wrow[k], xrow + lo + off, yrow + lo, static_cast<std::size_t>(hi - lo));
                }
            }
        }
    }
    return y;
}

/// Accumulates kernel/bias gradients; writes the input gradient into *grad_x when non-null.
template <class T>
void conv1d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& grad_y, Tensor<T>* grad_x,
                     Tensor<T>& grad_kernel, Tensor<T>& grad_bias) {
    const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = kernel.dim(0), ksize = kernel.dim(2);
    const auto pad = static_cast<std::ptrdiff_t>(ksize / 2);
    const auto L = static_cast<std::ptrdiff_t>(len);
    if (grad_x) *grad_x = Tensor<T>(x.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const T* gyrow = grad_y.data() + (b * cout + co) * len;
            T gb = 0;
            for (std::size_t l = 0; l < len; ++l) gb += gyrow[l];
            grad_bias[co] += gb;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* xrow = x.data() + (b * cin + ci) * len;
                const T* wrow = kernel.data() + (co * cin + ci) * ksize;
                T* gwrow = grad_kernel.data() + (co * cin + ci) * ksize;
                T* gxrow = grad_x ? grad_x->data() + (b * cin + ci) * len : nullptr;
                for (std::size_t k = 0; k < ksize; ++k) {
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pad;
                    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
                    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - off);
                    if (hi <= lo) continue;
                    const auto n = static_cast<std::size_t>(hi - lo);
                    gwrow[k] += detail::dot(gyrow + lo, xrow + lo + off, n);
                    if (gxrow) detail::axpy(wrow[k], gyrow + lo, gxrow + lo + off, n);
                }
            }
        }
    }
}

// ---------------------------------------------------------------- maxpool1d

template <class T>
struct PoolResult {
    Tensor<T> y;
    std::vector<std::size_t> argmax;  // flat index into the input, one per output element
};

/// Non-overlapping windows of width `pool`; the trailing remainder is dropped. Ties go to the first max.
template <class T>
PoolResult<T> maxpool1d_forward(const Tensor<T>& x, std::size_t pool) {
    const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
    require(pool >= 1, "maxpool1d: pool must be >= 1");
    if (len < pool) throw PreconditionError("maxpool1d: length " + std::to_string(len) + " is shorter than pool " + std::to_string(pool));
    const std::size_t out_len = len / pool;
    PoolResult<T> r{Tensor<T>({batch, ch, out_len}), std::vector<std::size_t>(batch * ch * out_len)};
    for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        const T* xrow = x.data() + bc * len;
        for (std::size_t j = 0; j < out_len; ++j) {
            std::size_t best = j * pool;
            for (std::size_t k = 1; k < pool; ++k)
                if (xrow[j * pool + k] > xrow[best]) best = j * pool + k;
            r.y[bc * out_len + j] = xrow[best];
            r.argmax[bc * out_len + j] = bc * len + best;
        }
    }
    return r;
}

template <class T>
Tensor<T> maxpool1d_backward(const Tensor<T>& grad_y, const std::vector<std::size_t>& argmax, const Shape& x_shape) {
    Tensor<T> gx(x_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += grad_y[i];
    return gx;
}

// ---------------------------------------------------------------- dense

/// x: [B x In], weight: [In x Out], bias: [Out].
template <class T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    const std::size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(1);
    require(weight.dim(0) == in, "dense: weight rows " + std::to_string(weight.dim(0)) + " do not match input width " + std::to_string(in));
    Tensor<T> y({batch, out});
    for (std::size_t b = 0; b < batch; ++b) {
        T* yrow = y.data() + b * out;
        std::copy(bias.data(), bias.data() + out, yrow);
        const T* xrow = x.data() + b * in;
        for (std::size_t i = 0; i < in; ++i)
            if (xrow[i] != T{0}) detail::axpy(xrow[i], weight.data() + i * out, yrow, out);
    }
    return y;
}

template <class T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_y, Tensor<T>* grad_x,
                    Tensor<T>& grad_weight, Tensor<T>& grad_bias) {
    const std::size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(1);
    if (grad_x) *grad_x = Tensor<T>(x.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        const T* gyrow = grad_y.data() + b * out;
        const T* xrow = x.data() + b * in;
        for (std::size_t o = 0; o < out; ++o) grad_bias[o] += gyrow[o];
        for (std::size_t i = 0; i < in; ++i) {
            if (xrow[i] != T{0}) detail::axpy(xrow[i], gyrow, grad_weight.data() + i * out, out);
            if (grad_x) grad_x->data()[b * in + i] = detail::dot(gyrow, weight.data() + i * out, out);
        }
    }
}

// ---------------------------------------------------------------- relu

template <class T>
Tensor<T> relu_forward(Tensor<T> x) {
    for (auto& v : x.vec()) v = v > T{0} ? v : T{0};
    return x;
}

/// Uses the forward output as the mask.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> grad_y) {
    for (std::size_t i = 0; i < grad_y.size(); ++i)
        if (!(y[i] > T{0})) grad_y[i] = T{0};
    return grad_y;
}

// ---------------------------------------------------------------- dropout

template <class T>
struct DropoutResult {
    Tensor<T> y;
    std::vector<T> scale;  // 0 for dropped units, 1/(1-p) for survivors
};

/// Inverted dropout. Only call in training mode.
template <class T>
DropoutResult<T> dropout_forward(const Tensor<T>& x, double p, Rng& rng) {
    require(p >= 0.0 && p < 1.0, "dropout: p must lie in [0, 1)");
    DropoutResult<T> r{x, std::vector<T>(x.size())};
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.scale[i] = rng.bernoulli(p) ? T{0} : keep;
        r.y[i] *= r.scale[i];
    }
    return r;
}

template <class T>
Tensor<T> dropout_backward(const std::vector<T>& scale, Tensor<T> grad_y) {
    for (std::size_t i = 0; i < grad_y.size(); ++i) grad_y[i] *= scale[i];
    return grad_y;
}

// ---------------------------------------------------------------- batchnorm1d

template <class T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
};

template <class T>
struct BatchNormResult {
    Tensor<T> y;
    BatchNormCache<T> cache;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Normalizes each feature over the batch (biased variance), then scales and shifts.
/// Updates the running statistics (unbiased variance) with kBatchNormMomentum.
template <class T>
BatchNormResult<T> batchnorm_forward_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                           Tensor<T>& running_mean, Tensor<T>& running_var) {
    const std::size_t batch = x.dim(0), feat = x.dim(1);
    if (batch < 2) throw PreconditionError("batchnorm: training mode requires a batch of at least 2");
    BatchNormResult<T> r{Tensor<T>(x.shape()), {Tensor<T>(x.shape()), std::vector<T>(feat)}};
    for (std::size_t f = 0; f < feat; ++f) {
        double mean = 0.0;
        for (std::size_t b = 0; b < batch; ++b) mean += x.at(b, f);
        mean /= static_cast<double>(batch);
        double var = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double d = x.at(b, f) - mean;
            var += d * d;
        }
        var /= static_cast<double>(batch);
        const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
        r.cache.inv_std[f] = static_cast<T>(inv_std);
        for (std::size_t b = 0; b < batch; ++b) {
            const T xh = static_cast<T>((x.at(b, f) - mean) * inv_std);
            r.cache.xhat.at(b, f) = xh;
            r.y.at(b, f) = gamma[f] * xh + beta[f];
        }
        const double unbiased = var * static_cast<double>(batch) / static_cast<double>(batch - 1);
        running_mean[f] = static_cast<T>((1.0 - kBatchNormMomentum) * running_mean[f] + kBatchNormMomentum * mean);
        running_var[f] = static_cast<T>((1.0 - kBatchNormMomentum) * running_var[f] + kBatchNormMomentum * unbiased);
    }
    return r;
}

template <class T>
Tensor<T> batchnorm_forward_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                  const Tensor<T>& running_mean, const Tensor<T>& running_var) {
    const std::size_t batch = x.dim(0), feat = x.dim(1);
    Tensor<T> y(x.shape());
    for (std::size_t f = 0; f < feat; ++f) {
        const T inv_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[f]) + kBatchNormEps));
        for (std::size_t b = 0; b < batch; ++b) y.at(b, f) = gamma[f] * (x.at(b, f) - running_mean[f]) * inv_std + beta[f];
    }
    return y;
}

template <class T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& grad_y,
                             Tensor<T>& grad_gamma, Tensor<T>& grad_beta) {
    const std::size_t batch = grad_y.dim(0), feat = grad_y.dim(1);
    Tensor<T> gx(grad_y.shape());
    const T n = static_cast<T>(batch);
    for (std::size_t f = 0; f < feat; ++f) {
        T sum_g = 0, sum_gx = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            const T g = grad_y.at(b, f);
            sum_g += g;
            sum_gx += g * cache.xhat.at(b, f);
        }
        grad_beta[f] += sum_g;
        grad_gamma[f] += sum_gx;
        const T k = gamma[f] * cache.inv_std[f] / n;
        for (std::size_t b = 0; b < batch; ++b)
            gx.at(b, f) = k * (n * grad_y.at(b, f) - sum_g - cache.xhat.at(b, f) * sum_gx);
    }
    return gx;
}

// ---------------------------------------------------------------- softmax + cross-entropy

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    Tensor<T> p(logits.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        const T* row = logits.data() + b * classes;
        const T mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c] - mx));
        for (std::size_t c = 0; c < classes; ++c) p.at(b, c) = static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / z);
    }
    return p;
}

template <class T>
struct XentResult {
    double loss = 0.0;    // mean over the batch
    Tensor<T> grad;       // (softmax - onehot) / B
};

template <class T>
XentResult<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels) {
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    require(labels.size() == batch, "softmax_xent: label count does not match batch");
    XentResult<T> r{0.0, Tensor<T>(logits.shape())};
    for (std::size_t b = 0; b < batch; ++b) {
        const auto y = static_cast<std::size_t>(labels[b]);
        require(labels[b] >= 0 && y < classes, "softmax_xent: label out of range");
        const T* row = logits.data() + b * classes;
        const double mx = static_cast<double>(*std::max_element(row, row + classes));
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
        const double log_z = mx + std::log(z);
        r.loss += log_z - static_cast<double>(row[y]);
        for (std::size_t c = 0; c < classes; ++c) {
            const double pc = std::exp(static_cast<double>(row[c]) - log_z);
            r.grad.at(b, c) = static_cast<T>((pc - (c == y ? 1.0 : 0.0)) / static_cast<double>(batch));
        }
    }
    r.loss /= static_cast<double>(batch);
    return r;
}

}  // namespace namescore::nk
