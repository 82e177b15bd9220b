#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmcx/tensor.hpp"

namespace bmcx {

enum class Op {
    Leaf,
    Add,
    Mul,
    Scale,
    MatMul,
    Conv2d,
    Relu,
    MaxPool2d,
    Flatten,
    LogSoftmax,
    NllLoss,
    Sum,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MatMul: return "matmul";
        case Op::Conv2d: return "conv2d";
        case Op::Relu: return "relu";
        case Op::MaxPool2d: return "max-pool2d";
        case Op::Flatten: return "flatten";
        case Op::LogSoftmax: return "log-softmax";
        case Op::NllLoss: return "nll-loss";
        case Op::Sum: return "sum";
    }
    return "?";
}

/// Define-by-run reverse-mode tape over dense double tensors. A tape is built
/// fresh per minibatch, owns every intermediate value, and is never shared
/// across threads. Node ids are indices into the tape in topological order.
class Tape {
public:
    int leaf(Tensor value, bool trainable = false) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(value);
        n.trainable = trainable;
        n.requires_grad = trainable;
        return push(std::move(n));
    }

    /// Elementwise add. Also accepts (N,K)+(K) and (N,C,H,W)+(C) bias
    /// broadcasts; the broadcast dimensions are sum-reduced in backward.
    int add(int a, int b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        int mode;  // 0: same shape, 1: row bias, 2: channel bias
        if (x.shape == y.shape) {
            mode = 0;
        } else if (x.rank() == 2 && y.rank() == 1 && x.dim(1) == y.dim(0)) {
            mode = 1;
        } else if (x.rank() == 4 && y.rank() == 1 && x.dim(1) == y.dim(0)) {
            mode = 2;
        } else {
            throw shape_error("add", x, y);
        }
        Node n;
        n.op = Op::Add;
        n.in = {a, b};
        n.iattr = {mode, 0, 0};
        n.value = Tensor::zeros(x.shape);
        const int64_t total = x.numel();
        if (mode == 0) {
            for (int64_t i = 0; i < total; ++i) n.value.data[i] = x.data[i] + y.data[i];
        } else if (mode == 1) {
            const int64_t k = x.dim(1);
            for (int64_t i = 0; i < total; ++i) n.value.data[i] = x.data[i] + y.data[i % k];
        } else {
            const int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
            for (int64_t i = 0; i < total; ++i) n.value.data[i] = x.data[i] + y.data[(i / hw) % c];
        }
        return push_with_grad_flag(std::move(n));
    }

    /// Elementwise product; shapes must match exactly.
    int mul(int a, int b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        if (x.shape != y.shape) throw shape_error("mul", x, y);
        Node n;
        n.op = Op::Mul;
        n.in = {a, b};
        n.value = Tensor::zeros(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) n.value.data[i] = x.data[i] * y.data[i];
        return push_with_grad_flag(std::move(n));
    }

    /// Reduce every element to one scalar.
    int sum(int a) {
        const Tensor& x = value(a);
        Node n;
        n.op = Op::Sum;
        n.in = {a, -1};
        double s = 0.0;
        for (double v : x.data) s += v;
        n.value = Tensor::scalar(s);
        return push_with_grad_flag(std::move(n));
    }

    int scale(int a, double s) {
        const Tensor& x = value(a);
        Node n;
        n.op = Op::Scale;
        n.in = {a, -1};
        n.fattr = s;
        n.value = Tensor::zeros(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) n.value.data[i] = s * x.data[i];
        return push_with_grad_flag(std::move(n));
    }

    int matmul(int a, int b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
            throw shape_error("matmul", x, y);
        }
        const int64_t m = x.dim(0), k = x.dim(1), p = y.dim(1);
        Node n;
        n.op = Op::MatMul;
        n.in = {a, b};
        n.value = Tensor::zeros({m, p});
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t l = 0; l < k; ++l) {
                const double xv = x.data[i * k + l];
                if (xv == 0.0) continue;
                const double* yrow = &y.data[l * p];
                double* orow = &n.value.data[i * p];
                for (int64_t j = 0; j < p; ++j) orow[j] += xv * yrow[j];
            }
        }
        return push_with_grad_flag(std::move(n));
    }

    /// x: (N,Cin,H,W), w: (Cout,Cin,k,k). Explicit zero padding, integer
    /// stride, no dilation or groups.
    int conv2d(int xn, int wn, int stride, int pad) {
        const Tensor& x = value(xn);
        const Tensor& w = value(wn);
        if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3)) {
            throw shape_error("conv2d", x, w);
        }
        if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and pad >= 0");
        const int64_t k = w.dim(2);
        if (x.dim(2) + 2 * pad < k || x.dim(3) + 2 * pad < k) {
            throw shape_error("conv2d", x, w);
        }
        const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t Cout = w.dim(0);
        const int64_t Ho = (H + 2 * pad - k) / stride + 1;
        const int64_t Wo = (W + 2 * pad - k) / stride + 1;
        Node n;
        n.op = Op::Conv2d;
        n.in = {xn, wn};
        n.iattr = {stride, pad, 0};
        n.value = Tensor::zeros({N, Cout, Ho, Wo});
        for (int64_t b = 0; b < N; ++b)
            for (int64_t co = 0; co < Cout; ++co)
                for (int64_t ho = 0; ho < Ho; ++ho)
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        double acc = 0.0;
                        for (int64_t ci = 0; ci < Cin; ++ci)
                            for (int64_t kh = 0; kh < k; ++kh) {
                                const int64_t hi = ho * stride - pad + kh;
                                if (hi < 0 || hi >= H) continue;
                                for (int64_t kw = 0; kw < k; ++kw) {
                                    const int64_t wi = wo * stride - pad + kw;
                                    if (wi < 0 || wi >= W) continue;
                                    acc += x.data[((b * Cin + ci) * H + hi) * W + wi] *
                                           w.data[((co * Cin + ci) * k + kh) * k + kw];
                                }
                            }
                        n.value.data[((b * Cout + co) * Ho + ho) * Wo + wo] = acc;
                    }
        return push_with_grad_flag(std::move(n));
    }

    int relu(int a) {
        const Tensor& x = value(a);
        Node n;
        n.op = Op::Relu;
        n.in = {a, -1};
        n.value = Tensor::zeros(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double v = x.data[i];
            n.value.data[i] = v > 0.0 ? v : 0.0;
            min_relu_margin_ = std::min(min_relu_margin_, std::abs(v));
        }
        return push_with_grad_flag(std::move(n));
    }

    /// Non-overlapping k x k max pooling; spatial dims must be divisible by k.
    int max_pool2d(int a, int k) {
        const Tensor& x = value(a);
        if (x.rank() != 4 || k < 1 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
            throw std::invalid_argument(std::string("max-pool2d: shape ") + Tensor::shape_str(x.shape) +
                                        " not divisible by window " + std::to_string(k));
        }
        const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t Ho = H / k, Wo = W / k;
        Node n;
        n.op = Op::MaxPool2d;
        n.in = {a, -1};
        n.iattr = {k, 0, 0};
        n.value = Tensor::zeros({N, C, Ho, Wo});
        n.argmax.resize(static_cast<size_t>(n.value.numel()));
        for (int64_t b = 0; b < N; ++b)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t ho = 0; ho < Ho; ++ho)
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        double best = -std::numeric_limits<double>::infinity();
                        double second = best;
                        int64_t best_idx = -1;
                        for (int64_t kh = 0; kh < k; ++kh)
                            for (int64_t kw = 0; kw < k; ++kw) {
                                const int64_t idx = ((b * C + c) * H + ho * k + kh) * W + wo * k + kw;
                                const double v = x.data[idx];
                                if (v > best) {
                                    second = best;
                                    best = v;
                                    best_idx = idx;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                        const int64_t out = ((b * C + c) * Ho + ho) * Wo + wo;
                        n.value.data[out] = best;
                        n.argmax[static_cast<size_t>(out)] = best_idx;
                        if (k > 1) min_pool_gap_ = std::min(min_pool_gap_, best - second);
                    }
        return push_with_grad_flag(std::move(n));
    }

    int flatten(int a) {
        const Tensor& x = value(a);
        if (x.rank() < 1) throw std::invalid_argument("flatten: rank-0 input");
        int64_t rest = 1;
        for (int i = 1; i < x.rank(); ++i) rest *= x.dim(i);
        Node n;
        n.op = Op::Flatten;
        n.in = {a, -1};
        n.value = Tensor({x.dim(0), rest}, x.data);
        return push_with_grad_flag(std::move(n));
    }

    /// Row-wise log-softmax of a (N,K) tensor.
    int log_softmax(int a) {
        const Tensor& x = value(a);
        if (x.rank() != 2) {
            throw std::invalid_argument(std::string("log-softmax: expected (N,K), got ") +
                                        Tensor::shape_str(x.shape));
        }
        const int64_t N = x.dim(0), K = x.dim(1);
        Node n;
        n.op = Op::LogSoftmax;
        n.in = {a, -1};
        n.value = Tensor::zeros(x.shape);
        for (int64_t i = 0; i < N; ++i) {
            const double* row = &x.data[i * K];
            double m = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < K; ++j) m = std::max(m, row[j]);
            double s = 0.0;
            for (int64_t j = 0; j < K; ++j) s += std::exp(row[j] - m);
            const double lse = m + std::log(s);
            for (int64_t j = 0; j < K; ++j) n.value.data[i * K + j] = row[j] - lse;
        }
        return push_with_grad_flag(std::move(n));
    }

    /// Mean negative log-likelihood of log-probabilities (N,K) at the given
    /// labels, optionally weighted per sample. Uniform weights are factored
    /// out of the sum so a constant weight w scales the unweighted loss
    /// exactly. Labels and weights are attributes, not differentiable inputs.
    int nll_loss(int logp_node, std::span<const int32_t> labels, std::span<const double> weights = {}) {
        const Tensor& lp = value(logp_node);
        if (lp.rank() != 2 || static_cast<int64_t>(labels.size()) != lp.dim(0)) {
            throw std::invalid_argument(std::string("nll-loss: log-probs ") + Tensor::shape_str(lp.shape) +
                                        " vs " + std::to_string(labels.size()) + " labels");
        }
        if (!weights.empty() && weights.size() != labels.size()) {
            throw std::invalid_argument("nll-loss: weights length does not match batch");
        }
        const int64_t N = lp.dim(0), K = lp.dim(1);
        Node n;
        n.op = Op::NllLoss;
        n.in = {logp_node, -1};
        n.labels.assign(labels.begin(), labels.end());
        n.weights.assign(weights.begin(), weights.end());
        for (int64_t i = 0; i < N; ++i) {
            if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= K) {
                throw std::invalid_argument("nll-loss: label " + std::to_string(labels[static_cast<size_t>(i)]) +
                                            " out of range [0," + std::to_string(K) + ")");
            }
        }
        double loss = 0.0;
        const bool uniform = n.weights.empty() ||
                             std::all_of(n.weights.begin(), n.weights.end(),
                                         [&](double w) { return w == n.weights.front(); });
        if (uniform) {
            double s = 0.0;
            for (int64_t i = 0; i < N; ++i) s += -lp.data[i * K + labels[static_cast<size_t>(i)]];
            loss = (N > 0) ? s / static_cast<double>(N) : 0.0;
            if (!n.weights.empty()) loss *= n.weights.front();
        } else {
            double s = 0.0;
            for (int64_t i = 0; i < N; ++i)
                s += n.weights[static_cast<size_t>(i)] * -lp.data[i * K + labels[static_cast<size_t>(i)]];
            loss = s / static_cast<double>(N);
        }
        n.value = Tensor::scalar(loss);
        return push_with_grad_flag(std::move(n));
    }

    /// Backpropagate from a scalar node. Populates a gradient for every node
    /// reachable from a trainable leaf; iteration order is fixed by node id,
    /// so repeated runs over the same tape are bit-identical.
    void backward(int loss_node) {
        const Tensor& l = value(loss_node);
        if (l.numel() != 1) {
            throw std::invalid_argument(std::string("backward: loss must be scalar, got ") +
                                        Tensor::shape_str(l.shape));
        }
        grads_.assign(nodes_.size(), Tensor());
        for (size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].requires_grad) grads_[i] = Tensor::zeros(nodes_[i].value.shape);
        }
        if (!nodes_[static_cast<size_t>(loss_node)].requires_grad) return;  // nothing trainable upstream
        grads_[static_cast<size_t>(loss_node)].data[0] = 1.0;
        for (int id = loss_node; id >= 0; --id) {
            const Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.requires_grad) continue;
            backprop_node(id, n);
        }
        has_grads_ = true;
    }

    /// Reference into the tape; invalidated by the next op recorded.
    const Tensor& value(int id) const { return nodes_.at(static_cast<size_t>(id)).value; }

    const Tensor& grad(int id) const {
        if (!has_grads_) throw std::logic_error("tape: grad() before backward()");
        return grads_.at(static_cast<size_t>(id));
    }

    size_t size() const { return nodes_.size(); }

    /// Smallest |input| seen by any relu on this tape; used to keep finite
    /// difference probes away from the kink.
    double min_relu_margin() const { return min_relu_margin_; }
    /// Smallest best-vs-second gap in any pooling window.
    double min_pool_gap() const { return min_pool_gap_; }

private:
    struct Node {
        Op op = Op::Leaf;
        std::array<int, 2> in = {-1, -1};
        Tensor value;
        bool trainable = false;
        bool requires_grad = false;
        std::array<int64_t, 3> iattr = {0, 0, 0};
        double fattr = 0.0;
        std::vector<int32_t> labels;
        std::vector<double> weights;
        std::vector<int64_t> argmax;
    };

    int push(Node n) {
        nodes_.push_back(std::move(n));
        has_grads_ = false;
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push_with_grad_flag(Node n) {
        n.requires_grad = false;
        for (int in : n.in) {
            if (in >= 0 && nodes_[static_cast<size_t>(in)].requires_grad) n.requires_grad = true;
        }
        return push(std::move(n));
    }

    std::invalid_argument shape_error(const char* op, const Tensor& a, const Tensor& b) const {
        return std::invalid_argument(std::string(op) + ": incompatible shapes " + Tensor::shape_str(a.shape) +
                                     " and " + Tensor::shape_str(b.shape));
    }

    void accumulate(int target, const Tensor& g) {
        if (target < 0) return;
        Node& t = nodes_[static_cast<size_t>(target)];
        if (!t.requires_grad) return;
        Tensor& dst = grads_[static_cast<size_t>(target)];
        for (int64_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
    }

    void backprop_node(int id, const Node& n) {
        const Tensor& up = grads_[static_cast<size_t>(id)];
        switch (n.op) {
            case Op::Leaf:
                return;
            case Op::Add: {
                accumulate(n.in[0], up);
                if (n.in[1] < 0 || !nodes_[static_cast<size_t>(n.in[1])].requires_grad) return;
                Tensor& gb = grads_[static_cast<size_t>(n.in[1])];
                const int mode = static_cast<int>(n.iattr[0]);
                if (mode == 0) {
                    for (int64_t i = 0; i < up.numel(); ++i) gb.data[i] += up.data[i];
                } else if (mode == 1) {
                    const int64_t k = n.value.dim(1);
                    for (int64_t i = 0; i < up.numel(); ++i) gb.data[i % k] += up.data[i];
                } else {
                    const int64_t c = n.value.dim(1), hw = n.value.dim(2) * n.value.dim(3);
                    for (int64_t i = 0; i < up.numel(); ++i) gb.data[(i / hw) % c] += up.data[i];
                }
                return;
            }
            case Op::Mul: {
                const Tensor& x = value(n.in[0]);
                const Tensor& y = value(n.in[1]);
                if (wants(n.in[0])) {
                    Tensor& g = grads_[static_cast<size_t>(n.in[0])];
                    for (int64_t i = 0; i < up.numel(); ++i) g.data[i] += up.data[i] * y.data[i];
                }
                if (wants(n.in[1])) {
                    Tensor& g = grads_[static_cast<size_t>(n.in[1])];
                    for (int64_t i = 0; i < up.numel(); ++i) g.data[i] += up.data[i] * x.data[i];
                }
                return;
            }
            case Op::Scale: {
                if (!wants(n.in[0])) return;
                Tensor& g = grads_[static_cast<size_t>(n.in[0])];
                for (int64_t i = 0; i < up.numel(); ++i) g.data[i] += n.fattr * up.data[i];
                return;
            }
            case Op::Sum: {
                if (!wants(n.in[0])) return;
                Tensor& g = grads_[static_cast<size_t>(n.in[0])];
                const double u = up.data[0];
                for (int64_t i = 0; i < g.numel(); ++i) g.data[i] += u;
                return;
            }
            case Op::MatMul: {
                const Tensor& x = value(n.in[0]);
                const Tensor& y = value(n.in[1]);
                const int64_t m = x.dim(0), k = x.dim(1), p = y.dim(1);
                if (wants(n.in[0])) {
                    Tensor& gx = grads_[static_cast<size_t>(n.in[0])];
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t l = 0; l < k; ++l) {
                            double acc = 0.0;
                            for (int64_t j = 0; j < p; ++j) acc += up.data[i * p + j] * y.data[l * p + j];
                            gx.data[i * k + l] += acc;
                        }
                }
                if (wants(n.in[1])) {
                    Tensor& gy = grads_[static_cast<size_t>(n.in[1])];
                    for (int64_t l = 0; l < k; ++l)
                        for (int64_t j = 0; j < p; ++j) {
                            double acc = 0.0;
                            for (int64_t i = 0; i < m; ++i) acc += x.data[i * k + l] * up.data[i * p + j];
                            gy.data[l * p + j] += acc;
                        }
                }
                return;
            }
            case Op::Conv2d: {
                const Tensor& x = value(n.in[0]);
                const Tensor& w = value(n.in[1]);
                const int64_t stride = n.iattr[0], pad = n.iattr[1];
                const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
                const int64_t Cout = w.dim(0), k = w.dim(2);
                const int64_t Ho = n.value.dim(2), Wo = n.value.dim(3);
                const bool wx = wants(n.in[0]), ww = wants(n.in[1]);
                Tensor* gx = wx ? &grads_[static_cast<size_t>(n.in[0])] : nullptr;
                Tensor* gw = ww ? &grads_[static_cast<size_t>(n.in[1])] : nullptr;
                for (int64_t b = 0; b < N; ++b)
                    for (int64_t co = 0; co < Cout; ++co)
                        for (int64_t ho = 0; ho < Ho; ++ho)
                            for (int64_t wo = 0; wo < Wo; ++wo) {
                                const double u = up.data[((b * Cout + co) * Ho + ho) * Wo + wo];
                                if (u == 0.0) continue;
                                for (int64_t ci = 0; ci < Cin; ++ci)
                                    for (int64_t kh = 0; kh < k; ++kh) {
                                        const int64_t hi = ho * stride - pad + kh;
                                        if (hi < 0 || hi >= H) continue;
                                        for (int64_t kw = 0; kw < k; ++kw) {
                                            const int64_t wi = wo * stride - pad + kw;
                                            if (wi < 0 || wi >= W) continue;
                                            const int64_t xi = ((b * Cin + ci) * H + hi) * W + wi;
                                            const int64_t wi2 = ((co * Cin + ci) * k + kh) * k + kw;
                                            if (gx) gx->data[xi] += u * w.data[wi2];
                                            if (gw) gw->data[wi2] += u * x.data[xi];
                                        }
                                    }
                            }
                return;
            }
            case Op::Relu: {
                if (!wants(n.in[0])) return;
                const Tensor& x = value(n.in[0]);
                Tensor& g = grads_[static_cast<size_t>(n.in[0])];
                for (int64_t i = 0; i < up.numel(); ++i) {
                    if (x.data[i] > 0.0) g.data[i] += up.data[i];
                }
                return;
            }
            case Op::MaxPool2d: {
                if (!wants(n.in[0])) return;
                Tensor& g = grads_[static_cast<size_t>(n.in[0])];
                for (int64_t i = 0; i < up.numel(); ++i) {
                    g.data[n.argmax[static_cast<size_t>(i)]] += up.data[i];
                }
                return;
            }
            case Op::Flatten: {
                if (!wants(n.in[0])) return;
                Tensor& g = grads_[static_cast<size_t>(n.in[0])];
                for (int64_t i = 0; i < up.numel(); ++i) g.data[i] += up.data[i];
                return;
            }
            case Op::LogSoftmax: {
                if (!wants(n.in[0])) return;
                const Tensor& y = n.value;
                const int64_t N = y.dim(0), K = y.dim(1);
                Tensor& g = grads_[static_cast<size_t>(n.in[0])];
                for (int64_t i = 0; i < N; ++i) {
                    double s = 0.0;
                    for (int64_t j = 0; j < K; ++j) s += up.data[i * K + j];
                    for (int64_t j = 0; j < K; ++j) {
                        g.data[i * K + j] += up.data[i * K + j] - std::exp(y.data[i * K + j]) * s;
                    }
                }
                return;
            }
            case Op::NllLoss: {
                if (!wants(n.in[0])) return;
                const int64_t N = value(n.in[0]).dim(0), K = value(n.in[0]).dim(1);
                Tensor& g = grads_[static_cast<size_t>(n.in[0])];
                const double u = up.data[0];
                for (int64_t i = 0; i < N; ++i) {
                    const double w = n.weights.empty() ? 1.0 : n.weights[static_cast<size_t>(i)];
                    g.data[i * K + n.labels[static_cast<size_t>(i)]] -= u * w / static_cast<double>(N);
                }
                return;
            }
        }
    }

    bool wants(int id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].requires_grad; }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool has_grads_ = false;
    double min_relu_margin_ = std::numeric_limits<double>::infinity();
    double min_pool_gap_ = std::numeric_limits<double>::infinity();
};

}  // namespace bmcx
