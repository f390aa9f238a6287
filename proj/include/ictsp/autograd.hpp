#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ictsp/tensor.hpp"

namespace ictsp {

/// A named trainable tensor with its accumulated gradient. The gradient is
/// scratch space filled by Tape::backward, so it stays writable through a
/// const Parameter.
struct Parameter {
    std::string name;
    Tensor value;
    mutable Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() const {
        if (!grad.same_shape(value)) grad = Tensor(value.shape());
        grad.fill(0.0);
    }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape that produced it is alive.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode gradient tape. One tape records one loss evaluation and is
/// confined to a single thread.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

    Tape() = default;
    /// With gradients disabled, param() records plain constants and no
    /// backward closures are kept.
    explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var param(const Parameter& p);
    bool grad_enabled() const { return grad_enabled_; }

    /// Record a derived value. `backward` receives the output value and its
    /// gradient, and must push gradients into its inputs via accumulate().
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Tensor value, std::span<const Var> inputs, Backward backward);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    void accumulate(Var v, const Tensor& grad);

    /// Backpropagate from a single-element loss and add the results into the
    /// grad field of every Parameter touched by this tape.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        const Parameter* param = nullptr;
        Backward backward;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

// Differentiable ops. All operate on rank-2 values (rank-1 behaves as one row).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var row);  // broadcast a length-k vector over every row of [n x k]
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var linear(Var x, Var weight, Var bias);  // x * W^T + b, W is [out x in]
Var transpose(Var a);
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var a);
Var dropout(Var a, double rate, std::mt19937_64& rng, bool training);
Var slice_cols(Var a, std::size_t start, std::size_t len);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var normalize_rows(Var a);  // unit L2 norm per row; zero rows stay zero
/// Scaled dot-product attention with the columns of q, k, v split into
/// `heads` equal groups, no mask. q is [n x d], k and v are [m x d]. If
/// `weights` is non-null it receives the head-averaged [n x m] attention.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, Tensor* weights = nullptr);
Var sum(Var a);
Var mean(Var a);
Var mse(Var prediction, const Tensor& target);

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace ictsp
