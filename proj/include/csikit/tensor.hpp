#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "csikit/rng.hpp"

namespace csikit {

using Shape = std::vector<int>;

/// Dense row-major tensor of 64-bit reals with optional reverse-mode
/// gradient participation. Copies are shallow (shared storage); no op ever
/// writes into an input's data buffer, so sharing is safe.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int i) const;
    size_t size() const;

    std::span<const double> data() const;
    /// Mutable view of the raw buffer. Intended for initialization and
    /// in-place parameter updates only; never call it on an op output that
    /// another tensor may alias.
    std::span<double> mutable_data();

    double value() const;              // scalar extract
    double at(int r, int c) const;     // 2-D convenience
    double at(int i) const;            // 1-D convenience

    bool requires_grad() const;
    void set_requires_grad(bool v);

    /// Gradient buffer; only present while requires_grad is set.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();
    void accumulate_grad(std::span<const double> g);

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    friend class Tape;
    friend Tensor detach(const Tensor&);
};

/// Record of one forward pass, rebuilt per pass. Ops append their backward
/// rules in execution order, so inputs always precede consumers; backward()
/// replays the rules exactly once in reverse.
///
/// Tapes nest as a stack: constructing one makes it the active recording
/// target for the current thread until it is destroyed. Forward passes run
/// without any live Tape (eval mode) record nothing.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();
    static bool recording();

    void record(std::function<void()> backward_rule);
    size_t node_count() const { return nodes_.size(); }

    /// Runs all recorded rules newest-first, then clears the tape.
    void run_backward();

private:
    std::vector<std::function<void()>> nodes_;
    Tape* previous_ = nullptr;
};

/// Seeds d(loss)/d(loss) = 1 and back-propagates through the active tape.
/// Grad buffers accumulate across calls until explicitly zeroed.
void backward(const Tensor& loss);

// ---- ops -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // elementwise
Tensor square(const Tensor& a);
Tensor scale(const Tensor& a, double s);
/// mat[r x c] + vec[c] broadcast over rows (bias add).
Tensor add_rowvec(const Tensor& mat, const Tensor& vec);

/// 2-D matrix product. With canonical_sums set, inner reductions run in a
/// value-sorted order so the result depends only on the multiset of
/// products, not on row order; used by eval-mode attention so that token
/// permutation equivariance holds bit-exactly.
Tensor matmul(const Tensor& a, const Tensor& b, bool canonical_sums = false);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Softmax over the last axis, stabilized by max subtraction.
Tensor softmax(const Tensor& x, bool canonical_sums = false);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
/// Gated linear unit over the last axis: first half * sigmoid(second half).
Tensor glu(const Tensor& x);
/// Per-channel 1-D convolution, x[c x t] with kernel[c x k], zero-padded so
/// the time axis is preserved. k must be odd.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel);
Tensor sum(const Tensor& x);            // scalar
/// Inverted dropout; identity when not training or rate == 0 (rng may be
/// null in that case).
Tensor dropout(const Tensor& x, double rate, Rng* rng, bool training);
/// Value copy detached from the graph (stop-gradient).
Tensor detach(const Tensor& x);
/// Forward takes q_r's values, backward routes the incoming gradient to q_s
/// unchanged (identity Jacobian across a non-differentiable lookup).
Tensor straight_through(const Tensor& q_s, const Tensor& q_r);
/// rows[i] = table[idx[i], :]; gradients scatter-add into the chosen rows.
Tensor gather_rows(const Tensor& table, const std::vector<int>& idx);
/// Forward applies an arbitrary elementwise value map, backward is the
/// identity (constant-one gradient). Used by scalar quantizers trained
/// end-to-end.
Tensor unit_gradient_map(const Tensor& x,
                         const std::function<double(double)>& f);

// Value-sorted (therefore permutation-invariant) summation.
double canonical_sum(std::vector<double>& terms);

} // namespace csikit
