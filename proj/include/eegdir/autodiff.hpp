#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eegdir/errors.hpp"

namespace eegdir {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Plain value type; gradients live on the tape.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::size_t size() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    std::size_t dim(int axis) const;

    bool operator==(const Tensor& other) const = default;
};

namespace ad {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the tape lives.
class NdValue {
public:
    NdValue() = default;
    NdValue(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const;
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    std::size_t size() const { return value().size(); }
    std::size_t dim(int axis) const { return value().dim(axis); }
    bool requires_grad() const;
    // Empty until backward has run.
    const std::vector<double>& grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Define-by-run reverse-mode tape. One forward pass records nodes in creation
// order, backward replays them in reverse and accumulates into input grads.
// A tape is confined to one thread.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NdValue constant(Tensor value);
    NdValue variable(Tensor value);

    // Records an operation output. Throws NumericError naming `op` if any
    // element is non-finite. `fn` is dropped when no input requires grad.
    NdValue record(std::string_view op, Tensor value, std::span<const NdValue> inputs,
                   BackwardFn fn);

    void backward(NdValue loss);

    std::size_t size() const { return nodes_.size(); }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const std::vector<double>& grad(std::size_t id) const { return nodes_[id].grad; }
    // Null when the node does not require grad.
    double* grad_ptr(std::size_t id);

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

// Elementwise, exact shapes.
NdValue add(NdValue a, NdValue b);
NdValue sub(NdValue a, NdValue b);
NdValue mul(NdValue a, NdValue b);
NdValue scale(NdValue x, double s);
// x[..., D] + b[D]
NdValue add_bias(NdValue x, NdValue b);

// a[B..., M, K] . b[B..., K, N]; leading batch dims equal or absent on one side.
NdValue matmul(NdValue a, NdValue b);
NdValue transpose(NdValue x);
NdValue reshape(NdValue x, Shape shape);
NdValue slice_last(NdValue x, std::size_t start, std::size_t width);
NdValue concat_last(std::span<const NdValue> parts);

NdValue sigmoid(NdValue x);
NdValue tanh(NdValue x);
NdValue swish(NdValue x);
// tanh approximation
NdValue gelu(NdValue x);

NdValue sum(NdValue x);
NdValue mean(NdValue x);

NdValue layer_norm(NdValue x, NdValue gamma, NdValue beta, double eps);
// Standardizes each contiguous group of C/groups channels independently at
// every position, then applies the per-channel affine.
NdValue group_norm(NdValue x, std::size_t groups, NdValue gamma, NdValue beta, double eps);

// Rotates channel pairs (2j, 2j+1) at position n (axis -2) by sign*n*theta_j,
// theta_j = theta_base^(-2j/d).
NdValue rotate(NdValue x, int sign, double theta_base);

// x[..., T, T] * mask[T, T], mask broadcast over leading dims; no grad into mask.
NdValue decay_mask(NdValue x, const Tensor& mask);

// Divides each row of x[..., R, C] by max(|row sum|, 1).
NdValue row_normalize_clamped(NdValue x);

namespace testing {

enum class Fault { None, DecayMaskBackward };

// Deliberately corrupts one backward rule so gradient checks can be shown to
// catch it. Process-global; for tests and `verify` only.
void set_fault(Fault fault);
Fault fault();

}  // namespace testing

}  // namespace ad

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

using ScalarFn = std::function<ad::NdValue(ad::Tape&, std::span<const ad::NdValue>)>;

// Compares tape gradients of a scalar function against central differences
// (f(x+h e_i) - f(x-h e_i)) / 2h over every coordinate of every input.
// For each input, relative error is max_i |analytic_i - numeric_i| divided by
// max(max_i |analytic_i|, max_i |numeric_i|, 1e-8); the result is the worst input.
GradCheckResult finite_diff_check(const ScalarFn& f, std::span<const Tensor> inputs,
                                  double step = 1e-5);
GradCheckResult finite_diff_check(const std::function<ad::NdValue(ad::NdValue)>& f,
                                  const Tensor& x, double step = 1e-5);

}  // namespace eegdir
