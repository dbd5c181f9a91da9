#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "beatformer/rng.hpp"

namespace beatformer {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched by backward or zero_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(const TensorNode&)> backward_fn;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Dense row-major tensor with shared ownership. Copies alias the same
/// storage; use clone() for a deep copy. Ops on tensors that require grad
/// record a backward closure so backward() can sweep the graph in reverse.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(int axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
    void clear_grad() { node_->grad.clear(); }

    double item() const;
    double operator[](std::size_t i) const { return node_->data[i]; }

    /// Same values, no history.
    Tensor detach() const;
    Tensor clone() const;

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                              std::function<void(const detail::TensorNode&)> backward_fn);
};

/// Builds an op result; history is recorded only when an input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(const detail::TensorNode&)> backward_fn);

/// Reverse topological sweep from a scalar. Gradients accumulate into leaf
/// buffers; callers zero them explicitly between steps.
void backward(const Tensor& loss);

// Linear algebra and elementwise ops.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);  // b's shape must be a suffix of a's
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor softmax(const Tensor& x);  // over the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, const CounterRng& rng);

/// Replaces entries where blocked[i*cols + j] is set (matching the last two
/// axes, broadcast over the leading ones) with value. No gradient flows there.
Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& blocked, double value);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean squared error over rows whose position_mask entry is true; rows are
/// the first axis, every remaining element of a row participates.
Tensor mse_loss(const Tensor& pred, const Tensor& target, const std::vector<bool>& position_mask);

/// Binary cross entropy averaged over classes; probabilities clamped to
/// [1e-7, 1 - 1e-7] before the log.
Tensor bce_loss(const Tensor& probs, const std::vector<double>& labels);

inline constexpr double kBceClamp = 1e-7;

/// Trainable tensor with a dotted path name, e.g. enc.0.attn.wq.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

/// i.i.d. uniform on [-L, L], L = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, const CounterRng& rng);

}  // namespace beatformer
