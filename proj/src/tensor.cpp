#include "beatformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace beatformer {

using detail::TensorNode;

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " values");
    }
    for (auto d : shape) {
        if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(shape));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(new_node(shape, std::vector<double>(shape_numel(shape), value), requires_grad));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data, bool requires_grad) {
    return Tensor(new_node(shape, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::dim(int axis) const {
    const auto r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("axis out of range for " + shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

Tensor Tensor::detach() const { return Tensor(new_node(shape(), data(), false)); }

Tensor Tensor::clone() const {
    auto t = Tensor(new_node(shape(), data(), requires_grad()));
    t.node_->grad = node_->grad;
    return t;
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(const TensorNode&)> backward_fn) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    auto node = new_node(std::move(shape), std::move(data), needs);
    if (needs) {
        // Constant inputs stay referenced too: backward closures read their data.
        for (auto& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw std::invalid_argument("loss does not depend on any trainable tensor");

    // Iterative post-order DFS gives a topological order.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack{{loss.node(), 0}};
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
    for (TensorNode* node : order) {
        if (node->backward_fn) node->grad.clear();
    }
}

// ---------------------------------------------------------------------------
// matmul

namespace {

struct MatmulDims {
    std::size_t m, k, n;
    std::size_t batch;
    bool a_batched, b_batched;
    Shape out_shape;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul needs rank >= 2, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    MatmulDims d{};
    d.m = a.dim(-2);
    d.k = a.dim(-1);
    d.n = b.dim(-1);
    if (b.dim(-2) != d.k) {
        throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    d.a_batched = !a_batch.empty();
    d.b_batched = !b_batch.empty();
    if (d.a_batched && d.b_batched && a_batch != b_batch) {
        throw ShapeError("matmul batch dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Shape& batch_shape = d.a_batched ? a_batch : b_batch;
    d.batch = shape_numel(batch_shape);
    d.out_shape = batch_shape;
    d.out_shape.push_back(d.m);
    d.out_shape.push_back(d.n);
    return d;
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// da[m,k] += dc[m,n] * b[k,n]^T
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* dci = dc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += dci[j] * bp[j];
            da[i * k + p] += acc;
        }
    }
}

// db[k,n] += a[m,k]^T * dc[m,n]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* dci = dc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* dbp = db + p * n;
            for (std::size_t j = 0; j < n; ++j) dbp[j] += av * dci[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto d = matmul_dims(a, b);
    const std::size_t a_step = d.a_batched ? d.m * d.k : 0;
    const std::size_t b_step = d.b_batched ? d.k * d.n : 0;
    const std::size_t c_step = d.m * d.n;

    std::vector<double> out(d.batch * c_step, 0.0);
    for (std::size_t bi = 0; bi < d.batch; ++bi) {
        gemm_nn(a.data().data() + bi * a_step, b.data().data() + bi * b_step, out.data() + bi * c_step, d.m, d.k, d.n);
    }

    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_result(d.out_shape, std::move(out), {a, b}, [pa, pb, d, a_step, b_step, c_step](const TensorNode& self) {
        for (std::size_t bi = 0; bi < d.batch; ++bi) {
            const double* dc = self.grad.data() + bi * c_step;
            if (pa->requires_grad) {
                gemm_nt(dc, pb->data.data() + bi * b_step, pa->ensure_grad().data() + bi * a_step, d.m, d.k, d.n);
            }
            if (pb->requires_grad) {
                gemm_tn(pa->data.data() + bi * a_step, dc, pb->ensure_grad().data() + bi * b_step, d.m, d.k, d.n);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
        throw ShapeError("add: " + shape_str(bs) + " does not broadcast onto " + shape_str(as));
    }
    const std::size_t inner = b.numel();
    std::vector<double> out = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % inner];

    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_result(as, std::move(out), {a, b}, [pa, pb, inner](const TensorNode& self) {
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](const TensorNode& self) {
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](const TensorNode& self) {
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out = a.data();
    for (auto& v : out) v *= s;
    TensorNode* pa = a.node();
    return make_result(a.shape(), std::move(out), {a}, [pa, s](const TensorNode& self) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out = x.data();
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    TensorNode* px = x.node();
    return make_result(x.shape(), std::move(out), {x}, [px](const TensorNode& self) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (px->data[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.data()[i];
        // Split by sign so exp never overflows.
        if (v >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    TensorNode* px = x.node();
    return make_result(x.shape(), std::move(out), {x}, [px](const TensorNode& self) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.data[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

// ---------------------------------------------------------------------------
// row-wise ops over the last axis

Tensor softmax(const Tensor& x) {
    const std::size_t cols = x.dim(-1);
    const std::size_t rows = x.numel() / cols;
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * cols;
        double* o = out.data() + r * cols;
        const double mx = *std::max_element(in, in + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
    }
    TensorNode* px = x.node();
    return make_result(x.shape(), std::move(out), {x}, [px, rows, cols](const TensorNode& self) {
        auto& g = px->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * cols;
            const double* dy = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t cols = x.dim(-1);
    if (gamma.numel() != cols || beta.numel() != cols) {
        throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(cols) + " entries");
    }
    const std::size_t rows = x.numel() / cols;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += in[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= static_cast<double>(cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            xhat[i] = (in[c] - mu) * inv_std[r];
            out[i] = gamma.data()[c] * xhat[i] + beta.data()[c];
        }
    }
    TensorNode* px = x.node();
    TensorNode* pg = gamma.node();
    TensorNode* pb = beta.node();
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [px, pg, pb, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorNode& self) {
        const auto n = static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* dy = self.grad.data() + r * cols;
            const double* xh = xhat.data() + r * cols;
            if (pg->requires_grad) {
                auto& g = pg->ensure_grad();
                for (std::size_t c = 0; c < cols; ++c) g[c] += dy[c] * xh[c];
            }
            if (pb->requires_grad) {
                auto& g = pb->ensure_grad();
                for (std::size_t c = 0; c < cols; ++c) g[c] += dy[c];
            }
            if (px->requires_grad) {
                double mean_d = 0.0;
                double mean_dx = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    const double d = dy[c] * pg->data[c];
                    mean_d += d;
                    mean_dx += d * xh[c];
                }
                mean_d /= n;
                mean_dx /= n;
                auto& g = px->ensure_grad();
                for (std::size_t c = 0; c < cols; ++c) {
                    const double d = dy[c] * pg->data[c];
                    g[r * cols + c] += inv_std[r] * (d - mean_d - xh[c] * mean_dx);
                }
            }
        }
    });
}

Tensor dropout(const Tensor& x, double rate, bool training, const CounterRng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform(i) < rate ? 0.0 : keep_scale;
        out[i] = x.data()[i] * mask[i];
    }
    TensorNode* px = x.node();
    return make_result(x.shape(), std::move(out), {x}, [px, mask = std::move(mask)](const TensorNode& self) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& blocked, double value) {
    if (x.rank() < 2 || blocked.size() != x.dim(-1) * x.dim(-2)) {
        throw ShapeError("masked_fill: mask does not match the last two axes of " + shape_str(x.shape()));
    }
    const std::size_t plane = blocked.size();
    std::vector<double> out = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (blocked[i % plane]) out[i] = value;
    }
    TensorNode* px = x.node();
    return make_result(x.shape(), std::move(out), {x}, [px, blocked, plane](const TensorNode& self) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!blocked[i % plane]) g[i] += self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// layout

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    TensorNode* px = x.node();
    return make_result(shape, x.data(), {x}, [px](const TensorNode& self) {
        auto& g = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const auto& in_shape = x.shape();
    const std::size_t r = in_shape.size();
    std::vector<bool> used(r, false);
    if (axes.size() != r) throw ShapeError("permute: axis count mismatch");
    for (auto a : axes) {
        if (a >= r || used[a]) throw ShapeError("permute: invalid axis list");
        used[a] = true;
    }
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];

    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];

    // source[out_linear] = in_linear
    std::vector<std::size_t> source(x.numel());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < source.size(); ++o) {
        std::size_t in_lin = 0;
        for (std::size_t i = 0; i < r; ++i) in_lin += idx[i] * in_strides[axes[i]];
        source[o] = in_lin;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = x.data()[source[o]];

    TensorNode* px = x.node();
    return make_result(out_shape, std::move(out), {x}, [px, source = std::move(source)](const TensorNode& self) {
        auto& g = px->ensure_grad();
        for (std::size_t o = 0; o < source.size(); ++o) g[source[o]] += self.grad[o];
    });
}

// ---------------------------------------------------------------------------
// reductions and losses

Tensor sum(const Tensor& x) {
    const double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
    TensorNode* px = x.node();
    return make_result({1}, {total}, {x}, [px](const TensorNode& self) {
        auto& g = px->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse_loss(const Tensor& pred, const Tensor& target, const std::vector<bool>& position_mask) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    const std::size_t rows = pred.dim(0);
    if (position_mask.size() != rows) throw ShapeError("mse_loss: mask length must equal the first axis");
    const std::size_t cols = pred.numel() / rows;
    const auto active = static_cast<std::size_t>(std::count(position_mask.begin(), position_mask.end(), true));
    if (active == 0) throw std::invalid_argument("mse_loss: every position is masked");

    const double denom = static_cast<double>(active * cols);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!position_mask[r]) continue;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = pred.data()[r * cols + c] - target.data()[r * cols + c];
            total += d * d;
        }
    }
    TensorNode* pp = pred.node();
    TensorNode* pt = target.node();
    return make_result({1}, {total / denom}, {pred, target},
                       [pp, pt, position_mask, rows, cols, denom](const TensorNode& self) {
        const double g0 = self.grad[0] * 2.0 / denom;
        for (std::size_t r = 0; r < rows; ++r) {
            if (!position_mask[r]) continue;
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                const double d = g0 * (pp->data[i] - pt->data[i]);
                if (pp->requires_grad) pp->ensure_grad()[i] += d;
                if (pt->requires_grad) pt->ensure_grad()[i] -= d;
            }
        }
    });
}

Tensor bce_loss(const Tensor& probs, const std::vector<double>& labels) {
    if (probs.numel() != labels.size()) throw ShapeError("bce_loss: label count does not match probabilities");
    const std::size_t n = labels.size();
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        const double p = std::clamp(probs.data()[c], kBceClamp, 1.0 - kBceClamp);
        total -= labels[c] * std::log(p) + (1.0 - labels[c]) * std::log(1.0 - p);
    }
    TensorNode* pp = probs.node();
    return make_result({1}, {total / static_cast<double>(n)}, {probs}, [pp, labels, n](const TensorNode& self) {
        auto& g = pp->ensure_grad();
        const double g0 = self.grad[0] / static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c) {
            // Derivative taken at the clamped point so saturated outputs still learn.
            const double p = std::clamp(pp->data[c], kBceClamp, 1.0 - kBceClamp);
            g[c] += g0 * (-labels[c] / p + (1.0 - labels[c]) / (1.0 - p));
        }
    });
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, const CounterRng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> data(fan_in * fan_out);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = (2.0 * rng.uniform(i) - 1.0) * limit;
    return Tensor::from({fan_in, fan_out}, std::move(data), true);
}

}  // namespace beatformer
