#include "csda/autodiff.hpp"

#include <cmath>

namespace csda::ad {

namespace {

void check_same_shape(const Var a, const Var b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a->value) + " vs " + shape_str(b->value));
}

}  // namespace

Var Graph::make(Matrix value, bool requires_grad) {
    auto node = std::make_unique<Node>();
    node->grad = Matrix(value.rows(), value.cols());
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    tape_.push_back(std::move(node));
    return tape_.back().get();
}

Var Graph::leaf(Matrix value) { return make(std::move(value), false); }

Var Graph::param(const Matrix& storage) {
    auto it = params_.find(&storage);
    if (it != params_.end()) return it->second;
    Var v = make(storage, true);
    params_.emplace(&storage, v);
    return v;
}

const Matrix* Graph::grad_of(const Matrix& storage) const {
    auto it = params_.find(&storage);
    return it == params_.end() ? nullptr : &it->second->grad;
}

Var Graph::add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Matrix v = a->value;
    for (std::size_t i = 0; i < v.size(); ++i) v.values()[i] += b->value.values()[i];
    Var out = make(std::move(v), a->requires_grad || b->requires_grad);
    out->backprop = [a, b, out] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->grad.size(); ++i)
                a->grad.values()[i] += out->grad.values()[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < b->grad.size(); ++i)
                b->grad.values()[i] += out->grad.values()[i];
    };
    return out;
}

Var Graph::sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Matrix v = a->value;
    for (std::size_t i = 0; i < v.size(); ++i) v.values()[i] -= b->value.values()[i];
    Var out = make(std::move(v), a->requires_grad || b->requires_grad);
    out->backprop = [a, b, out] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->grad.size(); ++i)
                a->grad.values()[i] += out->grad.values()[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < b->grad.size(); ++i)
                b->grad.values()[i] -= out->grad.values()[i];
    };
    return out;
}

Var Graph::mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Matrix v = a->value;
    for (std::size_t i = 0; i < v.size(); ++i) v.values()[i] *= b->value.values()[i];
    Var out = make(std::move(v), a->requires_grad || b->requires_grad);
    out->backprop = [a, b, out] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->grad.size(); ++i)
                a->grad.values()[i] += out->grad.values()[i] * b->value.values()[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < b->grad.size(); ++i)
                b->grad.values()[i] += out->grad.values()[i] * a->value.values()[i];
    };
    return out;
}

Var Graph::div(Var a, Var b) {
    check_same_shape(a, b, "div");
    Matrix v = a->value;
    for (std::size_t i = 0; i < v.size(); ++i) v.values()[i] /= b->value.values()[i];
    Var out = make(std::move(v), a->requires_grad || b->requires_grad);
    out->backprop = [a, b, out] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->grad.size(); ++i)
                a->grad.values()[i] += out->grad.values()[i] / b->value.values()[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < b->grad.size(); ++i) {
                const double bv = b->value.values()[i];
                b->grad.values()[i] -= out->grad.values()[i] * a->value.values()[i] / (bv * bv);
            }
    };
    return out;
}

Var Graph::scale(Var a, double c) {
    Matrix v = a->value;
    for (double& x : v.values()) x *= c;
    Var out = make(std::move(v), a->requires_grad);
    out->backprop = [a, c, out] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            a->grad.values()[i] += c * out->grad.values()[i];
    };
    return out;
}

Var Graph::add_const(Var a, double c) {
    Matrix v = a->value;
    for (double& x : v.values()) x += c;
    Var out = make(std::move(v), a->requires_grad);
    out->backprop = [a, out] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            a->grad.values()[i] += out->grad.values()[i];
    };
    return out;
}

Var Graph::matmul(Var a, Var b) {
    Var out = make(csda::matmul(a->value, b->value), a->requires_grad || b->requires_grad);
    out->backprop = [a, b, out] {
        const Matrix& g = out->grad;
        if (a->requires_grad) {
            // dA += g * B^T
            for (std::size_t i = 0; i < a->value.rows(); ++i)
                for (std::size_t k = 0; k < a->value.cols(); ++k) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < g.cols(); ++j)
                        s += g(i, j) * b->value(k, j);
                    a->grad(i, k) += s;
                }
        }
        if (b->requires_grad) {
            // dB += A^T * g
            for (std::size_t k = 0; k < b->value.rows(); ++k)
                for (std::size_t j = 0; j < b->value.cols(); ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < a->value.rows(); ++i)
                        s += a->value(i, k) * g(i, j);
                    b->grad(k, j) += s;
                }
        }
    };
    return out;
}

Var Graph::add_rowwise(Var a, Var bias) {
    Var out = make(csda::add_rowwise(a->value, bias->value),
                   a->requires_grad || bias->requires_grad);
    out->backprop = [a, bias, out] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->grad.size(); ++i)
                a->grad.values()[i] += out->grad.values()[i];
        if (bias->requires_grad)
            for (std::size_t i = 0; i < out->grad.rows(); ++i)
                for (std::size_t j = 0; j < out->grad.cols(); ++j)
                    bias->grad(0, j) += out->grad(i, j);
    };
    return out;
}

Var Graph::concat_cols(Var a, Var b) {
    Var out = make(csda::concat_cols(a->value, b->value),
                   a->requires_grad || b->requires_grad);
    const std::size_t ac = a->value.cols();
    out->backprop = [a, b, out, ac] {
        for (std::size_t i = 0; i < out->grad.rows(); ++i) {
            if (a->requires_grad)
                for (std::size_t j = 0; j < ac; ++j)
                    a->grad(i, j) += out->grad(i, j);
            if (b->requires_grad)
                for (std::size_t j = 0; j < b->grad.cols(); ++j)
                    b->grad(i, j) += out->grad(i, ac + j);
        }
    };
    return out;
}

Var Graph::rows(Var a, std::size_t start, std::size_t count) {
    if (start + count > a->value.rows())
        throw std::invalid_argument("rows: slice out of range");
    Matrix v(count, a->value.cols());
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < v.cols(); ++j)
            v(i, j) = a->value(start + i, j);
    Var out = make(std::move(v), a->requires_grad);
    out->backprop = [a, out, start, count] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < out->grad.cols(); ++j)
                a->grad(start + i, j) += out->grad(i, j);
    };
    return out;
}

Var Graph::tanh_(Var a) {
    Var out = make(tanh_elem(a->value), a->requires_grad);
    out->backprop = [a, out] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i) {
            const double y = out->value.values()[i];
            a->grad.values()[i] += out->grad.values()[i] * (1.0 - y * y);
        }
    };
    return out;
}

Var Graph::sigmoid(Var a) {
    Var out = make(sigmoid_elem(a->value), a->requires_grad);
    out->backprop = [a, out] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i) {
            const double y = out->value.values()[i];
            a->grad.values()[i] += out->grad.values()[i] * y * (1.0 - y);
        }
    };
    return out;
}

Var Graph::softmax_rows(Var a) {
    Var out = make(csda::softmax_rows(a->value), a->requires_grad);
    out->backprop = [a, out] {
        if (!a->requires_grad) return;
        // dx_j = y_j * (g_j - sum_k g_k y_k), per row
        for (std::size_t i = 0; i < out->value.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t k = 0; k < out->value.cols(); ++k)
                dot += out->grad(i, k) * out->value(i, k);
            for (std::size_t j = 0; j < out->value.cols(); ++j)
                a->grad(i, j) += out->value(i, j) * (out->grad(i, j) - dot);
        }
    };
    return out;
}

Var Graph::square(Var a) {
    Matrix v = a->value;
    for (double& x : v.values()) x *= x;
    Var out = make(std::move(v), a->requires_grad);
    out->backprop = [a, out] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            a->grad.values()[i] += 2.0 * a->value.values()[i] * out->grad.values()[i];
    };
    return out;
}

Var Graph::pow_const(Var a, double p) {
    Matrix v = a->value;
    for (double& x : v.values()) x = std::pow(x, p);
    Var out = make(std::move(v), a->requires_grad);
    out->backprop = [a, p, out] {
        if (!a->requires_grad) return;
        if (p == 0.0) return;  // constant 1, exactly zero gradient
        for (std::size_t i = 0; i < a->grad.size(); ++i) {
            const double x = a->value.values()[i];
            const double d = (p == 1.0) ? 1.0 : p * std::pow(x, p - 1.0);
            a->grad.values()[i] += d * out->grad.values()[i];
        }
    };
    return out;
}

Var Graph::log_clamped(Var a, double eps) {
    Matrix v = a->value;
    for (double& x : v.values()) x = std::log(std::max(x, eps));
    Var out = make(std::move(v), a->requires_grad);
    out->backprop = [a, eps, out] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i) {
            const double x = a->value.values()[i];
            if (x > eps) a->grad.values()[i] += out->grad.values()[i] / x;
        }
    };
    return out;
}

Var Graph::clamp(Var a, double lo, double hi) {
    Matrix v = a->value;
    for (double& x : v.values()) x = std::min(std::max(x, lo), hi);
    Var out = make(std::move(v), a->requires_grad);
    out->backprop = [a, lo, hi, out] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i) {
            const double x = a->value.values()[i];
            if (x > lo && x < hi) a->grad.values()[i] += out->grad.values()[i];
        }
    };
    return out;
}

Var Graph::sum_all(Var a) {
    double s = 0.0;
    for (double x : a->value.values()) s += x;
    Var out = make(Matrix(1, 1, {s}), a->requires_grad);
    out->backprop = [a, out] {
        if (!a->requires_grad) return;
        const double g = out->grad(0, 0);
        for (double& x : a->grad.values()) x += g;
    };
    return out;
}

Var Graph::mean_all(Var a) {
    if (a->value.size() == 0)
        throw std::invalid_argument("mean_all: empty matrix");
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

Var Graph::row_dot(Var a, Var b) {
    check_same_shape(a, b, "row_dot");
    Matrix v(a->value.rows(), 1);
    for (std::size_t i = 0; i < a->value.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a->value.cols(); ++j)
            s += a->value(i, j) * b->value(i, j);
        v(i, 0) = s;
    }
    Var out = make(std::move(v), a->requires_grad || b->requires_grad);
    out->backprop = [a, b, out] {
        for (std::size_t i = 0; i < out->grad.rows(); ++i) {
            const double g = out->grad(i, 0);
            for (std::size_t j = 0; j < a->value.cols(); ++j) {
                if (a->requires_grad) a->grad(i, j) += g * b->value(i, j);
                if (b->requires_grad) b->grad(i, j) += g * a->value(i, j);
            }
        }
    };
    return out;
}

Var Graph::grl(Var a, double strength) {
    if (strength < 0.0)
        throw std::invalid_argument("grl: strength must be nonnegative");
    Var out = make(a->value, a->requires_grad);
    out->backprop = [a, strength, out] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->grad.size(); ++i)
            a->grad.values()[i] += -strength * out->grad.values()[i];
    };
    return out;
}

Var Graph::stop_gradient(Var a) {
    // requires_grad is false: the subgraph behind a is invisible to backward.
    return make(a->value, false);
}

void Graph::backward(Var root) {
    if (backward_done_)
        throw std::logic_error("Graph::backward: graphs are single-use");
    if (root->value.rows() != 1 || root->value.cols() != 1)
        throw std::invalid_argument("Graph::backward: root must be 1x1");
    backward_done_ = true;
    root->grad(0, 0) = 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        Node* n = it->get();
        if (n->requires_grad && n->backprop) n->backprop();
    }
}

}  // namespace csda::ad
