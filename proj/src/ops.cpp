#include "mvgamba/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mvg {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                        shape_string(b.shape()));
}

template <typename T>
void require_matrix(const Var<T>& a, const char* op) {
    require(a.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T x) {
    if (x > T(20)) return x;
    return std::log1p(std::exp(x));
}

// Elementwise unary op with derivative expressed through input and output.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D df) {
    std::vector<T> out(a.size());
    const auto in = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result<T>(a.shape(), std::move(out), {a}, [df](Node<T>& self) {
        T* ga = self.parent_grad(0);
        const auto& x = self.parents[0]->value;
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * df(x[i], self.value[i]);
    });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (T* g = self.parent_grad(k)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        if (T* g = self.parent_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (T* g = self.parent_grad(1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (T* g = self.parent_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (T* g = self.parent_grad(1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    return unary(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
    return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
Var<T> exp(const Var<T>& a) {
    return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    return unary(
        a, [](T x) { return x * sigmoid_scalar(x); },
        [](T x, T) {
            const T s = sigmoid_scalar(x);
            return s + x * s * (T(1) - s);
        });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return unary(a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
    return unary(a, [](T x) { return softplus_scalar(x); }, [](T x, T) { return sigmoid_scalar(x); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> clamp_max(const Var<T>& a, T hi) {
    return unary(a, [hi](T x) { return x < hi ? x : hi; }, [hi](T x, T) { return x < hi ? T(1) : T(0); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T s = 0;
    for (const T v : a.value()) s += v;
    return make_result<T>({1}, {s}, {a}, [](Node<T>& self) {
        T* g = self.parent_grad(0);
        const std::size_t n = self.parents[0]->value.size();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    require(a.size() > 0, "mean of an empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mse");
    require(a.size() > 0, "mse of empty tensors");
    const auto av = a.value();
    const auto bv = b.value();
    T s = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const T d = av[i] - bv[i];
        s += d * d;
    }
    const T inv_n = T(1) / static_cast<T>(av.size());
    return make_result<T>({1}, {s * inv_n}, {a, b}, [inv_n](Node<T>& self) {
        const auto& x = self.parents[0]->value;
        const auto& y = self.parents[1]->value;
        const T g0 = self.grad[0] * T(2) * inv_n;
        if (T* g = self.parent_grad(0)) {
            for (std::size_t i = 0; i < x.size(); ++i) g[i] += g0 * (x[i] - y[i]);
        }
        if (T* g = self.parent_grad(1)) {
            for (std::size_t i = 0; i < x.size(); ++i) g[i] -= g0 * (x[i] - y[i]);
        }
    });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& a, const std::vector<T>& weights) {
    require(weights.size() == a.size(), "weighted_sum: weight count mismatch");
    T s = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
    return make_result<T>({1}, {s}, {a}, [weights](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t i = 0; i < weights.size(); ++i) g[i] += self.grad[0] * weights[i];
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    require(shape_numel(shape) == a.size(),
            "reshape: " + shape_string(a.shape()) + " cannot become " + shape_string(shape));
    std::vector<T> out(a.value().begin(), a.value().end());
    return make_result<T>(std::move(shape), std::move(out), {a}, [](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    require_matrix(x, "linear");
    require_matrix(w, "linear");
    const std::size_t rows = x.dim(0);
    const std::size_t in = x.dim(1);
    const std::size_t out = w.dim(0);
    require(w.dim(1) == in, "linear: input width " + std::to_string(in) + " does not match weight " +
                                shape_string(w.shape()));
    const bool has_bias = b.defined();
    if (has_bias) require(b.size() == out, "linear: bias length mismatch");

    std::vector<T> y(rows * out);
    {
        ConstMapMat<T> xm(x.value().data(), rows, in);
        ConstMapMat<T> wm(w.value().data(), out, in);
        MapMat<T> ym(y.data(), rows, out);
        ym.noalias() = xm * wm.transpose();
        if (has_bias) {
            Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(b.value().data(), out);
            ym.rowwise() += bm;
        }
    }
    return make_result<T>({rows, out}, std::move(y), {x, w, b}, [rows, in, out, has_bias](Node<T>& self) {
        ConstMapMat<T> gy(self.grad.data(), rows, out);
        if (T* gx = self.parent_grad(0)) {
            ConstMapMat<T> wm(self.parents[1]->value.data(), out, in);
            MapMat<T>(gx, rows, in).noalias() += gy * wm;
        }
        if (T* gw = self.parent_grad(1)) {
            ConstMapMat<T> xm(self.parents[0]->value.data(), rows, in);
            MapMat<T>(gw, out, in).noalias() += gy.transpose() * xm;
        }
        if (has_bias) {
            if (T* gb = self.parent_grad(2)) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, out) += gy.colwise().sum();
            }
        }
    });
}

template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& v) {
    require_matrix(x, "add_row");
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    require(v.size() == cols, "add_row: vector length mismatch");
    std::vector<T> out(x.value().begin(), x.value().end());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += v.value()[c];
    return make_result<T>(x.shape(), std::move(out), {x, v}, [rows, cols](Node<T>& self) {
        if (T* g = self.parent_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (T* g = self.parent_grad(1)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
        }
    });
}

template <typename T>
Var<T> mul_row(const Var<T>& x, const Var<T>& v) {
    require_matrix(x, "mul_row");
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    require(v.size() == cols, "mul_row: vector length mismatch");
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x.value()[r * cols + c] * v.value()[c];
    return make_result<T>(x.shape(), std::move(out), {x, v}, [rows, cols](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& vv = self.parents[1]->value;
        if (T* g = self.parent_grad(0)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r * cols + c] * vv[c];
        }
        if (T* g = self.parent_grad(1)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c] * xv[r * cols + c];
        }
    });
}

template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& w, T eps) {
    require_matrix(x, "rms_norm");
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    require(w.size() == cols, "rms_norm: weight length mismatch");
    std::vector<T> out(x.size());
    std::vector<T> inv_rms(rows);
    const auto xv = x.value();
    const auto wv = w.value();
    for (std::size_t r = 0; r < rows; ++r) {
        T ms = 0;
        for (std::size_t c = 0; c < cols; ++c) ms += xv[r * cols + c] * xv[r * cols + c];
        const T inv = T(1) / std::sqrt(ms / static_cast<T>(cols) + eps);
        inv_rms[r] = inv;
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * inv * wv[c];
    }
    return make_result<T>(x.shape(), std::move(out), {x, w}, [rows, cols, inv_rms](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        T* gx = self.parent_grad(0);
        T* gw = self.parent_grad(1);
        for (std::size_t r = 0; r < rows; ++r) {
            const T inv = inv_rms[r];
            const T* g = &self.grad[r * cols];
            const T* xr = &xv[r * cols];
            if (gw) {
                for (std::size_t c = 0; c < cols; ++c) gw[c] += g[c] * xr[c] * inv;
            }
            if (gx) {
                T dot = 0;
                for (std::size_t c = 0; c < cols; ++c) dot += g[c] * wv[c] * xr[c] * inv;
                dot /= static_cast<T>(cols);
                for (std::size_t c = 0; c < cols; ++c) {
                    gx[r * cols + c] += inv * (g[c] * wv[c] - xr[c] * inv * dot);
                }
            }
        }
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_cols");
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    require(begin <= end && end <= cols, "slice_cols: range out of bounds");
    const std::size_t width = end - begin;
    std::vector<T> out(rows * width);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(&x.value()[r * cols + begin], width, &out[r * width]);
    return make_result<T>({rows, width}, std::move(out), {x}, [rows, cols, begin, width](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) g[r * cols + begin + c] += self.grad[r * width + c];
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t rows = parts[0].dim(0);
    std::vector<std::size_t> offsets;
    std::size_t cols = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        require(p.dim(0) == rows, "concat_cols: row count mismatch");
        offsets.push_back(cols);
        cols += p.dim(1);
    }
    std::vector<T> out(rows * cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = parts[k].dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(&parts[k].value()[r * w], w, &out[r * cols + offsets[k]]);
    }
    return make_result<T>({rows, cols}, std::move(out), parts, [rows, cols, offsets](Node<T>& self) {
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            T* g = self.parent_grad(k);
            if (!g) continue;
            const std::size_t w = self.parents[k]->shape[1];
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * cols + offsets[k] + c];
        }
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t cols = parts[0].dim(1);
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_rows");
        require(p.dim(1) == cols, "concat_rows: column count mismatch");
        offsets.push_back(total);
        total += p.size();
    }
    std::vector<T> out;
    out.reserve(total);
    for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
    return make_result<T>({total / cols, cols}, std::move(out), parts, [offsets](Node<T>& self) {
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            T* g = self.parent_grad(k);
            if (!g) continue;
            const std::size_t n = self.parents[k]->value.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[k] + i];
        }
    });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& index) {
    require_matrix(x, "gather_rows");
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    std::vector<T> out(index.size() * cols);
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] < rows, "gather_rows: index out of range");
        std::copy_n(&x.value()[index[i] * cols], cols, &out[i * cols]);
    }
    return make_result<T>({index.size(), cols}, std::move(out), {x}, [index, cols](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t i = 0; i < index.size(); ++i)
            for (std::size_t c = 0; c < cols; ++c) g[index[i] * cols + c] += self.grad[i * cols + c];
    });
}

template <typename T>
Var<T> softmax_groups(const Var<T>& x, std::size_t group) {
    require(group > 0 && x.size() % group == 0, "softmax_groups: size is not a multiple of the group");
    std::vector<T> out(x.size());
    const auto xv = x.value();
    for (std::size_t g0 = 0; g0 < out.size(); g0 += group) {
        T mx = xv[g0];
        for (std::size_t i = 1; i < group; ++i) mx = std::max(mx, xv[g0 + i]);
        T s = 0;
        for (std::size_t i = 0; i < group; ++i) {
            out[g0 + i] = std::exp(xv[g0 + i] - mx);
            s += out[g0 + i];
        }
        for (std::size_t i = 0; i < group; ++i) out[g0 + i] /= s;
    }
    return make_result<T>(x.shape(), std::move(out), {x}, [group](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t g0 = 0; g0 < self.value.size(); g0 += group) {
            T dot = 0;
            for (std::size_t i = 0; i < group; ++i) dot += self.grad[g0 + i] * self.value[g0 + i];
            for (std::size_t i = 0; i < group; ++i) g[g0 + i] += self.value[g0 + i] * (self.grad[g0 + i] - dot);
        }
    });
}

template <typename T>
Var<T> normalize_rows(const Var<T>& x, T eps) {
    require_matrix(x, "normalize_rows");
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    std::vector<T> out(x.size());
    std::vector<T> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += x.value()[r * cols + c] * x.value()[r * cols + c];
        norms[r] = std::sqrt(s + eps);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x.value()[r * cols + c] / norms[r];
    }
    return make_result<T>(x.shape(), std::move(out), {x}, [rows, cols, norms](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = 0;
            for (std::size_t c = 0; c < cols; ++c) dot += self.grad[r * cols + c] * self.value[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
                g[r * cols + c] += (self.grad[r * cols + c] - self.value[r * cols + c] * dot) / norms[r];
        }
    });
}

template <typename T>
Var<T> straight_through(const Var<T>& hard, const Var<T>& soft) {
    require_same_shape(hard, soft, "straight_through");
    std::vector<T> out(hard.value().begin(), hard.value().end());
    return make_result<T>(hard.shape(), std::move(out), {hard, soft}, [](Node<T>& self) {
        if (T* g = self.parent_grad(1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> causal_conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    require_matrix(x, "causal_conv1d");
    require_matrix(w, "causal_conv1d");
    const std::size_t steps = x.dim(0);
    const std::size_t ch = x.dim(1);
    const std::size_t width = w.dim(1);
    require(w.dim(0) == ch && b.size() == ch, "causal_conv1d: parameter shape mismatch");
    std::vector<T> out(x.size());
    const auto xv = x.value();
    const auto wv = w.value();
    const auto bv = b.value();
    for (std::size_t t = 0; t < steps; ++t) {
        T* o = &out[t * ch];
        for (std::size_t e = 0; e < ch; ++e) o[e] = bv[e];
        for (std::size_t k = 0; k < width; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(width - 1);
            if (src < 0) continue;
            const T* xi = &xv[static_cast<std::size_t>(src) * ch];
            for (std::size_t e = 0; e < ch; ++e) o[e] += wv[e * width + k] * xi[e];
        }
    }
    return make_result<T>(x.shape(), std::move(out), {x, w, b}, [steps, ch, width](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        T* gx = self.parent_grad(0);
        T* gw = self.parent_grad(1);
        T* gb = self.parent_grad(2);
        for (std::size_t t = 0; t < steps; ++t) {
            const T* g = &self.grad[t * ch];
            if (gb) {
                for (std::size_t e = 0; e < ch; ++e) gb[e] += g[e];
            }
            for (std::size_t k = 0; k < width; ++k) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(width - 1);
                if (src < 0) continue;
                const std::size_t s = static_cast<std::size_t>(src) * ch;
                if (gx) {
                    for (std::size_t e = 0; e < ch; ++e) gx[s + e] += g[e] * wv[e * width + k];
                }
                if (gw) {
                    for (std::size_t e = 0; e < ch; ++e) gw[e * width + k] += g[e] * xv[s + e];
                }
            }
        }
    });
}

template <typename T>
Var<T> patchify(const Var<T>& image, std::size_t patch) {
    require(image.rank() == 3, "patchify: expected [H, W, C]");
    const std::size_t h = image.dim(0);
    const std::size_t w = image.dim(1);
    const std::size_t c = image.dim(2);
    require(patch > 0 && h % patch == 0 && w % patch == 0, "patchify: patch size must divide H and W");
    const std::size_t gh = h / patch;
    const std::size_t gw = w / patch;
    const std::size_t width = patch * patch * c;
    // index[o] = source element of output element o
    std::vector<std::size_t> index(gh * gw * width);
    for (std::size_t r = 0; r < gh; ++r)
        for (std::size_t q = 0; q < gw; ++q)
            for (std::size_t dy = 0; dy < patch; ++dy)
                for (std::size_t dx = 0; dx < patch; ++dx)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t o = (r * gw + q) * width + (dy * patch + dx) * c + ch;
                        index[o] = ((r * patch + dy) * w + (q * patch + dx)) * c + ch;
                    }
    std::vector<T> out(index.size());
    for (std::size_t o = 0; o < index.size(); ++o) out[o] = image.value()[index[o]];
    return make_result<T>({gh * gw, width}, std::move(out), {image}, [index](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t o = 0; o < index.size(); ++o) g[index[o]] += self.grad[o];
    });
}

template <typename T>
Var<T> resize_bilinear(const Var<T>& image, std::size_t out_h, std::size_t out_w) {
    require(image.rank() == 3, "resize_bilinear: expected [H, W, C]");
    const std::size_t h = image.dim(0);
    const std::size_t w = image.dim(1);
    const std::size_t c = image.dim(2);
    struct Tap {
        std::size_t i0, i1;
        T f;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        for (std::size_t o = 0; o < out; ++o) {
            T src = (static_cast<T>(o) + T(0.5)) * static_cast<T>(in) / static_cast<T>(out) - T(0.5);
            src = std::clamp(src, T(0), static_cast<T>(in - 1));
            const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
            const std::size_t i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, src - static_cast<T>(i0)};
        }
        return t;
    };
    const auto ty = taps(h, out_h);
    const auto tx = taps(w, out_w);
    std::vector<T> out(out_h * out_w * c);
    const auto iv = image.value();
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const auto at = [&](std::size_t yy, std::size_t xx) { return iv[(yy * w + xx) * c + ch]; };
                const T top = at(ty[y].i0, tx[x].i0) * (T(1) - tx[x].f) + at(ty[y].i0, tx[x].i1) * tx[x].f;
                const T bot = at(ty[y].i1, tx[x].i0) * (T(1) - tx[x].f) + at(ty[y].i1, tx[x].i1) * tx[x].f;
                out[(y * out_w + x) * c + ch] = top * (T(1) - ty[y].f) + bot * ty[y].f;
            }
    return make_result<T>({out_h, out_w, c}, std::move(out), {image}, [ty, tx, w, c, out_h, out_w](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t x = 0; x < out_w; ++x)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T go = self.grad[(y * out_w + x) * c + ch];
                    const T fy = ty[y].f;
                    const T fx = tx[x].f;
                    g[(ty[y].i0 * w + tx[x].i0) * c + ch] += go * (T(1) - fy) * (T(1) - fx);
                    g[(ty[y].i0 * w + tx[x].i1) * c + ch] += go * (T(1) - fy) * fx;
                    g[(ty[y].i1 * w + tx[x].i0) * c + ch] += go * fy * (T(1) - fx);
                    g[(ty[y].i1 * w + tx[x].i1) * c + ch] += go * fy * fx;
                }
    });
}

template <typename T>
Var<T> conv3x3_fixed(const Var<T>& image, const std::vector<T>& kernel, std::size_t out_channels) {
    require(image.rank() == 3, "conv3x3_fixed: expected [H, W, C]");
    const std::size_t h = image.dim(0);
    const std::size_t w = image.dim(1);
    const std::size_t cin = image.dim(2);
    require(kernel.size() == out_channels * 9 * cin, "conv3x3_fixed: kernel size mismatch");
    std::vector<T> out(h * w * out_channels, T(0));
    const auto iv = image.value();
    auto for_taps = [h, w](std::size_t y, std::size_t x, auto&& fn) {
        for (int ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + ky - 1;
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (int kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + kx - 1;
                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                fn(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), static_cast<std::size_t>(ky * 3 + kx));
            }
        }
    };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            T* o = &out[(y * w + x) * out_channels];
            for_taps(y, x, [&](std::size_t yy, std::size_t xx, std::size_t tap) {
                const T* src = &iv[(yy * w + xx) * cin];
                for (std::size_t co = 0; co < out_channels; ++co) {
                    const T* k = &kernel[(co * 9 + tap) * cin];
                    T s = 0;
                    for (std::size_t ci = 0; ci < cin; ++ci) s += k[ci] * src[ci];
                    o[co] += s;
                }
            });
        }
    return make_result<T>({h, w, out_channels}, std::move(out), {image},
                          [kernel, h, w, cin, out_channels, for_taps](Node<T>& self) {
                              T* g = self.parent_grad(0);
                              for (std::size_t y = 0; y < h; ++y)
                                  for (std::size_t x = 0; x < w; ++x) {
                                      const T* go = &self.grad[(y * w + x) * out_channels];
                                      for_taps(y, x, [&](std::size_t yy, std::size_t xx, std::size_t tap) {
                                          T* dst = &g[(yy * w + xx) * cin];
                                          for (std::size_t co = 0; co < out_channels; ++co) {
                                              const T* k = &kernel[(co * 9 + tap) * cin];
                                              for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] += go[co] * k[ci];
                                          }
                                      });
                                  }
                          });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& image) {
    require(image.rank() == 3, "avg_pool2: expected [H, W, C]");
    const std::size_t h = image.dim(0);
    const std::size_t w = image.dim(1);
    const std::size_t c = image.dim(2);
    require(h % 2 == 0 && w % 2 == 0, "avg_pool2: H and W must be even");
    const std::size_t oh = h / 2;
    const std::size_t ow = w / 2;
    std::vector<T> out(oh * ow * c, T(0));
    const auto iv = image.value();
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                T s = 0;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) s += iv[((2 * y + dy) * w + 2 * x + dx) * c + ch];
                out[(y * ow + x) * c + ch] = s * T(0.25);
            }
    return make_result<T>({oh, ow, c}, std::move(out), {image}, [w, c, oh, ow](Node<T>& self) {
        T* g = self.parent_grad(0);
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T go = self.grad[(y * ow + x) * c + ch] * T(0.25);
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) g[((2 * y + dy) * w + 2 * x + dx) * c + ch] += go;
                }
    });
}

#define MVG_INSTANTIATE_OPS(T)                                                                        \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
    template Var<T> scale(const Var<T>&, T);                                                          \
    template Var<T> add_scalar(const Var<T>&, T);                                                     \
    template Var<T> neg(const Var<T>&);                                                               \
    template Var<T> exp(const Var<T>&);                                                               \
    template Var<T> square(const Var<T>&);                                                            \
    template Var<T> silu(const Var<T>&);                                                              \
    template Var<T> sigmoid(const Var<T>&);                                                           \
    template Var<T> softplus(const Var<T>&);                                                          \
    template Var<T> relu(const Var<T>&);                                                              \
    template Var<T> clamp_max(const Var<T>&, T);                                                      \
    template Var<T> sum(const Var<T>&);                                                               \
    template Var<T> mean(const Var<T>&);                                                              \
    template Var<T> mse(const Var<T>&, const Var<T>&);                                                \
    template Var<T> weighted_sum(const Var<T>&, const std::vector<T>&);                               \
    template Var<T> reshape(const Var<T>&, Shape);                                                    \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                              \
    template Var<T> add_row(const Var<T>&, const Var<T>&);                                            \
    template Var<T> mul_row(const Var<T>&, const Var<T>&);                                            \
    template Var<T> rms_norm(const Var<T>&, const Var<T>&, T);                                        \
    template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);                              \
    template Var<T> concat_cols(const std::vector<Var<T>>&);                                          \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                                          \
    template Var<T> gather_rows(const Var<T>&, const std::vector<std::size_t>&);                      \
    template Var<T> softmax_groups(const Var<T>&, std::size_t);                                       \
    template Var<T> normalize_rows(const Var<T>&, T);                                                 \
    template Var<T> straight_through(const Var<T>&, const Var<T>&);                                   \
    template Var<T> causal_conv1d(const Var<T>&, const Var<T>&, const Var<T>&);                       \
    template Var<T> patchify(const Var<T>&, std::size_t);                                             \
    template Var<T> resize_bilinear(const Var<T>&, std::size_t, std::size_t);                        \
    template Var<T> conv3x3_fixed(const Var<T>&, const std::vector<T>&, std::size_t);                 \
    template Var<T> avg_pool2(const Var<T>&);

MVG_INSTANTIATE_OPS(float)
MVG_INSTANTIATE_OPS(double)

}  // namespace mvg
