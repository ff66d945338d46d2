#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mmsarc/tensor.hpp"

namespace mmsarc {

namespace detail {

using EMatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<EMatRM>;
using CMapRM = Eigen::Map<const EMatRM>;

inline void check_finite(const Tensor& t, const char* op) {
    if (!debug_checks()) return;
    for (double v : t.values())
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output value");
}

inline Tensor make_output(const char* op, Shape shape, std::vector<double> vals, bool rg) {
    Tensor t(std::move(shape), std::move(vals), rg);
    t.impl()->op = op;
    check_finite(t, op);
    return t;
}

inline bool track(std::initializer_list<const Tensor*> ins) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    const std::size_t n = static_cast<std::size_t>(a.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.at(static_cast<long>(i)) + b.at(static_cast<long>(i));
    const bool rg = detail::track({&a, &b});
    Tensor y = detail::make_output("add", a.shape(), std::move(out), rg);
    if (rg) {
        Graph::active().record({"add",
                                {a.impl(), b.impl()},
                                y.impl(),
                                [n](const std::vector<double>& dout,
                                    const std::vector<std::vector<double>*>& dins) {
                                    for (int k = 0; k < 2; ++k)
                                        if (dins[static_cast<std::size_t>(k)])
                                            for (std::size_t i = 0; i < n; ++i)
                                                (*dins[static_cast<std::size_t>(k)])[i] += dout[i];
                                }});
    }
    return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    const std::size_t n = static_cast<std::size_t>(a.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.at(static_cast<long>(i)) - b.at(static_cast<long>(i));
    const bool rg = detail::track({&a, &b});
    Tensor y = detail::make_output("sub", a.shape(), std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"sub",
             {a.impl(), b.impl()},
             y.impl(),
             [n](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (dins[0])
                     for (std::size_t i = 0; i < n; ++i) (*dins[0])[i] += dout[i];
                 if (dins[1])
                     for (std::size_t i = 0; i < n; ++i) (*dins[1])[i] -= dout[i];
             }});
    }
    return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    const std::size_t n = static_cast<std::size_t>(a.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.at(static_cast<long>(i)) * b.at(static_cast<long>(i));
    const bool rg = detail::track({&a, &b});
    Tensor y = detail::make_output("mul", a.shape(), std::move(out), rg);
    if (rg) {
        auto ai = a.impl(), bi = b.impl();
        Graph::active().record(
            {"mul",
             {ai, bi},
             y.impl(),
             [n, ai, bi](const std::vector<double>& dout,
                         const std::vector<std::vector<double>*>& dins) {
                 if (dins[0])
                     for (std::size_t i = 0; i < n; ++i) (*dins[0])[i] += dout[i] * bi->values[i];
                 if (dins[1])
                     for (std::size_t i = 0; i < n; ++i) (*dins[1])[i] += dout[i] * ai->values[i];
             }});
    }
    return y;
}

/// y = mul_c * x + add_c, with scalar constants.
inline Tensor affine(const Tensor& x, double mul_c, double add_c) {
    const std::size_t n = static_cast<std::size_t>(x.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = mul_c * x.at(static_cast<long>(i)) + add_c;
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("affine", x.shape(), std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"affine",
             {x.impl()},
             y.impl(),
             [n, mul_c](const std::vector<double>& dout,
                        const std::vector<std::vector<double>*>& dins) {
                 if (dins[0])
                     for (std::size_t i = 0; i < n; ++i) (*dins[0])[i] += mul_c * dout[i];
             }});
    }
    return y;
}

namespace detail {

template <typename Fwd, typename Dyx>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Dyx dydx_from_xy) {
    const std::size_t n = static_cast<std::size_t>(x.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x.at(static_cast<long>(i)));
    const bool rg = track({&x});
    Tensor y = make_output(name, x.shape(), std::move(out), rg);
    if (rg) {
        auto xi = x.impl();
        auto yi = y.impl();
        Graph::active().record(
            {name,
             {xi},
             yi,
             [n, xi, yi, dydx_from_xy](const std::vector<double>& dout,
                                       const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (std::size_t i = 0; i < n; ++i)
                     (*dins[0])[i] += dout[i] * dydx_from_xy(xi->values[i], yi->values[i]);
             }});
    }
    return y;
}

}  // namespace detail

inline Tensor tanh(const Tensor& x) {
    return detail::unary_op(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary_op(
        "sigmoid", x,
        [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary_op(
        "relu", x, [](double v) { return v > 0 ? v : 0.0; },
        [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary_op(
        "gelu", x,
        [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [=](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            return cdf + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
        });
}

// -------------------------------------------------------------- linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * m);
    {
        detail::CMapRM A(a.data(), n, k), B(b.data(), k, m);
        detail::MapRM C(out.data(), n, m);
        C.noalias() = A * B;
    }
    const bool rg = detail::track({&a, &b});
    Tensor y = detail::make_output("matmul", {n, m}, std::move(out), rg);
    if (rg) {
        auto ai = a.impl(), bi = b.impl();
        Graph::active().record(
            {"matmul",
             {ai, bi},
             y.impl(),
             [n, k, m, ai, bi](const std::vector<double>& dout,
                               const std::vector<std::vector<double>*>& dins) {
                 detail::CMapRM dC(dout.data(), n, m);
                 if (dins[0]) {
                     detail::CMapRM B(bi->values.data(), k, m);
                     detail::MapRM dA(dins[0]->data(), n, k);
                     dA.noalias() += dC * B.transpose();
                 }
                 if (dins[1]) {
                     detail::CMapRM A(ai->values.data(), n, k);
                     detail::MapRM dB(dins[1]->data(), k, m);
                     dB.noalias() += A.transpose() * dC;
                 }
             }});
    }
    return y;
}

inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expected 2-d tensor, got " + shape_str(a.shape()));
    const int n = a.dim(0), m = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            out[static_cast<std::size_t>(j) * n + i] = a.at(static_cast<long>(i) * m + j);
    const bool rg = detail::track({&a});
    Tensor y = detail::make_output("transpose", {m, n}, std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"transpose",
             {a.impl()},
             y.impl(),
             [n, m](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (int j = 0; j < m; ++j)
                     for (int i = 0; i < n; ++i)
                         (*dins[0])[static_cast<std::size_t>(i) * m + j] +=
                             dout[static_cast<std::size_t>(j) * n + i];
             }});
    }
    return y;
}

/// y = W v for W [m x k], v [k].
inline Tensor matvec(const Tensor& w, const Tensor& v) {
    if (w.ndim() != 2 || v.ndim() != 1 || w.dim(1) != v.dim(0))
        throw ShapeError("matvec: incompatible shapes " + shape_str(w.shape()) + " x " +
                         shape_str(v.shape()));
    const int m = w.dim(0), k = w.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m));
    {
        detail::CMapRM W(w.data(), m, k);
        Eigen::Map<const Eigen::VectorXd> V(v.data(), k);
        Eigen::Map<Eigen::VectorXd> Y(out.data(), m);
        Y.noalias() = W * V;
    }
    const bool rg = detail::track({&w, &v});
    Tensor y = detail::make_output("matvec", {m}, std::move(out), rg);
    if (rg) {
        auto wi = w.impl(), vi = v.impl();
        Graph::active().record(
            {"matvec",
             {wi, vi},
             y.impl(),
             [m, k, wi, vi](const std::vector<double>& dout,
                            const std::vector<std::vector<double>*>& dins) {
                 if (dins[0])
                     for (int i = 0; i < m; ++i)
                         for (int j = 0; j < k; ++j)
                             (*dins[0])[static_cast<std::size_t>(i) * k + j] += dout[static_cast<std::size_t>(i)] * vi->values[static_cast<std::size_t>(j)];
                 if (dins[1])
                     for (int i = 0; i < m; ++i)
                         for (int j = 0; j < k; ++j)
                             (*dins[1])[static_cast<std::size_t>(j)] += wi->values[static_cast<std::size_t>(i) * k + j] * dout[static_cast<std::size_t>(i)];
             }});
    }
    return y;
}

/// y = a X (weighted sum of the rows of X), a [n], X [n x m].
inline Tensor vecmat(const Tensor& a, const Tensor& x) {
    if (a.ndim() != 1 || x.ndim() != 2 || a.dim(0) != x.dim(0))
        throw ShapeError("vecmat: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(x.shape()));
    const int n = x.dim(0), m = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m), 0.0);
    for (int i = 0; i < n; ++i) {
        const double ai = a.at(i);
        for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(j)] += ai * x.at(static_cast<long>(i) * m + j);
    }
    const bool rg = detail::track({&a, &x});
    Tensor y = detail::make_output("vecmat", {m}, std::move(out), rg);
    if (rg) {
        auto ai_ = a.impl(), xi = x.impl();
        Graph::active().record(
            {"vecmat",
             {ai_, xi},
             y.impl(),
             [n, m, ai_, xi](const std::vector<double>& dout,
                             const std::vector<std::vector<double>*>& dins) {
                 if (dins[0])
                     for (int i = 0; i < n; ++i) {
                         double s = 0;
                         for (int j = 0; j < m; ++j)
                             s += dout[static_cast<std::size_t>(j)] * xi->values[static_cast<std::size_t>(i) * m + j];
                         (*dins[0])[static_cast<std::size_t>(i)] += s;
                     }
                 if (dins[1])
                     for (int i = 0; i < n; ++i) {
                         const double av = ai_->values[static_cast<std::size_t>(i)];
                         for (int j = 0; j < m; ++j)
                             (*dins[1])[static_cast<std::size_t>(i) * m + j] += av * dout[static_cast<std::size_t>(j)];
                     }
             }});
    }
    return y;
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 1 || b.ndim() != 1 || a.dim(0) != b.dim(0))
        throw ShapeError("dot: incompatible shapes " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
    const std::size_t n = static_cast<std::size_t>(a.size());
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a.at(static_cast<long>(i)) * b.at(static_cast<long>(i));
    const bool rg = detail::track({&a, &b});
    Tensor y = detail::make_output("dot", {1}, {s}, rg);
    if (rg) {
        auto ai = a.impl(), bi = b.impl();
        Graph::active().record(
            {"dot",
             {ai, bi},
             y.impl(),
             [n, ai, bi](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (dins[0])
                     for (std::size_t i = 0; i < n; ++i) (*dins[0])[i] += dout[0] * bi->values[i];
                 if (dins[1])
                     for (std::size_t i = 0; i < n; ++i) (*dins[1])[i] += dout[0] * ai->values[i];
             }});
    }
    return y;
}

/// Adds a bias row vector b [m] to every row of x [n x m].
inline Tensor add_rowwise(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || x.dim(1) != b.dim(0))
        throw ShapeError("add_rowwise: incompatible shapes " + shape_str(x.shape()) + " + " +
                         shape_str(b.shape()));
    const int n = x.dim(0), m = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            out[static_cast<std::size_t>(i) * m + j] = x.at(static_cast<long>(i) * m + j) + b.at(j);
    const bool rg = detail::track({&x, &b});
    Tensor y = detail::make_output("add_rowwise", x.shape(), std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"add_rowwise",
             {x.impl(), b.impl()},
             y.impl(),
             [n, m](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (dins[0])
                     for (std::size_t i = 0; i < static_cast<std::size_t>(n) * m; ++i)
                         (*dins[0])[i] += dout[i];
                 if (dins[1])
                     for (int i = 0; i < n; ++i)
                         for (int j = 0; j < m; ++j)
                             (*dins[1])[static_cast<std::size_t>(j)] += dout[static_cast<std::size_t>(i) * m + j];
             }});
    }
    return y;
}

// ------------------------------------------------------- shape & gather ops

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("reshape", std::move(shape), x.values(), rg);
    if (rg) {
        const std::size_t n = static_cast<std::size_t>(x.size());
        Graph::active().record(
            {"reshape",
             {x.impl()},
             y.impl(),
             [n](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (std::size_t i = 0; i < n; ++i) (*dins[0])[i] += dout[i];
             }});
    }
    return y;
}

/// Gathers rows of a [V x d] table; gradient flows only into gathered rows.
inline Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw ShapeError("embedding_rows: table must be 2-d");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw DataError("embedding_rows: vocabulary id " + std::to_string(id) +
                            " out of range [0, " + std::to_string(v) + ")");
    const int n = static_cast<int>(ids.size());
    if (n == 0) throw ContractError("embedding_rows: empty id list");
    std::vector<double> out(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        std::copy_n(table.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d, d,
                    out.begin() + static_cast<std::size_t>(i) * d);
    const bool rg = detail::track({&table});
    Tensor y = detail::make_output("embedding_rows", {n, d}, std::move(out), rg);
    if (rg) {
        auto ids_copy = ids;
        Graph::active().record(
            {"embedding_rows",
             {table.impl()},
             y.impl(),
             [ids_copy, d](const std::vector<double>& dout,
                           const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (std::size_t i = 0; i < ids_copy.size(); ++i)
                     for (int j = 0; j < d; ++j)
                         (*dins[0])[static_cast<std::size_t>(ids_copy[i]) * d + j] +=
                             dout[i * static_cast<std::size_t>(d) + j];
             }});
    }
    return y;
}

inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat: no operands");
    long total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.ndim() != 1) throw ShapeError("concat: operands must be 1-d");
        total += p.size();
        rg = rg || p.requires_grad();
    }
    rg = rg && grad_enabled();
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Tensor y = detail::make_output("concat", {static_cast<int>(total)}, std::move(out), rg);
    if (rg) {
        std::vector<std::shared_ptr<TensorImpl>> ins;
        std::vector<long> sizes;
        for (const auto& p : parts) {
            ins.push_back(p.impl());
            sizes.push_back(p.size());
        }
        Graph::active().record(
            {"concat",
             std::move(ins),
             y.impl(),
             [sizes](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 std::size_t off = 0;
                 for (std::size_t k = 0; k < sizes.size(); ++k) {
                     if (dins[k])
                         for (long i = 0; i < sizes[k]; ++i)
                             (*dins[k])[static_cast<std::size_t>(i)] += dout[off + static_cast<std::size_t>(i)];
                     off += static_cast<std::size_t>(sizes[k]);
                 }
             }});
    }
    return y;
}

inline Tensor slice(const Tensor& x, long offset, long len) {
    if (x.ndim() != 1) throw ShapeError("slice: expected 1-d tensor");
    if (offset < 0 || len <= 0 || offset + len > x.size())
        throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                         std::to_string(offset + len) + ") out of bounds for size " +
                         std::to_string(x.size()));
    std::vector<double> out(x.values().begin() + offset, x.values().begin() + offset + len);
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("slice", {static_cast<int>(len)}, std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"slice",
             {x.impl()},
             y.impl(),
             [offset, len](const std::vector<double>& dout,
                           const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (long i = 0; i < len; ++i)
                     (*dins[0])[static_cast<std::size_t>(offset + i)] += dout[static_cast<std::size_t>(i)];
             }});
    }
    return y;
}

/// Extracts row i of a [n x m] matrix as a vector [m].
inline Tensor row(const Tensor& x, int i) {
    if (x.ndim() != 2) throw ShapeError("row: expected 2-d tensor");
    if (i < 0 || i >= x.dim(0)) throw ShapeError("row: index out of range");
    const int m = x.dim(1);
    std::vector<double> out(x.values().begin() + static_cast<std::size_t>(i) * m,
                            x.values().begin() + static_cast<std::size_t>(i + 1) * m);
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("row", {m}, std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"row",
             {x.impl()},
             y.impl(),
             [i, m](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (int j = 0; j < m; ++j)
                     (*dins[0])[static_cast<std::size_t>(i) * m + j] += dout[static_cast<std::size_t>(j)];
             }});
    }
    return y;
}

inline Tensor slice_cols(const Tensor& x, int col0, int ncols) {
    if (x.ndim() != 2) throw ShapeError("slice_cols: expected 2-d tensor");
    const int n = x.dim(0), m = x.dim(1);
    if (col0 < 0 || ncols <= 0 || col0 + ncols > m)
        throw ShapeError("slice_cols: column range out of bounds");
    std::vector<double> out(static_cast<std::size_t>(n) * ncols);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < ncols; ++j)
            out[static_cast<std::size_t>(i) * ncols + j] = x.at(static_cast<long>(i) * m + col0 + j);
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("slice_cols", {n, ncols}, std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"slice_cols",
             {x.impl()},
             y.impl(),
             [n, m, col0, ncols](const std::vector<double>& dout,
                                 const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (int i = 0; i < n; ++i)
                     for (int j = 0; j < ncols; ++j)
                         (*dins[0])[static_cast<std::size_t>(i) * m + col0 + j] +=
                             dout[static_cast<std::size_t>(i) * ncols + j];
             }});
    }
    return y;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no operands");
    const int n = parts.front().dim(0);
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != n)
            throw ShapeError("concat_cols: operands must share the row count");
        total += p.dim(1);
        rg = rg || p.requires_grad();
    }
    rg = rg && grad_enabled();
    std::vector<double> out(static_cast<std::size_t>(n) * total);
    int off = 0;
    for (const auto& p : parts) {
        const int m = p.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j)
                out[static_cast<std::size_t>(i) * total + off + j] = p.at(static_cast<long>(i) * m + j);
        off += m;
    }
    Tensor y = detail::make_output("concat_cols", {n, total}, std::move(out), rg);
    if (rg) {
        std::vector<std::shared_ptr<TensorImpl>> ins;
        std::vector<int> widths;
        for (const auto& p : parts) {
            ins.push_back(p.impl());
            widths.push_back(p.dim(1));
        }
        Graph::active().record(
            {"concat_cols",
             std::move(ins),
             y.impl(),
             [n, total, widths](const std::vector<double>& dout,
                                const std::vector<std::vector<double>*>& dins) {
                 int off2 = 0;
                 for (std::size_t k = 0; k < widths.size(); ++k) {
                     const int m = widths[k];
                     if (dins[k])
                         for (int i = 0; i < n; ++i)
                             for (int j = 0; j < m; ++j)
                                 (*dins[k])[static_cast<std::size_t>(i) * m + j] +=
                                     dout[static_cast<std::size_t>(i) * total + off2 + j];
                     off2 += m;
                 }
             }});
    }
    return y;
}

// -------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
    double s = 0;
    for (double v : x.values()) s += v;
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("sum", {1}, {s}, rg);
    if (rg) {
        const std::size_t n = static_cast<std::size_t>(x.size());
        Graph::active().record(
            {"sum",
             {x.impl()},
             y.impl(),
             [n](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (std::size_t i = 0; i < n; ++i) (*dins[0])[i] += dout[0];
             }});
    }
    return y;
}

// ------------------------------------------------------- masking & attention

/// Per-column max over unmasked rows of c [N x M]; gradient is routed to the
/// first (lowest-index) argmax of each column.
inline Tensor maxpool_cols(const Tensor& c, const Mask& row_mask) {
    if (c.ndim() != 2) throw ShapeError("maxpool_cols: expected 2-d tensor");
    const int n = c.dim(0), m = c.dim(1);
    if (static_cast<int>(row_mask.size()) != n)
        throw ShapeError("maxpool_cols: mask length does not match row count");
    bool any = false;
    for (auto b : row_mask) any = any || (b != 0);
    if (!any) throw MaskError("maxpool_cols: empty pool, all rows masked");
    std::vector<double> out(static_cast<std::size_t>(m));
    std::vector<int> argmax(static_cast<std::size_t>(m), -1);
    for (int j = 0; j < m; ++j) {
        double best = 0;
        int best_i = -1;
        for (int i = 0; i < n; ++i) {
            if (!row_mask[static_cast<std::size_t>(i)]) continue;
            const double v = c.at(static_cast<long>(i) * m + j);
            if (best_i < 0 || v > best) {
                best = v;
                best_i = i;
            }
        }
        out[static_cast<std::size_t>(j)] = best;
        argmax[static_cast<std::size_t>(j)] = best_i;
    }
    const bool rg = detail::track({&c});
    Tensor y = detail::make_output("maxpool_cols", {m}, std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"maxpool_cols",
             {c.impl()},
             y.impl(),
             [m, argmax](const std::vector<double>& dout,
                         const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (int j = 0; j < m; ++j)
                     (*dins[0])[static_cast<std::size_t>(argmax[static_cast<std::size_t>(j)]) * m + j] +=
                         dout[static_cast<std::size_t>(j)];
             }});
    }
    return y;
}

/// Zeroes masked entries of a vector; gradient is likewise masked.
inline Tensor mask_zero(const Tensor& x, const Mask& mask) {
    if (x.ndim() != 1) throw ShapeError("mask_zero: expected 1-d tensor");
    const int n = x.dim(0);
    if (static_cast<int>(mask.size()) != n)
        throw ShapeError("mask_zero: mask length does not match tensor size");
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(i)] ? x.at(i) : 0.0;
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("mask_zero", {n}, std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"mask_zero",
             {x.impl()},
             y.impl(),
             [mask, n](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (int i = 0; i < n; ++i)
                     if (mask[static_cast<std::size_t>(i)])
                         (*dins[0])[static_cast<std::size_t>(i)] += dout[static_cast<std::size_t>(i)];
             }});
    }
    return y;
}

/// Row-wise softmax of x [n x m] restricted to unmasked key columns; masked
/// columns produce exact zeros. Stabilised by max subtraction.
inline Tensor softmax_masked_rows(const Tensor& x, const Mask& key_mask) {
    if (x.ndim() != 2) throw ShapeError("softmax_masked_rows: expected 2-d tensor");
    const int n = x.dim(0), m = x.dim(1);
    if (static_cast<int>(key_mask.size()) != m)
        throw ShapeError("softmax_masked_rows: mask length does not match column count");
    bool any = false;
    for (auto b : key_mask) any = any || (b != 0);
    if (!any) throw MaskError("softmax_masked_rows: all positions masked");
    std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < m; ++j)
            if (key_mask[static_cast<std::size_t>(j)]) mx = std::max(mx, x.at(static_cast<long>(i) * m + j));
        double z = 0;
        for (int j = 0; j < m; ++j)
            if (key_mask[static_cast<std::size_t>(j)]) {
                const double e = std::exp(x.at(static_cast<long>(i) * m + j) - mx);
                out[static_cast<std::size_t>(i) * m + j] = e;
                z += e;
            }
        for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(i) * m + j] /= z;
    }
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("softmax", {n, m}, std::move(out), rg);
    if (rg) {
        auto yi = y.impl();
        Graph::active().record(
            {"softmax",
             {x.impl()},
             yi,
             [n, m, key_mask, yi](const std::vector<double>& dout,
                                  const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (int i = 0; i < n; ++i) {
                     double s = 0;
                     for (int j = 0; j < m; ++j)
                         if (key_mask[static_cast<std::size_t>(j)])
                             s += yi->values[static_cast<std::size_t>(i) * m + j] * dout[static_cast<std::size_t>(i) * m + j];
                     for (int j = 0; j < m; ++j)
                         if (key_mask[static_cast<std::size_t>(j)])
                             (*dins[0])[static_cast<std::size_t>(i) * m + j] +=
                                 yi->values[static_cast<std::size_t>(i) * m + j] *
                                 (dout[static_cast<std::size_t>(i) * m + j] - s);
                 }
             }});
    }
    return y;
}

// ------------------------------------------------------------- normalisation

/// Standardises the last axis of x ([d] or [n x d]) and applies gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.ndim() < 1 || x.ndim() > 2) throw ShapeError("layer_norm: expected 1-d or 2-d tensor");
    const int d = x.dim(x.ndim() - 1);
    const int rows = x.ndim() == 2 ? x.dim(0) : 1;
    if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
        throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
    std::vector<double> out(static_cast<std::size_t>(rows) * d);
    std::vector<double> inv_std(static_cast<std::size_t>(rows)), mean_r(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * d;
        double mu = 0;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= d;
        const double s = 1.0 / std::sqrt(var + eps);
        mean_r[static_cast<std::size_t>(r)] = mu;
        inv_std[static_cast<std::size_t>(r)] = s;
        for (int j = 0; j < d; ++j)
            out[static_cast<std::size_t>(r) * d + j] = gain.at(j) * ((xr[j] - mu) * s) + bias.at(j);
    }
    const bool rg = detail::track({&x, &gain, &bias});
    Tensor y = detail::make_output("layer_norm", x.shape(), std::move(out), rg);
    if (rg) {
        auto xi = x.impl(), gi = gain.impl();
        Graph::active().record(
            {"layer_norm",
             {xi, gi, bias.impl()},
             y.impl(),
             [rows, d, xi, gi, mean_r, inv_std](const std::vector<double>& dout,
                                                const std::vector<std::vector<double>*>& dins) {
                 for (int r = 0; r < rows; ++r) {
                     const double* xr = xi->values.data() + static_cast<std::size_t>(r) * d;
                     const double mu = mean_r[static_cast<std::size_t>(r)];
                     const double s = inv_std[static_cast<std::size_t>(r)];
                     const double* dr = dout.data() + static_cast<std::size_t>(r) * d;
                     double mean_g = 0, mean_gx = 0;
                     for (int j = 0; j < d; ++j) {
                         const double xh = (xr[j] - mu) * s;
                         const double g = dr[j] * gi->values[static_cast<std::size_t>(j)];
                         mean_g += g;
                         mean_gx += g * xh;
                         if (dins[1]) (*dins[1])[static_cast<std::size_t>(j)] += dr[j] * xh;
                         if (dins[2]) (*dins[2])[static_cast<std::size_t>(j)] += dr[j];
                     }
                     mean_g /= d;
                     mean_gx /= d;
                     if (dins[0])
                         for (int j = 0; j < d; ++j) {
                             const double xh = (xr[j] - mu) * s;
                             const double g = dr[j] * gi->values[static_cast<std::size_t>(j)];
                             (*dins[0])[static_cast<std::size_t>(r) * d + j] += s * (g - mean_g - xh * mean_gx);
                         }
                 }
             }});
    }
    return y;
}

namespace detail {
inline void conv_dims(const char* op, const Shape& xs, int& b, int& c, int& h, int& w) {
    if (xs.size() == 3) {
        b = 1;
        c = xs[0];
        h = xs[1];
        w = xs[2];
    } else if (xs.size() == 4) {
        b = xs[0];
        c = xs[1];
        h = xs[2];
        w = xs[3];
    } else {
        throw ShapeError(std::string(op) + ": expected 3-d or 4-d tensor, got " + shape_str(xs));
    }
}
}  // namespace detail

/// Per-channel standardisation over the spatial axes (no learned affine).
inline Tensor instance_norm(const Tensor& x, double eps = 1e-5) {
    int b, c, h, w;
    detail::conv_dims("instance_norm", x.shape(), b, c, h, w);
    const long hw = static_cast<long>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    std::vector<double> mean_c(static_cast<std::size_t>(b) * c), inv_std(static_cast<std::size_t>(b) * c);
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const double* xc = x.data() + (static_cast<std::size_t>(bi) * c + ci) * hw;
            double mu = 0;
            for (long i = 0; i < hw; ++i) mu += xc[i];
            mu /= static_cast<double>(hw);
            double var = 0;
            for (long i = 0; i < hw; ++i) var += (xc[i] - mu) * (xc[i] - mu);
            var /= static_cast<double>(hw);
            const double s = 1.0 / std::sqrt(var + eps);
            mean_c[static_cast<std::size_t>(bi) * c + ci] = mu;
            inv_std[static_cast<std::size_t>(bi) * c + ci] = s;
            double* oc = out.data() + (static_cast<std::size_t>(bi) * c + ci) * hw;
            for (long i = 0; i < hw; ++i) oc[i] = (xc[i] - mu) * s;
        }
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("instance_norm", x.shape(), std::move(out), rg);
    if (rg) {
        auto xi = x.impl();
        Graph::active().record(
            {"instance_norm",
             {xi},
             y.impl(),
             [b, c, hw, xi, mean_c, inv_std](const std::vector<double>& dout,
                                             const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (int bi = 0; bi < b; ++bi)
                     for (int ci = 0; ci < c; ++ci) {
                         const std::size_t base = (static_cast<std::size_t>(bi) * c + ci) * static_cast<std::size_t>(hw);
                         const double mu = mean_c[static_cast<std::size_t>(bi) * c + ci];
                         const double s = inv_std[static_cast<std::size_t>(bi) * c + ci];
                         double mean_g = 0, mean_gx = 0;
                         for (long i = 0; i < hw; ++i) {
                             const double xh = (xi->values[base + static_cast<std::size_t>(i)] - mu) * s;
                             mean_g += dout[base + static_cast<std::size_t>(i)];
                             mean_gx += dout[base + static_cast<std::size_t>(i)] * xh;
                         }
                         mean_g /= static_cast<double>(hw);
                         mean_gx /= static_cast<double>(hw);
                         for (long i = 0; i < hw; ++i) {
                             const double xh = (xi->values[base + static_cast<std::size_t>(i)] - mu) * s;
                             (*dins[0])[base + static_cast<std::size_t>(i)] +=
                                 s * (dout[base + static_cast<std::size_t>(i)] - mean_g - xh * mean_gx);
                         }
                     }
             }});
    }
    return y;
}

/// Per-channel affine modulation: out[c,...] = gamma[c] * x[c,...] + beta[c].
/// Accepts [C x H x W] or [B x C x H x W].
inline Tensor scale_shift(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    int b, c, h, w;
    detail::conv_dims("scale_shift", x.shape(), b, c, h, w);
    if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
        throw ShapeError("scale_shift: channel mismatch, feature map has " + std::to_string(c) +
                         " channels, gamma " + shape_str(gamma.shape()) + ", beta " +
                         shape_str(beta.shape()));
    const long hw = static_cast<long>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const double g = gamma.at(ci), be = beta.at(ci);
            const std::size_t base = (static_cast<std::size_t>(bi) * c + ci) * static_cast<std::size_t>(hw);
            for (long i = 0; i < hw; ++i) out[base + static_cast<std::size_t>(i)] = g * x.at(static_cast<long>(base) + i) + be;
        }
    const bool rg = detail::track({&x, &gamma, &beta});
    Tensor y = detail::make_output("scale_shift", x.shape(), std::move(out), rg);
    if (rg) {
        auto xi = x.impl(), gi = gamma.impl();
        Graph::active().record(
            {"scale_shift",
             {xi, gi, beta.impl()},
             y.impl(),
             [b, c, hw, xi, gi](const std::vector<double>& dout,
                                const std::vector<std::vector<double>*>& dins) {
                 for (int bi = 0; bi < b; ++bi)
                     for (int ci = 0; ci < c; ++ci) {
                         const std::size_t base = (static_cast<std::size_t>(bi) * c + ci) * static_cast<std::size_t>(hw);
                         const double g = gi->values[static_cast<std::size_t>(ci)];
                         double dg = 0, db = 0;
                         for (long i = 0; i < hw; ++i) {
                             const double dv = dout[base + static_cast<std::size_t>(i)];
                             dg += dv * xi->values[base + static_cast<std::size_t>(i)];
                             db += dv;
                             if (dins[0]) (*dins[0])[base + static_cast<std::size_t>(i)] += g * dv;
                         }
                         if (dins[1]) (*dins[1])[static_cast<std::size_t>(ci)] += dg;
                         if (dins[2]) (*dins[2])[static_cast<std::size_t>(ci)] += db;
                     }
             }});
    }
    return y;
}

/// Spatial mean per channel: [C x H x W] -> [C], [B x C x H x W] -> [B x C].
inline Tensor global_avg_pool(const Tensor& x) {
    int b, c, h, w;
    detail::conv_dims("global_avg_pool", x.shape(), b, c, h, w);
    const long hw = static_cast<long>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(b) * c, 0.0);
    for (long i = 0; i < static_cast<long>(b) * c; ++i) {
        const double* xc = x.data() + static_cast<std::size_t>(i) * hw;
        double s = 0;
        for (long k = 0; k < hw; ++k) s += xc[k];
        out[static_cast<std::size_t>(i)] = s / static_cast<double>(hw);
    }
    Shape oshape = x.ndim() == 3 ? Shape{c} : Shape{b, c};
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("global_avg_pool", std::move(oshape), std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"global_avg_pool",
             {x.impl()},
             y.impl(),
             [b, c, hw](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (long i = 0; i < static_cast<long>(b) * c; ++i) {
                     const double g = dout[static_cast<std::size_t>(i)] / static_cast<double>(hw);
                     for (long k = 0; k < hw; ++k)
                         (*dins[0])[static_cast<std::size_t>(i * hw + k)] += g;
                 }
             }});
    }
    return y;
}

// ---------------------------------------------------------------- convolution

namespace detail {

/// Unpacks conv patches into a [Cin*kh*kw x Hout*Wout] column matrix.
inline void im2col(const double* x, int c, int h, int w, int kh, int kw, int stride, int pad,
                   int hout, int wout, double* cols) {
    const int L = hout * wout;
    for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
                double* dst = cols + (static_cast<std::size_t>(ci) * kh * kw +
                                      static_cast<std::size_t>(dy) * kw + dx) * L;
                for (int oy = 0; oy < hout; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    for (int ox = 0; ox < wout; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        dst[oy * wout + ox] =
                            (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                ? x[(static_cast<std::size_t>(ci) * h + iy) * w + ix]
                                : 0.0;
                    }
                }
            }
}

inline void col2im_accum(const double* cols, int c, int h, int w, int kh, int kw, int stride,
                         int pad, int hout, int wout, double* dx) {
    const int L = hout * wout;
    for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx_ = 0; dx_ < kw; ++dx_) {
                const double* src = cols + (static_cast<std::size_t>(ci) * kh * kw +
                                            static_cast<std::size_t>(dy) * kw + dx_) * L;
                for (int oy = 0; oy < hout; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wout; ++ox) {
                        const int ix = ox * stride + dx_ - pad;
                        if (ix < 0 || ix >= w) continue;
                        dx[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += src[oy * wout + ox];
                    }
                }
            }
}

}  // namespace detail

/// Cross-correlation with zero padding. Input [B x Cin x H x W] (or 3-d,
/// treated as batch 1), kernel [Cout x Cin x kh x kw]. The stride must tile
/// the padded extent exactly.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride = 1, int padding = 0) {
    int b, cin, h, w;
    detail::conv_dims("conv2d", x.shape(), b, cin, h, w);
    if (kernel.ndim() != 4)
        throw ShapeError("conv2d: kernel must be 4-d [Cout x Cin x kh x kw], got " +
                         shape_str(kernel.shape()));
    const int cout = kernel.dim(0), kcin = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kcin != cin)
        throw ShapeError("conv2d: kernel expects " + std::to_string(kcin) + " input channels, got " +
                         std::to_string(cin));
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: invalid stride/padding");
    if (kh > h + 2 * padding || kw > w + 2 * padding)
        throw ConfigError("conv2d: kernel exceeds padded input extent");
    if ((h + 2 * padding - kh) % stride != 0 || (w + 2 * padding - kw) % stride != 0)
        throw ConfigError("conv2d: stride does not produce an integer output size");
    const int hout = (h + 2 * padding - kh) / stride + 1;
    const int wout = (w + 2 * padding - kw) / stride + 1;
    const int K = cin * kh * kw, L = hout * wout;

    std::vector<double> out(static_cast<std::size_t>(b) * cout * L);
    std::vector<double> cols(static_cast<std::size_t>(K) * L);
    for (int bi = 0; bi < b; ++bi) {
        detail::im2col(x.data() + static_cast<std::size_t>(bi) * cin * h * w, cin, h, w, kh, kw,
                       stride, padding, hout, wout, cols.data());
        detail::CMapRM Km(kernel.data(), cout, K);
        detail::CMapRM Cm(cols.data(), K, L);
        detail::MapRM Om(out.data() + static_cast<std::size_t>(bi) * cout * L, cout, L);
        Om.noalias() = Km * Cm;
    }
    Shape oshape = x.ndim() == 3 ? Shape{cout, hout, wout} : Shape{b, cout, hout, wout};
    const bool rg = detail::track({&x, &kernel});
    Tensor y = detail::make_output("conv2d", std::move(oshape), std::move(out), rg);
    if (rg) {
        auto xi = x.impl(), ki = kernel.impl();
        Graph::active().record(
            {"conv2d",
             {xi, ki},
             y.impl(),
             [=](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 // patches are recomputed instead of saved; trades flops for memory
                 std::vector<double> cols2(static_cast<std::size_t>(K) * L);
                 std::vector<double> dcols(static_cast<std::size_t>(K) * L);
                 for (int bi = 0; bi < b; ++bi) {
                     detail::CMapRM dY(dout.data() + static_cast<std::size_t>(bi) * cout * L, cout, L);
                     if (dins[1]) {
                         detail::im2col(xi->values.data() + static_cast<std::size_t>(bi) * cin * h * w,
                                        cin, h, w, kh, kw, stride, padding, hout, wout, cols2.data());
                         detail::CMapRM Cm(cols2.data(), K, L);
                         detail::MapRM dK(dins[1]->data(), cout, K);
                         dK.noalias() += dY * Cm.transpose();
                     }
                     if (dins[0]) {
                         detail::CMapRM Km(ki->values.data(), cout, K);
                         detail::MapRM dC(dcols.data(), K, L);
                         dC.noalias() = Km.transpose() * dY;
                         detail::col2im_accum(dcols.data(), cin, h, w, kh, kw, stride, padding, hout,
                                              wout,
                                              dins[0]->data() + static_cast<std::size_t>(bi) * cin * h * w);
                     }
                 }
             }});
    }
    return y;
}

/// Zero-pads the spatial axes with independent extents per side, so stride-2
/// convolutions can tile even-sized inputs exactly (pad bottom/right by one).
inline Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right) {
    int b, c, h, w;
    detail::conv_dims("pad2d", x.shape(), b, c, h, w);
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw ConfigError("pad2d: negative padding");
    const int h2 = h + top + bottom, w2 = w + left + right;
    std::vector<double> out(static_cast<std::size_t>(b) * c * h2 * w2, 0.0);
    for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < h; ++i) {
                const std::size_t src = ((static_cast<std::size_t>(bi) * c + ci) * h + i) * w;
                const std::size_t dst =
                    ((static_cast<std::size_t>(bi) * c + ci) * h2 + i + top) * w2 + left;
                std::copy_n(x.data() + src, w, out.begin() + static_cast<long>(dst));
            }
    Shape oshape = x.ndim() == 3 ? Shape{c, h2, w2} : Shape{b, c, h2, w2};
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("pad2d", std::move(oshape), std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"pad2d",
             {x.impl()},
             y.impl(),
             [b, c, h, w, h2, w2, top, left](const std::vector<double>& dout,
                                             const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (int bi = 0; bi < b; ++bi)
                     for (int ci = 0; ci < c; ++ci)
                         for (int i = 0; i < h; ++i)
                             for (int j = 0; j < w; ++j)
                                 (*dins[0])[((static_cast<std::size_t>(bi) * c + ci) * h + i) * w + j] +=
                                     dout[((static_cast<std::size_t>(bi) * c + ci) * h2 + i + top) * w2 +
                                          j + left];
             }});
    }
    return y;
}

// ------------------------------------------------------------------- dropout

/// Inverted-scaling dropout; call only in training mode. rate in [0, 1).
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
    if (rate == 0.0) return x;
    const double keep = 1.0 - rate;
    const std::size_t n = static_cast<std::size_t>(x.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> mask(n);
    for (auto& mv : mask) mv = u(rng) < keep ? 1.0 / keep : 0.0;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x.at(static_cast<long>(i)) * mask[i];
    const bool rg = detail::track({&x});
    Tensor y = detail::make_output("dropout", x.shape(), std::move(out), rg);
    if (rg) {
        Graph::active().record(
            {"dropout",
             {x.impl()},
             y.impl(),
             [mask = std::move(mask), n](const std::vector<double>& dout,
                                         const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 for (std::size_t i = 0; i < n; ++i) (*dins[0])[i] += dout[i] * mask[i];
             }});
    }
    return y;
}

// ---------------------------------------------------------------------- loss

/// Binary cross-entropy computed from the logit in log-sum-exp form, never
/// from the probability. y must be 0 or 1.
inline Tensor bce_with_logits(const Tensor& logit, double y) {
    if (logit.size() != 1) throw ContractError("bce_with_logits: logit must be scalar");
    if (y != 0.0 && y != 1.0) throw ContractError("bce_with_logits: label must be 0 or 1");
    const double z = logit.value();
    const double loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    const bool rg = detail::track({&logit});
    Tensor out = detail::make_output("bce_with_logits", {1}, {loss}, rg);
    if (rg) {
        Graph::active().record(
            {"bce_with_logits",
             {logit.impl()},
             out.impl(),
             [z, y](const std::vector<double>& dout, const std::vector<std::vector<double>*>& dins) {
                 if (!dins[0]) return;
                 const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                 (*dins[0])[0] += (sig - y) * dout[0];
             }});
    }
    return out;
}

// -------------------------------------------------------------- convenience

/// x W + b for x [n x k], W [k x m], b [m].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowwise(matmul(x, w), b);
}

/// W v + b for v [k], W [m x k], b [m].
inline Tensor linear_vec(const Tensor& w, const Tensor& v, const Tensor& b) {
    return add(matvec(w, v), b);
}

/// Mean of a list of scalar tensors.
inline Tensor mean_scalars(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("mean_scalars: empty list");
    Tensor acc = xs.front();
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return affine(acc, 1.0 / static_cast<double>(xs.size()), 0.0);
}

}  // namespace mmsarc
