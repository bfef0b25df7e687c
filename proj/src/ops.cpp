#include "laytext/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "laytext/kernels.hpp"

namespace laytext {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

void require_rank(const Tensor& t, int rank, const char* who) {
    if (t.rank() != rank)
        throw DimensionError(std::string(who) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + shape_str(t.shape()));
}

bool track(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

Tensor make_result(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return Tensor::wrap(std::move(n));
}

void attach(Tensor& out, std::vector<NodePtr> parents,
            std::function<void(const std::vector<double>&, GradSink&)> fn) {
    out.node()->requires_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backward = std::move(fn);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m) * n);
    kernels::matmul_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    Tensor res = make_result({m, n}, std::move(out));
    if (track({&a, &b})) {
        auto an = a.node(), bn = b.node();
        attach(res, {an, bn}, [an, bn, m, k, n](const std::vector<double>& g, GradSink& sink) {
            if (an->requires_grad)
                kernels::matmul_nt(g.data(), bn->value.data(), sink.get(an.get()).data(), m, n, k, true);
            if (bn->requires_grad)
                kernels::matmul_tn(an->value.data(), g.data(), sink.get(bn.get()).data(), k, m, n, true);
        });
    }
    return res;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m) * n);
    kernels::matmul_nt(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    Tensor res = make_result({m, n}, std::move(out));
    if (track({&a, &b})) {
        auto an = a.node(), bn = b.node();
        attach(res, {an, bn}, [an, bn, m, k, n](const std::vector<double>& g, GradSink& sink) {
            if (an->requires_grad)
                kernels::matmul_nn(g.data(), bn->value.data(), sink.get(an.get()).data(), m, n, k, true);
            if (bn->requires_grad)
                kernels::matmul_tn(g.data(), an->value.data(), sink.get(bn.get()).data(), n, m, k, true);
        });
    }
    return res;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const int t = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in)
        throw DimensionError("linear: weight " + shape_str(w.shape()) + " does not accept input " +
                             shape_str(x.shape()));
    if (b.defined() && b.numel() != out_dim)
        throw DimensionError("linear: bias length mismatch");
    std::vector<double> out(static_cast<size_t>(t) * out_dim);
    kernels::matmul_nt(x.data().data(), w.data().data(), out.data(), t, in, out_dim, false);
    if (b.defined()) {
        const double* bias = b.data().data();
        for (int i = 0; i < t; ++i) {
            double* row = out.data() + static_cast<int64_t>(i) * out_dim;
            for (int j = 0; j < out_dim; ++j) row[j] += bias[j];
        }
    }
    Tensor res = make_result({t, out_dim}, std::move(out));
    if (track({&x, &w, &b})) {
        auto xn = x.node(), wn = w.node();
        auto bn = b.defined() ? b.node() : nullptr;
        std::vector<NodePtr> parents = {xn, wn};
        if (bn) parents.push_back(bn);
        attach(res, std::move(parents),
               [xn, wn, bn, t, in, out_dim](const std::vector<double>& g, GradSink& sink) {
                   if (xn->requires_grad)
                       kernels::matmul_nn(g.data(), wn->value.data(), sink.get(xn.get()).data(), t,
                                          out_dim, in, true);
                   if (wn->requires_grad)
                       kernels::matmul_tn(g.data(), xn->value.data(), sink.get(wn.get()).data(),
                                          out_dim, t, in, true);
                   if (bn && bn->requires_grad) {
                       std::vector<double>& db = sink.get(bn.get());
                       for (int i = 0; i < t; ++i) {
                           const double* row = g.data() + static_cast<int64_t>(i) * out_dim;
                           for (int j = 0; j < out_dim; ++j) db[static_cast<size_t>(j)] += row[j];
                       }
                   }
               });
    }
    return res;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<double> out(a.data());
    const std::vector<double>& bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    Tensor res = make_result(a.shape(), std::move(out));
    if (track({&a, &b})) {
        auto an = a.node(), bn = b.node();
        attach(res, {an, bn}, [an, bn](const std::vector<double>& g, GradSink& sink) {
            if (an->requires_grad) {
                std::vector<double>& da = sink.get(an.get());
                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            }
            if (bn->requires_grad) {
                std::vector<double>& db = sink.get(bn.get());
                for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
            }
        });
    }
    return res;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<double> out(a.data());
    const std::vector<double>& bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    Tensor res = make_result(a.shape(), std::move(out));
    if (track({&a, &b})) {
        auto an = a.node(), bn = b.node();
        attach(res, {an, bn}, [an, bn](const std::vector<double>& g, GradSink& sink) {
            if (an->requires_grad) {
                std::vector<double>& da = sink.get(an.get());
                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                std::vector<double>& db = sink.get(bn.get());
                for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * an->value[i];
            }
        });
    }
    return res;
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data());
    for (double& v : out) v *= c;
    Tensor res = make_result(a.shape(), std::move(out));
    if (track({&a})) {
        auto an = a.node();
        attach(res, {an}, [an, c](const std::vector<double>& g, GradSink& sink) {
            std::vector<double>& da = sink.get(an.get());
            for (size_t i = 0; i < g.size(); ++i) da[i] += c * g[i];
        });
    }
    return res;
}

Tensor silu(const Tensor& x) {
    std::vector<double> out(x.data().size());
    const std::vector<double>& xv = x.data();
    for (size_t i = 0; i < out.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xv[i]));
        out[i] = xv[i] * s;
    }
    Tensor res = make_result(x.shape(), std::move(out));
    if (track({&x})) {
        auto xn = x.node();
        attach(res, {xn}, [xn](const std::vector<double>& g, GradSink& sink) {
            std::vector<double>& dx = sink.get(xn.get());
            for (size_t i = 0; i < g.size(); ++i) {
                const double v = xn->value[i];
                const double s = 1.0 / (1.0 + std::exp(-v));
                dx[i] += g[i] * s * (1.0 + v * (1.0 - s));
            }
        });
    }
    return res;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor res = make_result({}, {acc});
    if (track({&x})) {
        auto xn = x.node();
        attach(res, {xn}, [xn](const std::vector<double>& g, GradSink& sink) {
            std::vector<double>& dx = sink.get(xn.get());
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
        });
    }
    return res;
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
    require_rank(x, 2, "rmsnorm");
    const int rows = x.dim(0), cols = x.dim(1);
    if (gain.numel() != cols) throw DimensionError("rmsnorm: gain length mismatch");
    std::vector<double> out(x.data().size());
    auto rms = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    kernels::rmsnorm_rows(x.data().data(), gain.data().data(), out.data(), rms->data(), rows, cols, eps);
    Tensor res = make_result(x.shape(), std::move(out));
    if (track({&x, &gain})) {
        auto xn = x.node(), gn = gain.node();
        attach(res, {xn, gn}, [xn, gn, rms, rows, cols](const std::vector<double>& g, GradSink& sink) {
            const double* xv = xn->value.data();
            const double* gainv = gn->value.data();
            std::vector<double>* dx = xn->requires_grad ? &sink.get(xn.get()) : nullptr;
            std::vector<double>* dgain = gn->requires_grad ? &sink.get(gn.get()) : nullptr;
            for (int i = 0; i < rows; ++i) {
                const double r = (*rms)[static_cast<size_t>(i)];
                const double inv = 1.0 / r;
                const double* xrow = xv + static_cast<int64_t>(i) * cols;
                const double* grow = g.data() + static_cast<int64_t>(i) * cols;
                if (dgain) {
                    double* dgp = dgain->data();
                    for (int j = 0; j < cols; ++j) dgp[j] += grow[j] * xrow[j] * inv;
                }
                if (dx) {
                    double dot = 0.0;
                    for (int j = 0; j < cols; ++j) dot += grow[j] * gainv[j] * xrow[j];
                    const double coef = dot / (static_cast<double>(cols) * r * r * r);
                    double* dxp = dx->data() + static_cast<int64_t>(i) * cols;
                    for (int j = 0; j < cols; ++j) dxp[j] += grow[j] * gainv[j] * inv - xrow[j] * coef;
                }
            }
        });
    }
    return res;
}

Tensor causal_softmax(const Tensor& scores) {
    require_rank(scores, 2, "causal_softmax");
    const int t = scores.dim(0);
    if (scores.dim(1) != t) throw DimensionError("causal_softmax: expected square scores");
    std::vector<double> out(scores.data());
    kernels::causal_softmax_rows(out.data(), t);
    Tensor res = make_result(scores.shape(), std::move(out));
    if (track({&scores})) {
        auto sn = scores.node();
        auto pn = res.node();  // probabilities needed in backward
        attach(res, {sn}, [sn, pnw = std::weak_ptr<TensorNode>(pn), t](const std::vector<double>& g,
                                                                       GradSink& sink) {
            auto p = pnw.lock();
            std::vector<double>& ds = sink.get(sn.get());
            for (int i = 0; i < t; ++i) {
                const double* prow = p->value.data() + static_cast<int64_t>(i) * t;
                const double* grow = g.data() + static_cast<int64_t>(i) * t;
                double dot = 0.0;
                for (int j = 0; j <= i; ++j) dot += grow[j] * prow[j];
                double* drow = ds.data() + static_cast<int64_t>(i) * t;
                for (int j = 0; j <= i; ++j) drow[j] += prow[j] * (grow[j] - dot);
            }
        });
    }
    return res;
}

Tensor rope_rows(const Tensor& x, double base, int pos_offset) {
    require_rank(x, 2, "rope_rows");
    const int t = x.dim(0), d = x.dim(1);
    if (d % 2 != 0) throw ContractError("rope_rows: head dimension must be even, got " + std::to_string(d));
    const int half = d / 2;
    std::vector<double> inv_freq(static_cast<size_t>(half));
    for (int j = 0; j < half; ++j)
        inv_freq[static_cast<size_t>(j)] = std::pow(base, -2.0 * j / static_cast<double>(d));
    std::vector<double> out(x.data().size());
    const double* xv = x.data().data();
    for (int i = 0; i < t; ++i) {
        const double pos = static_cast<double>(i + pos_offset);
        const double* xrow = xv + static_cast<int64_t>(i) * d;
        double* orow = out.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < half; ++j) {
            const double a = pos * inv_freq[static_cast<size_t>(j)];
            const double c = std::cos(a), s = std::sin(a);
            const double x0 = xrow[2 * j], x1 = xrow[2 * j + 1];
            orow[2 * j] = x0 * c - x1 * s;
            orow[2 * j + 1] = x0 * s + x1 * c;
        }
    }
    Tensor res = make_result(x.shape(), std::move(out));
    if (track({&x})) {
        auto xn = x.node();
        attach(res, {xn},
               [xn, inv_freq = std::move(inv_freq), t, d, half, pos_offset](const std::vector<double>& g,
                                                                            GradSink& sink) {
                   std::vector<double>& dx = sink.get(xn.get());
                   for (int i = 0; i < t; ++i) {
                       const double pos = static_cast<double>(i + pos_offset);
                       const double* grow = g.data() + static_cast<int64_t>(i) * d;
                       double* drow = dx.data() + static_cast<int64_t>(i) * d;
                       for (int j = 0; j < half; ++j) {
                           const double a = pos * inv_freq[static_cast<size_t>(j)];
                           const double c = std::cos(a), s = std::sin(a);
                           const double g0 = grow[2 * j], g1 = grow[2 * j + 1];
                           drow[2 * j] += g0 * c + g1 * s;
                           drow[2 * j + 1] += -g0 * s + g1 * c;
                       }
                   }
               });
    }
    return res;
}

Tensor slice_cols(const Tensor& x, int offset, int width) {
    require_rank(x, 2, "slice_cols");
    const int rows = x.dim(0), cols = x.dim(1);
    if (offset < 0 || width <= 0 || offset + width > cols)
        throw DimensionError("slice_cols: range [" + std::to_string(offset) + ", " +
                             std::to_string(offset + width) + ") out of " + std::to_string(cols));
    std::vector<double> out(static_cast<size_t>(rows) * width);
    const double* xv = x.data().data();
    for (int i = 0; i < rows; ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * width,
                    xv + static_cast<int64_t>(i) * cols + offset, sizeof(double) * static_cast<size_t>(width));
    Tensor res = make_result({rows, width}, std::move(out));
    if (track({&x})) {
        auto xn = x.node();
        attach(res, {xn}, [xn, offset, width, rows, cols](const std::vector<double>& g, GradSink& sink) {
            std::vector<double>& dx = sink.get(xn.get());
            for (int i = 0; i < rows; ++i) {
                double* drow = dx.data() + static_cast<int64_t>(i) * cols + offset;
                const double* grow = g.data() + static_cast<int64_t>(i) * width;
                for (int j = 0; j < width; ++j) drow[j] += grow[j];
            }
        });
    }
    return res;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const int rows = parts[0].dim(0);
    int cols = 0;
    for (const Tensor& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.dim(0) != rows) throw DimensionError("concat_cols: row count mismatch");
        cols += p.dim(1);
    }
    std::vector<double> out(static_cast<size_t>(rows) * cols);
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.dim(1);
        const double* pv = p.data().data();
        for (int i = 0; i < rows; ++i)
            std::memcpy(out.data() + static_cast<int64_t>(i) * cols + off,
                        pv + static_cast<int64_t>(i) * w, sizeof(double) * static_cast<size_t>(w));
        off += w;
    }
    Tensor res = make_result({rows, cols}, std::move(out));
    bool any = false;
    for (const Tensor& p : parts) any = any || p.requires_grad();
    if (grad_enabled() && any) {
        std::vector<NodePtr> parents;
        std::vector<int> widths;
        for (const Tensor& p : parts) {
            parents.push_back(p.node());
            widths.push_back(p.dim(1));
        }
        auto parents_copy = parents;
        attach(res, std::move(parents),
               [parents = std::move(parents_copy), widths, rows, cols](const std::vector<double>& g,
                                                                       GradSink& sink) {
                   int off = 0;
                   for (size_t pi = 0; pi < parents.size(); ++pi) {
                       const int w = widths[pi];
                       if (parents[pi]->requires_grad) {
                           std::vector<double>& dp = sink.get(parents[pi].get());
                           for (int i = 0; i < rows; ++i) {
                               const double* grow = g.data() + static_cast<int64_t>(i) * cols + off;
                               double* drow = dp.data() + static_cast<int64_t>(i) * w;
                               for (int j = 0; j < w; ++j) drow[j] += grow[j];
                           }
                       }
                       off += w;
                   }
               });
    }
    return res;
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
    require_rank(table, 2, "embed_rows");
    const int v = table.dim(0), d = table.dim(1);
    const int t = static_cast<int>(ids.size());
    for (int id : ids)
        if (id < 0 || id >= v)
            throw ContractError("embed_rows: id " + std::to_string(id) + " out of vocabulary " +
                                std::to_string(v));
    std::vector<double> out(static_cast<size_t>(t) * d);
    const double* tv = table.data().data();
    for (int i = 0; i < t; ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * d,
                    tv + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d,
                    sizeof(double) * static_cast<size_t>(d));
    Tensor res = make_result({t, d}, std::move(out));
    if (track({&table})) {
        auto tn = table.node();
        attach(res, {tn}, [tn, ids, t, d](const std::vector<double>& g, GradSink& sink) {
            std::vector<double>& dt = sink.get(tn.get());
            for (int i = 0; i < t; ++i) {
                double* drow = dt.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
                const double* grow = g.data() + static_cast<int64_t>(i) * d;
                for (int j = 0; j < d; ++j) drow[j] += grow[j];
            }
        });
    }
    return res;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
    require_rank(x, 2, "gather_rows");
    const int r = x.dim(0), d = x.dim(1);
    const int n = static_cast<int>(rows.size());
    for (int i : rows)
        if (i < 0 || i >= r) throw DimensionError("gather_rows: row index out of range");
    std::vector<double> out(static_cast<size_t>(n) * d);
    const double* xv = x.data().data();
    for (int i = 0; i < n; ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * d,
                    xv + static_cast<int64_t>(rows[static_cast<size_t>(i)]) * d,
                    sizeof(double) * static_cast<size_t>(d));
    Tensor res = make_result({n, d}, std::move(out));
    if (track({&x})) {
        auto xn = x.node();
        attach(res, {xn}, [xn, rows, n, d](const std::vector<double>& g, GradSink& sink) {
            std::vector<double>& dx = sink.get(xn.get());
            for (int i = 0; i < n; ++i) {
                double* drow = dx.data() + static_cast<int64_t>(rows[static_cast<size_t>(i)]) * d;
                const double* grow = g.data() + static_cast<int64_t>(i) * d;
                for (int j = 0; j < d; ++j) drow[j] += grow[j];
            }
        });
    }
    return res;
}

Tensor row_replace(const Tensor& x, const Tensor& rows, const std::vector<int>& positions) {
    require_rank(x, 2, "row_replace");
    if (positions.empty()) return x;
    require_rank(rows, 2, "row_replace");
    const int t = x.dim(0), d = x.dim(1);
    if (rows.dim(1) != d || rows.dim(0) != static_cast<int>(positions.size()))
        throw DimensionError("row_replace: replacement block mismatch");
    for (int p : positions)
        if (p < 0 || p >= t) throw DimensionError("row_replace: position out of range");
    std::vector<double> out(x.data());
    const double* rv = rows.data().data();
    for (size_t i = 0; i < positions.size(); ++i)
        std::memcpy(out.data() + static_cast<int64_t>(positions[i]) * d,
                    rv + static_cast<int64_t>(i) * d, sizeof(double) * static_cast<size_t>(d));
    Tensor res = make_result(x.shape(), std::move(out));
    if (track({&x, &rows})) {
        auto xn = x.node(), rn = rows.node();
        attach(res, {xn, rn}, [xn, rn, positions, d](const std::vector<double>& g, GradSink& sink) {
            if (xn->requires_grad) {
                std::vector<double>& dx = sink.get(xn.get());
                std::vector<uint8_t> replaced(xn->value.size() / static_cast<size_t>(d), 0);
                for (int p : positions) replaced[static_cast<size_t>(p)] = 1;
                const int t = static_cast<int>(replaced.size());
                for (int i = 0; i < t; ++i) {
                    if (replaced[static_cast<size_t>(i)]) continue;
                    double* drow = dx.data() + static_cast<int64_t>(i) * d;
                    const double* grow = g.data() + static_cast<int64_t>(i) * d;
                    for (int j = 0; j < d; ++j) drow[j] += grow[j];
                }
            }
            if (rn->requires_grad) {
                std::vector<double>& dr = sink.get(rn.get());
                for (size_t i = 0; i < positions.size(); ++i) {
                    double* drow = dr.data() + static_cast<int64_t>(i) * d;
                    const double* grow = g.data() + static_cast<int64_t>(positions[i]) * d;
                    for (int j = 0; j < d; ++j) drow[j] += grow[j];
                }
            }
        });
    }
    return res;
}

Tensor masked_row_add(const Tensor& base, const Tensor& delta, const std::vector<int>& positions) {
    require_rank(base, 2, "masked_row_add");
    if (positions.empty()) return base;
    require_rank(delta, 2, "masked_row_add");
    const int t = base.dim(0), d = base.dim(1);
    if (delta.dim(1) != d || delta.dim(0) != static_cast<int>(positions.size()))
        throw DimensionError("masked_row_add: delta block mismatch");
    std::vector<double> out(base.data());
    const double* dv = delta.data().data();
    for (size_t i = 0; i < positions.size(); ++i) {
        const int p = positions[i];
        if (p < 0 || p >= t) throw DimensionError("masked_row_add: position out of range");
        double* orow = out.data() + static_cast<int64_t>(p) * d;
        const double* drow = dv + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] += drow[j];
    }
    Tensor res = make_result(base.shape(), std::move(out));
    if (track({&base, &delta})) {
        auto bn = base.node(), dn = delta.node();
        attach(res, {bn, dn}, [bn, dn, positions, d](const std::vector<double>& g, GradSink& sink) {
            if (bn->requires_grad) {
                std::vector<double>& db = sink.get(bn.get());
                for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
            }
            if (dn->requires_grad) {
                std::vector<double>& dd = sink.get(dn.get());
                for (size_t i = 0; i < positions.size(); ++i) {
                    double* drow = dd.data() + static_cast<int64_t>(i) * d;
                    const double* grow = g.data() + static_cast<int64_t>(positions[i]) * d;
                    for (int j = 0; j < d; ++j) drow[j] += grow[j];
                }
            }
        });
    }
    return res;
}

Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& loss_mask) {
    require_rank(logits, 2, "masked_cross_entropy");
    const int t = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != t || static_cast<int>(loss_mask.size()) != t)
        throw DimensionError("masked_cross_entropy: targets/mask length must equal sequence length");
    int n_masked = 0;
    for (int i = 0; i < t; ++i) {
        if (!loss_mask[static_cast<size_t>(i)]) continue;
        ++n_masked;
        const int tgt = targets[static_cast<size_t>(i)];
        if (tgt < 0 || tgt >= v)
            throw ContractError("masked_cross_entropy: target " + std::to_string(tgt) +
                                " outside vocabulary " + std::to_string(v));
    }
    if (n_masked == 0) throw ContractError("masked_cross_entropy: loss mask selects no positions");

    const double* lv = logits.data().data();
    double total = 0.0;
    for (int i = 0; i < t; ++i) {
        if (!loss_mask[static_cast<size_t>(i)]) continue;
        const double* row = lv + static_cast<int64_t>(i) * v;
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double se = 0.0;
        for (int j = 0; j < v; ++j) se += std::exp(row[j] - mx);
        total += mx + std::log(se) - row[targets[static_cast<size_t>(i)]];
    }
    Tensor res = make_result({}, {total / n_masked});
    if (track({&logits})) {
        auto ln = logits.node();
        attach(res, {ln},
               [ln, targets, loss_mask, t, v, n_masked](const std::vector<double>& g, GradSink& sink) {
                   const double go = g[0] / n_masked;
                   std::vector<double>& dl = sink.get(ln.get());
                   const double* lv = ln->value.data();
                   for (int i = 0; i < t; ++i) {
                       if (!loss_mask[static_cast<size_t>(i)]) continue;
                       const double* row = lv + static_cast<int64_t>(i) * v;
                       double mx = row[0];
                       for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                       double se = 0.0;
                       for (int j = 0; j < v; ++j) se += std::exp(row[j] - mx);
                       const double inv = 1.0 / se;
                       double* drow = dl.data() + static_cast<int64_t>(i) * v;
                       for (int j = 0; j < v; ++j) drow[j] += go * std::exp(row[j] - mx) * inv;
                       drow[targets[static_cast<size_t>(i)]] -= go;
                   }
               });
    }
    return res;
}

}  // namespace laytext
