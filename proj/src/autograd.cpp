#include "ictsp/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "ictsp/errors.hpp"

namespace ictsp {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(const Parameter& p) {
    Node n;
    n.value = p.value;
    n.requires_grad = grad_enabled_;
    n.param = grad_enabled_ ? &p : nullptr;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
        if (in.tape() != this) throw Error("tape: input recorded on a different tape");
        if (nodes_[static_cast<std::size_t>(in.id())].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(Var v, const Tensor& grad) {
    Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = grad;
        n.has_grad = true;
        return;
    }
    double* g = n.grad.data();
    const double* src = grad.data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += src[i];
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw Error("backward: loss recorded on a different tape");
    Node& root = nodes_[static_cast<std::size_t>(loss.id())];
    if (root.value.size() != 1) throw ShapeError("backward: loss must be a single element");
    if (!root.requires_grad) return;
    root.grad = Tensor(root.value.shape(), 1.0);
    root.has_grad = true;

    for (int id = loss.id(); id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad) continue;
        if (n.backward) {
            n.backward(*this, n.value, n.grad);
        } else if (n.param != nullptr) {
            const Parameter& p = *n.param;
            if (!p.grad.same_shape(p.value)) p.zero_grad();
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
        // Release intermediate gradients as soon as they have been consumed.
        n.grad = Tensor();
        n.has_grad = false;
    }
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

Tensor column_sums(const Tensor& g) {
    Tensor out({g.cols()});
    for (std::size_t i = 0; i < g.rows(); ++i) {
        auto r = g.row(i);
        for (std::size_t j = 0; j < g.cols(); ++j) out[j] += r[j];
    }
    return out;
}

}  // namespace

Var add(Var a, Var b) {
    require_same(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    require_same(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        t.accumulate(a, g);
        Tensor neg = g;
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
        t.accumulate(b, neg);
    });
}

Var mul(Var a, Var b) {
    require_same(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (t.requires_grad(a.id())) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
            t.accumulate(a, ga);
        }
        if (t.requires_grad(b.id())) {
            Tensor gb = g;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
            t.accumulate(b, gb);
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return a.tape()->record(std::move(out), {a}, [a, s](Tape& t, const Tensor&, const Tensor& g) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= s;
        t.accumulate(a, ga);
    });
}

Var add_row(Var a, Var row) {
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    if (rv.size() != av.cols()) {
        throw ShapeError("add_row: " + shape_str(av.shape()) + " + " + shape_str(rv.shape()));
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv[j];
    }
    return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Tensor&, const Tensor& g) {
        t.accumulate(a, g);
        if (t.requires_grad(row.id())) t.accumulate(row, column_sums(g).reshaped(row.value().shape()));
    });
}

Var matmul(Var a, Var b) {
    Tensor out = matmul(a.value(), b.value());
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (t.requires_grad(a.id())) t.accumulate(a, matmul_nt(g, b.value()));
        if (t.requires_grad(b.id())) t.accumulate(b, matmul_tn(a.value(), g));
    });
}

Var matmul_nt(Var a, Var b) {
    Tensor out = matmul_nt(a.value(), b.value());
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (t.requires_grad(a.id())) t.accumulate(a, matmul(g, b.value()));
        if (t.requires_grad(b.id())) t.accumulate(b, matmul_tn(g, a.value()));
    });
}

Var linear(Var x, Var weight, Var bias) {
    const Tensor& bv = bias.value();
    Tensor out = matmul_nt(x.value(), weight.value());
    if (bv.size() != out.cols()) throw ShapeError("linear: bias width mismatch");
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv[j];
    }
    return x.tape()->record(std::move(out), {x, weight, bias},
                            [x, weight, bias](Tape& t, const Tensor&, const Tensor& g) {
                                if (t.requires_grad(x.id())) t.accumulate(x, matmul(g, weight.value()));
                                if (t.requires_grad(weight.id())) t.accumulate(weight, matmul_tn(g, x.value()));
                                if (t.requires_grad(bias.id()))
                                    t.accumulate(bias, column_sums(g).reshaped(bias.value().shape()));
                            });
}

Var transpose(Var a) {
    Tensor out = a.value().transposed();
    return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        t.accumulate(a, g.transposed().reshaped(a.value().shape()));
    });
}

Var softmax_rows(Var a) {
    Tensor out = softmax_rows(a.value());
    return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor& p, const Tensor& g) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.rows(); ++i) {
            auto gr = ga.row(i);
            auto pr = p.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < gr.size(); ++j) dot += gr[j] * pr[j];
            for (std::size_t j = 0; j < gr.size(); ++j) gr[j] = pr[j] * (gr[j] - dot);
        }
        t.accumulate(a, ga);
    });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = x.value();
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    if (gamma.value().size() != d || beta.value().size() != d) {
        throw ShapeError("layer_norm_rows: gain/bias width mismatch");
    }
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = xv.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        auto h = xhat.row(i);
        for (std::size_t j = 0; j < d; ++j) h[j] = (r[j] - mean) * inv_std[i];
    }
    Tensor out = xhat;
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t i = 0; i < n; ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < d; ++j) r[j] = r[j] * gv[j] + bv[j];
    }
    return x.tape()->record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor&,
                                                                               const Tensor& g) {
            const std::size_t n = g.rows();
            const std::size_t d = g.cols();
            const Tensor& gv = gamma.value();
            if (t.requires_grad(gamma.id()) || t.requires_grad(beta.id())) {
                Tensor gg(gamma.value().shape());
                Tensor gb(beta.value().shape());
                for (std::size_t i = 0; i < n; ++i) {
                    auto gr = g.row(i);
                    auto h = xhat.row(i);
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += gr[j] * h[j];
                        gb[j] += gr[j];
                    }
                }
                t.accumulate(gamma, gg);
                t.accumulate(beta, gb);
            }
            if (!t.requires_grad(x.id())) return;
            Tensor gx(g.shape());
            const double dd = static_cast<double>(d);
            for (std::size_t i = 0; i < n; ++i) {
                auto gr = g.row(i);
                auto h = xhat.row(i);
                double s1 = 0.0;
                double s2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = gr[j] * gv[j];
                    s1 += dh;
                    s2 += dh * h[j];
                }
                auto out_r = gx.row(i);
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = gr[j] * gv[j];
                    out_r[j] = inv_std[i] / dd * (dd * dh - s1 - h[j] * s2);
                }
            }
            t.accumulate(x, gx);
        });
}

Var gelu(Var a) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& x = a.value();
        Tensor ga = g;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double v = x[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            ga[i] *= cdf + v * pdf;
        }
        t.accumulate(a, ga);
    });
}

Var dropout(Var a, double rate, std::mt19937_64& rng, bool training) {
    if (!training || rate <= 0.0) return a;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(a.value().shape());
    for (auto& m : mask.values()) m = uniform01(rng) < rate ? 0.0 : keep_scale;
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return a.tape()->record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, const Tensor&, const Tensor& g) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= mask[i];
        t.accumulate(a, ga);
    });
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
    const Tensor& av = a.value();
    if (len == 0 || start + len > av.cols()) throw ShapeError("slice_cols: range out of bounds");
    Tensor out({av.rows(), len});
    for (std::size_t i = 0; i < av.rows(); ++i) {
        auto src = av.row(i);
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(start), len, out.row(i).begin());
    }
    return a.tape()->record(std::move(out), {a}, [a, start, len](Tape& t, const Tensor&, const Tensor& g) {
        Tensor ga(a.value().shape());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            auto src = g.row(i);
            std::copy_n(src.begin(), len, ga.row(i).begin() + static_cast<std::ptrdiff_t>(start));
        }
        t.accumulate(a, ga);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t n = parts.front().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != n) throw ShapeError("concat_cols: row count mismatch");
        total += p.cols();
    }
    Tensor out({n, total});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        for (std::size_t i = 0; i < n; ++i) {
            auto src = pv.row(i);
            std::copy(src.begin(), src.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
        }
        offset += pv.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return parts.front().tape()->record(std::move(out), parts, [inputs](Tape& t, const Tensor&, const Tensor& g) {
        std::size_t offset = 0;
        for (const auto& p : inputs) {
            const std::size_t w = p.cols();
            if (t.requires_grad(p.id())) {
                Tensor gp({g.rows(), w});
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    auto src = g.row(i);
                    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(offset), w, gp.row(i).begin());
                }
                t.accumulate(p, gp.reshaped(p.value().shape()));
            }
            offset += w;
        }
    });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
    const Tensor& av = a.value();
    if (rows.empty()) throw ShapeError("gather_rows: no rows selected");
    Tensor out({rows.size(), av.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= av.rows()) throw ShapeError("gather_rows: row index out of range");
        auto src = av.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return a.tape()->record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Tensor&, const Tensor& g) {
        Tensor ga({a.value().rows(), a.value().cols()});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto src = g.row(i);
            auto dst = ga.row(idx[i]);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        t.accumulate(a, ga.reshaped(a.value().shape()));
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("concat_rows: column count mismatch");
        total += p.rows();
    }
    Tensor out({total, c});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        std::copy(pv.values().begin(), pv.values().end(), out.data() + offset * c);
        offset += pv.rows();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return parts.front().tape()->record(std::move(out), parts, [inputs, c](Tape& t, const Tensor&, const Tensor& g) {
        std::size_t offset = 0;
        for (const auto& p : inputs) {
            const std::size_t r = p.rows();
            if (t.requires_grad(p.id())) {
                std::vector<double> slab(g.data() + offset * c, g.data() + (offset + r) * c);
                t.accumulate(p, Tensor(p.value().shape(), std::move(slab)));
            }
            offset += r;
        }
    });
}

Var normalize_rows(Var a) {
    const Tensor& av = a.value();
    Tensor out = av;
    std::vector<double> norms(av.rows());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        auto r = out.row(i);
        double s = 0.0;
        for (double v : r) s += v * v;
        norms[i] = std::sqrt(s);
        if (norms[i] > 0.0) {
            for (auto& v : r) v /= norms[i];
        } else {
            std::fill(r.begin(), r.end(), 0.0);
        }
    }
    return a.tape()->record(std::move(out), {a}, [a, norms = std::move(norms)](Tape& t, const Tensor& y, const Tensor& g) {
        Tensor ga(g.shape());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            if (norms[i] <= 0.0) continue;
            auto gr = g.row(i);
            auto yr = y.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < gr.size(); ++j) dot += gr[j] * yr[j];
            auto out_r = ga.row(i);
            for (std::size_t j = 0; j < gr.size(); ++j) out_r[j] = (gr[j] - yr[j] * dot) / norms[i];
        }
        t.accumulate(a, ga);
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.tape()->record(Tensor({1}, std::vector<double>{s}), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
        t.accumulate(a, Tensor(a.value().shape(), g[0]));
    });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mse(Var prediction, const Tensor& target) {
    const Tensor& pv = prediction.value();
    if (pv.size() != target.size()) {
        throw ShapeError("mse: " + shape_str(pv.shape()) + " vs " + shape_str(target.shape()));
    }
    Tensor diff = pv;
    double s = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) {
        diff[i] -= target[i];
        s += diff[i] * diff[i];
    }
    const double n = static_cast<double>(diff.size());
    return prediction.tape()->record(
        Tensor({1}, std::vector<double>{s / n}), {prediction},
        [prediction, diff = std::move(diff), n](Tape& t, const Tensor&, const Tensor& g) {
            Tensor gp = diff;
            for (auto& v : gp.values()) v *= 2.0 * g[0] / n;
            t.accumulate(prediction, gp.reshaped(prediction.value().shape()));
        });
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using HeadView = Eigen::Map<const RowMat, 0, Strided>;
using HeadMut = Eigen::Map<RowMat, 0, Strided>;

HeadView head(const Tensor& t, std::size_t h, std::size_t dh) {
    return HeadView(t.data() + h * dh, static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(dh),
                    Strided(static_cast<Eigen::Index>(t.cols())));
}

HeadMut head(Tensor& t, std::size_t h, std::size_t dh) {
    return HeadMut(t.data() + h * dh, static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(dh),
                   Strided(static_cast<Eigen::Index>(t.cols())));
}

}  // namespace

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, Tensor* weights) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    const std::size_t d = qv.cols();
    if (heads == 0 || d % heads != 0) throw ShapeError("multi_head_attention: width not divisible by heads");
    if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows())
        throw ShapeError("multi_head_attention: q " + shape_str(qv.shape()) + ", k " + shape_str(kv.shape()) +
                         ", v " + shape_str(vv.shape()));
    const std::size_t n = qv.rows();
    const std::size_t m = kv.rows();
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Per-head probabilities stacked as [heads * n x m].
    Tensor probs({heads * n, m});
    Tensor out({n, d});
    if (weights) *weights = Tensor({n, m});
    for (std::size_t h = 0; h < heads; ++h) {
        Eigen::Map<RowMat> p(probs.data() + h * n * m, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        p.noalias() = head(qv, h, dh) * head(kv, h, dh).transpose();
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            auto r = p.row(i).array();
            r = ((r - r.maxCoeff()) * scale).exp();
            r /= r.sum();
        }
        head(out, h, dh).noalias() = p * head(vv, h, dh);
        if (weights) {
            for (std::size_t i = 0; i < n * m; ++i) (*weights)[i] += p.data()[i] / static_cast<double>(heads);
        }
    }
    return q.tape()->record(
        std::move(out), {q, k, v},
        [q, k, v, heads, dh, scale, probs = std::move(probs)](Tape& t, const Tensor&, const Tensor& g) {
            const Tensor& qv = q.value();
            const Tensor& kv = k.value();
            const Tensor& vv = v.value();
            const std::size_t n = qv.rows();
            const std::size_t m = kv.rows();
            Tensor gq(qv.shape()), gk(kv.shape()), gv(vv.shape());
            RowMat dp(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
            for (std::size_t h = 0; h < heads; ++h) {
                Eigen::Map<const RowMat> p(probs.data() + h * n * m, static_cast<Eigen::Index>(n),
                                           static_cast<Eigen::Index>(m));
                const auto go = head(g, h, dh);
                head(gv, h, dh).noalias() = p.transpose() * go;
                dp.noalias() = go * head(vv, h, dh).transpose();
                for (Eigen::Index i = 0; i < dp.rows(); ++i) {
                    double dot = 0.0;
                    for (Eigen::Index j = 0; j < dp.cols(); ++j) dot += dp(i, j) * p(i, j);
                    for (Eigen::Index j = 0; j < dp.cols(); ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
                }
                head(gq, h, dh).noalias() = dp * head(kv, h, dh);
                head(gk, h, dh).noalias() = dp.transpose() * head(qv, h, dh);
            }
            t.accumulate(q, gq);
            t.accumulate(k, gk);
            t.accumulate(v, gv);
        });
}

}  // namespace ictsp
