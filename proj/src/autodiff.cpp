#include "repst/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace repst {
namespace diff {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

struct AxisSplit {
    std::int64_t outer;
    std::int64_t n;
    std::int64_t inner;
};

AxisSplit split_axis(const std::vector<int>& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw ContractViolation("axis " + std::to_string(axis) + " out of range for shape " +
                                Tensor::shape_str(shape));
    }
    AxisSplit s{1, shape[axis], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[i];
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw ContractViolation("invalid tape node reference");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw ContractViolation("invalid tape node reference");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

Tensor* Tape::grad_sink(Var v) {
    Node& n = node(v);
    if (!n.needs_grad) return nullptr;
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_alloc = true;
    }
    return &n.grad;
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Tensor value) { return push(std::move(value), true, nullptr); }

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad_alloc) {
        throw ContractViolation("gradient requested for a node that has none (frozen or unused)");
    }
    return n.grad;
}

bool Tape::has_grad(Var v) const { return node(v).grad_alloc; }

void Tape::backward(Var loss) {
    Node& ln = node(loss);
    if (ln.value.numel() != 1) {
        throw ContractViolation("backward: loss must be scalar, got shape " +
                                ln.value.shape_str());
    }
    if (!ln.needs_grad) return;  // nothing trainable upstream
    Tensor* seed = grad_sink(loss);
    (*seed)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.needs_grad && n.grad_alloc && n.back) {
            n.back(*this);
        }
    }
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw ContractViolation("matmul: shape mismatch " + av.shape_str() + " vs " +
                                bv.shape_str());
    }
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = av.data() + static_cast<std::size_t>(i) * k;
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            const double* brow = bv.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    const bool ng = wants(a) || wants(b);
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), ng, [a, b, self, m, k, n](Tape& t) {
        const Tensor& g = t.grad(self);
        const Tensor& av2 = t.value(a);
        const Tensor& bv2 = t.value(b);
        if (Tensor* ga = t.grad_sink(a)) {  // dA = G * B^T
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    const double gij = g[static_cast<std::int64_t>(i) * n + j];
                    if (gij == 0.0) continue;
                    for (int kk = 0; kk < k; ++kk) {
                        (*ga)[static_cast<std::int64_t>(i) * k + kk] +=
                            gij * bv2[static_cast<std::int64_t>(kk) * n + j];
                    }
                }
            }
        }
        if (Tensor* gb = t.grad_sink(b)) {  // dB = A^T * G
            for (int kk = 0; kk < k; ++kk) {
                for (int i = 0; i < m; ++i) {
                    const double aik = av2[static_cast<std::int64_t>(i) * k + kk];
                    if (aik == 0.0) continue;
                    for (int j = 0; j < n; ++j) {
                        (*gb)[static_cast<std::int64_t>(kk) * n + j] +=
                            aik * g[static_cast<std::int64_t>(i) * n + j];
                    }
                }
            }
        }
    });
}

Var Tape::transpose(Var a) {
    const Tensor& av = value(a);
    if (av.rank() != 2) {
        throw ContractViolation("transpose: expected rank-2, got " + av.shape_str());
    }
    const int r = av.dim(0), c = av.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) out.at2(j, i) = av.at2(i, j);
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self, r, c](Tape& t) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) {
                    (*ga)[static_cast<std::int64_t>(i) * c + j] +=
                        g[static_cast<std::int64_t>(j) * r + i];
                }
            }
        }
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const bool bias_mode = !av.same_shape(bv);
    if (bias_mode) {
        if (bv.rank() != 1 || av.rank() < 1 || av.dim(av.rank() - 1) != bv.dim(0)) {
            throw ContractViolation("add: shape mismatch " + av.shape_str() + " vs " +
                                    bv.shape_str());
        }
    }
    Tensor out = av;
    const std::int64_t last = bias_mode ? bv.numel() : 0;
    if (bias_mode) {
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i % last];
    } else {
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a) || wants(b), [a, b, self, bias_mode, last](Tape& t) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        }
        if (Tensor* gb = t.grad_sink(b)) {
            if (bias_mode) {
                for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i % last] += g[i];
            } else {
                for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i];
            }
        }
    });
}

Var Tape::ewmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const bool bcast = !av.same_shape(bv);
    if (bcast) {
        if (bv.rank() != 1 || av.rank() < 1 || av.dim(av.rank() - 1) != bv.dim(0)) {
            throw ContractViolation("ewmul: shape mismatch " + av.shape_str() + " vs " +
                                    bv.shape_str());
        }
    }
    Tensor out = av;
    const std::int64_t last = bcast ? bv.numel() : 0;
    if (bcast) {
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i % last];
    } else {
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a) || wants(b), [a, b, self, bcast, last](Tape& t) {
        const Tensor& g = t.grad(self);
        const Tensor& av2 = t.value(a);
        const Tensor& bv2 = t.value(b);
        if (Tensor* ga = t.grad_sink(a)) {
            if (bcast) {
                for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv2[i % last];
            } else {
                for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv2[i];
            }
        }
        if (Tensor* gb = t.grad_sink(b)) {
            if (bcast) {
                for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i % last] += g[i] * av2[i];
            } else {
                for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av2[i];
            }
        }
    });
}

Var Tape::scale_rows(Var a, Var v) {
    const Tensor& av = value(a);
    const Tensor& vv = value(v);
    if (av.rank() != 2 || vv.rank() != 1 || vv.dim(0) != av.dim(0)) {
        throw ContractViolation("scale_rows: shape mismatch " + av.shape_str() + " vs " +
                                vv.shape_str());
    }
    const int r = av.dim(0), c = av.dim(1);
    Tensor out = av;
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) out.at2(i, j) *= vv[i];
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a) || wants(v), [a, v, self, r, c](Tape& t) {
        const Tensor& g = t.grad(self);
        const Tensor& av2 = t.value(a);
        const Tensor& vv2 = t.value(v);
        if (Tensor* ga = t.grad_sink(a)) {
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) {
                    (*ga)[static_cast<std::int64_t>(i) * c + j] +=
                        g[static_cast<std::int64_t>(i) * c + j] * vv2[i];
                }
            }
        }
        if (Tensor* gv = t.grad_sink(v)) {
            for (int i = 0; i < r; ++i) {
                double acc = 0.0;
                for (int j = 0; j < c; ++j) {
                    acc += g[static_cast<std::int64_t>(i) * c + j] *
                           av2[static_cast<std::int64_t>(i) * c + j];
                }
                (*gv)[i] += acc;
            }
        }
    });
}

Var Tape::softmax(Var a, int axis) {
    const Tensor& av = value(a);
    const AxisSplit sp = split_axis(av.shape(), axis);
    Tensor out(av.shape());
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            const std::int64_t base = o * sp.n * sp.inner + in;
            double mx = -1e300;
            for (std::int64_t i = 0; i < sp.n; ++i) mx = std::max(mx, av[base + i * sp.inner]);
            double sum = 0.0;
            for (std::int64_t i = 0; i < sp.n; ++i) {
                const double e = std::exp(av[base + i * sp.inner] - mx);
                out[base + i * sp.inner] = e;
                sum += e;
            }
            for (std::int64_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] /= sum;
        }
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self, sp](Tape& t) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t in = 0; in < sp.inner; ++in) {
                    const std::int64_t base = o * sp.n * sp.inner + in;
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < sp.n; ++i) {
                        dot += g[base + i * sp.inner] * y[base + i * sp.inner];
                    }
                    for (std::int64_t i = 0; i < sp.n; ++i) {
                        (*ga)[base + i * sp.inner] +=
                            y[base + i * sp.inner] * (g[base + i * sp.inner] - dot);
                    }
                }
            }
        }
    });
}

Var Tape::layer_norm(Var a, int axis, double eps) {
    if (eps < 0.0) throw ContractViolation("layer_norm: eps must be >= 0");
    const Tensor& av = value(a);
    const AxisSplit sp = split_axis(av.shape(), axis);
    if (sp.n < 1) throw ContractViolation("layer_norm: empty axis");
    Tensor out(av.shape());
    Tensor inv_std({static_cast<int>(sp.outer * sp.inner)});
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            const std::int64_t base = o * sp.n * sp.inner + in;
            double mean = 0.0;
            for (std::int64_t i = 0; i < sp.n; ++i) mean += av[base + i * sp.inner];
            mean /= static_cast<double>(sp.n);
            double var = 0.0;
            for (std::int64_t i = 0; i < sp.n; ++i) {
                const double d = av[base + i * sp.inner] - mean;
                var += d * d;
            }
            var /= static_cast<double>(sp.n);
            const double s = std::sqrt(var + eps);
            const double inv = s > 0.0 ? 1.0 / s : 0.0;
            inv_std[o * sp.inner + in] = inv;
            for (std::int64_t i = 0; i < sp.n; ++i) {
                out[base + i * sp.inner] = (av[base + i * sp.inner] - mean) * inv;
            }
        }
    }
    // Cache 1/std for backward as a frozen sibling node.
    Var keep = constant(std::move(inv_std));
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self, keep, sp](Tape& t) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        const Tensor& inv = t.value(keep);
        if (Tensor* ga = t.grad_sink(a)) {
            const double n = static_cast<double>(sp.n);
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t in = 0; in < sp.inner; ++in) {
                    const std::int64_t base = o * sp.n * sp.inner + in;
                    double gmean = 0.0, gy = 0.0;
                    for (std::int64_t i = 0; i < sp.n; ++i) {
                        gmean += g[base + i * sp.inner];
                        gy += g[base + i * sp.inner] * y[base + i * sp.inner];
                    }
                    gmean /= n;
                    gy /= n;
                    const double s_inv = inv[o * sp.inner + in];
                    for (std::int64_t i = 0; i < sp.n; ++i) {
                        (*ga)[base + i * sp.inner] +=
                            s_inv * (g[base + i * sp.inner] - gmean - y[base + i * sp.inner] * gy);
                    }
                }
            }
        }
    });
}

Var Tape::gelu(Var a) {
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < av.numel(); ++i) {
        const double x = av[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self](Tape& t) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::int64_t i = 0; i < x.numel(); ++i) {
                const double xi = x[i];
                const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
                (*ga)[i] += g[i] * (cdf + xi * pdf);
            }
        }
    });
}

Var Tape::conv1d_same(Var x, Var w, Var b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.rank() != 3 || wv.rank() != 3 || bv.rank() != 1) {
        throw ContractViolation("conv1d: expected x rank-3 " + xv.shape_str() + ", w rank-3 " +
                                wv.shape_str() + ", b rank-1 " + bv.shape_str());
    }
    const int batch = xv.dim(0), len = xv.dim(1), cin = xv.dim(2);
    const int cout = wv.dim(0), wcin = wv.dim(1), kern = wv.dim(2);
    if (wcin != cin || bv.dim(0) != cout) {
        throw ContractViolation("conv1d: channel mismatch x " + xv.shape_str() + " vs w " +
                                wv.shape_str());
    }
    if (kern % 2 == 0) throw ContractViolation("conv1d: kernel size must be odd for same padding");
    const int pad = (kern - 1) / 2;

    Tensor out({batch, len, cout});
    for (int bb = 0; bb < batch; ++bb) {
        for (int l = 0; l < len; ++l) {
            for (int co = 0; co < cout; ++co) {
                double acc = bv[co];
                for (int tk = 0; tk < kern; ++tk) {
                    const int src = l + tk - pad;
                    if (src < 0 || src >= len) continue;
                    for (int ci = 0; ci < cin; ++ci) {
                        acc += wv.at3(co, ci, tk) * xv.at3(bb, src, ci);
                    }
                }
                out.at3(bb, l, co) = acc;
            }
        }
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(x) || wants(w) || wants(b),
                [x, w, b, self, batch, len, cin, cout, kern, pad](Tape& t) {
                    const Tensor& g = t.grad(self);
                    const Tensor& xv2 = t.value(x);
                    const Tensor& wv2 = t.value(w);
                    Tensor* gx = t.grad_sink(x);
                    Tensor* gw = t.grad_sink(w);
                    Tensor* gb = t.grad_sink(b);
                    for (int bb = 0; bb < batch; ++bb) {
                        for (int l = 0; l < len; ++l) {
                            for (int co = 0; co < cout; ++co) {
                                const double go = g.at3(bb, l, co);
                                if (go == 0.0) continue;
                                if (gb) (*gb)[co] += go;
                                for (int tk = 0; tk < kern; ++tk) {
                                    const int src = l + tk - pad;
                                    if (src < 0 || src >= len) continue;
                                    for (int ci = 0; ci < cin; ++ci) {
                                        if (gx) {
                                            gx->at3(bb, src, ci) += go * wv2.at3(co, ci, tk);
                                        }
                                        if (gw) {
                                            gw->at3(co, ci, tk) += go * xv2.at3(bb, src, ci);
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
}

Var Tape::mean_pool(Var a, int axis) {
    const Tensor& av = value(a);
    const AxisSplit sp = split_axis(av.shape(), axis);
    if (sp.n < 1) throw ContractViolation("mean_pool: empty axis");
    std::vector<int> oshape;
    for (int i = 0; i < av.rank(); ++i) {
        if (i != axis) oshape.push_back(av.dim(i));
    }
    if (oshape.empty()) oshape.push_back(1);
    Tensor out(oshape);
    const double invn = 1.0 / static_cast<double>(sp.n);
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < sp.n; ++i) {
                acc += av[o * sp.n * sp.inner + i * sp.inner + in];
            }
            out[o * sp.inner + in] = acc * invn;
        }
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self, sp, invn](Tape& t) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t in = 0; in < sp.inner; ++in) {
                    const double gv = g[o * sp.inner + in] * invn;
                    for (std::int64_t i = 0; i < sp.n; ++i) {
                        (*ga)[o * sp.n * sp.inner + i * sp.inner + in] += gv;
                    }
                }
            }
        }
    });
}

Var Tape::scalar_scale(Var a, double c) {
    const Tensor& av = value(a);
    Tensor out = av;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self, c](Tape& t) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * c;
        }
    });
}

Var Tape::concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw ContractViolation("concat: no inputs");
    const Tensor& first = value(xs[0]);
    if (axis < 0 || axis >= first.rank()) {
        throw ContractViolation("concat: bad axis " + std::to_string(axis));
    }
    std::vector<int> oshape = first.shape();
    int total = 0;
    for (Var v : xs) {
        const Tensor& tv = value(v);
        if (tv.rank() != first.rank()) {
            throw ContractViolation("concat: rank mismatch " + tv.shape_str() + " vs " +
                                    first.shape_str());
        }
        for (int i = 0; i < first.rank(); ++i) {
            if (i != axis && tv.dim(i) != first.dim(i)) {
                throw ContractViolation("concat: shape mismatch " + tv.shape_str() + " vs " +
                                        first.shape_str());
            }
        }
        total += tv.dim(axis);
    }
    oshape[axis] = total;
    const AxisSplit osp = split_axis(oshape, axis);
    Tensor out(oshape);
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (Var v : xs) {
        const Tensor& tv = value(v);
        const AxisSplit sp = split_axis(tv.shape(), axis);
        offsets.push_back(off);
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.n; ++i) {
                for (std::int64_t in = 0; in < sp.inner; ++in) {
                    out[o * osp.n * osp.inner + (off + i) * osp.inner + in] =
                        tv[o * sp.n * sp.inner + i * sp.inner + in];
                }
            }
        }
        off += sp.n;
    }
    bool ng = false;
    for (Var v : xs) ng = ng || wants(v);
    Var self{static_cast<int>(nodes_.size())};
    std::vector<Var> inputs = xs;
    return push(std::move(out), ng, [inputs, offsets, self, osp, axis](Tape& t) {
        const Tensor& g = t.grad(self);
        for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
            if (Tensor* gi = t.grad_sink(inputs[idx])) {
                const AxisSplit sp = split_axis(t.value(inputs[idx]).shape(), axis);
                const std::int64_t off = offsets[idx];
                for (std::int64_t o = 0; o < sp.outer; ++o) {
                    for (std::int64_t i = 0; i < sp.n; ++i) {
                        for (std::int64_t in = 0; in < sp.inner; ++in) {
                            (*gi)[o * sp.n * sp.inner + i * sp.inner + in] +=
                                g[o * osp.n * osp.inner + (off + i) * osp.inner + in];
                        }
                    }
                }
            }
        }
    });
}

Var Tape::slice(Var a, int axis, int start, int len) {
    const Tensor& av = value(a);
    const AxisSplit sp = split_axis(av.shape(), axis);
    if (start < 0 || len < 0 || start + len > sp.n) {
        throw ContractViolation("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of axis extent " +
                                std::to_string(sp.n));
    }
    std::vector<int> oshape = av.shape();
    oshape[axis] = len;
    Tensor out(oshape);
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < len; ++i) {
            for (std::int64_t in = 0; in < sp.inner; ++in) {
                out[o * len * sp.inner + i * sp.inner + in] =
                    av[o * sp.n * sp.inner + (start + i) * sp.inner + in];
            }
        }
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self, sp, start, len](Tape& t) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t i = 0; i < len; ++i) {
                    for (std::int64_t in = 0; in < sp.inner; ++in) {
                        (*ga)[o * sp.n * sp.inner + (start + i) * sp.inner + in] +=
                            g[o * len * sp.inner + i * sp.inner + in];
                    }
                }
            }
        }
    });
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    const Tensor& av = value(a);
    Tensor out(std::move(shape), av.vec());
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self](Tape& t) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        }
    });
}

Var Tape::gather(Var a, std::vector<int> indices) {
    const Tensor& av = value(a);
    if (av.rank() != 1) throw ContractViolation("gather: expected rank-1, got " + av.shape_str());
    Tensor out({static_cast<int>(indices.size())});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= av.dim(0)) {
            throw ContractViolation("gather: index out of range");
        }
        out[static_cast<std::int64_t>(i)] = av[indices[i]];
    }
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self, indices](Tape& t) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::size_t i = 0; i < indices.size(); ++i) {
                (*ga)[indices[i]] += g[static_cast<std::int64_t>(i)];
            }
        }
    });
}

Var Tape::straight_through_ones(Var a) {
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0;
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(a), [a, self](Tape& t) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_sink(a)) {
            for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
        }
    });
}

Var Tape::mae_loss(Var pred, Var target) {
    const Tensor& pv = value(pred);
    const Tensor& tv = value(target);
    require_same_shape(pv, tv, "mae_loss");
    if (pv.numel() == 0) throw ContractViolation("mae_loss: empty input");
    double acc = 0.0;
    for (std::int64_t i = 0; i < pv.numel(); ++i) acc += std::abs(pv[i] - tv[i]);
    const double inv = 1.0 / static_cast<double>(pv.numel());
    Tensor out = Tensor::scalar(acc * inv);
    Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), wants(pred) || wants(target), [pred, target, self, inv](Tape& t) {
        const double g = t.grad(self)[0];
        const Tensor& pv2 = t.value(pred);
        const Tensor& tv2 = t.value(target);
        Tensor* gp = t.grad_sink(pred);
        Tensor* gt = t.grad_sink(target);
        for (std::int64_t i = 0; i < pv2.numel(); ++i) {
            const double d = pv2[i] - tv2[i];
            const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (gp) (*gp)[i] += g * s * inv;
            if (gt) (*gt)[i] -= g * s * inv;
        }
    });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker
// ---------------------------------------------------------------------------

double grad_check(const Tensor& params, double h,
                  const std::function<Var(Tape&, Var)>& build_loss) {
    if (h < 1e-6 || h > 1e-3) {
        throw ContractViolation("grad_check: h must lie in [1e-6, 1e-3]");
    }
    Tensor analytic;
    {
        Tape tape;
        Var p = tape.param(params);
        Var loss = build_loss(tape, p);
        const double f0 = tape.value(loss)[0];
        if (!std::isfinite(f0)) throw NumericalFailure("grad_check: non-finite loss");
        tape.backward(loss);
        analytic = tape.has_grad(p) ? tape.grad(p) : Tensor::zeros(params.shape());
    }

    auto eval = [&](const Tensor& at) {
        Tape tape;
        Var p = tape.param(at);
        Var loss = build_loss(tape, p);
        const double f = tape.value(loss)[0];
        if (!std::isfinite(f)) throw NumericalFailure("grad_check: non-finite loss");
        return f;
    };

    double max_rel = 0.0;
    Tensor probe = params;
    for (std::int64_t i = 0; i < params.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = eval(probe);
        probe[i] = orig - h;
        const double fm = eval(probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace diff
}  // namespace repst
