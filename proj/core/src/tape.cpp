#include "semcom/tape.hpp"

#include <cmath>
#include <cstring>

#include "semcom/linalg.hpp"

namespace semcom {

const Shape& Var::shape() const { return tape_->node(id_).shape; }
const std::vector<double>& Var::value() const { return tape_->node(id_).value; }

Tensor Var::tensor() const {
    const TapeNode& n = tape_->node(id_);
    return Tensor(n.shape, n.value);
}

double Var::scalar() const {
    const TapeNode& n = tape_->node(id_);
    if (n.value.size() != 1) throw AutodiffError("scalar(): node has more than one element");
    return n.value[0];
}

Var Tape::param(const Tensor& t) {
    nodes_.push_back(TapeNode{"param", t.shape, t.data, {}, {}, nullptr, &t});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::input(const Tensor& t) {
    nodes_.push_back(TapeNode{"input", t.shape, t.data, {}, {}, nullptr, nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::input(Shape shape, std::vector<double> values) {
    return input(Tensor(std::move(shape), std::move(values)));
}

Var Tape::emit(const char* op, Shape shape, std::vector<double> value, std::vector<int> inputs,
               std::function<void(Tape&, TapeNode&)> bw) {
    nodes_.push_back(TapeNode{op, std::move(shape), std::move(value), {}, std::move(inputs),
                              std::move(bw), nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this || loss.id() < 0) throw AutodiffError("backward: loss not on this tape");
    if (backward_done_) throw AutodiffError("backward: already called on this tape");
    backward_done_ = true;
    TapeNode& ln = node(loss.id());
    if (ln.value.size() != 1) {
        throw AutodiffError("backward: loss must be scalar, got shape " + shape_str(ln.shape));
    }
    for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
    ln.grad[0] = 1.0;
    for (int i = loss.id(); i >= 0; --i) {
        TapeNode& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward) n.backward(*this, n);
    }
    for (auto& n : nodes_) {
        if (n.leaf) {
            n.leaf->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.leaf->grad[i] += n.grad[i];
        }
    }
}

namespace {

void check_same_tape(const char* op, Var a, Var b) {
    if (a.tape() != b.tape() || a.tape() == nullptr) {
        throw AutodiffError(std::string(op) + ": operands from different tapes");
    }
}

void accumulate(TapeNode& dst, const std::vector<double>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

} // namespace

Var add(Var a, Var b) {
    check_same_tape("add", a, b);
    Tape& tp = *a.tape();
    if (a.shape() != b.shape()) throw ShapeError("add", a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return tp.emit("add", a.shape(), std::move(out), {a.id(), b.id()}, [](Tape& t, TapeNode& n) {
        accumulate(t.node(n.inputs[0]), n.grad);
        accumulate(t.node(n.inputs[1]), n.grad);
    });
}

Var add(Var a, double s) {
    Tape& tp = *a.tape();
    std::vector<double> out(a.value());
    for (auto& x : out) x += s;
    return tp.emit("add_scalar", a.shape(), std::move(out), {a.id()}, [](Tape& t, TapeNode& n) {
        accumulate(t.node(n.inputs[0]), n.grad);
    });
}

Var sub(Var a, Var b) {
    check_same_tape("sub", a, b);
    Tape& tp = *a.tape();
    if (a.shape() != b.shape()) throw ShapeError("sub", a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return tp.emit("sub", a.shape(), std::move(out), {a.id(), b.id()}, [](Tape& t, TapeNode& n) {
        accumulate(t.node(n.inputs[0]), n.grad);
        TapeNode& db = t.node(n.inputs[1]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) db.grad[i] -= n.grad[i];
    });
}

Var mul(Var a, Var b) {
    check_same_tape("mul", a, b);
    Tape& tp = *a.tape();
    if (a.shape() != b.shape()) throw ShapeError("mul", a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return tp.emit("mul", a.shape(), std::move(out), {a.id(), b.id()}, [](Tape& t, TapeNode& n) {
        TapeNode& na = t.node(n.inputs[0]);
        TapeNode& nb = t.node(n.inputs[1]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            na.grad[i] += n.grad[i] * nb.value[i];
            nb.grad[i] += n.grad[i] * na.value[i];
        }
    });
}

Var mul(Var a, double s) {
    Tape& tp = *a.tape();
    std::vector<double> out(a.value());
    for (auto& x : out) x *= s;
    return tp.emit("mul_scalar", a.shape(), std::move(out), {a.id()}, [s](Tape& t, TapeNode& n) {
        TapeNode& na = t.node(n.inputs[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) na.grad[i] += n.grad[i] * s;
    });
}

Var matmul(Var a, Var b) {
    check_same_tape("matmul", a, b);
    Tape& tp = *a.tape();
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul", a.shape(), b.shape());
    }
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    gemm_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
    return tp.emit("matmul", {m, n}, std::move(out), {a.id(), b.id()},
                   [m, k, n](Tape& t, TapeNode& nd) {
                       TapeNode& na = t.node(nd.inputs[0]);
                       TapeNode& nb = t.node(nd.inputs[1]);
                       // dA += G * B^T
                       std::vector<double> bt(static_cast<std::size_t>(n) * k);
                       transpose(nb.value.data(), bt.data(), k, n);
                       gemm_acc(nd.grad.data(), bt.data(), na.grad.data(), m, n, k);
                       // dB += A^T * G
                       std::vector<double> at(static_cast<std::size_t>(k) * m);
                       transpose(na.value.data(), at.data(), m, k);
                       gemm_acc(at.data(), nd.grad.data(), nb.grad.data(), k, m, n);
                   });
}

Var linear(Var x, Var w, Var b) {
    check_same_tape("linear", x, w);
    check_same_tape("linear", x, b);
    Tape& tp = *x.tape();
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[1]) {
        throw ShapeError("linear", x.shape(), w.shape());
    }
    const int bsz = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
    if (b.shape() != Shape{out_dim}) throw ShapeError("linear", w.shape(), b.shape());
    std::vector<double> out(static_cast<std::size_t>(bsz) * out_dim);
    const auto& xv = x.value();
    const auto& wv = w.value();
    const auto& bv = b.value();
    // y = x * w^T + b
    std::vector<double> wt(static_cast<std::size_t>(in) * out_dim);
    transpose(wv.data(), wt.data(), out_dim, in);
    for (int i = 0; i < bsz; ++i) {
        for (int j = 0; j < out_dim; ++j) out[static_cast<std::size_t>(i) * out_dim + j] = bv[j];
    }
    gemm_acc(xv.data(), wt.data(), out.data(), bsz, in, out_dim);
    return tp.emit("linear", {bsz, out_dim}, std::move(out), {x.id(), w.id(), b.id()},
                   [bsz, in, out_dim](Tape& t, TapeNode& nd) {
                       TapeNode& nx = t.node(nd.inputs[0]);
                       TapeNode& nw = t.node(nd.inputs[1]);
                       TapeNode& nb = t.node(nd.inputs[2]);
                       // dX += G * W
                       gemm_acc(nd.grad.data(), nw.value.data(), nx.grad.data(), bsz, out_dim, in);
                       // dW += G^T * X
                       std::vector<double> gt(static_cast<std::size_t>(out_dim) * bsz);
                       transpose(nd.grad.data(), gt.data(), bsz, out_dim);
                       gemm_acc(gt.data(), nx.value.data(), nw.grad.data(), out_dim, bsz, in);
                       for (int i = 0; i < bsz; ++i) {
                           for (int j = 0; j < out_dim; ++j) {
                               nb.grad[static_cast<std::size_t>(j)] +=
                                   nd.grad[static_cast<std::size_t>(i) * out_dim + j];
                           }
                       }
                   });
}

namespace {

struct ConvDims {
    int batch, cin, h, w, cout, kh, kw, ho, wo, stride, pad;
    int ckk() const { return cin * kh * kw; }
    int plane() const { return ho * wo; }
};

ConvDims conv_dims(const char* op, const Shape& xs, const Shape& ws, int stride, int padding) {
    if (xs.size() != 4 || ws.size() != 4) throw ShapeError(op, xs, ws);
    if (xs[1] != ws[1]) throw ShapeError(op, xs, ws);
    if (stride < 1) throw ValueError(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw ValueError(std::string(op) + ": padding must be >= 0");
    ConvDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, stride, padding};
    const int eh = d.h + 2 * padding - d.kh;
    const int ew = d.w + 2 * padding - d.kw;
    if (eh < 0 || ew < 0) throw ShapeError(op, xs, ws);
    d.ho = eh / stride + 1;
    d.wo = ew / stride + 1;
    return d;
}

void im2col(const double* x, const ConvDims& d, double* cols) {
    // cols is [cin*kh*kw, ho*wo] for a single batch item
    for (int ci = 0; ci < d.cin; ++ci) {
        const double* plane = x + static_cast<long>(ci) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                double* row = cols + (static_cast<long>(ci) * d.kh * d.kw + ki * d.kw + kj) *
                                         d.plane();
                for (int ho = 0; ho < d.ho; ++ho) {
                    const int hi = ho * d.stride + ki - d.pad;
                    for (int wo = 0; wo < d.wo; ++wo) {
                        const int wi = wo * d.stride + kj - d.pad;
                        row[ho * d.wo + wo] = (hi >= 0 && hi < d.h && wi >= 0 && wi < d.w)
                                                  ? plane[hi * d.w + wi]
                                                  : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* cols, const ConvDims& d, double* dx) {
    for (int ci = 0; ci < d.cin; ++ci) {
        double* plane = dx + static_cast<long>(ci) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const double* row = cols + (static_cast<long>(ci) * d.kh * d.kw + ki * d.kw + kj) *
                                               d.plane();
                for (int ho = 0; ho < d.ho; ++ho) {
                    const int hi = ho * d.stride + ki - d.pad;
                    if (hi < 0 || hi >= d.h) continue;
                    for (int wo = 0; wo < d.wo; ++wo) {
                        const int wi = wo * d.stride + kj - d.pad;
                        if (wi < 0 || wi >= d.w) continue;
                        plane[hi * d.w + wi] += row[ho * d.wo + wo];
                    }
                }
            }
        }
    }
}

} // namespace

Var conv2d(Var x, Var w, Var b, int stride, int padding) {
    check_same_tape("conv2d", x, w);
    check_same_tape("conv2d", x, b);
    Tape& tp = *x.tape();
    const ConvDims d = conv_dims("conv2d", x.shape(), w.shape(), stride, padding);
    if (b.shape() != Shape{d.cout}) throw ShapeError("conv2d", w.shape(), b.shape());

    const auto& xv = x.value();
    const auto& wv = w.value();
    const auto& bv = b.value();
    std::vector<double> out(static_cast<std::size_t>(d.batch) * d.cout * d.plane());
    std::vector<double> cols(static_cast<std::size_t>(d.ckk()) * d.plane());
    for (int bi = 0; bi < d.batch; ++bi) {
        im2col(xv.data() + static_cast<long>(bi) * d.cin * d.h * d.w, d, cols.data());
        double* ob = out.data() + static_cast<long>(bi) * d.cout * d.plane();
        for (int co = 0; co < d.cout; ++co) {
            double* orow = ob + static_cast<long>(co) * d.plane();
            for (int i = 0; i < d.plane(); ++i) orow[i] = bv[static_cast<std::size_t>(co)];
        }
        gemm_acc(wv.data(), cols.data(), ob, d.cout, d.ckk(), d.plane());
    }
    return tp.emit(
        "conv2d", {d.batch, d.cout, d.ho, d.wo}, std::move(out), {x.id(), w.id(), b.id()},
        [d](Tape& t, TapeNode& nd) {
            TapeNode& nx = t.node(nd.inputs[0]);
            TapeNode& nw = t.node(nd.inputs[1]);
            TapeNode& nb = t.node(nd.inputs[2]);
            std::vector<double> cols(static_cast<std::size_t>(d.ckk()) * d.plane());
            std::vector<double> colsT(cols.size());
            std::vector<double> wt(static_cast<std::size_t>(d.ckk()) * d.cout);
            transpose(nw.value.data(), wt.data(), d.cout, d.ckk());
            std::vector<double> dcols(cols.size());
            for (int bi = 0; bi < d.batch; ++bi) {
                const double* gb = nd.grad.data() + static_cast<long>(bi) * d.cout * d.plane();
                // bias
                for (int co = 0; co < d.cout; ++co) {
                    double s = 0.0;
                    const double* grow = gb + static_cast<long>(co) * d.plane();
                    for (int i = 0; i < d.plane(); ++i) s += grow[i];
                    nb.grad[static_cast<std::size_t>(co)] += s;
                }
                // weights: dW += G_b * cols^T
                im2col(nx.value.data() + static_cast<long>(bi) * d.cin * d.h * d.w, d, cols.data());
                transpose(cols.data(), colsT.data(), d.ckk(), d.plane());
                gemm_acc(gb, colsT.data(), nw.grad.data(), d.cout, d.plane(), d.ckk());
                // input: dcols = W^T * G_b, then col2im
                std::fill(dcols.begin(), dcols.end(), 0.0);
                gemm_acc(wt.data(), gb, dcols.data(), d.ckk(), d.cout, d.plane());
                col2im_acc(dcols.data(), d,
                           nx.grad.data() + static_cast<long>(bi) * d.cin * d.h * d.w);
            }
        });
}

Var avg_pool2d(Var x, int k) {
    Tape& tp = *x.tape();
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("avg_pool2d", "expected 4-D input, got " + shape_str(s));
    if (k < 1 || s[2] % k != 0 || s[3] % k != 0) {
        throw ShapeError("avg_pool2d",
                         "spatial dims of " + shape_str(s) + " not divisible by kernel " +
                             std::to_string(k));
    }
    const int b = s[0], c = s[1], h = s[2], w = s[3], ho = h / k, wo = w / k;
    const auto& xv = x.value();
    std::vector<double> out(static_cast<std::size_t>(b) * c * ho * wo, 0.0);
    const double inv = 1.0 / (k * k);
    for (int bc = 0; bc < b * c; ++bc) {
        const double* ip = xv.data() + static_cast<long>(bc) * h * w;
        double* op = out.data() + static_cast<long>(bc) * ho * wo;
        for (int i = 0; i < ho; ++i) {
            for (int j = 0; j < wo; ++j) {
                double acc = 0.0;
                for (int u = 0; u < k; ++u) {
                    for (int v = 0; v < k; ++v) acc += ip[(i * k + u) * w + j * k + v];
                }
                op[i * wo + j] = acc * inv;
            }
        }
    }
    return tp.emit("avg_pool2d", {b, c, ho, wo}, std::move(out), {x.id()},
                   [b, c, h, w, ho, wo, k, inv](Tape& t, TapeNode& nd) {
                       TapeNode& nx = t.node(nd.inputs[0]);
                       for (int bc = 0; bc < b * c; ++bc) {
                           double* dxp = nx.grad.data() + static_cast<long>(bc) * h * w;
                           const double* gp = nd.grad.data() + static_cast<long>(bc) * ho * wo;
                           for (int i = 0; i < ho; ++i) {
                               for (int j = 0; j < wo; ++j) {
                                   const double g = gp[i * wo + j] * inv;
                                   for (int u = 0; u < k; ++u) {
                                       for (int v = 0; v < k; ++v) {
                                           dxp[(i * k + u) * w + j * k + v] += g;
                                       }
                                   }
                               }
                           }
                       }
                   });
}

Var nearest_upsample2d(Var x, int factor) {
    Tape& tp = *x.tape();
    const Shape& s = x.shape();
    if (s.size() != 4) {
        throw ShapeError("nearest_upsample2d", "expected 4-D input, got " + shape_str(s));
    }
    if (factor < 1) throw ValueError("nearest_upsample2d: factor must be >= 1");
    const int b = s[0], c = s[1], h = s[2], w = s[3], ho = h * factor, wo = w * factor;
    const auto& xv = x.value();
    std::vector<double> out(static_cast<std::size_t>(b) * c * ho * wo);
    for (int bc = 0; bc < b * c; ++bc) {
        const double* ip = xv.data() + static_cast<long>(bc) * h * w;
        double* op = out.data() + static_cast<long>(bc) * ho * wo;
        for (int i = 0; i < ho; ++i) {
            for (int j = 0; j < wo; ++j) op[i * wo + j] = ip[(i / factor) * w + (j / factor)];
        }
    }
    return tp.emit("nearest_upsample2d", {b, c, ho, wo}, std::move(out), {x.id()},
                   [b, c, h, w, ho, wo, factor](Tape& t, TapeNode& nd) {
                       TapeNode& nx = t.node(nd.inputs[0]);
                       for (int bc = 0; bc < b * c; ++bc) {
                           double* dxp = nx.grad.data() + static_cast<long>(bc) * h * w;
                           const double* gp = nd.grad.data() + static_cast<long>(bc) * ho * wo;
                           for (int i = 0; i < ho; ++i) {
                               for (int j = 0; j < wo; ++j) {
                                   dxp[(i / factor) * w + (j / factor)] += gp[i * wo + j];
                               }
                           }
                       }
                   });
}

Var relu(Var x) {
    Tape& tp = *x.tape();
    std::vector<double> out(x.value());
    for (auto& v : out) v = v > 0.0 ? v : 0.0; // subgradient at 0 is 0
    return tp.emit("relu", x.shape(), std::move(out), {x.id()}, [](Tape& t, TapeNode& n) {
        TapeNode& nx = t.node(n.inputs[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (nx.value[i] > 0.0) nx.grad[i] += n.grad[i];
        }
    });
}

Var silu(Var x) {
    Tape& tp = *x.tape();
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] / (1.0 + std::exp(-xv[i]));
    }
    return tp.emit("silu", x.shape(), std::move(out), {x.id()}, [](Tape& t, TapeNode& n) {
        TapeNode& nx = t.node(n.inputs[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double sg = 1.0 / (1.0 + std::exp(-nx.value[i]));
            nx.grad[i] += n.grad[i] * sg * (1.0 + nx.value[i] * (1.0 - sg));
        }
    });
}

Var tanh_op(Var x) {
    Tape& tp = *x.tape();
    std::vector<double> out(x.value());
    for (auto& v : out) v = std::tanh(v);
    return tp.emit("tanh", x.shape(), std::move(out), {x.id()}, [](Tape& t, TapeNode& n) {
        TapeNode& nx = t.node(n.inputs[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            nx.grad[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
        }
    });
}

namespace {

// Shared normalization backward: given grads of y = (x - mean) * inv per
// segment, accumulate into dx. gamma of 1 is handled by the caller scaling
// dyhat beforehand.
void norm_backward_segment(const double* x, const double* dyhat, double mean, double inv, int n,
                           double* dx) {
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double xh = (x[i] - mean) * inv;
        m1 += dyhat[i];
        m2 += dyhat[i] * xh;
    }
    m1 /= n;
    m2 /= n;
    for (int i = 0; i < n; ++i) {
        const double xh = (x[i] - mean) * inv;
        dx[i] += inv * (dyhat[i] - m1 - xh * m2);
    }
}

} // namespace

Var group_norm(Var x, Var gamma, Var beta, int groups, double eps) {
    check_same_tape("group_norm", x, gamma);
    check_same_tape("group_norm", x, beta);
    Tape& tp = *x.tape();
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("group_norm", "expected [B,C,...], got " + shape_str(s));
    const int b = s[0], c = s[1];
    if (groups < 1 || c % groups != 0) {
        throw ShapeError("group_norm", "channels " + std::to_string(c) +
                                           " not divisible by groups " + std::to_string(groups));
    }
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("group_norm", gamma.shape(), Shape{c});
    }
    int inner = 1;
    for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
    const int cg = c / groups;
    const int seg = cg * inner;

    const auto& xv = x.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    std::vector<double> out(xv.size());
    std::vector<double> means(static_cast<std::size_t>(b) * groups);
    std::vector<double> invs(means.size());
    for (int bi = 0; bi < b; ++bi) {
        for (int g = 0; g < groups; ++g) {
            const double* xs = xv.data() + (static_cast<long>(bi) * c + static_cast<long>(g) * cg) * inner;
            double mean = 0.0;
            for (int i = 0; i < seg; ++i) mean += xs[i];
            mean /= seg;
            double var = 0.0;
            for (int i = 0; i < seg; ++i) {
                const double d = xs[i] - mean;
                var += d * d;
            }
            var /= seg;
            const double inv = 1.0 / std::sqrt(var + eps);
            means[static_cast<std::size_t>(bi) * groups + g] = mean;
            invs[static_cast<std::size_t>(bi) * groups + g] = inv;
            double* os = out.data() + (static_cast<long>(bi) * c + static_cast<long>(g) * cg) * inner;
            for (int ci = 0; ci < cg; ++ci) {
                const double ga = gv[static_cast<std::size_t>(g * cg + ci)];
                const double be = bv[static_cast<std::size_t>(g * cg + ci)];
                for (int i = 0; i < inner; ++i) {
                    os[ci * inner + i] = ga * ((xs[ci * inner + i] - mean) * inv) + be;
                }
            }
        }
    }
    return tp.emit(
        "group_norm", s, std::move(out), {x.id(), gamma.id(), beta.id()},
        [b, c, groups, cg, inner, seg, means, invs](Tape& t, TapeNode& nd) {
            TapeNode& nx = t.node(nd.inputs[0]);
            TapeNode& ng = t.node(nd.inputs[1]);
            TapeNode& nb = t.node(nd.inputs[2]);
            std::vector<double> dyhat(static_cast<std::size_t>(seg));
            for (int bi = 0; bi < b; ++bi) {
                for (int g = 0; g < groups; ++g) {
                    const long off = (static_cast<long>(bi) * c + static_cast<long>(g) * cg) * inner;
                    const double* xs = nx.value.data() + off;
                    const double* gs = nd.grad.data() + off;
                    const double mean = means[static_cast<std::size_t>(bi) * groups + g];
                    const double inv = invs[static_cast<std::size_t>(bi) * groups + g];
                    for (int ci = 0; ci < cg; ++ci) {
                        const double ga = ng.value[static_cast<std::size_t>(g * cg + ci)];
                        double dg = 0.0, db = 0.0;
                        for (int i = 0; i < inner; ++i) {
                            const double gy = gs[ci * inner + i];
                            const double xh = (xs[ci * inner + i] - mean) * inv;
                            dg += gy * xh;
                            db += gy;
                            dyhat[static_cast<std::size_t>(ci * inner + i)] = gy * ga;
                        }
                        ng.grad[static_cast<std::size_t>(g * cg + ci)] += dg;
                        nb.grad[static_cast<std::size_t>(g * cg + ci)] += db;
                    }
                    norm_backward_segment(xs, dyhat.data(), mean, inv, seg, nx.grad.data() + off);
                }
            }
        });
}

Var standardize(Var x, double eps) {
    Tape& tp = *x.tape();
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("standardize", "expected [B,...], got " + shape_str(s));
    const int b = s[0];
    int inner = 1;
    for (std::size_t i = 1; i < s.size(); ++i) inner *= s[i];
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    std::vector<double> means(static_cast<std::size_t>(b));
    std::vector<double> invs(static_cast<std::size_t>(b));
    for (int bi = 0; bi < b; ++bi) {
        const double* xs = xv.data() + static_cast<long>(bi) * inner;
        double mean = 0.0;
        for (int i = 0; i < inner; ++i) mean += xs[i];
        mean /= inner;
        double var = 0.0;
        for (int i = 0; i < inner; ++i) {
            const double d = xs[i] - mean;
            var += d * d;
        }
        var /= inner;
        const double inv = 1.0 / std::sqrt(var + eps);
        means[static_cast<std::size_t>(bi)] = mean;
        invs[static_cast<std::size_t>(bi)] = inv;
        double* os = out.data() + static_cast<long>(bi) * inner;
        for (int i = 0; i < inner; ++i) os[i] = (xs[i] - mean) * inv;
    }
    return tp.emit("standardize", s, std::move(out), {x.id()},
                   [b, inner, means, invs](Tape& t, TapeNode& nd) {
                       TapeNode& nx = t.node(nd.inputs[0]);
                       for (int bi = 0; bi < b; ++bi) {
                           const long off = static_cast<long>(bi) * inner;
                           norm_backward_segment(nx.value.data() + off, nd.grad.data() + off,
                                                 means[static_cast<std::size_t>(bi)],
                                                 invs[static_cast<std::size_t>(bi)], inner,
                                                 nx.grad.data() + off);
                       }
                   });
}

Var film(Var x, Var scale, Var shift) {
    check_same_tape("film", x, scale);
    check_same_tape("film", x, shift);
    Tape& tp = *x.tape();
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("film", "expected [B,C,...], got " + shape_str(s));
    const int b = s[0], c = s[1];
    if (scale.shape() != Shape{b, c} || shift.shape() != Shape{b, c}) {
        throw ShapeError("film", s, scale.shape());
    }
    int inner = 1;
    for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
    const auto& xv = x.value();
    const auto& scv = scale.value();
    const auto& shv = shift.value();
    std::vector<double> out(xv.size());
    for (int bc = 0; bc < b * c; ++bc) {
        const double a = 1.0 + scv[static_cast<std::size_t>(bc)];
        const double sh = shv[static_cast<std::size_t>(bc)];
        const double* xs = xv.data() + static_cast<long>(bc) * inner;
        double* os = out.data() + static_cast<long>(bc) * inner;
        for (int i = 0; i < inner; ++i) os[i] = xs[i] * a + sh;
    }
    return tp.emit("film", s, std::move(out), {x.id(), scale.id(), shift.id()},
                   [b, c, inner](Tape& t, TapeNode& nd) {
                       TapeNode& nx = t.node(nd.inputs[0]);
                       TapeNode& nsc = t.node(nd.inputs[1]);
                       TapeNode& nsh = t.node(nd.inputs[2]);
                       for (int bc = 0; bc < b * c; ++bc) {
                           const double a = 1.0 + nsc.value[static_cast<std::size_t>(bc)];
                           const double* xs = nx.value.data() + static_cast<long>(bc) * inner;
                           const double* gs = nd.grad.data() + static_cast<long>(bc) * inner;
                           double* dxs = nx.grad.data() + static_cast<long>(bc) * inner;
                           double dsc = 0.0, dsh = 0.0;
                           for (int i = 0; i < inner; ++i) {
                               dxs[i] += gs[i] * a;
                               dsc += gs[i] * xs[i];
                               dsh += gs[i];
                           }
                           nsc.grad[static_cast<std::size_t>(bc)] += dsc;
                           nsh.grad[static_cast<std::size_t>(bc)] += dsh;
                       }
                   });
}

Var reshape(Var x, Shape shape) {
    Tape& tp = *x.tape();
    if (shape_numel(shape) != shape_numel(x.shape())) throw ShapeError("reshape", x.shape(), shape);
    return tp.emit("reshape", std::move(shape), x.value(), {x.id()}, [](Tape& t, TapeNode& n) {
        accumulate(t.node(n.inputs[0]), n.grad);
    });
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw ValueError("concat: no inputs");
    Tape& tp = *xs[0].tape();
    const Shape& s0 = xs[0].shape();
    if (axis < 0 || axis >= static_cast<int>(s0.size())) {
        throw ValueError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s0));
    }
    Shape out_shape = s0;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    std::vector<int> extents;
    std::vector<int> ids;
    for (const Var& v : xs) {
        check_same_tape("concat", xs[0], v);
        Shape si = v.shape();
        Shape ref = si;
        ref[static_cast<std::size_t>(axis)] = s0[static_cast<std::size_t>(axis)];
        if (ref != s0) throw ShapeError("concat", s0, si);
        extents.push_back(si[static_cast<std::size_t>(axis)]);
        out_shape[static_cast<std::size_t>(axis)] += si[static_cast<std::size_t>(axis)];
        ids.push_back(v.id());
    }
    int outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];
    const int total_axis = out_shape[static_cast<std::size_t>(axis)];

    std::vector<double> out(static_cast<std::size_t>(outer) * total_axis * inner);
    int offset = 0;
    for (std::size_t vi = 0; vi < xs.size(); ++vi) {
        const auto& src = xs[vi].value();
        const int e = extents[vi];
        for (int o = 0; o < outer; ++o) {
            std::memcpy(out.data() + (static_cast<long>(o) * total_axis + offset) * inner,
                        src.data() + static_cast<long>(o) * e * inner,
                        sizeof(double) * static_cast<std::size_t>(e) * inner);
        }
        offset += e;
    }
    return tp.emit("concat", out_shape, std::move(out), ids,
                   [outer, inner, extents, total_axis](Tape& t, TapeNode& nd) {
                       int off = 0;
                       for (std::size_t vi = 0; vi < nd.inputs.size(); ++vi) {
                           TapeNode& ni = t.node(nd.inputs[vi]);
                           const int e = extents[vi];
                           for (int o = 0; o < outer; ++o) {
                               const double* g = nd.grad.data() +
                                                 (static_cast<long>(o) * total_axis + off) * inner;
                               double* dst = ni.grad.data() + static_cast<long>(o) * e * inner;
                               for (long i = 0; i < static_cast<long>(e) * inner; ++i) dst[i] += g[i];
                           }
                           off += e;
                       }
                   });
}

Var channels_to_rows(Var x) {
    Tape& tp = *x.tape();
    const Shape& s = x.shape();
    if (s.size() != 4) {
        throw ShapeError("channels_to_rows", "expected 4-D input, got " + shape_str(s));
    }
    const int b = s[0], c = s[1], h = s[2], w = s[3];
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            for (int p = 0; p < h * w; ++p) {
                out[(static_cast<long>(bi) * h * w + p) * c + ci] =
                    xv[(static_cast<long>(bi) * c + ci) * h * w + p];
            }
        }
    }
    return tp.emit("channels_to_rows", {b * h * w, c}, std::move(out), {x.id()},
                   [b, c, h, w](Tape& t, TapeNode& nd) {
                       TapeNode& nx = t.node(nd.inputs[0]);
                       for (int bi = 0; bi < b; ++bi) {
                           for (int ci = 0; ci < c; ++ci) {
                               for (int p = 0; p < h * w; ++p) {
                                   nx.grad[(static_cast<long>(bi) * c + ci) * h * w + p] +=
                                       nd.grad[(static_cast<long>(bi) * h * w + p) * c + ci];
                               }
                           }
                       }
                   });
}

Var rows_to_channels(Var x, const Shape& nchw) {
    Tape& tp = *x.tape();
    if (nchw.size() != 4) throw ShapeError("rows_to_channels", x.shape(), nchw);
    const int b = nchw[0], c = nchw[1], h = nchw[2], w = nchw[3];
    if (x.shape() != Shape{b * h * w, c}) throw ShapeError("rows_to_channels", x.shape(), nchw);
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            for (int p = 0; p < h * w; ++p) {
                out[(static_cast<long>(bi) * c + ci) * h * w + p] =
                    xv[(static_cast<long>(bi) * h * w + p) * c + ci];
            }
        }
    }
    return tp.emit("rows_to_channels", nchw, std::move(out), {x.id()},
                   [b, c, h, w](Tape& t, TapeNode& nd) {
                       TapeNode& nx = t.node(nd.inputs[0]);
                       for (int bi = 0; bi < b; ++bi) {
                           for (int ci = 0; ci < c; ++ci) {
                               for (int p = 0; p < h * w; ++p) {
                                   nx.grad[(static_cast<long>(bi) * h * w + p) * c + ci] +=
                                       nd.grad[(static_cast<long>(bi) * c + ci) * h * w + p];
                               }
                           }
                       }
                   });
}

Var gather_rows(Var m, std::vector<int> rows) {
    Tape& tp = *m.tape();
    const Shape& s = m.shape();
    if (s.size() != 2) throw ShapeError("gather_rows", "expected 2-D matrix, got " + shape_str(s));
    const int k = s[0], c = s[1];
    for (int r : rows) {
        if (r < 0 || r >= k) throw ValueError("gather_rows: row index out of range");
    }
    const int n = static_cast<int>(rows.size());
    const auto& mv = m.value();
    std::vector<double> out(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data() + static_cast<long>(i) * c,
                    mv.data() + static_cast<long>(rows[static_cast<std::size_t>(i)]) * c,
                    sizeof(double) * static_cast<std::size_t>(c));
    }
    return tp.emit("gather_rows", {n, c}, std::move(out), {m.id()},
                   [rows = std::move(rows), c](Tape& t, TapeNode& nd) {
                       TapeNode& nm = t.node(nd.inputs[0]);
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                           const double* g = nd.grad.data() + static_cast<long>(i) * c;
                           double* dst = nm.grad.data() + static_cast<long>(rows[i]) * c;
                           for (int j = 0; j < c; ++j) dst[j] += g[j];
                       }
                   });
}

Var straight_through(Var x, const Tensor& target) {
    Tape& tp = *x.tape();
    if (x.shape() != target.shape) throw ShapeError("straight_through", x.shape(), target.shape);
    return tp.emit("straight_through", target.shape, target.data, {x.id()},
                   [](Tape& t, TapeNode& n) { accumulate(t.node(n.inputs[0]), n.grad); });
}

Var sum(Var x) {
    Tape& tp = *x.tape();
    double s = 0.0;
    for (double v : x.value()) s += v;
    return tp.emit("sum", {1}, {s}, {x.id()}, [](Tape& t, TapeNode& n) {
        TapeNode& nx = t.node(n.inputs[0]);
        for (auto& g : nx.grad) g += n.grad[0];
    });
}

Var mean(Var x) {
    Tape& tp = *x.tape();
    const double n = static_cast<double>(x.value().size());
    double s = 0.0;
    for (double v : x.value()) s += v;
    return tp.emit("mean", {1}, {s / n}, {x.id()}, [n](Tape& t, TapeNode& nd) {
        TapeNode& nx = t.node(nd.inputs[0]);
        const double g = nd.grad[0] / n;
        for (auto& gi : nx.grad) gi += g;
    });
}

Var mse(Var a, Var b) {
    check_same_tape("mse", a, b);
    Tape& tp = *a.tape();
    if (a.shape() != b.shape()) throw ShapeError("mse", a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    const double n = static_cast<double>(av.size());
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    return tp.emit("mse", {1}, {s / n}, {a.id(), b.id()}, [n](Tape& t, TapeNode& nd) {
        TapeNode& na = t.node(nd.inputs[0]);
        TapeNode& nb = t.node(nd.inputs[1]);
        const double g = 2.0 * nd.grad[0] / n;
        for (std::size_t i = 0; i < na.value.size(); ++i) {
            const double d = g * (na.value[i] - nb.value[i]);
            na.grad[i] += d;
            nb.grad[i] -= d;
        }
    });
}

} // namespace semcom
