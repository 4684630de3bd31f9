#include "msp/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace msp {

void Node::ensure_grad() {
    if (grad.numel() != value.numel()) {
        grad = Tensor(value.shape());
    }
}

static thread_local int g_no_grad_depth = 0;

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_recording_enabled() { return g_no_grad_depth == 0; }

Var Var::constant(Tensor v) {
    auto n   = std::make_shared<Node>();
    n->value = std::move(v);
    return Var(n);
}

Var Var::param(Tensor v) {
    auto n           = std::make_shared<Node>();
    n->value         = std::move(v);
    n->requires_grad = true;
    return Var(n);
}

void Var::zero_grad() {
    if (n_) {
        n_->ensure_grad();
        n_->grad.fill(0.0);
    }
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    bool any_grad = false;
    for (const Var& p : parents) {
        if (p.requires_grad()) any_grad = true;
    }
    if (!grad_recording_enabled() || !any_grad) {
        return Var::constant(std::move(value));
    }
    auto n           = std::make_shared<Node>();
    n->value         = std::move(value);
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (Var& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
    return Var(n);
}

void backward(const Var& loss) {
    if (!loss.defined() || loss.value().numel() != 1) {
        throw std::invalid_argument("backward: loss must be a defined scalar");
    }
    if (!loss.requires_grad()) {
        return;  // constant loss, nothing reachable
    }
    // iterative topological order
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

/*================================== ops =====================================*/

static void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po       = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node* p = n.parents[k].get();
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po       = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po       = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i)
                pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i)
                pb->grad[i] += n.grad[i] * pa->value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    double* po       = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * s;
    return make_op(std::move(out), {a}, [s](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i] * s;
    });
}

Var square(const Var& a) {
    return mul(a, a);
}

Var silu(const Var& a) {
    Tensor out(a.value().shape());
    const double* pa = a.value().data();
    double* po       = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-pa[i]));
        po[i]    = pa[i] * s;
    }
    return make_op(std::move(out), {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double x = p->value[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            p->grad[i] += n.grad[i] * (s * (1.0 + x * (1.0 - s)));
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes");
    }
    int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            double aik = av.at(i, kk);
            if (aik == 0.0) continue;
            const double* brow = bv.data() + static_cast<size_t>(kk) * n;
            double* orow       = out.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return make_op(std::move(out), {a, b}, [m, k, n](Node& nd) {
        Node* pa = nd.parents[0].get();
        Node* pb = nd.parents[1].get();
        if (pa->requires_grad) {
            pa->ensure_grad();
            // dA = dC * B^T
            for (int i = 0; i < m; ++i) {
                const double* grow = nd.grad.data() + static_cast<size_t>(i) * n;
                double* arow       = pa->grad.data() + static_cast<size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const double* brow = pb->value.data() + static_cast<size_t>(kk) * n;
                    double acc         = 0.0;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    arow[kk] += acc;
                }
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            // dB = A^T * dC
            for (int i = 0; i < m; ++i) {
                const double* arow = pa->value.data() + static_cast<size_t>(i) * k;
                const double* grow = nd.grad.data() + static_cast<size_t>(i) * n;
                for (int kk = 0; kk < k; ++kk) {
                    double aik = arow[kk];
                    if (aik == 0.0) continue;
                    double* brow = pb->grad.data() + static_cast<size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
                }
            }
        }
    });
}

Var transpose2d(const Var& a) {
    const Tensor& av = a.value();
    if (av.rank() != 2) {
        throw std::invalid_argument("transpose2d: rank must be 2");
    }
    int m = av.dim(0), n = av.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
    return make_op(std::move(out), {a}, [m, n](Node& nd) {
        Node* p = nd.parents[0].get();
        p->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) p->grad.at(i, j) += nd.grad.at(j, i);
    });
}

Var softmax_rows(const Var& a) {
    const Tensor& av = a.value();
    if (av.rank() != 2) {
        throw std::invalid_argument("softmax_rows: rank must be 2");
    }
    int r = av.dim(0), c = av.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i) {
        const double* row = av.data() + static_cast<size_t>(i) * c;
        double* orow      = out.data() + static_cast<size_t>(i) * c;
        double mx         = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < c; ++j) orow[j] /= sum;
    }
    return make_op(std::move(out), {a}, [r, c](Node& nd) {
        Node* p = nd.parents[0].get();
        p->ensure_grad();
        for (int i = 0; i < r; ++i) {
            const double* y  = nd.value.data() + static_cast<size_t>(i) * c;
            const double* dy = nd.grad.data() + static_cast<size_t>(i) * c;
            double* dx       = p->grad.data() + static_cast<size_t>(i) * c;
            double dot       = 0.0;
            for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
            for (int j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_op(std::move(out), {a}, [](Node& nd) {
        Node* p = nd.parents[0].get();
        p->ensure_grad();
        for (int64_t i = 0; i < nd.grad.numel(); ++i) p->grad[i] += nd.grad[i];
    });
}

// First/last output column for which ix = ox*stride - pad + c stays in
// [0, w), so the hot loops below run branch-free.
static inline void conv_ox_range(int c, int stride, int pad, int wd, int wo, int& ox0, int& ox1) {
    int lo = pad - c;  // need ox*stride >= lo
    ox0    = lo <= 0 ? 0 : (lo + stride - 1) / stride;
    int hi = wd - 1 + pad - c;  // need ox*stride <= hi
    ox1    = hi < 0 ? -1 : std::min(wo - 1, hi / stride);
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0)) {
        throw std::invalid_argument("conv2d: incompatible shapes");
    }
    int ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({co, ho, wo});
    const double* bv = b.value().data();
    for (int o = 0; o < co; ++o) {
        double* oplane = out.data() + static_cast<size_t>(o) * ho * wo;
        for (int64_t i = 0; i < static_cast<int64_t>(ho) * wo; ++i) oplane[i] = bv[o];
        for (int i = 0; i < ci; ++i) {
            const double* xplane = xv.data() + static_cast<size_t>(i) * h * wd;
            const double* wbase  = wv.data() + (static_cast<size_t>(o) * ci + i) * kh * kw;
            for (int a = 0; a < kh; ++a) {
                for (int c = 0; c < kw; ++c) {
                    double wval = wbase[a * kw + c];
                    if (wval == 0.0) continue;
                    int ox0, ox1;
                    conv_ox_range(c, stride, pad, wd, wo, ox0, ox1);
                    int cc = c - pad;
                    for (int oy = 0; oy < ho; ++oy) {
                        int iy = oy * stride - pad + a;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xplane + static_cast<size_t>(iy) * wd;
                        double* orow       = oplane + static_cast<size_t>(oy) * wo;
                        if (stride == 1) {
                            for (int ox = ox0; ox <= ox1; ++ox) orow[ox] += wval * xrow[ox + cc];
                        } else {
                            for (int ox = ox0; ox <= ox1; ++ox)
                                orow[ox] += wval * xrow[ox * stride + cc];
                        }
                    }
                }
            }
        }
    }
    return make_op(std::move(out), {x, w, b}, [ci, h, wd, co, kh, kw, ho, wo, stride, pad](Node& nd) {
        Node* px = nd.parents[0].get();
        Node* pw = nd.parents[1].get();
        Node* pb = nd.parents[2].get();
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int o = 0; o < co; ++o) {
                const double* gplane = nd.grad.data() + static_cast<size_t>(o) * ho * wo;
                double acc           = 0.0;
                for (int64_t i = 0; i < static_cast<int64_t>(ho) * wo; ++i) acc += gplane[i];
                pb->grad[o] += acc;
            }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (int o = 0; o < co; ++o) {
                const double* gplane = nd.grad.data() + static_cast<size_t>(o) * ho * wo;
                for (int i = 0; i < ci; ++i) {
                    const double* xplane = px->value.data() + static_cast<size_t>(i) * h * wd;
                    double* wgrad = pw->grad.data() + (static_cast<size_t>(o) * ci + i) * kh * kw;
                    for (int a = 0; a < kh; ++a) {
                        for (int c = 0; c < kw; ++c) {
                            int ox0, ox1;
                            conv_ox_range(c, stride, pad, wd, wo, ox0, ox1);
                            double acc = 0.0;
                            int cc     = c - pad;
                            for (int oy = 0; oy < ho; ++oy) {
                                int iy = oy * stride - pad + a;
                                if (iy < 0 || iy >= h) continue;
                                const double* xrow = xplane + static_cast<size_t>(iy) * wd;
                                const double* grow = gplane + static_cast<size_t>(oy) * wo;
                                if (stride == 1) {
                                    for (int ox = ox0; ox <= ox1; ++ox)
                                        acc += grow[ox] * xrow[ox + cc];
                                } else {
                                    for (int ox = ox0; ox <= ox1; ++ox)
                                        acc += grow[ox] * xrow[ox * stride + cc];
                                }
                            }
                            wgrad[a * kw + c] += acc;
                        }
                    }
                }
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (int o = 0; o < co; ++o) {
                const double* gplane = nd.grad.data() + static_cast<size_t>(o) * ho * wo;
                for (int i = 0; i < ci; ++i) {
                    double* xgrad = px->grad.data() + static_cast<size_t>(i) * h * wd;
                    const double* wbase =
                        pw->value.data() + (static_cast<size_t>(o) * ci + i) * kh * kw;
                    for (int a = 0; a < kh; ++a) {
                        for (int c = 0; c < kw; ++c) {
                            double wval = wbase[a * kw + c];
                            if (wval == 0.0) continue;
                            int ox0, ox1;
                            conv_ox_range(c, stride, pad, wd, wo, ox0, ox1);
                            int cc = c - pad;
                            for (int oy = 0; oy < ho; ++oy) {
                                int iy = oy * stride - pad + a;
                                if (iy < 0 || iy >= h) continue;
                                double* xrow = xgrad + static_cast<size_t>(iy) * wd;
                                const double* grow = gplane + static_cast<size_t>(oy) * wo;
                                if (stride == 1) {
                                    for (int ox = ox0; ox <= ox1; ++ox)
                                        xrow[ox + cc] += wval * grow[ox];
                                } else {
                                    for (int ox = ox0; ox <= ox1; ++ox)
                                        xrow[ox * stride + cc] += wval * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

Var upsample2x(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) {
        throw std::invalid_argument("upsample2x: rank must be 3");
    }
    int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({c, h * 2, w * 2});
    for (int i = 0; i < c; ++i)
        for (int y = 0; y < h * 2; ++y)
            for (int xx = 0; xx < w * 2; ++xx)
                out.at(i, y, xx) = xv.at(i, y / 2, xx / 2);
    return make_op(std::move(out), {x}, [c, h, w](Node& nd) {
        Node* p = nd.parents[0].get();
        p->ensure_grad();
        for (int i = 0; i < c; ++i)
            for (int y = 0; y < h * 2; ++y)
                for (int xx = 0; xx < w * 2; ++xx)
                    p->grad.at(i, y / 2, xx / 2) += nd.grad.at(i, y, xx);
    });
}

Var add_channel_bias(const Var& x, const Var& b) {
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 3 || bv.numel() != xv.dim(0)) {
        throw std::invalid_argument("add_channel_bias: incompatible shapes");
    }
    int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out(xv.shape());
    for (int i = 0; i < c; ++i) {
        double bb = bv[i];
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(i, y, xx) = xv.at(i, y, xx) + bb;
    }
    return make_op(std::move(out), {x, b}, [c, h, w](Node& nd) {
        Node* px = nd.parents[0].get();
        Node* pb = nd.parents[1].get();
        if (px->requires_grad) {
            px->ensure_grad();
            for (int64_t i = 0; i < nd.grad.numel(); ++i) px->grad[i] += nd.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int i = 0; i < c; ++i) {
                double acc = 0.0;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) acc += nd.grad.at(i, y, xx);
                pb->grad[i] += acc;
            }
        }
    });
}

Var mul_mask_hw(const Var& x, const Tensor& m) {
    const Tensor& xv = x.value();
    if (m.rank() != 2) {
        throw std::invalid_argument("mul_mask_hw: mask must be 2-d");
    }
    int mh = m.dim(0), mw = m.dim(1);
    Tensor out(xv.shape());
    if (xv.rank() == 2) {
        if (xv.dim(0) != mh || xv.dim(1) != mw) {
            throw std::invalid_argument("mul_mask_hw: shape mismatch");
        }
        for (int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * m[i];
    } else if (xv.rank() == 3) {
        if (xv.dim(1) != mh || xv.dim(2) != mw) {
            throw std::invalid_argument("mul_mask_hw: shape mismatch");
        }
        int c = xv.dim(0);
        for (int i = 0; i < c; ++i)
            for (int y = 0; y < mh; ++y)
                for (int xx = 0; xx < mw; ++xx)
                    out.at(i, y, xx) = xv.at(i, y, xx) * m.at(y, xx);
    } else {
        throw std::invalid_argument("mul_mask_hw: rank must be 2 or 3");
    }
    Tensor mc = m;
    return make_op(std::move(out), {x}, [mc](Node& nd) {
        Node* p = nd.parents[0].get();
        p->ensure_grad();
        int64_t msz = mc.numel();
        for (int64_t i = 0; i < nd.grad.numel(); ++i)
            p->grad[i] += nd.grad[i] * mc[i % msz];
    });
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2) {
        throw std::invalid_argument("gather_rows: table must be 2-d");
    }
    int v = tv.dim(0), d = tv.dim(1);
    Tensor out({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v) {
            throw std::invalid_argument("gather_rows: id out of range");
        }
        const double* src = tv.data() + static_cast<size_t>(ids[i]) * d;
        double* dst       = out.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    std::vector<int> idc = ids;
    return make_op(std::move(out), {table}, [idc, d](Node& nd) {
        Node* p = nd.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < idc.size(); ++i) {
            double* dst       = p->grad.data() + static_cast<size_t>(idc[i]) * d;
            const double* src = nd.grad.data() + i * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Var vconcat(const std::vector<Var>& rows) {
    if (rows.empty()) {
        throw std::invalid_argument("vconcat: empty row list");
    }
    int d = static_cast<int>(rows[0].value().numel());
    Tensor out({static_cast<int>(rows.size()), d});
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].value().numel() != d) {
            throw std::invalid_argument("vconcat: row width mismatch");
        }
        const double* src = rows[i].value().data();
        double* dst       = out.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    return make_op(std::move(out), rows, [d](Node& nd) {
        for (size_t i = 0; i < nd.parents.size(); ++i) {
            Node* p = nd.parents[i].get();
            if (!p->requires_grad) continue;
            p->ensure_grad();
            const double* src = nd.grad.data() + i * d;
            for (int j = 0; j < d; ++j) p->grad[j] += src[j];
        }
    });
}

Var mean_cols(const Var& a, const std::vector<int>& cols) {
    const Tensor& av = a.value();
    if (av.rank() != 2 || cols.empty()) {
        throw std::invalid_argument("mean_cols: need 2-d input and non-empty column set");
    }
    int r = av.dim(0), c = av.dim(1);
    for (int j : cols) {
        if (j < 0 || j >= c) throw std::invalid_argument("mean_cols: column out of range");
    }
    Tensor out({r});
    double inv = 1.0 / static_cast<double>(cols.size());
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j : cols) acc += av.at(i, j);
        out[i] = acc * inv;
    }
    std::vector<int> cc = cols;
    return make_op(std::move(out), {a}, [cc, r, c, inv](Node& nd) {
        Node* p = nd.parents[0].get();
        p->ensure_grad();
        for (int i = 0; i < r; ++i) {
            double g = nd.grad[i] * inv;
            for (int j : cc) p->grad.data()[static_cast<size_t>(i) * c + j] += g;
        }
    });
}

Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    return make_op(std::move(out), {a}, [](Node& nd) {
        Node* p  = nd.parents[0].get();
        double g = nd.grad[0];
        p->ensure_grad();
        for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += g;
    });
}

Var mean_all(const Var& a) {
    int64_t n = a.value().numel();
    return scale(sum_all(a), n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
}

}  // namespace msp
