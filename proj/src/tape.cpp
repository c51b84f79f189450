#include "vitol/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vitol {

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(what) + " expects a matrix, got " +
                                    shape_string(t.shape()));
    }
}

}  // namespace

void Tape::check(NodeRef node) const {
    if (!node.valid() || node.index >= nodes_.size()) {
        throw std::out_of_range("node does not belong to this tape");
    }
}

NodeRef Tape::constant(Tensor value) {
    Node n;
    n.own = std::move(value);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

NodeRef Tape::variable(Tensor value) {
    NodeRef r = constant(std::move(value));
    nodes_.back().requires_grad = true;
    return r;
}

NodeRef Tape::parameter(const Tensor& value, bool requires_grad) {
    Node n;
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

const Tensor& Tape::value(NodeRef node) const {
    check(node);
    return nodes_[node.index].value();
}

Tensor Tape::grad(NodeRef node) const {
    check(node);
    const Node& n = nodes_[node.index];
    if (n.grad.empty()) return Tensor(n.value().shape(), 0.0);
    return n.grad;
}

Tensor* Tape::accum(NodeRef node) {
    Node& n = nodes_[node.index];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(n.value().shape(), 0.0);
    return &n.grad;
}

NodeRef Tape::record(std::initializer_list<NodeRef> inputs, Forward forward, Backward backward) {
    bool needs_grad = false;
    for (NodeRef in : inputs) {
        check(in);
        needs_grad = needs_grad || nodes_[in.index].requires_grad;
    }
    Node n;
    n.own = forward(*this);
    n.requires_grad = needs_grad;
    n.forward = std::move(forward);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

void Tape::watch(NodeRef node) {
    check(node);
    if (node.index + 1 != nodes_.size()) {
        throw std::logic_error("watch() must directly follow the watched node");
    }
    nodes_[node.index].requires_grad = true;
    watched_.push_back(node);
}

void Tape::replay() {
    for (Node& n : nodes_) {
        if (n.forward) n.own = n.forward(*this);
    }
}

void Tape::backward(NodeRef scalar) {
    check(scalar);
    if (nodes_[scalar.index].value().size() != 1) {
        throw std::invalid_argument("backward() needs a single-element output, got " +
                                    shape_string(nodes_[scalar.index].value().shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    Node& out = nodes_[scalar.index];
    if (!out.requires_grad) return;
    out.grad = Tensor(out.value().shape(), 1.0);
    for (std::size_t i = scalar.index + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        // The callback may grow other nodes' grads but never this node's.
        const Tensor g = n.grad;
        n.backward(*this, g);
    }
}

NodeRef Tape::matmul(NodeRef a, NodeRef b) {
    require_matrix(value(a), "matmul");
    require_matrix(value(b), "matmul");
    return record(
        {a, b}, [a, b](const Tape& t) { return vitol::matmul(t.value(a), t.value(b)); },
        [a, b](Tape& t, const Tensor& g) {
            const Tensor& av = t.value(a);
            const Tensor& bv = t.value(b);
            const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
            if (Tensor* ga = t.accum(a)) gemm_nt(g.raw(), bv.raw(), ga->raw(), m, n, k);
            if (Tensor* gb = t.accum(b)) gemm_tn(av.raw(), g.raw(), gb->raw(), m, k, n);
        });
}

NodeRef Tape::linear(NodeRef x, NodeRef w, NodeRef bias) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    require_matrix(xv, "linear");
    require_matrix(wv, "linear");
    if (xv.dim(1) != wv.dim(0) || value(bias).size() != wv.dim(1)) {
        throw std::invalid_argument("linear shape mismatch " + shape_string(xv.shape()) + " * " +
                                    shape_string(wv.shape()));
    }
    return record(
        {x, w, bias},
        [x, w, bias](const Tape& t) {
            const Tensor& xv = t.value(x);
            const Tensor& wv = t.value(w);
            const Tensor& bv = t.value(bias);
            Tensor y({xv.dim(0), wv.dim(1)});
            for (std::size_t i = 0; i < y.dim(0); ++i) {
                std::copy(bv.data().begin(), bv.data().end(), y.row(i).begin());
            }
            gemm_nn(xv.raw(), wv.raw(), y.raw(), xv.dim(0), xv.dim(1), wv.dim(1));
            return y;
        },
        [x, w, bias](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value(x);
            const Tensor& wv = t.value(w);
            const std::size_t m = xv.dim(0), k = xv.dim(1), n = wv.dim(1);
            if (Tensor* gx = t.accum(x)) gemm_nt(g.raw(), wv.raw(), gx->raw(), m, n, k);
            if (Tensor* gw = t.accum(w)) gemm_tn(xv.raw(), g.raw(), gw->raw(), m, k, n);
            if (Tensor* gb = t.accum(bias)) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g.at(i, j);
                }
            }
        });
}

NodeRef Tape::add(NodeRef a, NodeRef b) {
    if (!value(a).same_shape(value(b))) {
        throw std::invalid_argument("add shape mismatch " + shape_string(value(a).shape()) +
                                    " + " + shape_string(value(b).shape()));
    }
    return record(
        {a, b},
        [a, b](const Tape& t) {
            Tensor y = t.value(a);
            const Tensor& bv = t.value(b);
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
            return y;
        },
        [a, b](Tape& t, const Tensor& g) {
            for (NodeRef in : {a, b}) {
                if (Tensor* gi = t.accum(in)) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                }
            }
        });
}

NodeRef Tape::layer_norm(NodeRef x, NodeRef gamma, NodeRef beta) {
    const std::size_t n = value(x).cols();
    if (value(gamma).size() != n || value(beta).size() != n) {
        throw std::invalid_argument("layer norm affine length mismatch");
    }
    return record(
        {x, gamma, beta},
        [x, gamma, beta](const Tape& t) {
            return layer_norm_rows(t.value(x), t.value(gamma), t.value(beta));
        },
        [x, gamma, beta](Tape& t, const Tensor& g) {
            const Tensor& xv = t.value(x);
            const Tensor& gv = t.value(gamma);
            Tensor* gx = t.accum(x);
            Tensor* gg = t.accum(gamma);
            Tensor* gb = t.accum(beta);
            const std::size_t n = xv.cols();
            const double inv_n = 1.0 / static_cast<double>(n);
            std::vector<double> xhat(n), dxhat(n);
            for (std::size_t r = 0; r < xv.rows(); ++r) {
                auto in = xv.row(r);
                auto go = g.row(r);
                double mean = 0.0;
                for (double v : in) mean += v;
                mean *= inv_n;
                double var = 0.0;
                for (double v : in) var += (v - mean) * (v - mean);
                var *= inv_n;
                const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
                double sum_d = 0.0, sum_dx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    xhat[j] = (in[j] - mean) * inv_std;
                    dxhat[j] = go[j] * gv[j];
                    sum_d += dxhat[j];
                    sum_dx += dxhat[j] * xhat[j];
                    if (gg) (*gg)[j] += go[j] * xhat[j];
                    if (gb) (*gb)[j] += go[j];
                }
                if (gx) {
                    auto out = gx->row(r);
                    for (std::size_t j = 0; j < n; ++j) {
                        out[j] += inv_std * (dxhat[j] - inv_n * sum_d - xhat[j] * inv_n * sum_dx);
                    }
                }
            }
        });
}

NodeRef Tape::gelu(NodeRef x) {
    return record(
        {x}, [x](const Tape& t) { return vitol::gelu(t.value(x)); },
        [x](Tape& t, const Tensor& g) {
            if (Tensor* gx = t.accum(x)) {
                const Tensor& xv = t.value(x);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    (*gx)[i] += g[i] * gelu_derivative(xv[i]);
                }
            }
        });
}

NodeRef Tape::softmax(NodeRef x) {
    NodeRef self{nodes_.size()};
    return record(
        {x}, [x](const Tape& t) { return softmax_rows(t.value(x)); },
        [x, self](Tape& t, const Tensor& g) {
            Tensor* gx = t.accum(x);
            if (!gx) return;
            if (!t.softmax_jacobian_) {
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                return;
            }
            const Tensor& y = t.value(self);
            const std::size_t n = y.cols();
            for (std::size_t r = 0; r < y.rows(); ++r) {
                auto yr = y.row(r);
                auto gr = g.row(r);
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
                auto out = gx->row(r);
                for (std::size_t j = 0; j < n; ++j) out[j] += yr[j] * (gr[j] - dot);
            }
        });
}

NodeRef Tape::attention_scores(NodeRef qkv, std::size_t heads, double scale) {
    const Tensor& v = value(qkv);
    require_matrix(v, "attention_scores");
    if (heads == 0 || v.dim(1) % (3 * heads) != 0) {
        throw std::invalid_argument("qkv width not divisible into heads");
    }
    return record(
        {qkv},
        [qkv, heads, scale](const Tape& t) {
            const Tensor& q = t.value(qkv);
            const std::size_t s = q.dim(0), d = q.dim(1) / 3, dh = d / heads;
            Tensor out({heads, s, s});
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < s; ++i) {
                    const double* qi = q.raw() + i * 3 * d + h * dh;
                    for (std::size_t j = 0; j < s; ++j) {
                        const double* kj = q.raw() + j * 3 * d + d + h * dh;
                        double acc = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
                        out.at(h, i, j) = acc * scale;
                    }
                }
            }
            return out;
        },
        [qkv, heads, scale](Tape& t, const Tensor& g) {
            Tensor* gq = t.accum(qkv);
            if (!gq) return;
            const Tensor& q = t.value(qkv);
            const std::size_t s = q.dim(0), d = q.dim(1) / 3, dh = d / heads;
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < s; ++i) {
                    const double* qi = q.raw() + i * 3 * d + h * dh;
                    double* gqi = gq->raw() + i * 3 * d + h * dh;
                    for (std::size_t j = 0; j < s; ++j) {
                        const double gs = g.at(h, i, j) * scale;
                        if (gs == 0.0) continue;
                        const double* kj = q.raw() + j * 3 * d + d + h * dh;
                        double* gkj = gq->raw() + j * 3 * d + d + h * dh;
                        for (std::size_t c = 0; c < dh; ++c) {
                            gqi[c] += gs * kj[c];
                            gkj[c] += gs * qi[c];
                        }
                    }
                }
            }
        });
}

NodeRef Tape::attention_apply(NodeRef probs, NodeRef qkv, std::size_t heads) {
    const Tensor& p = value(probs);
    const Tensor& q = value(qkv);
    require_matrix(q, "attention_apply");
    if (p.rank() != 3 || p.dim(0) != heads || p.dim(1) != q.dim(0) || p.dim(2) != q.dim(0) ||
        q.dim(1) % (3 * heads) != 0) {
        throw std::invalid_argument("attention_apply shape mismatch " + shape_string(p.shape()) +
                                    " vs " + shape_string(q.shape()));
    }
    return record(
        {probs, qkv},
        [probs, qkv, heads](const Tape& t) {
            const Tensor& p = t.value(probs);
            const Tensor& q = t.value(qkv);
            const std::size_t s = q.dim(0), d = q.dim(1) / 3, dh = d / heads;
            Tensor z({s, d});
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < s; ++i) {
                    double* zi = z.raw() + i * d + h * dh;
                    for (std::size_t j = 0; j < s; ++j) {
                        const double pij = p.at(h, i, j);
                        const double* vj = q.raw() + j * 3 * d + 2 * d + h * dh;
                        for (std::size_t c = 0; c < dh; ++c) zi[c] += pij * vj[c];
                    }
                }
            }
            return z;
        },
        [probs, qkv, heads](Tape& t, const Tensor& g) {
            const Tensor& p = t.value(probs);
            const Tensor& q = t.value(qkv);
            const std::size_t s = q.dim(0), d = q.dim(1) / 3, dh = d / heads;
            Tensor* gp = t.accum(probs);
            Tensor* gq = t.accum(qkv);
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < s; ++i) {
                    const double* gi = g.raw() + i * d + h * dh;
                    for (std::size_t j = 0; j < s; ++j) {
                        const double* vj = q.raw() + j * 3 * d + 2 * d + h * dh;
                        if (gp) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
                            gp->at(h, i, j) += acc;
                        }
                        if (gq) {
                            const double pij = p.at(h, i, j);
                            double* gvj = gq->raw() + j * 3 * d + 2 * d + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) gvj[c] += pij * gi[c];
                        }
                    }
                }
            }
        });
}

NodeRef Tape::prepend_row(NodeRef first, NodeRef rest) {
    const Tensor& f = value(first);
    const Tensor& r = value(rest);
    require_matrix(r, "prepend_row");
    if (f.size() != r.dim(1)) throw std::invalid_argument("prepend_row width mismatch");
    return record(
        {first, rest},
        [first, rest](const Tape& t) {
            const Tensor& f = t.value(first);
            const Tensor& r = t.value(rest);
            Tensor y({r.dim(0) + 1, r.dim(1)});
            std::copy(f.data().begin(), f.data().end(), y.data().begin());
            std::copy(r.data().begin(), r.data().end(), y.data().begin() + r.dim(1));
            return y;
        },
        [first, rest](Tape& t, const Tensor& g) {
            const std::size_t n = g.cols();
            if (Tensor* gf = t.accum(first)) {
                for (std::size_t j = 0; j < n; ++j) (*gf)[j] += g[j];
            }
            if (Tensor* gr = t.accum(rest)) {
                for (std::size_t i = 0; i < gr->size(); ++i) (*gr)[i] += g[n + i];
            }
        });
}

NodeRef Tape::row_scale(NodeRef x, std::vector<double> factor) {
    if (factor.size() != value(x).rows()) throw std::invalid_argument("row_scale length mismatch");
    return record(
        {x},
        [x, factor](const Tape& t) {
            Tensor y = t.value(x);
            for (std::size_t r = 0; r < y.rows(); ++r) {
                for (double& v : y.row(r)) v *= factor[r];
            }
            return y;
        },
        [x, factor](Tape& t, const Tensor& g) {
            if (Tensor* gx = t.accum(x)) {
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    auto out = gx->row(r);
                    auto in = g.row(r);
                    for (std::size_t j = 0; j < in.size(); ++j) out[j] += in[j] * factor[r];
                }
            }
        });
}

NodeRef Tape::importance_scale(NodeRef x, bool exempt_first_row) {
    require_matrix(value(x), "importance_scale");
    return record(
        {x},
        [x, exempt_first_row](const Tape& t) {
            Tensor y = t.value(x);
            const double inv_d = 1.0 / static_cast<double>(y.cols());
            for (std::size_t r = exempt_first_row ? 1 : 0; r < y.rows(); ++r) {
                auto row = y.row(r);
                double mean = 0.0;
                for (double v : row) mean += v;
                const double f = sigmoid(mean * inv_d);
                for (double& v : row) v *= f;
            }
            return y;
        },
        [x, exempt_first_row](Tape& t, const Tensor& g) {
            Tensor* gx = t.accum(x);
            if (!gx) return;
            const Tensor& xv = t.value(x);
            const double inv_d = 1.0 / static_cast<double>(xv.cols());
            for (std::size_t r = 0; r < xv.rows(); ++r) {
                auto in = xv.row(r);
                auto go = g.row(r);
                auto out = gx->row(r);
                if (exempt_first_row && r == 0) {
                    for (std::size_t j = 0; j < in.size(); ++j) out[j] += go[j];
                    continue;
                }
                double mean = 0.0, dot = 0.0;
                for (std::size_t j = 0; j < in.size(); ++j) {
                    mean += in[j];
                    dot += go[j] * in[j];
                }
                const double f = sigmoid(mean * inv_d);
                const double through_mean = dot * f * (1.0 - f) * inv_d;
                for (std::size_t j = 0; j < in.size(); ++j) out[j] += go[j] * f + through_mean;
            }
        });
}

NodeRef Tape::select_row(NodeRef x, std::size_t row) {
    if (row >= value(x).rows()) throw std::out_of_range("select_row index");
    return record(
        {x},
        [x, row](const Tape& t) {
            const Tensor& v = t.value(x);
            auto r = v.row(row);
            return Tensor({1, v.cols()}, std::vector<double>(r.begin(), r.end()));
        },
        [x, row](Tape& t, const Tensor& g) {
            if (Tensor* gx = t.accum(x)) {
                auto out = gx->row(row);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] += g[j];
            }
        });
}

NodeRef Tape::pick(NodeRef x, std::size_t i) {
    if (i >= value(x).size()) throw std::out_of_range("pick index");
    return record(
        {x}, [x, i](const Tape& t) { return Tensor({1}, {t.value(x)[i]}); },
        [x, i](Tape& t, const Tensor& g) {
            if (Tensor* gx = t.accum(x)) (*gx)[i] += g[0];
        });
}

NodeRef Tape::softmax_pick(NodeRef x, std::size_t i) {
    if (i >= value(x).size()) throw std::out_of_range("softmax_pick index");
    auto probs = [x](const Tape& t) {
        const Tensor& v = t.value(x);
        return softmax_rows(Tensor({v.size()}, std::vector<double>(v.data().begin(), v.data().end())));
    };
    return record(
        {x}, [probs, i](const Tape& t) { return Tensor({1}, {probs(t)[i]}); },
        [x, i, probs](Tape& t, const Tensor& g) {
            Tensor* gx = t.accum(x);
            if (!gx) return;
            const Tensor p = probs(t);
            for (std::size_t j = 0; j < p.size(); ++j) {
                (*gx)[j] += g[0] * p[i] * ((i == j ? 1.0 : 0.0) - p[j]);
            }
        });
}

NodeRef Tape::cross_entropy(NodeRef logits, std::size_t target) {
    if (target >= value(logits).size()) throw std::out_of_range("cross_entropy target");
    return record(
        {logits},
        [logits, target](const Tape& t) {
            const Tensor& z = t.value(logits);
            const double mx = *std::max_element(z.data().begin(), z.data().end());
            double sum = 0.0;
            for (double v : z.data()) sum += std::exp(v - mx);
            return Tensor({1}, {mx + std::log(sum) - z[target]});
        },
        [logits, target](Tape& t, const Tensor& g) {
            Tensor* gz = t.accum(logits);
            if (!gz) return;
            const Tensor& z = t.value(logits);
            const Tensor p = softmax_rows(
                Tensor({z.size()}, std::vector<double>(z.data().begin(), z.data().end())));
            for (std::size_t j = 0; j < p.size(); ++j) {
                (*gz)[j] += g[0] * (p[j] - (j == target ? 1.0 : 0.0));
            }
        });
}

GradStack backward_attention_grads(Tape& tape, NodeRef scalar_output) {
    if (tape.watched().empty()) {
        throw std::invalid_argument("tape has no watched attention nodes");
    }
    tape.backward(scalar_output);
    GradStack grads;
    grads.reserve(tape.watched().size());
    for (NodeRef n : tape.watched()) grads.push_back(tape.grad(n));
    return grads;
}

}  // namespace vitol
