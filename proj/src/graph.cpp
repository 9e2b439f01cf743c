#include "mmcd/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mmcd {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using MapA = Eigen::Map<Eigen::ArrayXd>;
using CMapA = Eigen::Map<const Eigen::ArrayXd>;

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (std::size_t i = 0; i < nd; ++i) {
        const long da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        const long db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1) throw ShapeError("shapes are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` aligned to the broadcast output rank, 0 on broadcast dims.
std::vector<long> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<long> st(out.size(), 0);
    long stride = 1;
    for (long i = static_cast<long>(in.size()) - 1; i >= 0; --i) {
        const std::size_t oi = out.size() - in.size() + static_cast<std::size_t>(i);
        st[oi] = in[static_cast<std::size_t>(i)] == 1 ? 0 : stride;
        stride *= in[static_cast<std::size_t>(i)];
    }
    return st;
}

// Odometer walk over the output index space carrying input offsets.
template <typename F>
void bwalk(const Shape& out, const std::vector<long>& as, const std::vector<long>& bs, F&& f) {
    const int nd = static_cast<int>(out.size());
    const long total = shape_numel(out);
    if (nd == 0) {
        if (total > 0) f(0, 0, 0);
        return;
    }
    std::vector<long> idx(static_cast<std::size_t>(nd), 0);
    long ao = 0, bo = 0;
    for (long oo = 0; oo < total; ++oo) {
        f(ao, bo, oo);
        int d = nd - 1;
        while (d >= 0) {
            ++idx[static_cast<std::size_t>(d)];
            ao += as[static_cast<std::size_t>(d)];
            bo += bs[static_cast<std::size_t>(d)];
            if (idx[static_cast<std::size_t>(d)] < out[static_cast<std::size_t>(d)]) break;
            ao -= as[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
            bo -= bs[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
            idx[static_cast<std::size_t>(d)] = 0;
            --d;
        }
    }
}

void check_4d(const Tensor& t, const char* what) {
    if (t.ndim() != 4) throw ShapeError(std::string(what) + " must be 4-d (N,C,H,W)");
}

}  // namespace

Tensor SparseMatrix::dense() const {
    Tensor d({rows, cols});
    for (long i = 0; i < rows; ++i)
        for (long k = rowptr[static_cast<std::size_t>(i)]; k < rowptr[static_cast<std::size_t>(i) + 1]; ++k)
            d[i * cols + colidx[static_cast<std::size_t>(k)]] = vals[static_cast<std::size_t>(k)];
    return d;
}

Var Graph::make(Tensor value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = needs_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::gbuf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

Var Graph::constant(Tensor v) { return make(std::move(v), false); }

Var Graph::param(Parameter& p) {
    const auto it = leaf_ids_.find(&p);
    if (it != leaf_ids_.end()) return Var{it->second};
    Var v = make(p.value, p.trainable);
    nodes_[static_cast<std::size_t>(v.id)].leaf = &p;
    leaf_ids_[&p] = v.id;
    return v;
}

// ---- elementwise / broadcast ----

Var Graph::add(Var a, Var b) {
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    const Shape os = broadcast_shape(ta.shape(), tb.shape());
    Tensor out(os);
    const bool same = ta.shape() == tb.shape();
    if (same) {
        const double* pa = ta.data();
        const double* pb = tb.data();
        double* po = out.data();
        for (long i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    } else {
        const auto as = broadcast_strides(ta.shape(), os);
        const auto bs = broadcast_strides(tb.shape(), os);
        const double* pa = ta.data();
        const double* pb = tb.data();
        double* po = out.data();
        bwalk(os, as, bs, [&](long ao, long bo, long oo) { po[oo] = pa[ao] + pb[bo]; });
    }
    const bool needs = ng(a.id) || ng(b.id);
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, a, b, o, os, same]() {
        const Tensor& go = gbuf(o.id);
        if (same) {
            if (ng(a.id)) {
                double* ga = gbuf(a.id).data();
                const double* g = go.data();
                for (long i = 0; i < go.numel(); ++i) ga[i] += g[i];
            }
            if (ng(b.id)) {
                double* gb = gbuf(b.id).data();
                const double* g = go.data();
                for (long i = 0; i < go.numel(); ++i) gb[i] += g[i];
            }
            return;
        }
        const auto as = broadcast_strides(v(a.id).shape(), os);
        const auto bs = broadcast_strides(v(b.id).shape(), os);
        const double* g = go.data();
        if (ng(a.id)) {
            double* ga = gbuf(a.id).data();
            bwalk(os, as, bs, [&](long ao, long, long oo) { ga[ao] += g[oo]; });
        }
        if (ng(b.id)) {
            double* gb = gbuf(b.id).data();
            bwalk(os, as, bs, [&](long, long bo, long oo) { gb[bo] += g[oo]; });
        }
    };
    return o;
}

Var Graph::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Graph::mul(Var a, Var b) {
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    const Shape os = broadcast_shape(ta.shape(), tb.shape());
    Tensor out(os);
    const bool same = ta.shape() == tb.shape();
    {
        const double* pa = ta.data();
        const double* pb = tb.data();
        double* po = out.data();
        if (same) {
            for (long i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
        } else {
            const auto as = broadcast_strides(ta.shape(), os);
            const auto bs = broadcast_strides(tb.shape(), os);
            bwalk(os, as, bs, [&](long ao, long bo, long oo) { po[oo] = pa[ao] * pb[bo]; });
        }
    }
    const bool needs = ng(a.id) || ng(b.id);
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, a, b, o, os, same]() {
        const double* g = gbuf(o.id).data();
        const double* pa = v(a.id).data();
        const double* pb = v(b.id).data();
        if (same) {
            if (ng(a.id)) {
                double* ga = gbuf(a.id).data();
                for (long i = 0; i < v(o.id).numel(); ++i) ga[i] += g[i] * pb[i];
            }
            if (ng(b.id)) {
                double* gb = gbuf(b.id).data();
                for (long i = 0; i < v(o.id).numel(); ++i) gb[i] += g[i] * pa[i];
            }
            return;
        }
        const auto as = broadcast_strides(v(a.id).shape(), os);
        const auto bs = broadcast_strides(v(b.id).shape(), os);
        if (ng(a.id)) {
            double* ga = gbuf(a.id).data();
            bwalk(os, as, bs, [&](long ao, long bo, long oo) { ga[ao] += g[oo] * pb[bo]; });
        }
        if (ng(b.id)) {
            double* gb = gbuf(b.id).data();
            bwalk(os, as, bs, [&](long ao, long bo, long oo) { gb[bo] += g[oo] * pa[ao]; });
        }
    };
    return o;
}

Var Graph::scale(Var x, double s) {
    const Tensor& tx = v(x.id);
    Tensor out(tx.shape());
    MapA(out.data(), out.numel()) = CMapA(tx.data(), tx.numel()) * s;
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o, s]() {
        MapA(gbuf(x.id).data(), v(x.id).numel()) += CMapA(gbuf(o.id).data(), v(o.id).numel()) * s;
    };
    return o;
}

Var Graph::add_scalar(Var x, double c) {
    const Tensor& tx = v(x.id);
    Tensor out(tx.shape());
    MapA(out.data(), out.numel()) = CMapA(tx.data(), tx.numel()) + c;
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o]() {
        MapA(gbuf(x.id).data(), v(x.id).numel()) += CMapA(gbuf(o.id).data(), v(o.id).numel());
    };
    return o;
}

// ---- activations ----

Var Graph::relu(Var x) {
    const Tensor& tx = v(x.id);
    Tensor out(tx.shape());
    const double* px = tx.data();
    double* po = out.data();
    for (long i = 0; i < tx.numel(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o]() {
        const double* px = v(x.id).data();
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        for (long i = 0; i < v(x.id).numel(); ++i)
            if (px[i] > 0.0) gx[i] += g[i];
    };
    return o;
}

Var Graph::gelu(Var x) {
    const Tensor& tx = v(x.id);
    Tensor out(tx.shape());
    Tensor phi(tx.shape());  // standard normal CDF of x, cached for backward
    const double* px = tx.data();
    double* po = out.data();
    double* pp = phi.data();
    for (long i = 0; i < tx.numel(); ++i) {
        pp[i] = 0.5 * (1.0 + std::erf(px[i] * kInvSqrt2));
        po[i] = px[i] * pp[i];
    }
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o, phi]() {
        const double* px = v(x.id).data();
        const double* pp = phi.data();
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        for (long i = 0; i < v(x.id).numel(); ++i) {
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * px[i] * px[i]);
            gx[i] += g[i] * (pp[i] + px[i] * pdf);
        }
    };
    return o;
}

Var Graph::sigmoid(Var x) {
    const Tensor& tx = v(x.id);
    Tensor out(tx.shape());
    const double* px = tx.data();
    double* po = out.data();
    for (long i = 0; i < tx.numel(); ++i) {
        const double z = px[i];
        po[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o]() {
        const double* py = v(o.id).data();
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        for (long i = 0; i < v(o.id).numel(); ++i) gx[i] += g[i] * py[i] * (1.0 - py[i]);
    };
    return o;
}

Var Graph::softmax_last(Var x) {
    const Tensor& tx = v(x.id);
    const long c = tx.shape().back();
    const long rows = tx.numel() / c;
    Tensor out(tx.shape());
    const double* px = tx.data();
    double* po = out.data();
    for (long r = 0; r < rows; ++r) {
        const double* xr = px + r * c;
        double* yr = po + r * c;
        double m = xr[0];
        for (long i = 1; i < c; ++i) m = std::max(m, xr[i]);
        MapA ya(yr, c);
        ya = (CMapA(xr, c) - m).exp();
        ya /= ya.sum();
    }
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o, rows, c]() {
        const double* py = v(o.id).data();
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        for (long r = 0; r < rows; ++r) {
            const double* yr = py + r * c;
            const double* gr = g + r * c;
            double dot = 0.0;
            for (long i = 0; i < c; ++i) dot += yr[i] * gr[i];
            double* gxr = gx + r * c;
            for (long i = 0; i < c; ++i) gxr[i] += yr[i] * (gr[i] - dot);
        }
    };
    return o;
}

// ---- shape ops ----

Var Graph::reshape(Var x, Shape shape) {
    const Tensor& tx = v(x.id);
    Tensor out = tx.reshaped(std::move(shape));
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o]() {
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        for (long i = 0; i < v(x.id).numel(); ++i) gx[i] += g[i];
    };
    return o;
}

Var Graph::index_map(Var x, std::shared_ptr<std::vector<long>> idx, Shape out_shape) {
    const Tensor& tx = v(x.id);
    if (static_cast<long>(idx->size()) != shape_numel(out_shape)) throw ShapeError("index map size mismatch");
    Tensor out(std::move(out_shape));
    const double* px = tx.data();
    double* po = out.data();
    const long n = out.numel();
    const long* pi = idx->data();
    for (long i = 0; i < n; ++i) po[i] = px[pi[i]];
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o, idx]() {
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        const long n = v(o.id).numel();
        const long* pi = idx->data();
        for (long i = 0; i < n; ++i) gx[pi[i]] += g[i];
    };
    return o;
}

Var Graph::permute(Var x, const std::vector<int>& perm) {
    const Tensor& tx = v(x.id);
    const Shape& in = tx.shape();
    if (perm.size() != in.size()) throw ShapeError("permute rank mismatch");
    const std::size_t nd = in.size();
    Shape os(nd);
    for (std::size_t i = 0; i < nd; ++i) os[i] = in[static_cast<std::size_t>(perm[i])];
    std::vector<long> in_strides(nd, 1);
    for (long i = static_cast<long>(nd) - 2; i >= 0; --i)
        in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i) + 1] * in[static_cast<std::size_t>(i) + 1];
    std::vector<long> walk_strides(nd);
    for (std::size_t i = 0; i < nd; ++i) walk_strides[i] = in_strides[static_cast<std::size_t>(perm[i])];

    auto idx = std::make_shared<std::vector<long>>(static_cast<std::size_t>(tx.numel()));
    const std::vector<long> zero(nd, 0);
    long* pidx = idx->data();
    bwalk(os, walk_strides, zero, [&](long ao, long, long oo) { pidx[oo] = ao; });
    return index_map(x, std::move(idx), os);
}

Var Graph::concat(const std::vector<Var>& xs, int dim) {
    if (xs.empty()) throw InvalidArgument("concat of zero tensors");
    const Shape& s0 = v(xs[0].id).shape();
    const std::size_t nd = s0.size();
    Shape os = s0;
    long cat = 0;
    for (const Var& xv : xs) {
        const Shape& s = v(xv.id).shape();
        if (s.size() != nd) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < nd; ++i)
            if (static_cast<int>(i) != dim && s[i] != s0[i]) throw ShapeError("concat extent mismatch");
        cat += s[static_cast<std::size_t>(dim)];
    }
    os[static_cast<std::size_t>(dim)] = cat;
    long outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= s0[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(dim) + 1; i < nd; ++i) inner *= s0[i];

    Tensor out(os);
    double* po = out.data();
    const long ostride = cat * inner;
    long off = 0;
    bool needs = false;
    for (const Var& xv : xs) {
        const Tensor& t = v(xv.id);
        needs = needs || ng(xv.id);
        const long di = t.shape()[static_cast<std::size_t>(dim)] * inner;
        const double* px = t.data();
        for (long r = 0; r < outer; ++r)
            std::memcpy(po + r * ostride + off, px + r * di, static_cast<std::size_t>(di) * sizeof(double));
        off += di;
    }
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    auto parts = xs;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, parts, o, dim, outer, inner, ostride]() {
        const double* g = gbuf(o.id).data();
        long off = 0;
        for (const Var& xv : parts) {
            const long di = v(xv.id).shape()[static_cast<std::size_t>(dim)] * inner;
            if (ng(xv.id)) {
                double* gx = gbuf(xv.id).data();
                for (long r = 0; r < outer; ++r) {
                    const double* gr = g + r * ostride + off;
                    double* gxr = gx + r * di;
                    for (long i = 0; i < di; ++i) gxr[i] += gr[i];
                }
            }
            off += di;
        }
    };
    return o;
}

// ---- linear algebra ----

Var Graph::linear(Var x, Var w) {
    const Tensor& tx = v(x.id);
    const Tensor& tw = v(w.id);
    if (tw.ndim() != 2) throw ShapeError("linear weight must be 2-d");
    const long k = tx.shape().back();
    if (k != tw.dim(0)) throw ShapeError("linear inner extent mismatch");
    const long n = tw.dim(1);
    const long rows = tx.numel() / k;
    Shape os = tx.shape();
    os.back() = n;
    Tensor out(os);
    MapM(out.data(), rows, n).noalias() = CMapM(tx.data(), rows, k) * CMapM(tw.data(), k, n);
    const bool needs = ng(x.id) || ng(w.id);
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, w, o, rows, k, n]() {
        const CMapM gy(gbuf(o.id).data(), rows, n);
        if (ng(x.id))
            MapM(gbuf(x.id).data(), rows, k).noalias() += gy * CMapM(v(w.id).data(), k, n).transpose();
        if (ng(w.id))
            MapM(gbuf(w.id).data(), k, n).noalias() += CMapM(v(x.id).data(), rows, k).transpose() * gy;
    };
    return o;
}

Var Graph::bmm(Var a, Var b, bool ta, bool tb) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.ndim() != 3 || B.ndim() != 3 || A.dim(0) != B.dim(0)) throw ShapeError("bmm expects (B,M,K)x(B,K,N)");
    const long nb = A.dim(0);
    const long m = ta ? A.dim(2) : A.dim(1);
    const long ka = ta ? A.dim(1) : A.dim(2);
    const long kb = tb ? B.dim(2) : B.dim(1);
    const long n = tb ? B.dim(1) : B.dim(2);
    if (ka != kb) throw ShapeError("bmm inner extent mismatch");
    Tensor out({nb, m, n});
    const long sa = A.dim(1) * A.dim(2), sb = B.dim(1) * B.dim(2), so = m * n;
    for (long i = 0; i < nb; ++i) {
        const CMapM ma(A.data() + i * sa, A.dim(1), A.dim(2));
        const CMapM mb(B.data() + i * sb, B.dim(1), B.dim(2));
        MapM mo(out.data() + i * so, m, n);
        if (!ta && !tb) mo.noalias() = ma * mb;
        else if (ta && !tb) mo.noalias() = ma.transpose() * mb;
        else if (!ta && tb) mo.noalias() = ma * mb.transpose();
        else mo.noalias() = ma.transpose() * mb.transpose();
    }
    const bool needs = ng(a.id) || ng(b.id);
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, a, b, o, ta, tb, nb, m, n, sa, sb, so]() {
        const Tensor& A = v(a.id);
        const Tensor& B = v(b.id);
        const double* g = gbuf(o.id).data();
        for (long i = 0; i < nb; ++i) {
            const CMapM gy(g + i * so, m, n);
            const CMapM ma(A.data() + i * sa, A.dim(1), A.dim(2));
            const CMapM mb(B.data() + i * sb, B.dim(1), B.dim(2));
            if (ng(a.id)) {
                MapM ga(gbuf(a.id).data() + i * sa, A.dim(1), A.dim(2));
                // dA' = dC * B'^T, transposed back into storage layout if needed
                if (!ta && !tb) ga.noalias() += gy * mb.transpose();
                else if (!ta && tb) ga.noalias() += gy * mb;
                else if (ta && !tb) ga.noalias() += mb * gy.transpose();
                else ga.noalias() += mb.transpose() * gy.transpose();
            }
            if (ng(b.id)) {
                MapM gb(gbuf(b.id).data() + i * sb, B.dim(1), B.dim(2));
                if (!ta && !tb) gb.noalias() += ma.transpose() * gy;
                else if (ta && !tb) gb.noalias() += ma * gy;
                else if (!ta && tb) gb.noalias() += gy.transpose() * ma;
                else gb.noalias() += gy.transpose() * ma.transpose();
            }
        }
    };
    return o;
}

namespace {

void im2col(const double* x, long c, long h, long w, long kh, long kw, long stride, long pad,
            long ho, long wo, double* col) {
    // col: (c*kh*kw) x (ho*wo)
    const long p = ho * wo;
    for (long ch = 0; ch < c; ++ch) {
        for (long ki = 0; ki < kh; ++ki) {
            for (long kj = 0; kj < kw; ++kj) {
                double* row = col + ((ch * kh + ki) * kw + kj) * p;
                for (long oh = 0; oh < ho; ++oh) {
                    const long ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) {
                        std::fill(row + oh * wo, row + (oh + 1) * wo, 0.0);
                        continue;
                    }
                    const double* xr = x + (ch * h + ih) * w;
                    for (long ow = 0; ow < wo; ++ow) {
                        const long iw = ow * stride - pad + kj;
                        row[oh * wo + ow] = (iw < 0 || iw >= w) ? 0.0 : xr[iw];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, long c, long h, long w, long kh, long kw, long stride, long pad,
                long ho, long wo, double* x) {
    const long p = ho * wo;
    for (long ch = 0; ch < c; ++ch) {
        for (long ki = 0; ki < kh; ++ki) {
            for (long kj = 0; kj < kw; ++kj) {
                const double* row = col + ((ch * kh + ki) * kw + kj) * p;
                for (long oh = 0; oh < ho; ++oh) {
                    const long ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    double* xr = x + (ch * h + ih) * w;
                    for (long ow = 0; ow < wo; ++ow) {
                        const long iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < w) xr[iw] += row[oh * wo + ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Var Graph::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& tx = v(x.id);
    const Tensor& tw = v(w.id);
    const Tensor& tb = v(b.id);
    check_4d(tx, "conv input");
    if (tw.ndim() != 4) throw ShapeError("conv weight must be 4-d (O,C,kh,kw)");
    const long n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), wd = tx.dim(3);
    const long oc = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
    if (tw.dim(1) != c) throw ShapeError("conv channel mismatch");
    if (tb.numel() != oc) throw ShapeError("conv bias extent mismatch");
    const long ho = (h + 2 * pad - kh) / stride + 1;
    const long wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv output would be empty");
    const long p = ho * wo, ckk = c * kh * kw;
    Tensor out({n, oc, ho, wo});

    const bool one_by_one = kh == 1 && kw == 1 && stride == 1 && pad == 0;
    std::shared_ptr<std::vector<double>> cols;
    if (!one_by_one) cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * ckk * p));
    for (long i = 0; i < n; ++i) {
        const double* xi = tx.data() + i * c * h * wd;
        MapM mo(out.data() + i * oc * p, oc, p);
        if (one_by_one) {
            mo.noalias() = CMapM(tw.data(), oc, c) * CMapM(xi, c, p);
        } else {
            double* ci = cols->data() + i * ckk * p;
            im2col(xi, c, h, wd, kh, kw, stride, pad, ho, wo, ci);
            mo.noalias() = CMapM(tw.data(), oc, ckk) * CMapM(ci, ckk, p);
        }
        for (long ochan = 0; ochan < oc; ++ochan) mo.row(ochan).array() += tb.data()[ochan];
    }
    const bool needs = ng(x.id) || ng(w.id) || ng(b.id);
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, w, b, o, stride, pad, n, c, h, wd, oc, kh, kw, ho, wo, p, ckk,
                                                   one_by_one, cols]() {
        const Tensor& tx = v(x.id);
        const Tensor& tw = v(w.id);
        const double* g = gbuf(o.id).data();
        for (long i = 0; i < n; ++i) {
            const CMapM gy(g + i * oc * p, oc, p);
            if (ng(b.id)) {
                double* gb = gbuf(b.id).data();
                for (long ochan = 0; ochan < oc; ++ochan) gb[ochan] += gy.row(ochan).sum();
            }
            if (one_by_one) {
                const CMapM xi(tx.data() + i * c * h * wd, c, p);
                if (ng(w.id)) MapM(gbuf(w.id).data(), oc, c).noalias() += gy * xi.transpose();
                if (ng(x.id))
                    MapM(gbuf(x.id).data() + i * c * h * wd, c, p).noalias() +=
                        CMapM(tw.data(), oc, c).transpose() * gy;
            } else {
                const CMapM ci(cols->data() + i * ckk * p, ckk, p);
                if (ng(w.id)) MapM(gbuf(w.id).data(), oc, ckk).noalias() += gy * ci.transpose();
                if (ng(x.id)) {
                    MatRM gcol = CMapM(tw.data(), oc, ckk).transpose() * gy;
                    col2im_add(gcol.data(), c, h, wd, kh, kw, stride, pad, ho, wo,
                               gbuf(x.id).data() + i * c * h * wd);
                }
            }
        }
    };
    return o;
}

Var Graph::spmm(std::shared_ptr<SparseMatrix> a, Var x) {
    const Tensor& tx = v(x.id);
    if (tx.ndim() != 3) throw ShapeError("spmm input must be (B, nodes, C)");
    if (tx.dim(1) != a->cols) throw ShapeError("spmm node count mismatch");
    if (!a->symmetric) throw InvalidArgument("spmm requires a symmetric matrix");
    const long nb = tx.dim(0), nn = tx.dim(1), c = tx.dim(2);
    Tensor out({nb, a->rows, c});
    for (long i = 0; i < nb; ++i) {
        const double* xi = tx.data() + i * nn * c;
        double* yi = out.data() + i * a->rows * c;
        for (long r = 0; r < a->rows; ++r) {
            MapA yr(yi + r * c, c);
            for (long k = a->rowptr[static_cast<std::size_t>(r)]; k < a->rowptr[static_cast<std::size_t>(r) + 1]; ++k)
                yr += a->vals[static_cast<std::size_t>(k)] * CMapA(xi + a->colidx[static_cast<std::size_t>(k)] * c, c);
        }
    }
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, a, x, o, nb, nn, c]() {
        // symmetric: dX = A^T dY = A dY
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        for (long i = 0; i < nb; ++i) {
            const double* gi = g + i * a->rows * c;
            double* gxi = gx + i * nn * c;
            for (long r = 0; r < a->rows; ++r) {
                const CMapA gr(gi + r * c, c);
                for (long k = a->rowptr[static_cast<std::size_t>(r)]; k < a->rowptr[static_cast<std::size_t>(r) + 1]; ++k)
                    MapA(gxi + a->colidx[static_cast<std::size_t>(k)] * c, c) += a->vals[static_cast<std::size_t>(k)] * gr;
            }
        }
    };
    return o;
}

// ---- normalization ----

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& tx = v(x.id);
    const long c = tx.shape().back();
    const long rows = tx.numel() / c;
    if (v(gamma.id).numel() != c || v(beta.id).numel() != c) throw ShapeError("layer norm affine extent mismatch");
    Tensor out(tx.shape());
    Tensor xhat(tx.shape());
    Tensor rstd({rows});
    const double* px = tx.data();
    const double* pg = v(gamma.id).data();
    const double* pb = v(beta.id).data();
    for (long r = 0; r < rows; ++r) {
        const CMapA xr(px + r * c, c);
        const double mu = xr.mean();
        const double var = (xr - mu).square().mean();
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        MapA hr(xhat.data() + r * c, c);
        hr = (xr - mu) * rs;
        MapA(out.data() + r * c, c) = hr * CMapA(pg, c) + CMapA(pb, c);
    }
    const bool needs = ng(x.id) || ng(gamma.id) || ng(beta.id);
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, gamma, beta, o, rows, c, xhat, rstd]() {
        const double* g = gbuf(o.id).data();
        const double* ph = xhat.data();
        const double* pg = v(gamma.id).data();
        for (long r = 0; r < rows; ++r) {
            const CMapA gr(g + r * c, c);
            const CMapA hr(ph + r * c, c);
            if (ng(gamma.id)) MapA(gbuf(gamma.id).data(), c) += gr * hr;
            if (ng(beta.id)) MapA(gbuf(beta.id).data(), c) += gr;
            if (ng(x.id)) {
                const Eigen::ArrayXd gyc = gr * CMapA(pg, c);
                const double m1 = gyc.mean();
                const double m2 = (gyc * hr).mean();
                MapA(gbuf(x.id).data() + r * c, c) += rstd[r] * (gyc - m1 - hr * m2);
            }
        }
    };
    return o;
}

Var Graph::batch_norm2d(Var x, Var gamma, Var beta, Parameter& run_mean, Parameter& run_var,
                        bool training, double momentum, double eps) {
    const Tensor& tx = v(x.id);
    check_4d(tx, "batch norm input");
    const long n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
    const long m = n * h * w;
    const long plane = h * w;
    Tensor out(tx.shape());
    Tensor xhat(tx.shape());
    Tensor rstd({c});
    const double* px = tx.data();
    const double* pg = v(gamma.id).data();
    const double* pb = v(beta.id).data();
    for (long ch = 0; ch < c; ++ch) {
        double mu, var;
        if (training) {
            double s = 0.0, s2 = 0.0;
            for (long i = 0; i < n; ++i) {
                const CMapA xr(px + (i * c + ch) * plane, plane);
                s += xr.sum();
                s2 += xr.square().sum();
            }
            mu = s / static_cast<double>(m);
            var = s2 / static_cast<double>(m) - mu * mu;
            var = std::max(var, 0.0);
            const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            run_mean.value[ch] = snap_f32((1.0 - momentum) * run_mean.value[ch] + momentum * mu);
            run_var.value[ch] = snap_f32((1.0 - momentum) * run_var.value[ch] + momentum * unbiased);
        } else {
            mu = run_mean.value[ch];
            var = run_var.value[ch];
        }
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[ch] = rs;
        for (long i = 0; i < n; ++i) {
            const CMapA xr(px + (i * c + ch) * plane, plane);
            MapA hr(xhat.data() + (i * c + ch) * plane, plane);
            hr = (xr - mu) * rs;
            MapA(out.data() + (i * c + ch) * plane, plane) = hr * pg[ch] + pb[ch];
        }
    }
    const bool needs = ng(x.id) || ng(gamma.id) || ng(beta.id);
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, gamma, beta, o, n, c, plane, m, xhat, rstd, training]() {
        const double* g = gbuf(o.id).data();
        const double* ph = xhat.data();
        const double* pg = v(gamma.id).data();
        for (long ch = 0; ch < c; ++ch) {
            double sg = 0.0, sgh = 0.0;
            for (long i = 0; i < n; ++i) {
                const CMapA gr(g + (i * c + ch) * plane, plane);
                const CMapA hr(ph + (i * c + ch) * plane, plane);
                sg += gr.sum();
                sgh += (gr * hr).sum();
            }
            if (ng(gamma.id)) gbuf(gamma.id)[ch] += sgh;
            if (ng(beta.id)) gbuf(beta.id)[ch] += sg;
            if (ng(x.id)) {
                const double k = pg[ch] * rstd[ch];
                for (long i = 0; i < n; ++i) {
                    const CMapA gr(g + (i * c + ch) * plane, plane);
                    const CMapA hr(ph + (i * c + ch) * plane, plane);
                    MapA gx(gbuf(x.id).data() + (i * c + ch) * plane, plane);
                    if (training)
                        gx += k * (gr - sg / static_cast<double>(m) - hr * (sgh / static_cast<double>(m)));
                    else
                        gx += k * gr;
                }
            }
        }
    };
    return o;
}

// ---- resampling ----

Var Graph::avg_pool2x2(Var x) {
    const Tensor& tx = v(x.id);
    check_4d(tx, "pool input");
    const long n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg pool needs even extents");
    const long ho = h / 2, wo = w / 2;
    Tensor out({n, c, ho, wo});
    const double* px = tx.data();
    double* po = out.data();
    for (long i = 0; i < n * c; ++i) {
        const double* plane = px + i * h * w;
        double* oplane = po + i * ho * wo;
        for (long oh = 0; oh < ho; ++oh)
            for (long ow = 0; ow < wo; ++ow) {
                const double* p0 = plane + 2 * oh * w + 2 * ow;
                oplane[oh * wo + ow] = 0.25 * (p0[0] + p0[1] + p0[w] + p0[w + 1]);
            }
    }
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o, n, c, h, w, ho, wo]() {
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        for (long i = 0; i < n * c; ++i) {
            const double* gplane = g + i * ho * wo;
            double* xplane = gx + i * h * w;
            for (long oh = 0; oh < ho; ++oh)
                for (long ow = 0; ow < wo; ++ow) {
                    const double q = 0.25 * gplane[oh * wo + ow];
                    double* p0 = xplane + 2 * oh * w + 2 * ow;
                    p0[0] += q;
                    p0[1] += q;
                    p0[w] += q;
                    p0[w + 1] += q;
                }
        }
    };
    return o;
}

namespace {

struct LerpIdx {
    std::vector<long> i0, i1;
    std::vector<double> t;
};

LerpIdx bilinear_axis(long in, long factor) {
    const long out = in * factor;
    LerpIdx li;
    li.i0.resize(static_cast<std::size_t>(out));
    li.i1.resize(static_cast<std::size_t>(out));
    li.t.resize(static_cast<std::size_t>(out));
    for (long o = 0; o < out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        double f = std::floor(src);
        double t = src - f;
        long i0 = static_cast<long>(f);
        long i1 = i0 + 1;
        if (i0 < 0) { i0 = 0; i1 = 0; t = 0.0; }
        if (i1 > in - 1) { i1 = in - 1; if (i0 > in - 1) { i0 = in - 1; t = 0.0; } }
        li.i0[static_cast<std::size_t>(o)] = i0;
        li.i1[static_cast<std::size_t>(o)] = i1;
        li.t[static_cast<std::size_t>(o)] = t;
    }
    return li;
}

}  // namespace

Var Graph::upsample_bilinear(Var x, int factor) {
    const Tensor& tx = v(x.id);
    check_4d(tx, "upsample input");
    const long n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
    const long ho = h * factor, wo = w * factor;
    auto ly = std::make_shared<LerpIdx>(bilinear_axis(h, factor));
    auto lx = std::make_shared<LerpIdx>(bilinear_axis(w, factor));
    Tensor out({n, c, ho, wo});
    const double* px = tx.data();
    double* po = out.data();
    for (long i = 0; i < n * c; ++i) {
        const double* plane = px + i * h * w;
        double* oplane = po + i * ho * wo;
        for (long oh = 0; oh < ho; ++oh) {
            const long y0 = ly->i0[static_cast<std::size_t>(oh)], y1 = ly->i1[static_cast<std::size_t>(oh)];
            const double ty = ly->t[static_cast<std::size_t>(oh)];
            for (long ow = 0; ow < wo; ++ow) {
                const long x0 = lx->i0[static_cast<std::size_t>(ow)], x1 = lx->i1[static_cast<std::size_t>(ow)];
                const double tx2 = lx->t[static_cast<std::size_t>(ow)];
                const double v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
                const double v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
                oplane[oh * wo + ow] =
                    (1.0 - ty) * ((1.0 - tx2) * v00 + tx2 * v01) + ty * ((1.0 - tx2) * v10 + tx2 * v11);
            }
        }
    }
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o, n, c, h, w, ho, wo, ly, lx]() {
        const double* g = gbuf(o.id).data();
        double* gx = gbuf(x.id).data();
        for (long i = 0; i < n * c; ++i) {
            const double* gplane = g + i * ho * wo;
            double* xplane = gx + i * h * w;
            for (long oh = 0; oh < ho; ++oh) {
                const long y0 = ly->i0[static_cast<std::size_t>(oh)], y1 = ly->i1[static_cast<std::size_t>(oh)];
                const double ty = ly->t[static_cast<std::size_t>(oh)];
                for (long ow = 0; ow < wo; ++ow) {
                    const long x0 = lx->i0[static_cast<std::size_t>(ow)], x1 = lx->i1[static_cast<std::size_t>(ow)];
                    const double tx2 = lx->t[static_cast<std::size_t>(ow)];
                    const double gv = gplane[oh * wo + ow];
                    xplane[y0 * w + x0] += (1.0 - ty) * (1.0 - tx2) * gv;
                    xplane[y0 * w + x1] += (1.0 - ty) * tx2 * gv;
                    xplane[y1 * w + x0] += ty * (1.0 - tx2) * gv;
                    xplane[y1 * w + x1] += ty * tx2 * gv;
                }
            }
        }
    };
    return o;
}

Var Graph::channel_l2_distance(Var a, Var b) {
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    check_4d(ta, "distance input");
    if (!ta.same_shape(tb)) throw ShapeError("distance inputs must share a shape");
    const long n = ta.dim(0), c = ta.dim(1), plane = ta.dim(2) * ta.dim(3);
    Tensor out({n, 1, ta.dim(2), ta.dim(3)});
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (long i = 0; i < n; ++i) {
        for (long p = 0; p < plane; ++p) {
            double s = 0.0;
            for (long ch = 0; ch < c; ++ch) {
                const double d = pa[(i * c + ch) * plane + p] - pb[(i * c + ch) * plane + p];
                s += d * d;
            }
            po[i * plane + p] = std::sqrt(s);
        }
    }
    const bool needs = ng(a.id) || ng(b.id);
    Var o = make(std::move(out), needs, nullptr);
    if (!needs) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, a, b, o, n, c, plane]() {
        const double* g = gbuf(o.id).data();
        const double* pa = v(a.id).data();
        const double* pb = v(b.id).data();
        const double* pd = v(o.id).data();
        for (long i = 0; i < n; ++i) {
            for (long p = 0; p < plane; ++p) {
                const double d = std::max(pd[i * plane + p], 1e-12);
                const double gv = g[i * plane + p] / d;
                for (long ch = 0; ch < c; ++ch) {
                    const long off = (i * c + ch) * plane + p;
                    const double diff = pa[off] - pb[off];
                    if (ng(a.id)) gbuf(a.id)[off] += gv * diff;
                    if (ng(b.id)) gbuf(b.id)[off] -= gv * diff;
                }
            }
        }
    };
    return o;
}

// ---- reductions / loss ----

Var Graph::sum_all(Var x) {
    const Tensor& tx = v(x.id);
    Tensor out = Tensor::scalar(CMapA(tx.data(), tx.numel()).sum());
    Var o = make(std::move(out), ng(x.id), nullptr);
    if (!ng(x.id)) return o;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, x, o]() {
        const double g = gbuf(o.id)[0];
        MapA(gbuf(x.id).data(), v(x.id).numel()) += g;
    };
    return o;
}

Var Graph::mean_all(Var x) {
    const long n = v(x.id).numel();
    return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

Var Graph::cross_entropy(Var logits, const IntTensor& labels, const std::vector<double>& class_weights) {
    const Tensor& tl = v(logits.id);
    check_4d(tl, "loss logits");
    const long n = tl.dim(0), c = tl.dim(1), h = tl.dim(2), w = tl.dim(3);
    if (labels.shape != Shape{n, h, w}) throw ShapeError("label map shape mismatch");
    std::vector<double> wts = class_weights;
    if (wts.empty()) wts.assign(static_cast<std::size_t>(c), 1.0);
    if (static_cast<long>(wts.size()) != c) throw InvalidArgument("class weight count mismatch");
    const long plane = h * w;
    const double inv = 1.0 / static_cast<double>(n * plane);
    Tensor probs({n, c, h, w});
    const double* pl = tl.data();
    double* pp = probs.data();
    double loss = 0.0;
    for (long i = 0; i < n; ++i) {
        for (long p = 0; p < plane; ++p) {
            const std::int32_t y = labels[i * plane + p];
            if (y < 0 || y >= c) throw InvalidLabel("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
            double m = pl[(i * c) * plane + p];
            for (long ch = 1; ch < c; ++ch) m = std::max(m, pl[(i * c + ch) * plane + p]);
            double se = 0.0;
            for (long ch = 0; ch < c; ++ch) se += std::exp(pl[(i * c + ch) * plane + p] - m);
            const double lse = m + std::log(se);
            for (long ch = 0; ch < c; ++ch)
                pp[(i * c + ch) * plane + p] = std::exp(pl[(i * c + ch) * plane + p] - lse);
            loss += wts[static_cast<std::size_t>(y)] * (lse - pl[(i * c + y) * plane + p]);
        }
    }
    Tensor out = Tensor::scalar(loss * inv);
    Var o = make(std::move(out), ng(logits.id), nullptr);
    if (!ng(logits.id)) return o;
    IntTensor lab = labels;
    nodes_[static_cast<std::size_t>(o.id)].back = [this, logits, o, lab, wts, n, c, plane, inv, probs]() {
        const double g = gbuf(o.id)[0] * inv;
        double* gl = gbuf(logits.id).data();
        const double* pp = probs.data();
        for (long i = 0; i < n; ++i) {
            for (long p = 0; p < plane; ++p) {
                const std::int32_t y = lab[i * plane + p];
                const double wy = wts[static_cast<std::size_t>(y)] * g;
                for (long ch = 0; ch < c; ++ch) {
                    const long off = (i * c + ch) * plane + p;
                    gl[off] += wy * (pp[off] - (ch == y ? 1.0 : 0.0));
                }
            }
        }
    };
    return o;
}

void Graph::backward(Var root) {
    if (!root.valid()) throw InvalidArgument("backward on invalid node");
    Node& r = nodes_[static_cast<std::size_t>(root.id)];
    if (r.value.numel() != 1) throw InvalidArgument("backward root must be scalar");
    gbuf(root.id)[0] = 1.0;
    for (long i = static_cast<long>(nodes_.size()) - 1; i >= 0; --i) {
        Node& nd = nodes_[static_cast<std::size_t>(i)];
        if (!nd.needs_grad || !nd.grad.defined()) continue;
        if (nd.leaf != nullptr) {
            double* g = nd.leaf->grad.data();
            const double* src = nd.grad.data();
            for (long k = 0; k < nd.grad.numel(); ++k) g[k] += src[k];
        } else if (nd.back) {
            nd.back();
        }
    }
}

Tensor Graph::grad_of(Var vv) {
    Node& n = nodes_[static_cast<std::size_t>(vv.id)];
    if (!n.grad.defined()) return Tensor::zeros(n.value.shape());
    return n.grad;
}

std::shared_ptr<SparseMatrix> grid_adjacency(long h, long w, int connectivity) {
    if (h <= 0 || w <= 0) throw InvalidArgument("grid adjacency needs positive extents");
    if (connectivity != 4 && connectivity != 8) throw InvalidArgument("connectivity must be 4 or 8");
    const long n = h * w;
    std::vector<std::vector<long>> nb(static_cast<std::size_t>(n));
    const int d4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    const int d8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
    const auto* dirs = connectivity == 4 ? d4 : d8;
    const int nd = connectivity;
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            auto& row = nb[static_cast<std::size_t>(y * w + x)];
            row.push_back(y * w + x);  // self loop
            for (int k = 0; k < nd; ++k) {
                const long yy = y + dirs[k][0], xx = x + dirs[k][1];
                if (yy >= 0 && yy < h && xx >= 0 && xx < w) row.push_back(yy * w + xx);
            }
            std::sort(row.begin(), row.end());
        }
    }
    std::vector<double> dinv(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) dinv[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(static_cast<double>(nb[static_cast<std::size_t>(i)].size()));
    auto sm = std::make_shared<SparseMatrix>();
    sm->rows = sm->cols = n;
    sm->symmetric = true;
    sm->rowptr.reserve(static_cast<std::size_t>(n) + 1);
    sm->rowptr.push_back(0);
    for (long i = 0; i < n; ++i) {
        for (const long j : nb[static_cast<std::size_t>(i)]) {
            sm->colidx.push_back(j);
            sm->vals.push_back(dinv[static_cast<std::size_t>(i)] * dinv[static_cast<std::size_t>(j)]);
        }
        sm->rowptr.push_back(static_cast<long>(sm->colidx.size()));
    }
    return sm;
}

}  // namespace mmcd
