#pragma once

// Transformer building blocks with explicit forward caches and backward
// passes. Gradients accumulate into a parameter struct of the same type.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace sgnalign {

template <typename Real>
void init_uniform(Matrix<Real>& m, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : m.data) v = static_cast<Real>(dist(rng));
}

// ------------------------------------------------------------------ Linear

template <typename Real>
struct Linear {
    Matrix<Real> weight;  // in x out
    Matrix<Real> bias;    // 1 x out

    Linear() = default;
    Linear(std::size_t in, std::size_t out) : weight(in, out), bias(1, out) {}

    void init(std::mt19937_64& rng) {
        init_uniform(weight, weight.rows, rng);
        init_uniform(bias, weight.rows, rng);
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".weight", weight);
        fn(prefix + ".bias", bias);
    }

    void forward(const Matrix<Real>& x, Matrix<Real>& y) const {
        matmul(x, weight, y);
        for (std::size_t i = 0; i < y.rows; ++i) {
            Real* yi = y.row(i);
            for (std::size_t j = 0; j < y.cols; ++j) yi[j] += bias.data[j];
        }
    }

    // Accumulates parameter gradients into `grad`; writes dx when requested.
    void backward(Linear& grad, const Matrix<Real>& x, const Matrix<Real>& dy, Matrix<Real>* dx) const {
        matmul_tn_acc(x, dy, grad.weight);
        for (std::size_t i = 0; i < dy.rows; ++i) {
            const Real* di = dy.row(i);
            for (std::size_t j = 0; j < dy.cols; ++j) grad.bias.data[j] += di[j];
        }
        if (dx) matmul_nt(dy, weight, *dx);
    }
};

// --------------------------------------------------------------- LayerNorm

template <typename Real>
struct LayerNorm {
    Matrix<Real> gamma;
    Matrix<Real> beta;
    static constexpr double kEps = 1e-5;

    struct Cache {
        Matrix<Real> xhat;
        std::vector<Real> inv_std;
    };

    LayerNorm() = default;
    explicit LayerNorm(std::size_t d) : gamma(1, d), beta(1, d) {
        std::fill(gamma.data.begin(), gamma.data.end(), Real(1));
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".gamma", gamma);
        fn(prefix + ".beta", beta);
    }

    void forward(const Matrix<Real>& x, Matrix<Real>& y, Cache& cache) const {
        const std::size_t d = x.cols;
        y.resize(x.rows, d);
        cache.xhat.resize(x.rows, d);
        cache.inv_std.assign(x.rows, Real(0));
        for (std::size_t i = 0; i < x.rows; ++i) {
            const Real* xi = x.row(i);
            Real mean = 0;
            for (std::size_t j = 0; j < d; ++j) mean += xi[j];
            mean /= static_cast<Real>(d);
            Real var = 0;
            for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
            var /= static_cast<Real>(d);
            const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(kEps));
            cache.inv_std[i] = inv;
            Real* hi = cache.xhat.row(i);
            Real* yi = y.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                hi[j] = (xi[j] - mean) * inv;
                yi[j] = gamma.data[j] * hi[j] + beta.data[j];
            }
        }
    }

    void backward(LayerNorm& grad, const Cache& cache, const Matrix<Real>& dy, Matrix<Real>& dx) const {
        const std::size_t d = dy.cols;
        dx.resize(dy.rows, d);
        std::vector<Real> dxhat(d);
        for (std::size_t i = 0; i < dy.rows; ++i) {
            const Real* di = dy.row(i);
            const Real* hi = cache.xhat.row(i);
            Real sum = 0, sum_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
                grad.gamma.data[j] += di[j] * hi[j];
                grad.beta.data[j] += di[j];
                dxhat[j] = di[j] * gamma.data[j];
                sum += dxhat[j];
                sum_h += dxhat[j] * hi[j];
            }
            const Real scale = cache.inv_std[i] / static_cast<Real>(d);
            Real* xi = dx.row(i);
            for (std::size_t j = 0; j < d; ++j)
                xi[j] = scale * (static_cast<Real>(d) * dxhat[j] - sum - hi[j] * sum_h);
        }
    }
};

// ------------------------------------------------------ Multi-head attention

template <typename Real>
struct MultiHeadAttention {
    Linear<Real> q, k, v, o;
    std::size_t heads = 1;

    struct Cache {
        Matrix<Real> q_in, kv_in;
        Matrix<Real> Q, K, V, O;
        std::vector<Matrix<Real>> attn;  // per head, Tq x Tk
    };

    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t d, std::size_t h) : q(d, d), k(d, d), v(d, d), o(d, d), heads(h) {}

    void init(std::mt19937_64& rng) {
        q.init(rng);
        k.init(rng);
        v.init(rng);
        o.init(rng);
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        q.visit(prefix + ".q", fn);
        k.visit(prefix + ".k", fn);
        v.visit(prefix + ".v", fn);
        o.visit(prefix + ".o", fn);
    }

    void forward(const Matrix<Real>& q_in, const Matrix<Real>& kv_in, Matrix<Real>& out, Cache& c) const {
        c.q_in = q_in;
        c.kv_in = kv_in;
        q.forward(q_in, c.Q);
        k.forward(kv_in, c.K);
        v.forward(kv_in, c.V);
        const std::size_t tq = q_in.rows, tk = kv_in.rows, d = c.Q.cols, dh = d / heads;
        const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
        c.O.resize(tq, d);
        c.attn.assign(heads, Matrix<Real>(tq, tk));
        std::vector<Real> kt(dh * tk), vt(dh * tk);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            // Head slices of K and V, transposed so inner loops run over keys.
            for (std::size_t j = 0; j < tk; ++j)
                for (std::size_t x = 0; x < dh; ++x) {
                    kt[x * tk + j] = c.K(j, off + x);
                    vt[x * tk + j] = c.V(j, off + x);
                }
            Matrix<Real>& A = c.attn[h];
            for (std::size_t i = 0; i < tq; ++i) {
                const Real* qi = c.Q.row(i) + off;
                Real* ai = A.row(i);
                for (std::size_t x = 0; x < dh; ++x) {
                    const Real qx = qi[x] * scale;
                    const Real* kx = kt.data() + x * tk;
                    for (std::size_t j = 0; j < tk; ++j) ai[j] += qx * kx[j];
                }
                Real mx = -INFINITY;
                for (std::size_t j = 0; j < tk; ++j) mx = std::max(mx, ai[j]);
                Real z = 0;
                for (std::size_t j = 0; j < tk; ++j) {
                    ai[j] = std::exp(ai[j] - mx);
                    z += ai[j];
                }
                const Real inv = Real(1) / z;
                for (std::size_t j = 0; j < tk; ++j) ai[j] *= inv;
                Real* oi = c.O.row(i) + off;
                for (std::size_t x = 0; x < dh; ++x) {
                    const Real* vx = vt.data() + x * tk;
                    Real acc = 0;
#pragma omp simd reduction(+ : acc)
                    for (std::size_t j = 0; j < tk; ++j) acc += ai[j] * vx[j];
                    oi[x] = acc;
                }
            }
        }
        o.forward(c.O, out);
    }

    // When q_in and kv_in are the same tensor the caller sums dq and dkv.
    void backward(MultiHeadAttention& grad, const Cache& c, const Matrix<Real>& dout, Matrix<Real>& dq_in,
                  Matrix<Real>& dkv_in) const {
        Matrix<Real> dO;
        o.backward(grad.o, c.O, dout, &dO);
        const std::size_t tq = c.Q.rows, tk = c.K.rows, d = c.Q.cols, dh = d / heads;
        const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
        Matrix<Real> dQ(tq, d), dK(tk, d), dV(tk, d);
        std::vector<Real> dA(tk), kt(dh * tk), vt(dh * tk), dkt(dh * tk), dvt(dh * tk);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t j = 0; j < tk; ++j)
                for (std::size_t x = 0; x < dh; ++x) {
                    kt[x * tk + j] = c.K(j, off + x);
                    vt[x * tk + j] = c.V(j, off + x);
                }
            std::fill(dkt.begin(), dkt.end(), Real(0));
            std::fill(dvt.begin(), dvt.end(), Real(0));
            const Matrix<Real>& A = c.attn[h];
            for (std::size_t i = 0; i < tq; ++i) {
                const Real* doi = dO.row(i) + off;
                const Real* qi = c.Q.row(i) + off;
                const Real* ai = A.row(i);
                std::fill(dA.begin(), dA.end(), Real(0));
                for (std::size_t x = 0; x < dh; ++x) {
                    const Real dx = doi[x];
                    const Real* vx = vt.data() + x * tk;
                    Real* dvx = dvt.data() + x * tk;
                    for (std::size_t j = 0; j < tk; ++j) {
                        dA[j] += dx * vx[j];
                        dvx[j] += ai[j] * dx;
                    }
                }
                Real dot = 0;
#pragma omp simd reduction(+ : dot)
                for (std::size_t j = 0; j < tk; ++j) dot += ai[j] * dA[j];
                // dA becomes the score gradient.
                for (std::size_t j = 0; j < tk; ++j) dA[j] = ai[j] * (dA[j] - dot) * scale;
                Real* dqi = dQ.row(i) + off;
                for (std::size_t x = 0; x < dh; ++x) {
                    const Real* kx = kt.data() + x * tk;
                    Real* dkx = dkt.data() + x * tk;
                    const Real qx = qi[x];
                    Real acc = 0;
#pragma omp simd reduction(+ : acc)
                    for (std::size_t j = 0; j < tk; ++j) {
                        acc += dA[j] * kx[j];
                        dkx[j] += dA[j] * qx;
                    }
                    dqi[x] = acc;
                }
            }
            for (std::size_t j = 0; j < tk; ++j)
                for (std::size_t x = 0; x < dh; ++x) {
                    dK(j, off + x) = dkt[x * tk + j];
                    dV(j, off + x) = dvt[x * tk + j];
                }
        }
        q.backward(grad.q, c.q_in, dQ, &dq_in);
        Matrix<Real> dk_in, dv_in;
        k.backward(grad.k, c.kv_in, dK, &dk_in);
        v.backward(grad.v, c.kv_in, dV, &dv_in);
        add_inplace(dk_in, dv_in);
        dkv_in = std::move(dk_in);
    }
};

// ---------------------------------------------------------- Feed-forward

template <typename Real>
struct FeedForward {
    Linear<Real> in, out;

    struct Cache {
        Matrix<Real> x, hidden;
    };

    FeedForward() = default;
    FeedForward(std::size_t d, std::size_t d_ff) : in(d, d_ff), out(d_ff, d) {}

    void init(std::mt19937_64& rng) {
        in.init(rng);
        out.init(rng);
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        in.visit(prefix + ".in", fn);
        out.visit(prefix + ".out", fn);
    }

    void forward(const Matrix<Real>& x, Matrix<Real>& y, Cache& c) const {
        c.x = x;
        in.forward(x, c.hidden);
        for (auto& h : c.hidden.data) h = h > Real(0) ? h : Real(0);
        out.forward(c.hidden, y);
    }

    void backward(FeedForward& grad, const Cache& c, const Matrix<Real>& dy, Matrix<Real>& dx) const {
        Matrix<Real> dh;
        out.backward(grad.out, c.hidden, dy, &dh);
        for (std::size_t i = 0; i < dh.data.size(); ++i)
            if (c.hidden.data[i] <= Real(0)) dh.data[i] = 0;
        in.backward(grad.in, c.x, dh, &dx);
    }
};

// ------------------------------------------------------- Encoder / decoder

template <typename Real>
struct EncoderLayer {
    MultiHeadAttention<Real> self_attn;
    LayerNorm<Real> norm1, norm2;
    FeedForward<Real> ffn;

    struct Cache {
        typename MultiHeadAttention<Real>::Cache attn;
        typename LayerNorm<Real>::Cache n1, n2;
        typename FeedForward<Real>::Cache ff;
    };

    EncoderLayer() = default;
    EncoderLayer(std::size_t d, std::size_t d_ff, std::size_t heads)
        : self_attn(d, heads), norm1(d), norm2(d), ffn(d, d_ff) {}

    void init(std::mt19937_64& rng) {
        self_attn.init(rng);
        ffn.init(rng);
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        self_attn.visit(prefix + ".self_attn", fn);
        norm1.visit(prefix + ".norm1", fn);
        ffn.visit(prefix + ".ffn", fn);
        norm2.visit(prefix + ".norm2", fn);
    }

    void forward(const Matrix<Real>& x, Matrix<Real>& y, Cache& c) const {
        Matrix<Real> a, r1, y1, f;
        self_attn.forward(x, x, a, c.attn);
        r1 = x;
        add_inplace(r1, a);
        norm1.forward(r1, y1, c.n1);
        ffn.forward(y1, f, c.ff);
        add_inplace(f, y1);
        norm2.forward(f, y, c.n2);
    }

    void backward(EncoderLayer& grad, const Cache& c, const Matrix<Real>& dy, Matrix<Real>& dx) const {
        Matrix<Real> dr2, dy1, dr1, dq, dkv;
        norm2.backward(grad.norm2, c.n2, dy, dr2);
        ffn.backward(grad.ffn, c.ff, dr2, dy1);
        add_inplace(dy1, dr2);
        norm1.backward(grad.norm1, c.n1, dy1, dr1);
        self_attn.backward(grad.self_attn, c.attn, dr1, dq, dkv);
        dx = dr1;
        add_inplace(dx, dq);
        add_inplace(dx, dkv);
    }
};

template <typename Real>
struct DecoderLayer {
    MultiHeadAttention<Real> self_attn, cross_attn;
    LayerNorm<Real> norm1, norm2, norm3;
    FeedForward<Real> ffn;

    struct Cache {
        typename MultiHeadAttention<Real>::Cache self, cross;
        typename LayerNorm<Real>::Cache n1, n2, n3;
        typename FeedForward<Real>::Cache ff;
    };

    DecoderLayer() = default;
    DecoderLayer(std::size_t d, std::size_t d_ff, std::size_t heads)
        : self_attn(d, heads), cross_attn(d, heads), norm1(d), norm2(d), norm3(d), ffn(d, d_ff) {}

    void init(std::mt19937_64& rng) {
        self_attn.init(rng);
        cross_attn.init(rng);
        ffn.init(rng);
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        self_attn.visit(prefix + ".self_attn", fn);
        norm1.visit(prefix + ".norm1", fn);
        cross_attn.visit(prefix + ".cross_attn", fn);
        norm2.visit(prefix + ".norm2", fn);
        ffn.visit(prefix + ".ffn", fn);
        norm3.visit(prefix + ".norm3", fn);
    }

    void forward(const Matrix<Real>& x, const Matrix<Real>& memory, Matrix<Real>& y, Cache& c) const {
        Matrix<Real> a, y1, b, y2, f;
        self_attn.forward(x, x, a, c.self);
        add_inplace(a, x);
        norm1.forward(a, y1, c.n1);
        cross_attn.forward(y1, memory, b, c.cross);
        add_inplace(b, y1);
        norm2.forward(b, y2, c.n2);
        ffn.forward(y2, f, c.ff);
        add_inplace(f, y2);
        norm3.forward(f, y, c.n3);
    }

    // dmemory is accumulated (the same memory feeds every decoder layer).
    void backward(DecoderLayer& grad, const Cache& c, const Matrix<Real>& dy, Matrix<Real>& dx,
                  Matrix<Real>& dmemory) const {
        Matrix<Real> dr3, dy2, dr2, dy1, dmem, dr1, dq, dkv;
        norm3.backward(grad.norm3, c.n3, dy, dr3);
        ffn.backward(grad.ffn, c.ff, dr3, dy2);
        add_inplace(dy2, dr3);
        norm2.backward(grad.norm2, c.n2, dy2, dr2);
        cross_attn.backward(grad.cross_attn, c.cross, dr2, dy1, dmem);
        add_inplace(dy1, dr2);
        add_inplace(dmemory, dmem);
        norm1.backward(grad.norm1, c.n1, dy1, dr1);
        self_attn.backward(grad.self_attn, c.self, dr1, dq, dkv);
        dx = dr1;
        add_inplace(dx, dq);
        add_inplace(dx, dkv);
    }
};

} // namespace sgnalign
