#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tg/tensor.hpp"

namespace tg {

namespace detail {

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <class T>
void check_rank(const TensorT<T>& t, int rank, const char* op) {
    if (t.rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             t.shape_str());
}

// Dot product with 32 independent accumulator lanes: enough parallel FP
// chains to hide FMA latency, and a shape the compiler vectorizes. Summation
// order is fixed, results stay bit-stable across runs.
template <class T>
T dot_lanes(const T* a, const T* b, int n) {
    T lanes[32] = {};
    int k = 0;
    for (; k + 32 <= n; k += 32)
        for (int j = 0; j < 32; ++j) lanes[j] += a[k + j] * b[k + j];
    T tail{0};
    for (; k < n; ++k) tail += a[k] * b[k];
    T sum{0};
    for (int j = 0; j < 32; ++j) sum += lanes[j];
    return sum + tail;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    TensorT<T> out = make_result<T>(a.shape, {a, b}, [](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        const TensorT<T>& pb = o.node->parents[1];
        const size_t n = o.numel();
        if (pa.requires_grad)
            for (size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < n; ++i) (*pb.grad)[i] += (*o.grad)[i];
    });
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    TensorT<T> out = make_result<T>(a.shape, {a, b}, [](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        const TensorT<T>& pb = o.node->parents[1];
        const size_t n = o.numel();
        if (pa.requires_grad)
            for (size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < n; ++i) (*pb.grad)[i] -= (*o.grad)[i];
    });
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    TensorT<T> out = make_result<T>(a.shape, {a, b}, [](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        const TensorT<T>& pb = o.node->parents[1];
        const size_t n = o.numel();
        if (pa.requires_grad)
            for (size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i] * (*pb.data)[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < n; ++i) (*pb.grad)[i] += (*o.grad)[i] * (*pa.data)[i];
    });
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> out = make_result<T>(a.shape, {a}, [s](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        if (!pa.requires_grad) return;
        const size_t n = o.numel();
        for (size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i] * s;
    });
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * s;
    return out;
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out = make_result<T>(a.shape, {a}, [](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        if (!pa.requires_grad) return;
        const size_t n = o.numel();
        for (size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i];
    });
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + s;
    return out;
}

template <class T>
TensorT<T> silu(const TensorT<T>& x) {
    TensorT<T> out = make_result<T>(x.shape, {x}, [](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        if (!px.requires_grad) return;
        const size_t n = o.numel();
        for (size_t i = 0; i < n; ++i) {
            const T v = (*px.data)[i];
            const T s = T{1} / (T{1} + std::exp(-v));
            (*px.grad)[i] += (*o.grad)[i] * s * (T{1} + v * (T{1} - s));
        }
    });
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) {
        const T v = (*x.data)[i];
        (*out.data)[i] = v / (T{1} + std::exp(-v));
    }
    return out;
}

// ------------------------------------------------------------- linear algebra

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_rank(a, 2, "matmul");
    detail::check_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions disagree " + a.shape_str() + " x " + b.shape_str());
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    TensorT<T> out = make_result<T>({M, N}, {a, b}, [M, K, N](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        const TensorT<T>& pb = o.node->parents[1];
        const T* go = o.gptr();
        if (pa.requires_grad) {
            T* ga = pa.grad->data();
            const T* bd = pb.ptr();
            for (int m = 0; m < M; ++m)
                for (int k = 0; k < K; ++k)
                    ga[m * K + k] += detail::dot_lanes(go + m * N, bd + k * N, N);
        }
        if (pb.requires_grad) {
            T* gb = pb.grad->data();
            const T* ad = pa.ptr();
            for (int m = 0; m < M; ++m)
                for (int k = 0; k < K; ++k) {
                    const T v = ad[m * K + k];
                    for (int n = 0; n < N; ++n) gb[k * N + n] += v * go[m * N + n];
                }
        }
    });
    const T* ad = a.ptr();
    const T* bd = b.ptr();
    T* od = out.ptr();
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            const T v = ad[m * K + k];
            for (int n = 0; n < N; ++n) od[m * N + n] += v * bd[k * N + n];
        }
    return out;
}

// Batched matmul. transpose_b=false: (B,M,K)x(B,K,N); true: (B,M,K)x(B,N,K)^T.
template <class T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b, bool transpose_b = false) {
    detail::check_rank(a, 3, "bmm");
    detail::check_rank(b, 3, "bmm");
    const int B = a.dim(0), M = a.dim(1), K = a.dim(2);
    const int bK = transpose_b ? b.dim(2) : b.dim(1);
    const int N = transpose_b ? b.dim(1) : b.dim(2);
    if (b.dim(0) != B || bK != K)
        throw DimensionError("bmm: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
    TensorT<T> out = make_result<T>({B, M, N}, {a, b}, [B, M, K, N, transpose_b](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        const TensorT<T>& pb = o.node->parents[1];
        const T* go = o.gptr();
        for (int bi = 0; bi < B; ++bi) {
            const T* gob = go + static_cast<size_t>(bi) * M * N;
            const T* ad = pa.ptr() + static_cast<size_t>(bi) * M * K;
            const T* bd = pb.ptr() + static_cast<size_t>(bi) * (transpose_b ? N * K : K * N);
            if (pa.requires_grad) {
                T* ga = pa.grad->data() + static_cast<size_t>(bi) * M * K;
                for (int m = 0; m < M; ++m)
                    for (int k = 0; k < K; ++k) {
                        T acc{0};
                        if (transpose_b)
                            for (int n = 0; n < N; ++n) acc += gob[m * N + n] * bd[n * K + k];
                        else
                            acc = detail::dot_lanes(gob + m * N, bd + k * N, N);
                        ga[m * K + k] += acc;
                    }
            }
            if (pb.requires_grad) {
                T* gb = pb.grad->data() + static_cast<size_t>(bi) * (transpose_b ? N * K : K * N);
                for (int m = 0; m < M; ++m)
                    for (int k = 0; k < K; ++k) {
                        const T v = ad[m * K + k];
                        for (int n = 0; n < N; ++n) {
                            if (transpose_b)
                                gb[n * K + k] += v * gob[m * N + n];
                            else
                                gb[k * N + n] += v * gob[m * N + n];
                        }
                    }
            }
        }
    });
    const T* ad = a.ptr();
    const T* bd = b.ptr();
    T* od = out.ptr();
    for (int bi = 0; bi < B; ++bi) {
        const T* abase = ad + static_cast<size_t>(bi) * M * K;
        const T* bbase = bd + static_cast<size_t>(bi) * (transpose_b ? N * K : K * N);
        T* obase = od + static_cast<size_t>(bi) * M * N;
        if (transpose_b) {
            for (int m = 0; m < M; ++m)
                for (int n = 0; n < N; ++n)
                    obase[m * N + n] = detail::dot_lanes(abase + m * K, bbase + n * K, K);
        } else {
            for (int m = 0; m < M; ++m) {
                T* orow = obase + m * N;
                for (int n = 0; n < N; ++n) orow[n] = T{0};
                for (int k = 0; k < K; ++k) {
                    const T v = abase[m * K + k];
                    const T* brow = bbase + k * N;
                    for (int n = 0; n < N; ++n) orow[n] += v * brow[n];
                }
            }
        }
    }
    return out;
}

// x:(N,D) w:(D,O) b:(O)
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    detail::check_rank(x, 2, "linear");
    detail::check_rank(w, 2, "linear");
    if (x.dim(1) != w.dim(0) || b.numel() != static_cast<size_t>(w.dim(1)))
        throw DimensionError("linear: incompatible shapes " + x.shape_str() + " x " + w.shape_str() + " + " +
                             b.shape_str());
    const int N = x.dim(0), D = x.dim(1), O = w.dim(1);
    TensorT<T> out = make_result<T>({N, O}, {x, w, b}, [N, D, O](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        const TensorT<T>& pw = o.node->parents[1];
        const TensorT<T>& pb = o.node->parents[2];
        const T* go = o.gptr();
        if (px.requires_grad) {
            T* gx = px.grad->data();
            const T* wd = pw.ptr();
            for (int n = 0; n < N; ++n)
                for (int d = 0; d < D; ++d)
                    gx[n * D + d] += detail::dot_lanes(go + n * O, wd + d * O, O);
        }
        if (pw.requires_grad) {
            T* gw = pw.grad->data();
            const T* xd = px.ptr();
            for (int n = 0; n < N; ++n)
                for (int d = 0; d < D; ++d) {
                    const T v = xd[n * D + d];
                    for (int oi = 0; oi < O; ++oi) gw[d * O + oi] += v * go[n * O + oi];
                }
        }
        if (pb.requires_grad) {
            T* gb = pb.grad->data();
            for (int n = 0; n < N; ++n)
                for (int oi = 0; oi < O; ++oi) gb[oi] += go[n * O + oi];
        }
    });
    const T* xd = x.ptr();
    const T* wd = w.ptr();
    const T* bd = b.ptr();
    T* od = out.ptr();
    for (int n = 0; n < N; ++n) {
        for (int oi = 0; oi < O; ++oi) od[n * O + oi] = bd[oi];
        for (int d = 0; d < D; ++d) {
            const T v = xd[n * D + d];
            for (int oi = 0; oi < O; ++oi) od[n * O + oi] += v * wd[d * O + oi];
        }
    }
    return out;
}

// ------------------------------------------------------------------ conv2d

namespace detail {

// Patch matrix for one sample, laid out (P, K) with P = OH*OW output
// positions and K = Ci*kh*kw taps; out-of-bounds taps are zero. Row-major
// rows make the per-position kernel dot products contiguous.
template <class T>
void im2col(const T* xn, int Ci, int H, int W, int kh, int kw, int stride, int padding, int OH, int OW,
            T* col) {
    const int K = Ci * kh * kw;
    for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
            T* row = col + (static_cast<size_t>(oy) * OW + ox) * K;
            for (int ci = 0; ci < Ci; ++ci) {
                const T* xc = xn + static_cast<size_t>(ci) * H * W;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - padding;
                    T* dst = row + (ci * kh + ky) * kw;
                    if (iy < 0 || iy >= H) {
                        for (int kx = 0; kx < kw; ++kx) dst[kx] = T{0};
                        continue;
                    }
                    const int ix0 = ox * stride - padding;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ix0 + kx;
                        dst[kx] = (ix >= 0 && ix < W) ? xc[iy * W + ix] : T{0};
                    }
                }
            }
        }
}

}  // namespace detail

// Cross-correlation (no kernel flip). x:(N,Ci,H,W) w:(Co,Ci,kh,kw) b:(Co).
// Output spatial size: floor((in + 2*padding - k)/stride) + 1.
// im2col per sample, then contiguous dot products; reductions run in a fixed
// order so results are bit-stable.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride = 1,
                  int padding = 0) {
    detail::check_rank(x, 4, "conv2d");
    detail::check_rank(w, 4, "conv2d");
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Ci)
        throw DimensionError("conv2d: channel mismatch " + x.shape_str() + " vs kernel " + w.shape_str());
    if (b.numel() != static_cast<size_t>(Co))
        throw DimensionError("conv2d: bias shape " + b.shape_str() + " for " + std::to_string(Co) +
                             " output channels");
    if (stride < 1 || padding < 0 || H + 2 * padding < kh || W + 2 * padding < kw)
        throw DimensionError("conv2d: invalid geometry, input " + x.shape_str() + " kernel " + w.shape_str() +
                             " stride " + std::to_string(stride) + " padding " + std::to_string(padding));
    const int OH = (H + 2 * padding - kh) / stride + 1;
    const int OW = (W + 2 * padding - kw) / stride + 1;
    const int K = Ci * kh * kw;
    const int P = OH * OW;

    TensorT<T> out = make_result<T>(
        {N, Co, OH, OW}, {x, w, b},
        [N, Ci, H, W, Co, kh, kw, OH, OW, K, P, stride, padding](const TensorT<T>& o) {
            const TensorT<T>& px = o.node->parents[0];
            const TensorT<T>& pw = o.node->parents[1];
            const TensorT<T>& pb = o.node->parents[2];
            const T* go = o.gptr();
            const T* xd = px.ptr();
            const T* wd = pw.ptr();
            T* gx = px.requires_grad ? px.grad->data() : nullptr;
            T* gw = pw.requires_grad ? pw.grad->data() : nullptr;
            std::vector<T> col(static_cast<size_t>(P) * K);
            std::vector<T> gcol(static_cast<size_t>(K));
            for (int n = 0; n < N; ++n) {
                detail::im2col(xd + static_cast<size_t>(n) * Ci * H * W, Ci, H, W, kh, kw, stride, padding,
                               OH, OW, col.data());
                const T* gon = go + static_cast<size_t>(n) * Co * P;
                if (gw) {
                    for (int co = 0; co < Co; ++co) {
                        T* gwrow = gw + static_cast<size_t>(co) * K;
                        for (int p = 0; p < P; ++p) {
                            const T g = gon[co * P + p];
                            const T* crow = col.data() + static_cast<size_t>(p) * K;
                            for (int k = 0; k < K; ++k) gwrow[k] += g * crow[k];
                        }
                    }
                }
                if (gx) {
                    T* gxn = gx + static_cast<size_t>(n) * Ci * H * W;
                    for (int p = 0; p < P; ++p) {
                        for (int k = 0; k < K; ++k) gcol[static_cast<size_t>(k)] = T{0};
                        for (int co = 0; co < Co; ++co) {
                            const T g = gon[co * P + p];
                            const T* wrow = wd + static_cast<size_t>(co) * K;
                            for (int k = 0; k < K; ++k) gcol[static_cast<size_t>(k)] += g * wrow[k];
                        }
                        // col2im scatter for this output position
                        const int oy = p / OW, ox = p % OW;
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = oy * stride + ky - padding;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = ox * stride + kx - padding;
                                    if (ix < 0 || ix >= W) continue;
                                    gxn[(static_cast<size_t>(ci) * H + iy) * W + ix] +=
                                        gcol[static_cast<size_t>((ci * kh + ky) * kw + kx)];
                                }
                            }
                    }
                }
            }
            if (pb.requires_grad) {
                T* gb = pb.grad->data();
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Co; ++co) {
                        const T* gob = go + (static_cast<size_t>(n) * Co + co) * P;
                        T acc{0};
                        for (int p = 0; p < P; ++p) acc += gob[p];
                        gb[co] += acc;
                    }
            }
        });

    const T* xd = x.ptr();
    const T* wd = w.ptr();
    const T* bd = b.ptr();
    T* od = out.ptr();
    std::vector<T> col(static_cast<size_t>(P) * K);
    for (int n = 0; n < N; ++n) {
        detail::im2col(xd + static_cast<size_t>(n) * Ci * H * W, Ci, H, W, kh, kw, stride, padding, OH, OW,
                       col.data());
        T* on = od + static_cast<size_t>(n) * Co * P;
        for (int co = 0; co < Co; ++co) {
            const T* wrow = wd + static_cast<size_t>(co) * K;
            T* orow = on + static_cast<size_t>(co) * P;
            for (int p = 0; p < P; ++p)
                orow[p] = detail::dot_lanes(col.data() + static_cast<size_t>(p) * K, wrow, K) + bd[co];
        }
    }
    return out;
}

// ----------------------------------------------------------------- group norm

// x:(N,C,H,W), gamma/beta:(C). Normalizes over each (sample, group) slice.
template <class T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = static_cast<T>(1e-5)) {
    detail::check_rank(x, 4, "group_norm");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (groups < 1 || C % groups != 0)
        throw DimensionError("group_norm: " + std::to_string(C) + " channels not divisible by " +
                             std::to_string(groups) + " groups");
    if (gamma.numel() != static_cast<size_t>(C) || beta.numel() != static_cast<size_t>(C))
        throw DimensionError("group_norm: scale/shift must have shape [" + std::to_string(C) + "]");
    const int Cg = C / groups;
    const int HW = H * W;
    const size_t m = static_cast<size_t>(Cg) * HW;

    auto mean_var = std::make_shared<std::vector<T>>(static_cast<size_t>(N) * groups * 2);
    TensorT<T> out = make_result<T>(
        x.shape, {x, gamma, beta}, [N, C, HW, groups, Cg, m, eps, mean_var](const TensorT<T>& o) {
            const TensorT<T>& px = o.node->parents[0];
            const TensorT<T>& pg = o.node->parents[1];
            const TensorT<T>& pb = o.node->parents[2];
            const T* go = o.gptr();
            const T* xd = px.ptr();
            const T* gd = pg.ptr();
            for (int n = 0; n < N; ++n)
                for (int g = 0; g < groups; ++g) {
                    const T mu = (*mean_var)[(static_cast<size_t>(n) * groups + g) * 2];
                    const T var = (*mean_var)[(static_cast<size_t>(n) * groups + g) * 2 + 1];
                    const T inv = T{1} / std::sqrt(var + eps);
                    const size_t base = (static_cast<size_t>(n) * C + static_cast<size_t>(g) * Cg) * HW;
                    // d = go * gamma; need mean(d) and mean(d * xhat) over the slice
                    T sum_d{0}, sum_dx{0};
                    for (int c = 0; c < Cg; ++c) {
                        const T gam = gd[g * Cg + c];
                        const size_t cb = base + static_cast<size_t>(c) * HW;
                        for (int i = 0; i < HW; ++i) {
                            const T d = go[cb + i] * gam;
                            const T xh = (xd[cb + i] - mu) * inv;
                            sum_d += d;
                            sum_dx += d * xh;
                        }
                    }
                    const T mean_d = sum_d / static_cast<T>(m);
                    const T mean_dx = sum_dx / static_cast<T>(m);
                    if (px.requires_grad) {
                        T* gx = px.grad->data();
                        for (int c = 0; c < Cg; ++c) {
                            const T gam = gd[g * Cg + c];
                            const size_t cb = base + static_cast<size_t>(c) * HW;
                            for (int i = 0; i < HW; ++i) {
                                const T d = go[cb + i] * gam;
                                const T xh = (xd[cb + i] - mu) * inv;
                                gx[cb + i] += inv * (d - mean_d - xh * mean_dx);
                            }
                        }
                    }
                    if (pg.requires_grad || pb.requires_grad) {
                        for (int c = 0; c < Cg; ++c) {
                            const size_t cb = base + static_cast<size_t>(c) * HW;
                            T sg{0}, sb{0};
                            for (int i = 0; i < HW; ++i) {
                                const T xh = (xd[cb + i] - mu) * inv;
                                sg += go[cb + i] * xh;
                                sb += go[cb + i];
                            }
                            if (pg.requires_grad) (*pg.grad)[g * Cg + c] += sg;
                            if (pb.requires_grad) (*pb.grad)[g * Cg + c] += sb;
                        }
                    }
                }
        });

    const T* xd = x.ptr();
    const T* gd = gamma.ptr();
    const T* bd = beta.ptr();
    T* od = out.ptr();
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const size_t base = (static_cast<size_t>(n) * C + static_cast<size_t>(g) * Cg) * HW;
            T sum{0};
            for (size_t i = 0; i < m; ++i) sum += xd[base + i];
            const T mu = sum / static_cast<T>(m);
            T sq{0};
            for (size_t i = 0; i < m; ++i) {
                const T d = xd[base + i] - mu;
                sq += d * d;
            }
            const T var = sq / static_cast<T>(m);
            (*mean_var)[(static_cast<size_t>(n) * groups + g) * 2] = mu;
            (*mean_var)[(static_cast<size_t>(n) * groups + g) * 2 + 1] = var;
            const T inv = T{1} / std::sqrt(var + eps);
            for (int c = 0; c < Cg; ++c) {
                const T gam = gd[g * Cg + c];
                const T bet = bd[g * Cg + c];
                const size_t cb = base + static_cast<size_t>(c) * HW;
                for (int i = 0; i < HW; ++i) od[cb + i] = (xd[cb + i] - mu) * inv * gam + bet;
            }
        }
    return out;
}

// ----------------------------------------------------------------- embedding

// table:(V,D), idx: n indices -> out:(n,D). Gradient scatters into rows.
template <class T>
TensorT<T> embedding(const TensorT<T>& table, const std::vector<int>& idx) {
    detail::check_rank(table, 2, "embedding");
    const int V = table.dim(0), D = table.dim(1);
    for (int i : idx)
        if (i < 0 || i >= V)
            throw DimensionError("embedding: index " + std::to_string(i) + " out of range [0," +
                                 std::to_string(V) + ")");
    const int n = static_cast<int>(idx.size());
    auto saved_idx = std::make_shared<std::vector<int>>(idx);
    TensorT<T> out = make_result<T>({n, D}, {table}, [D, saved_idx](const TensorT<T>& o) {
        const TensorT<T>& pt = o.node->parents[0];
        if (!pt.requires_grad) return;
        T* gt = pt.grad->data();
        const T* go = o.gptr();
        for (size_t i = 0; i < saved_idx->size(); ++i) {
            const size_t row = static_cast<size_t>((*saved_idx)[i]) * D;
            for (int d = 0; d < D; ++d) gt[row + d] += go[i * D + d];
        }
    });
    const T* td = table.ptr();
    T* od = out.ptr();
    for (int i = 0; i < n; ++i) {
        const size_t row = static_cast<size_t>(idx[static_cast<size_t>(i)]) * D;
        for (int d = 0; d < D; ++d) od[static_cast<size_t>(i) * D + d] = td[row + d];
    }
    return out;
}

// ------------------------------------------------------------------- softmax

// Max-shifted stable softmax of x/temperature along `axis`.
template <class T>
TensorT<T> softmax(const TensorT<T>& x, int axis, T temperature = T{1}) {
    if (!(temperature > T{0})) throw ConfigError("softmax: temperature must be positive");
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank())
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + x.shape_str());
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(x.dim(i));
    const int L = x.dim(axis);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<size_t>(x.dim(i));

    TensorT<T> out = make_result<T>(x.shape, {x}, [outer, L, inner, temperature](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        if (!px.requires_grad) return;
        const T* p = o.ptr();  // softmax output
        const T* go = o.gptr();
        T* gx = px.grad->data();
        for (size_t ou = 0; ou < outer; ++ou)
            for (size_t in = 0; in < inner; ++in) {
                const size_t base = ou * L * inner + in;
                T dot{0};
                for (int l = 0; l < L; ++l) dot += go[base + l * inner] * p[base + l * inner];
                for (int l = 0; l < L; ++l) {
                    const size_t k = base + l * inner;
                    gx[k] += p[k] * (go[k] - dot) / temperature;
                }
            }
    });
    const T* xd = x.ptr();
    T* od = out.ptr();
    for (size_t ou = 0; ou < outer; ++ou)
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = ou * L * inner + in;
            T mx = xd[base];
            for (int l = 1; l < L; ++l) mx = std::max(mx, xd[base + l * inner]);
            T sum{0};
            for (int l = 0; l < L; ++l) {
                const T e = std::exp((xd[base + l * inner] - mx) / temperature);
                od[base + l * inner] = e;
                sum += e;
            }
            for (int l = 0; l < L; ++l) od[base + l * inner] /= sum;
        }
    return out;
}

// ------------------------------------------------------------------ attention

// softmax(q k^T / sqrt(d)) v. q:(B,S,D) k:(B,S2,D) v:(B,S2,Dv).
// Composed from recorded primitives, so the gradient is the chain rule.
template <class T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v) {
    detail::check_rank(q, 3, "attention");
    detail::check_rank(k, 3, "attention");
    detail::check_rank(v, 3, "attention");
    if (q.dim(0) != k.dim(0) || q.dim(0) != v.dim(0))
        throw DimensionError("attention: batch mismatch " + q.shape_str() + ", " + k.shape_str() + ", " +
                             v.shape_str());
    if (q.dim(2) != k.dim(2))
        throw DimensionError("attention: feature dims disagree " + q.shape_str() + " vs " + k.shape_str());
    if (k.dim(1) != v.dim(1))
        throw DimensionError("attention: key/value lengths disagree " + k.shape_str() + " vs " + v.shape_str());
    const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(q.dim(2)));
    TensorT<T> scores = scale(bmm(q, k, /*transpose_b=*/true), inv_sqrt_d);
    TensorT<T> weights = softmax(scores, 2);
    return bmm(weights, v);
}

// --------------------------------------------------------------- cross entropy

// Label-smoothed cross entropy with per-position weights.
// logits:(N,CB,h,w); targets,weights: N*h*w row-major (per sample, then rows).
// Loss = mean over all positions of w_pos * CE_pos, CE against the smoothed
// one-hot distribution.
template <class T>
TensorT<T> cross_entropy_smoothed(const TensorT<T>& logits, const std::vector<int>& targets, T smoothing,
                                  const std::vector<T>& weights) {
    detail::check_rank(logits, 4, "cross_entropy_smoothed");
    if (!(smoothing >= T{0} && smoothing < T{1}))
        throw ConfigError("cross_entropy_smoothed: smoothing must be in [0,1)");
    const int N = logits.dim(0), CB = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const size_t P = static_cast<size_t>(N) * h * w;
    if (targets.size() != P || weights.size() != P)
        throw DimensionError("cross_entropy_smoothed: need " + std::to_string(P) + " targets/weights, got " +
                             std::to_string(targets.size()) + "/" + std::to_string(weights.size()));
    for (int t : targets)
        if (t < 0 || t >= CB)
            throw DimensionError("cross_entropy_smoothed: target " + std::to_string(t) + " out of range [0," +
                                 std::to_string(CB) + ")");
    const int HW = h * w;
    auto tgt = std::make_shared<std::vector<int>>(targets);
    auto wts = std::make_shared<std::vector<T>>(weights);

    TensorT<T> out = make_result<T>({1}, {logits}, [N, CB, HW, smoothing, tgt, wts](const TensorT<T>& o) {
        const TensorT<T>& pl = o.node->parents[0];
        if (!pl.requires_grad) return;
        const T go = (*o.grad)[0];
        const T* zd = pl.ptr();
        T* gz = pl.grad->data();
        const T inv_count = T{1} / static_cast<T>(static_cast<size_t>(N) * HW);
        const T off = smoothing / static_cast<T>(CB);
        for (int n = 0; n < N; ++n)
            for (int p = 0; p < HW; ++p) {
                const size_t pos = static_cast<size_t>(n) * HW + p;
                const size_t base = (static_cast<size_t>(n) * CB) * HW + p;
                T mx = zd[base];
                for (int c = 1; c < CB; ++c) mx = std::max(mx, zd[base + static_cast<size_t>(c) * HW]);
                T sum{0};
                for (int c = 0; c < CB; ++c) sum += std::exp(zd[base + static_cast<size_t>(c) * HW] - mx);
                const T wgt = (*wts)[pos] * inv_count * go;
                const int t = (*tgt)[pos];
                for (int c = 0; c < CB; ++c) {
                    const T prob = std::exp(zd[base + static_cast<size_t>(c) * HW] - mx) / sum;
                    const T y = (c == t ? T{1} - smoothing + off : off);
                    gz[base + static_cast<size_t>(c) * HW] += wgt * (prob - y);
                }
            }
    });

    const T* zd = logits.ptr();
    const T off = smoothing / static_cast<T>(CB);
    T total{0};
    for (int n = 0; n < N; ++n)
        for (int p = 0; p < HW; ++p) {
            const size_t pos = static_cast<size_t>(n) * HW + p;
            const size_t base = (static_cast<size_t>(n) * CB) * HW + p;
            T mx = zd[base];
            for (int c = 1; c < CB; ++c) mx = std::max(mx, zd[base + static_cast<size_t>(c) * HW]);
            T sum{0};
            for (int c = 0; c < CB; ++c) sum += std::exp(zd[base + static_cast<size_t>(c) * HW] - mx);
            const T lse = mx + std::log(sum);
            const int t = targets[pos];
            T loss = -(T{1} - smoothing) * (zd[base + static_cast<size_t>(t) * HW] - lse);
            if (smoothing > T{0}) {
                T sum_logp{0};
                for (int c = 0; c < CB; ++c) sum_logp += zd[base + static_cast<size_t>(c) * HW] - lse;
                loss -= off * sum_logp;
            }
            total += weights[pos] * loss;
        }
    (*out.data)[0] = total / static_cast<T>(P);
    return out;
}

// ----------------------------------------------------------------- reductions

template <class T>
TensorT<T> mean_all(const TensorT<T>& x) {
    const size_t n = x.numel();
    TensorT<T> out = make_result<T>({1}, {x}, [n](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        if (!px.requires_grad) return;
        const T g = (*o.grad)[0] / static_cast<T>(n);
        for (size_t i = 0; i < n; ++i) (*px.grad)[i] += g;
    });
    T sum{0};
    for (size_t i = 0; i < n; ++i) sum += (*x.data)[i];
    (*out.data)[0] = sum / static_cast<T>(n);
    return out;
}

template <class T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mse");
    const size_t n = a.numel();
    TensorT<T> out = make_result<T>({1}, {a, b}, [n](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        const TensorT<T>& pb = o.node->parents[1];
        const T g = (*o.grad)[0] * T{2} / static_cast<T>(n);
        for (size_t i = 0; i < n; ++i) {
            const T d = (*pa.data)[i] - (*pb.data)[i];
            if (pa.requires_grad) (*pa.grad)[i] += g * d;
            if (pb.requires_grad) (*pb.grad)[i] -= g * d;
        }
    });
    T sum{0};
    for (size_t i = 0; i < n; ++i) {
        const T d = (*a.data)[i] - (*b.data)[i];
        sum += d * d;
    }
    (*out.data)[0] = sum / static_cast<T>(n);
    return out;
}

// -------------------------------------------------------- shape manipulation

template <class T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int> new_shape) {
    if (TensorT<T>::numel_of(new_shape) != x.numel())
        throw DimensionError("reshape: cannot view " + x.shape_str() + " as " +
                             TensorT<T>::shape_str(new_shape));
    const size_t n = x.numel();
    TensorT<T> out = make_result<T>(new_shape, {x}, [n](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        if (!px.requires_grad) return;
        for (size_t i = 0; i < n; ++i) (*px.grad)[i] += (*o.grad)[i];
    });
    *out.data = *x.data;
    return out;
}

// (N,C,H,W) -> (N,C*p*p,H/p,W/p); out channel = c*p*p + py*p + px.
template <class T>
TensorT<T> patchify(const TensorT<T>& x, int p) {
    detail::check_rank(x, 4, "patchify");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (p < 1 || H % p != 0 || W % p != 0)
        throw DimensionError("patchify: patch " + std::to_string(p) + " does not divide " + x.shape_str());
    const int oh = H / p, ow = W / p;
    auto fwd_index = [=](size_t i) {
        // i indexes the output; return the matching input offset
        const int ox = static_cast<int>(i % ow);
        const int oy = static_cast<int>((i / ow) % oh);
        const int oc = static_cast<int>((i / (static_cast<size_t>(ow) * oh)) % (C * p * p));
        const int n = static_cast<int>(i / (static_cast<size_t>(ow) * oh * C * p * p));
        const int c = oc / (p * p);
        const int py = (oc / p) % p;
        const int px = oc % p;
        return ((static_cast<size_t>(n) * C + c) * H + (oy * p + py)) * W + (ox * p + px);
    };
    const size_t total = x.numel();
    TensorT<T> out = make_result<T>({N, C * p * p, oh, ow}, {x}, [total, fwd_index](const TensorT<T>& o) {
        const TensorT<T>& px_ = o.node->parents[0];
        if (!px_.requires_grad) return;
        for (size_t i = 0; i < total; ++i) (*px_.grad)[fwd_index(i)] += (*o.grad)[i];
    });
    for (size_t i = 0; i < total; ++i) (*out.data)[i] = (*x.data)[fwd_index(i)];
    return out;
}

// Inverse of patchify: (N,C*p*p,h,w) -> (N,C,h*p,w*p).
template <class T>
TensorT<T> unpatchify(const TensorT<T>& x, int p) {
    detail::check_rank(x, 4, "unpatchify");
    const int N = x.dim(0), Cpp = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (p < 1 || Cpp % (p * p) != 0)
        throw DimensionError("unpatchify: channels of " + x.shape_str() + " not divisible by p^2");
    const int C = Cpp / (p * p);
    const int H = h * p, W = w * p;
    auto src_index = [=](size_t i) {
        // i indexes the output (N,C,H,W); return matching input offset
        const int X = static_cast<int>(i % W);
        const int Y = static_cast<int>((i / W) % H);
        const int c = static_cast<int>((i / (static_cast<size_t>(W) * H)) % C);
        const int n = static_cast<int>(i / (static_cast<size_t>(W) * H * C));
        const int oy = Y / p, py = Y % p;
        const int ox = X / p, px = X % p;
        const int ic = c * p * p + py * p + px;
        return ((static_cast<size_t>(n) * Cpp + ic) * h + oy) * w + ox;
    };
    const size_t total = x.numel();
    TensorT<T> out = make_result<T>({N, C, H, W}, {x}, [total, src_index](const TensorT<T>& o) {
        const TensorT<T>& px_ = o.node->parents[0];
        if (!px_.requires_grad) return;
        for (size_t i = 0; i < total; ++i) (*px_.grad)[src_index(i)] += (*o.grad)[i];
    });
    for (size_t i = 0; i < total; ++i) (*out.data)[i] = (*x.data)[src_index(i)];
    return out;
}

template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_rank(a, 4, "concat_channels");
    detail::check_rank(b, 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw DimensionError("concat_channels: incompatible " + a.shape_str() + " and " + b.shape_str());
    const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    const size_t hw = static_cast<size_t>(H) * W;
    TensorT<T> out = make_result<T>({N, Ca + Cb, H, W}, {a, b}, [N, Ca, Cb, hw](const TensorT<T>& o) {
        const TensorT<T>& pa = o.node->parents[0];
        const TensorT<T>& pb = o.node->parents[1];
        const T* go = o.gptr();
        for (int n = 0; n < N; ++n) {
            const size_t obase = static_cast<size_t>(n) * (Ca + Cb) * hw;
            if (pa.requires_grad) {
                T* ga = pa.grad->data() + static_cast<size_t>(n) * Ca * hw;
                for (size_t i = 0; i < Ca * hw; ++i) ga[i] += go[obase + i];
            }
            if (pb.requires_grad) {
                T* gb = pb.grad->data() + static_cast<size_t>(n) * Cb * hw;
                for (size_t i = 0; i < Cb * hw; ++i) gb[i] += go[obase + Ca * hw + i];
            }
        }
    });
    const T* ad = a.ptr();
    const T* bd = b.ptr();
    T* od = out.ptr();
    for (int n = 0; n < N; ++n) {
        const size_t obase = static_cast<size_t>(n) * (Ca + Cb) * hw;
        for (size_t i = 0; i < Ca * hw; ++i) od[obase + i] = ad[static_cast<size_t>(n) * Ca * hw + i];
        for (size_t i = 0; i < Cb * hw; ++i) od[obase + Ca * hw + i] = bd[static_cast<size_t>(n) * Cb * hw + i];
    }
    return out;
}

// x:(N,C,H,W) + v:(N,C) broadcast over spatial dims.
template <class T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& v) {
    detail::check_rank(x, 4, "add_channel_bias");
    detail::check_rank(v, 2, "add_channel_bias");
    if (x.dim(0) != v.dim(0) || x.dim(1) != v.dim(1))
        throw DimensionError("add_channel_bias: " + x.shape_str() + " vs " + v.shape_str());
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    TensorT<T> out = make_result<T>(x.shape, {x, v}, [N, C, HW](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        const TensorT<T>& pv = o.node->parents[1];
        const T* go = o.gptr();
        if (px.requires_grad) {
            const size_t n = o.numel();
            for (size_t i = 0; i < n; ++i) (*px.grad)[i] += go[i];
        }
        if (pv.requires_grad) {
            T* gv = pv.grad->data();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* base = go + (static_cast<size_t>(n) * C + c) * HW;
                    T acc{0};
                    for (int i = 0; i < HW; ++i) acc += base[i];
                    gv[n * C + c] += acc;
                }
        }
    });
    const T* xd = x.ptr();
    const T* vd = v.ptr();
    T* od = out.ptr();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T b = vd[n * C + c];
            const size_t base = (static_cast<size_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) od[base + i] = xd[base + i] + b;
        }
    return out;
}

// (N,C,H,W) -> (N,C): mean over spatial positions.
template <class T>
TensorT<T> mean_hw(const TensorT<T>& x) {
    detail::check_rank(x, 4, "mean_hw");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    TensorT<T> out = make_result<T>({N, C}, {x}, [N, C, HW](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        if (!px.requires_grad) return;
        const T* go = o.gptr();
        T* gx = px.grad->data();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T g = go[n * C + c] / static_cast<T>(HW);
                T* base = gx + (static_cast<size_t>(n) * C + c) * HW;
                for (int i = 0; i < HW; ++i) base[i] += g;
            }
    });
    const T* xd = x.ptr();
    T* od = out.ptr();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* base = xd + (static_cast<size_t>(n) * C + c) * HW;
            T acc{0};
            for (int i = 0; i < HW; ++i) acc += base[i];
            od[n * C + c] = acc / static_cast<T>(HW);
        }
    return out;
}

// (N,L,D) -> (N,D,h,w) with L == h*w. Used around attention blocks.
template <class T>
TensorT<T> nld_to_nchw(const TensorT<T>& x, int h, int w) {
    detail::check_rank(x, 3, "nld_to_nchw");
    const int N = x.dim(0), L = x.dim(1), D = x.dim(2);
    if (L != h * w)
        throw DimensionError("nld_to_nchw: " + x.shape_str() + " cannot map to " + std::to_string(h) + "x" +
                             std::to_string(w));
    auto src_index = [=](size_t i) {
        // i indexes (N,D,h,w) output
        const int pos = static_cast<int>(i % (static_cast<size_t>(h) * w));
        const int d = static_cast<int>((i / (static_cast<size_t>(h) * w)) % D);
        const int n = static_cast<int>(i / (static_cast<size_t>(h) * w * D));
        return (static_cast<size_t>(n) * L + pos) * D + d;
    };
    const size_t total = x.numel();
    TensorT<T> out = make_result<T>({N, D, h, w}, {x}, [total, src_index](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        if (!px.requires_grad) return;
        for (size_t i = 0; i < total; ++i) (*px.grad)[src_index(i)] += (*o.grad)[i];
    });
    for (size_t i = 0; i < total; ++i) (*out.data)[i] = (*x.data)[src_index(i)];
    return out;
}

// (N,C,H,W) -> (N,H*W,C).
template <class T>
TensorT<T> nchw_to_nld(const TensorT<T>& x) {
    detail::check_rank(x, 4, "nchw_to_nld");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    auto src_index = [=](size_t i) {
        // i indexes (N,HW,C) output
        const int c = static_cast<int>(i % C);
        const int pos = static_cast<int>((i / C) % HW);
        const int n = static_cast<int>(i / (static_cast<size_t>(C) * HW));
        return (static_cast<size_t>(n) * C + c) * HW + pos;
    };
    const size_t total = x.numel();
    TensorT<T> out = make_result<T>({N, HW, C}, {x}, [total, src_index](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        if (!px.requires_grad) return;
        for (size_t i = 0; i < total; ++i) (*px.grad)[src_index(i)] += (*o.grad)[i];
    });
    for (size_t i = 0; i < total; ++i) (*out.data)[i] = (*x.data)[src_index(i)];
    return out;
}

// Nearest-neighbour 2x spatial upsampling.
template <class T>
TensorT<T> upsample_nearest2x(const TensorT<T>& x) {
    detail::check_rank(x, 4, "upsample_nearest2x");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> out = make_result<T>({N, C, 2 * H, 2 * W}, {x}, [N, C, H, W](const TensorT<T>& o) {
        const TensorT<T>& px = o.node->parents[0];
        if (!px.requires_grad) return;
        const T* go = o.gptr();
        T* gx = px.grad->data();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const size_t ib = (static_cast<size_t>(n) * C + c) * H * W;
                const size_t ob = (static_cast<size_t>(n) * C + c) * 4 * H * W;
                for (int y = 0; y < H; ++y)
                    for (int x2 = 0; x2 < W; ++x2) {
                        T acc{0};
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += go[ob + (2 * y + dy) * (2 * W) + 2 * x2 + dx];
                        gx[ib + y * W + x2] += acc;
                    }
            }
    });
    const T* xd = x.ptr();
    T* od = out.ptr();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const size_t ib = (static_cast<size_t>(n) * C + c) * H * W;
            const size_t ob = (static_cast<size_t>(n) * C + c) * 4 * H * W;
            for (int y = 0; y < H; ++y)
                for (int x2 = 0; x2 < W; ++x2) {
                    const T v = xd[ib + y * W + x2];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) od[ob + (2 * y + dy) * (2 * W) + 2 * x2 + dx] = v;
                }
        }
    return out;
}

// Forward copy that blocks gradient flow.
template <class T>
TensorT<T> detach(const TensorT<T>& x) {
    TensorT<T> out;
    out.shape = x.shape;
    out.data = std::make_shared<std::vector<T>>(*x.data);
    out.requires_grad = false;
    return out;
}

// --------------------------------------------------------------------- AdamW

// Decoupled weight decay Adam. Holds first/second moment estimates per
// parameter; `lr` may be adjusted between steps (warmup schedules).
template <class T>
struct AdamWT {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int64_t step_count = 0;
    std::vector<std::vector<T>> m, v;

    void step(std::vector<TensorT<T>>& params) {
        if (m.empty()) {
            for (auto& p : params) {
                m.emplace_back(p.numel(), T{0});
                v.emplace_back(p.numel(), T{0});
            }
        }
        if (m.size() != params.size())
            throw DimensionError("adamw: state for " + std::to_string(m.size()) + " params, got " +
                                 std::to_string(params.size()));
        ++step_count;
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        const T inv_bc1 = static_cast<T>(1.0 / (1.0 - std::pow(beta1, static_cast<double>(step_count))));
        const T inv_bc2 = static_cast<T>(1.0 / (1.0 - std::pow(beta2, static_cast<double>(step_count))));
        const T lr_t = static_cast<T>(lr), eps_t = static_cast<T>(eps), wd_t = static_cast<T>(weight_decay);
        for (size_t i = 0; i < params.size(); ++i) {
            TensorT<T>& p = params[i];
            if (!p.grad) continue;
            if (m[i].size() != p.numel())
                throw DimensionError("adamw: state size mismatch for parameter " + std::to_string(i));
            T* pd = p.ptr();
            const T* g = p.grad->data();
            T* mi = m[i].data();
            T* vi = v[i].data();
            for (size_t j = 0; j < p.numel(); ++j) {
                const T gj = g[j];
                const T mj = b1 * mi[j] + (T{1} - b1) * gj;
                const T vj = b2 * vi[j] + (T{1} - b2) * gj * gj;
                mi[j] = mj;
                vi[j] = vj;
                pd[j] -= lr_t * ((mj * inv_bc1) / (std::sqrt(vj * inv_bc2) + eps_t) + wd_t * pd[j]);
            }
        }
    }

    void zero_grad(std::vector<TensorT<T>>& params) {
        for (auto& p : params) p.zero_grad();
    }
};

using AdamW = AdamWT<float>;

}  // namespace tg
