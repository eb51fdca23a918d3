"""Compiled inner loop of the pCN sampler.

``batch_loglik`` evaluates the Poisson log-likelihood for a stack of
parameter vectors with scalar arithmetic; ``aapt._batch_choi`` is the
vectorized numpy reference it is tested against.
"""
import numpy as np
from numba import njit

FLUX_SIGMA = 0.1
FLUX_FLOOR = 1e-6
P_FLOOR = 1e-12
SINGULAR_EIG = 1e-12


def choi_features(Mt):
    """Real weights W with p_s = W[s] . f(Phi) for the 16 real Choi features.

    ``f`` packs the 4 diagonal entries, then Re Phi_ab and Im Phi_ab for a < b.
    """
    S = len(Mt)
    W = np.zeros((S, 16))
    for s in range(S):
        M = np.asarray(Mt[s]).T  # back to M_s: p_s = sum_ab Phi_ab M_ba
        col = 0
        for a in range(4):
            W[s, col] = M[a, a].real
            col += 1
        for a in range(4):
            for b in range(a + 1, 4):
                # Phi_ab M_ba + Phi_ba M_ab = 2 Re(Phi_ab M_ba)
                W[s, col] = 2 * M[b, a].real
                W[s, col + 1] = -2 * M[b, a].imag
                col += 2
    return W


@njit(cache=True)
def _features(x, out, g, c):
    # G_k entries; per matrix 4 real parts then 4 imaginary parts, row-major
    for k in range(4):
        for e in range(4):
            g[k, e] = x[8 * k + e] + 1j * x[8 * k + 4 + e]
    s00 = 0.0
    s11 = 0.0
    s01 = 0j
    for k in range(4):
        g00, g01, g10, g11 = g[k, 0], g[k, 1], g[k, 2], g[k, 3]
        s00 += (g00 * g00.conjugate()).real + (g10 * g10.conjugate()).real
        s11 += (g01 * g01.conjugate()).real + (g11 * g11.conjugate()).real
        s01 += g00.conjugate() * g01 + g10.conjugate() * g11
    tr = s00 + s11
    det = s00 * s11 - (s01 * s01.conjugate()).real
    disc = np.sqrt(max(tr * tr - 4 * det, 0.0))
    if (tr - disc) / 2 <= SINGULAR_EIG:
        return False
    sq = np.sqrt(det)
    t = np.sqrt(tr + 2 * sq)
    norm = 1.0 / (sq * t)
    r00 = (s11 + sq) * norm
    r11 = (s00 + sq) * norm
    r01 = -s01 * norm
    r10 = r01.conjugate()
    for i in range(16):
        out[i] = 0.0
    for k in range(4):
        g00, g01, g10, g11 = g[k, 0], g[k, 1], g[k, 2], g[k, 3]
        # column-stacked A_k = G_k R
        c[0] = g00 * r00 + g01 * r10
        c[1] = g10 * r00 + g11 * r10
        c[2] = g00 * r01 + g01 * r11
        c[3] = g10 * r01 + g11 * r11
        for a in range(4):
            out[a] += 0.5 * (c[a] * c[a].conjugate()).real
        col = 4
        for a in range(4):
            for b in range(a + 1, 4):
                z = 0.5 * c[a] * c[b].conjugate()
                out[col] += z.real
                out[col + 1] += z.imag
                col += 2
    return True


@njit(cache=True)
def _loglik_one(x, counts, k0, W, literal, f, g, c):
    if not _features(x, f, g, c):
        return -np.inf
    K = k0 * max(1.0 + FLUX_SIGMA * x[32], FLUX_FLOOR)
    logK = np.log(K)
    acc = 0.0
    for s in range(W.shape[0]):
        p = 0.0
        for i in range(16):
            p += W[s, i] * f[i]
        if p < P_FLOOR:
            p = P_FLOOR
        n = counts[s]
        if literal:
            acc += n * np.log(p) - K * p
        else:
            acc += n * (np.log(p) + logK) - K * p
    return acc


@njit(cache=True)
def batch_loglik(x, counts, k0, W, literal):
    B = x.shape[0]
    ll = np.empty(B)
    f = np.empty(16)
    g = np.empty((4, 4), dtype=np.complex128)
    c = np.empty(4, dtype=np.complex128)
    for b in range(B):
        ll[b] = _loglik_one(x[b], counts[b], k0[b], W, literal, f, g, c)
    return ll


@njit(cache=True)
def pcn_block(x, ll, beta, xi, logu, counts, k0, W, literal, acc_count):
    """Advance all chains through ``xi.shape[0]`` pCN steps with fixed beta."""
    m = xi.shape[0]
    B, P = x.shape
    prop = np.empty(P)
    f = np.empty(16)
    g = np.empty((4, 4), dtype=np.complex128)
    c = np.empty(4, dtype=np.complex128)
    for b in range(B):
        rb = np.sqrt(1.0 - beta[b] * beta[b])
        for i in range(m):
            for j in range(P):
                prop[j] = rb * x[b, j] + beta[b] * xi[i, b, j]
            lp = _loglik_one(prop, counts[b], k0[b], W, literal, f, g, c)
            if logu[i, b] < lp - ll[b]:
                for j in range(P):
                    x[b, j] = prop[j]
                ll[b] = lp
                acc_count[b] += 1
