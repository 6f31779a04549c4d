# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: RK4 score integration and the unpenalized
best-reply flow.  ``_kernels_py`` mirrors every function line for line."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, pow, fabs, isfinite, INFINITY

cnp.import_array()

DEF GIBBS = 0
DEF QUAD = 1
DEF TSALLIS = 2
DEF LOGBAR = 3
DEF MU_TOL = 1e-13
DEF MAX_BISECT = 200
DEF TIE_TOL = 1e-12


cdef inline double slope_at_one(int kind, double q) nogil:
    if kind == GIBBS or kind == QUAD:
        return 1.0
    if kind == LOGBAR:
        return -1.0
    return 1.0 / q


cdef inline double slope_at_zero(int kind, double q) nogil:
    if kind == QUAD:
        return 0.0
    if kind == TSALLIS and q > 1.0:
        return 1.0 / (q * (1.0 - q))
    return -INFINITY


cdef inline double dtheta(int kind, double q, double x) nogil:
    if kind == GIBBS:
        return 1.0 + log(x)
    if kind == QUAD:
        return x
    if kind == LOGBAR:
        return -1.0 / x
    return (1.0 - q * pow(x, q - 1.0)) / (q * (1.0 - q))


cdef inline double weight(int kind, double q, double x) nogil:
    if kind == GIBBS:
        return x
    if kind == QUAD:
        return 1.0
    if kind == LOGBAR:
        return x * x
    return pow(x, 2.0 - q)


cdef inline double inv_dtheta(int kind, double q, double z) nogil:
    cdef double lo = slope_at_zero(kind, q)
    cdef double hi = slope_at_one(kind, q)
    cdef double base
    if z <= lo:
        return 0.0
    if z >= hi:
        return 1.0
    if kind == GIBBS:
        return exp(z - 1.0)
    if kind == QUAD:
        return z
    if kind == LOGBAR:
        return -1.0 / z
    base = 1.0 / q - (1.0 - q) * z
    if base < 0.0:
        base = 0.0
    base = pow(base, 1.0 / (q - 1.0))
    if base > 1.0:
        return 1.0
    return base


cdef void choose(int kind, double q, const double* y, double* x, int n) nogil:
    cdef int i, j, it
    cdef double top, s, mu, lo, hi, f, slope, step, tmp, css
    top = y[0]
    for i in range(1, n):
        if y[i] > top:
            top = y[i]
    if kind == GIBBS:
        s = 0.0
        for i in range(n):
            x[i] = exp(y[i] - top)
            s += x[i]
        for i in range(n):
            x[i] /= s
        return
    if kind == QUAD:
        # sort a copy in x (descending insertion sort), then threshold
        for i in range(n):
            tmp = y[i]
            j = i - 1
            while j >= 0 and x[j] < tmp:
                x[j + 1] = x[j]
                j -= 1
            x[j + 1] = tmp
        css = 0.0
        mu = 0.0
        for i in range(n):
            css += x[i]
            if x[i] - (css - 1.0) / (i + 1) > 0.0:
                mu = (css - 1.0) / (i + 1)
        for i in range(n):
            x[i] = y[i] - mu
            if x[i] < 0.0:
                x[i] = 0.0
        return
    lo = top - slope_at_one(kind, q)
    hi = top - dtheta(kind, q, 1.0 / n)
    mu = 0.5 * (lo + hi)
    for it in range(MAX_BISECT):
        s = 0.0
        slope = 0.0
        for i in range(n):
            x[i] = inv_dtheta(kind, q, y[i] - mu)
            s += x[i]
            if x[i] > 0.0 and x[i] < 1.0:
                slope -= weight(kind, q, x[i])
        f = s - 1.0
        if f > 0.0:
            lo = mu
        else:
            hi = mu
        if hi - lo <= MU_TOL * (fabs(mu) if fabs(mu) > 1.0 else 1.0):
            break
        if slope < 0.0:
            step = mu - f / slope
        else:
            step = lo - 1.0
        if lo < step and step < hi:
            mu = step
        else:
            mu = 0.5 * (lo + hi)
    s = 0.0
    for i in range(n):
        x[i] = inv_dtheta(kind, q, y[i] - mu)
        s += x[i]
    for i in range(n):
        x[i] /= s


cdef void payoffs(const double* u, int N, long P, const long* nact, const long* off,
                  const double* x, double* v, long* idx, double* pre, double* suf) nogil:
    cdef long p
    cdef int k, D = off[N]
    for k in range(D):
        v[k] = 0.0
    for k in range(N):
        idx[k] = 0
    for p in range(P):
        pre[0] = 1.0
        for k in range(N):
            pre[k + 1] = pre[k] * x[off[k] + idx[k]]
        suf[N] = 1.0
        for k in range(N - 1, -1, -1):
            suf[k] = suf[k + 1] * x[off[k] + idx[k]]
        for k in range(N):
            v[off[k] + idx[k]] += u[k * P + p] * pre[k] * suf[k + 1]
        k = N - 1
        while k >= 0:
            idx[k] += 1
            if idx[k] < nact[k]:
                break
            idx[k] = 0
            k -= 1


cdef class _Scratch:
    cdef public cnp.ndarray idx, pre, suf, x, v
    def __init__(self, int N, int D):
        self.idx = np.zeros(N, dtype=np.int64)
        self.pre = np.zeros(N + 1)
        self.suf = np.zeros(N + 1)
        self.x = np.zeros(D)
        self.v = np.zeros(D)


cdef void score_field(const double* u, int N, long P, const long* nact, const long* off,
                      const long* kinds, const double* qs, const double* gamma, double loglam,
                      const double* y, double* out, double* x, double* v,
                      long* idx, double* pre, double* suf) nogil:
    cdef int k, i
    for k in range(N):
        choose(<int>kinds[k], qs[k], &y[off[k]], &x[off[k]], <int>nact[k])
    payoffs(u, N, P, nact, off, x, v, idx, pre, suf)
    for k in range(N):
        for i in range(off[k], off[k + 1]):
            out[i] = gamma[k] * v[i] + loglam * y[i]


def choice_block(int kind, double q, const double[::1] y):
    """Choice map of one player (testing hook)."""
    cdef cnp.ndarray[double, ndim=1] x = np.zeros(y.shape[0])
    choose(kind, q, &y[0], &x[0], <int>y.shape[0])
    return x


def payoff_vectors(const double[:, ::1] u, const long[::1] nact, const double[::1] x):
    cdef int N = <int>nact.shape[0]
    cdef long P = u.shape[1]
    cdef cnp.ndarray[long, ndim=1] off = np.zeros(N + 1, dtype=np.int64)
    cdef int k
    for k in range(N):
        off[k + 1] = off[k] + nact[k]
    cdef _Scratch s = _Scratch(N, off[N])
    cdef long[::1] idx = s.idx
    cdef double[::1] pre = s.pre, suf = s.suf, v = s.v
    cdef long[::1] offv = off
    payoffs(&u[0, 0], N, P, &nact[0], &offv[0], &x[0], &v[0], &idx[0], &pre[0], &suf[0])
    return np.asarray(v).copy()


def integrate_scores(const double[:, ::1] u, const long[::1] nact, const double[::1] y0,
                     const double[::1] gamma, const long[::1] kinds, const double[::1] qs, double loglam, double dt,
                     long nsteps, long store_every):
    """Classical RK4 on the score field.  Returns (rows, Y, X, status)."""
    cdef int N = <int>nact.shape[0]
    cdef long P = u.shape[1]
    cdef int k, i, D
    cdef long step, row
    cdef cnp.ndarray[long, ndim=1] off_a = np.zeros(N + 1, dtype=np.int64)
    for k in range(N):
        off_a[k + 1] = off_a[k] + nact[k]
    D = <int>off_a[N]
    cdef long nrows = nsteps // store_every + 1
    if nsteps % store_every:
        nrows += 1
    cdef cnp.ndarray[double, ndim=2] Y = np.empty((nrows, D))
    cdef cnp.ndarray[double, ndim=2] X = np.empty((nrows, D))
    cdef double[:, ::1] Yv = Y, Xv = X
    cdef long[::1] off = off_a
    cdef double[::1] y = np.array(y0, dtype=float)
    cdef double[::1] tmp = np.empty(D)
    cdef double[::1] k1 = np.empty(D), k2 = np.empty(D), k3 = np.empty(D), k4 = np.empty(D)
    cdef _Scratch s = _Scratch(N, D)
    cdef long[::1] idx = s.idx
    cdef double[::1] pre = s.pre, suf = s.suf, x = s.x, v = s.v
    cdef double h2 = 0.5 * dt, h6 = dt / 6.0
    cdef int status = 0

    with nogil:
        for k in range(N):
            choose(<int>kinds[k], qs[k], &y[off[k]], &Xv[0, off[k]], <int>nact[k])
        for i in range(D):
            Yv[0, i] = y[i]
        row = 1
        for step in range(1, nsteps + 1):
            score_field(&u[0, 0], N, P, &nact[0], &off[0], &kinds[0], &qs[0], &gamma[0], loglam,
                        &y[0], &k1[0], &x[0], &v[0], &idx[0], &pre[0], &suf[0])
            for i in range(D):
                tmp[i] = y[i] + h2 * k1[i]
            score_field(&u[0, 0], N, P, &nact[0], &off[0], &kinds[0], &qs[0], &gamma[0], loglam,
                        &tmp[0], &k2[0], &x[0], &v[0], &idx[0], &pre[0], &suf[0])
            for i in range(D):
                tmp[i] = y[i] + h2 * k2[i]
            score_field(&u[0, 0], N, P, &nact[0], &off[0], &kinds[0], &qs[0], &gamma[0], loglam,
                        &tmp[0], &k3[0], &x[0], &v[0], &idx[0], &pre[0], &suf[0])
            for i in range(D):
                tmp[i] = y[i] + dt * k3[i]
            score_field(&u[0, 0], N, P, &nact[0], &off[0], &kinds[0], &qs[0], &gamma[0], loglam,
                        &tmp[0], &k4[0], &x[0], &v[0], &idx[0], &pre[0], &suf[0])
            for i in range(D):
                y[i] = y[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if not isfinite(y[i]):
                    status = 1
            if status:
                break
            if step % store_every == 0 or step == nsteps:
                for k in range(N):
                    choose(<int>kinds[k], qs[k], &y[off[k]], &Xv[row, off[k]], <int>nact[k])
                for i in range(D):
                    Yv[row, i] = y[i]
                row += 1
    return row, Y, X, status


cdef void select_best(double* y, double* x, int n, int uniform) nogil:
    cdef int i, count = 0, first = 0
    cdef double top = y[0]
    for i in range(1, n):
        if y[i] > top:
            top = y[i]
    for i in range(n):
        x[i] = 0.0
    for i in range(n - 1, -1, -1):
        if top - y[i] <= TIE_TOL:
            count += 1
            first = i
    if not uniform:
        x[first] = 1.0
        return
    for i in range(n):
        if top - y[i] <= TIE_TOL:
            x[i] = 1.0 / count


cdef void correlated_payoffs(const double* u, int N, long P, const long* nact, const long* off,
                             const long* stride, const double* chi, double* v, long* idx) nogil:
    cdef long p, q
    cdef int k, a
    for k in range(off[N]):
        v[k] = 0.0
    for k in range(N):
        idx[k] = 0
    for p in range(P):
        if chi[p] != 0.0:
            for k in range(N):
                for a in range(nact[k]):
                    q = p + (a - idx[k]) * stride[k]
                    v[off[k] + a] += u[k * P + q] * chi[p]
        k = N - 1
        while k >= 0:
            idx[k] += 1
            if idx[k] < nact[k]:
                break
            idx[k] = 0
            k -= 1


def integrate_url(const double[:, ::1] u, const long[::1] nact, const double[::1] y0,
                  const double[::1] chi0,
                  double tau, double dt, long nsteps, long store_every, int tie_uniform):
    """Unpenalized score flow with the running correlated average.

    Returns (rows, Y, X, XBAR, chi, identity_error)."""
    cdef int N = <int>nact.shape[0]
    cdef long P = u.shape[1]
    cdef int k, i, D
    cdef long step, row, p
    cdef cnp.ndarray[long, ndim=1] off_a = np.zeros(N + 1, dtype=np.int64)
    cdef cnp.ndarray[long, ndim=1] stride_a = np.ones(N, dtype=np.int64)
    for k in range(N):
        off_a[k + 1] = off_a[k] + nact[k]
    for k in range(N - 2, -1, -1):
        stride_a[k] = stride_a[k + 1] * nact[k + 1]
    D = <int>off_a[N]
    cdef long nrows = nsteps // store_every + 1
    if nsteps % store_every:
        nrows += 1
    cdef cnp.ndarray[double, ndim=2] Y = np.empty((nrows, D))
    cdef cnp.ndarray[double, ndim=2] X = np.empty((nrows, D))
    cdef cnp.ndarray[double, ndim=2] XB = np.empty((nrows, D))
    cdef double[:, ::1] Yv = Y, Xv = X, XBv = XB
    cdef long[::1] off = off_a, stride = stride_a
    cdef double[::1] y = np.array(y0, dtype=float)
    cdef double[::1] chi = np.array(chi0, dtype=float)
    cdef double[::1] offset = np.empty(D), vc = np.empty(D)
    cdef _Scratch s = _Scratch(N, D)
    cdef long[::1] idx = s.idx
    cdef double[::1] pre = s.pre, suf = s.suf, x = s.x, v = s.v
    cdef double t, w, err = 0.0, e
    cdef long pp

    with nogil:
        correlated_payoffs(&u[0, 0], N, P, &nact[0], &off[0], &stride[0], &chi[0], &vc[0], &idx[0])
        for i in range(D):
            offset[i] = tau * vc[i] - y[i]
        row = 0
        for step in range(nsteps + 1):
            t = step * dt
            for k in range(N):
                select_best(&y[off[k]], &x[off[k]], <int>nact[k], tie_uniform)
            correlated_payoffs(&u[0, 0], N, P, &nact[0], &off[0], &stride[0], &chi[0], &vc[0], &idx[0])
            for i in range(D):
                e = fabs((tau + t) * vc[i] - y[i] - offset[i])
                if e > err:
                    err = e
            if step % store_every == 0 or step == nsteps:
                for i in range(D):
                    Yv[row, i] = y[i]
                    Xv[row, i] = x[i]
                    XBv[row, i] = 0.0
                # marginals of the running average
                for k in range(N):
                    idx[k] = 0
                for pp in range(P):
                    for k in range(N):
                        XBv[row, off[k] + idx[k]] += chi[pp]
                    k = N - 1
                    while k >= 0:
                        idx[k] += 1
                        if idx[k] < nact[k]:
                            break
                        idx[k] = 0
                        k -= 1
                row += 1
            if step == nsteps:
                break
            payoffs(&u[0, 0], N, P, &nact[0], &off[0], &x[0], &v[0], &idx[0], &pre[0], &suf[0])
            for i in range(D):
                y[i] += dt * v[i]
            # product of the played strategies, accumulated into the average
            w = 1.0 / (tau + t + dt)
            for k in range(N):
                idx[k] = 0
            for pp in range(P):
                e = 1.0
                for k in range(N):
                    e *= x[off[k] + idx[k]]
                chi[pp] = ((tau + t) * chi[pp] + dt * e) * w
                k = N - 1
                while k >= 0:
                    idx[k] += 1
                    if idx[k] < nact[k]:
                        break
                    idx[k] = 0
                    k -= 1
    return row, Y, X, XB, np.asarray(chi).copy(), err
