"""Pure-Python mirror of the compiled kernels in ``_kernels.pyx``.

Same loops, same operation order, plain floats.  Used when the extension is
missing or when ``REGDYN_PURE_PYTHON=1``.
"""

from __future__ import annotations

import math

import numpy as np

GIBBS, QUAD, TSALLIS, LOGBAR = 0, 1, 2, 3
MU_TOL = 1e-13
MAX_BISECT = 200
TIE_TOL = 1e-12


def _slope_at_one(kind, q):
    if kind == GIBBS or kind == QUAD:
        return 1.0
    if kind == LOGBAR:
        return -1.0
    return 1.0 / q


def _slope_at_zero(kind, q):
    if kind == QUAD:
        return 0.0
    if kind == TSALLIS and q > 1.0:
        return 1.0 / (q * (1.0 - q))
    return -math.inf


def _dtheta(kind, q, x):
    if kind == GIBBS:
        return 1.0 + math.log(x)
    if kind == QUAD:
        return x
    if kind == LOGBAR:
        return -1.0 / x
    return (1.0 - q * math.pow(x, q - 1.0)) / (q * (1.0 - q))


def _weight(kind, q, x):
    if kind == GIBBS:
        return x
    if kind == QUAD:
        return 1.0
    if kind == LOGBAR:
        return x * x
    return math.pow(x, 2.0 - q)


def _inv_dtheta(kind, q, z):
    if z <= _slope_at_zero(kind, q):
        return 0.0
    if z >= _slope_at_one(kind, q):
        return 1.0
    if kind == GIBBS:
        return math.exp(z - 1.0)
    if kind == QUAD:
        return z
    if kind == LOGBAR:
        return -1.0 / z
    base = 1.0 / q - (1.0 - q) * z
    if base < 0.0:
        base = 0.0
    base = math.pow(base, 1.0 / (q - 1.0))
    return 1.0 if base > 1.0 else base


def _choose(kind, q, y, a, x, n):
    """Write the choice for y[a:a+n] into x[a:a+n] (lists)."""
    top = y[a]
    for i in range(1, n):
        if y[a + i] > top:
            top = y[a + i]
    if kind == GIBBS:
        s = 0.0
        for i in range(n):
            x[a + i] = math.exp(y[a + i] - top)
            s += x[a + i]
        for i in range(n):
            x[a + i] /= s
        return
    if kind == QUAD:
        srt = sorted(y[a : a + n], reverse=True)
        css = 0.0
        mu = 0.0
        for i in range(n):
            css += srt[i]
            if srt[i] - (css - 1.0) / (i + 1) > 0.0:
                mu = (css - 1.0) / (i + 1)
        for i in range(n):
            v = y[a + i] - mu
            x[a + i] = v if v > 0.0 else 0.0
        return
    lo = top - _slope_at_one(kind, q)
    hi = top - _dtheta(kind, q, 1.0 / n)
    mu = 0.5 * (lo + hi)
    for _ in range(MAX_BISECT):
        s = 0.0
        slope = 0.0
        for i in range(n):
            xi = _inv_dtheta(kind, q, y[a + i] - mu)
            x[a + i] = xi
            s += xi
            if 0.0 < xi < 1.0:
                slope -= _weight(kind, q, xi)
        f = s - 1.0
        if f > 0.0:
            lo = mu
        else:
            hi = mu
        if hi - lo <= MU_TOL * (abs(mu) if abs(mu) > 1.0 else 1.0):
            break
        step = mu - f / slope if slope < 0.0 else lo - 1.0
        mu = step if lo < step < hi else 0.5 * (lo + hi)
    s = 0.0
    for i in range(n):
        x[a + i] = _inv_dtheta(kind, q, y[a + i] - mu)
        s += x[a + i]
    for i in range(n):
        x[a + i] /= s


def _payoffs(u, N, P, nact, off, x, v):
    for i in range(off[N]):
        v[i] = 0.0
    idx = [0] * N
    pre = [1.0] * (N + 1)
    suf = [1.0] * (N + 1)
    for p in range(P):
        for k in range(N):
            pre[k + 1] = pre[k] * x[off[k] + idx[k]]
        for k in range(N - 1, -1, -1):
            suf[k] = suf[k + 1] * x[off[k] + idx[k]]
        for k in range(N):
            v[off[k] + idx[k]] += u[k][p] * pre[k] * suf[k + 1]
        k = N - 1
        while k >= 0:
            idx[k] += 1
            if idx[k] < nact[k]:
                break
            idx[k] = 0
            k -= 1


def _offsets(nact):
    off = [0]
    for n in nact:
        off.append(off[-1] + int(n))
    return off


def choice_block(kind, q, y):
    y = [float(t) for t in y]
    x = [0.0] * len(y)
    _choose(int(kind), float(q), y, 0, x, len(y))
    return np.array(x)


def payoff_vectors(u, nact, x):
    nact = [int(n) for n in nact]
    off = _offsets(nact)
    v = [0.0] * off[-1]
    _payoffs(np.asarray(u).tolist(), len(nact), np.asarray(u).shape[1], nact, off, [float(t) for t in x], v)
    return np.array(v)


def _score_field(u, N, P, nact, off, kinds, qs, gamma, loglam, y, out, x, v):
    for k in range(N):
        _choose(kinds[k], qs[k], y, off[k], x, nact[k])
    _payoffs(u, N, P, nact, off, x, v)
    for k in range(N):
        for i in range(off[k], off[k + 1]):
            out[i] = gamma[k] * v[i] + loglam * y[i]


def integrate_scores(u, nact, y0, gamma, kinds, qs, loglam, dt, nsteps, store_every):
    """Classical RK4 on the score field.  Returns (rows, Y, X, status)."""
    u = np.asarray(u, dtype=float)
    P = u.shape[1]
    ul = u.tolist()
    nact = [int(n) for n in nact]
    N = len(nact)
    off = _offsets(nact)
    D = off[N]
    kinds = [int(t) for t in kinds]
    qs = [float(t) for t in qs]
    gamma = [float(t) for t in gamma]
    nrows = nsteps // store_every + 1 + (1 if nsteps % store_every else 0)
    Y = np.empty((nrows, D))
    X = np.empty((nrows, D))
    y = [float(t) for t in y0]
    x = [0.0] * D
    v = [0.0] * D
    tmp = [0.0] * D
    k1, k2, k3, k4 = ([0.0] * D for _ in range(4))
    h2, h6 = 0.5 * dt, dt / 6.0
    xr = [0.0] * D
    for k in range(N):
        _choose(kinds[k], qs[k], y, off[k], xr, nact[k])
    Y[0] = y
    X[0] = xr
    row = 1
    status = 0
    for step in range(1, nsteps + 1):
        _score_field(ul, N, P, nact, off, kinds, qs, gamma, loglam, y, k1, x, v)
        for i in range(D):
            tmp[i] = y[i] + h2 * k1[i]
        _score_field(ul, N, P, nact, off, kinds, qs, gamma, loglam, tmp, k2, x, v)
        for i in range(D):
            tmp[i] = y[i] + h2 * k2[i]
        _score_field(ul, N, P, nact, off, kinds, qs, gamma, loglam, tmp, k3, x, v)
        for i in range(D):
            tmp[i] = y[i] + dt * k3[i]
        _score_field(ul, N, P, nact, off, kinds, qs, gamma, loglam, tmp, k4, x, v)
        for i in range(D):
            y[i] = y[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not math.isfinite(y[i]):
                status = 1
        if status:
            break
        if step % store_every == 0 or step == nsteps:
            for k in range(N):
                _choose(kinds[k], qs[k], y, off[k], xr, nact[k])
            Y[row] = y
            X[row] = xr
            row += 1
    return row, Y, X, status


def _select_best(y, a, x, n, uniform):
    top = y[a]
    for i in range(1, n):
        if y[a + i] > top:
            top = y[a + i]
    ties = [i for i in range(n) if top - y[a + i] <= TIE_TOL]
    for i in range(n):
        x[a + i] = 0.0
    if not uniform:
        x[a + ties[0]] = 1.0
        return
    for i in ties:
        x[a + i] = 1.0 / len(ties)


def _correlated_payoffs(u, N, P, nact, off, stride, chi, v):
    for i in range(off[N]):
        v[i] = 0.0
    idx = [0] * N
    for p in range(P):
        if chi[p] != 0.0:
            for k in range(N):
                for a in range(nact[k]):
                    q = p + (a - idx[k]) * stride[k]
                    v[off[k] + a] += u[k][q] * chi[p]
        k = N - 1
        while k >= 0:
            idx[k] += 1
            if idx[k] < nact[k]:
                break
            idx[k] = 0
            k -= 1


def integrate_url(u, nact, y0, chi0, tau, dt, nsteps, store_every, tie_uniform):
    """Unpenalized score flow with the running correlated average.

    Returns (rows, Y, X, XBAR, chi, identity_error)."""
    u = np.asarray(u, dtype=float)
    P = u.shape[1]
    ul = u.tolist()
    nact = [int(n) for n in nact]
    N = len(nact)
    off = _offsets(nact)
    D = off[N]
    stride = [1] * N
    for k in range(N - 2, -1, -1):
        stride[k] = stride[k + 1] * nact[k + 1]
    nrows = nsteps // store_every + 1 + (1 if nsteps % store_every else 0)
    Y = np.empty((nrows, D))
    X = np.empty((nrows, D))
    XB = np.empty((nrows, D))
    y = [float(t) for t in y0]
    chi = [float(t) for t in chi0]
    x = [0.0] * D
    v = [0.0] * D
    vc = [0.0] * D
    _correlated_payoffs(ul, N, P, nact, off, stride, chi, vc)
    offset = [tau * vc[i] - y[i] for i in range(D)]
    err = 0.0
    row = 0
    for step in range(nsteps + 1):
        t = step * dt
        for k in range(N):
            _select_best(y, off[k], x, nact[k], tie_uniform)
        _correlated_payoffs(ul, N, P, nact, off, stride, chi, vc)
        for i in range(D):
            e = abs((tau + t) * vc[i] - y[i] - offset[i])
            if e > err:
                err = e
        if step % store_every == 0 or step == nsteps:
            Y[row] = y
            X[row] = x
            xb = [0.0] * D
            idx = [0] * N
            for pp in range(P):
                for k in range(N):
                    xb[off[k] + idx[k]] += chi[pp]
                k = N - 1
                while k >= 0:
                    idx[k] += 1
                    if idx[k] < nact[k]:
                        break
                    idx[k] = 0
                    k -= 1
            XB[row] = xb
            row += 1
        if step == nsteps:
            break
        _payoffs(ul, N, P, nact, off, x, v)
        for i in range(D):
            y[i] += dt * v[i]
        w = 1.0 / (tau + t + dt)
        idx = [0] * N
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
    return row, Y, X, XB, np.array(chi), err
