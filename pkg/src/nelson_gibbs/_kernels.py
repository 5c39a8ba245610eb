"""Compiled inner loops: table lookups, path energies and Metropolis sweeps.

All kernels release the GIL.  ``lag`` is the lag table ``lag[m, i] =
W(i * dr, m * dt)``; distances are linearly interpolated in r and a
distance beyond the last node is reported through a ``far`` flag.
"""

import math

import numpy as np
from numba import njit

MOVE_BEAD = 0
MOVE_BLOCK = 1
MOVE_SHIFT = 2

MODE_HARMONIC = 0
MODE_GENERAL = 1


@njit(cache=True, nogil=True)
def _dist(q, i, j):
    s = 0.0
    for c in range(q.shape[1]):
        x = q[i, c] - q[j, c]
        s += x * x
    return math.sqrt(s)


@njit(cache=True, nogil=True)
def _dist_vec(x, q, j):
    s = 0.0
    for c in range(q.shape[1]):
        y = x[c] - q[j, c]
        s += y * y
    return math.sqrt(s)


@njit(cache=True, nogil=True)
def lookup(lag, inv_dr, m, r):
    x = r * inv_dr
    i = int(x)
    if i >= lag.shape[1] - 1:
        if i == lag.shape[1] - 1 and x == i:
            return lag[m, i], False
        return 0.0, True
    f = x - i
    return (1.0 - f) * lag[m, i] + f * lag[m, i + 1], False


@njit(cache=True, nogil=True)
def cross_energy(q, center, A, M, lag, inv_dr, dt):
    """D = -2 sum_{a,b} w_a w_b dt^2 W(|q_{c+b} - q_{c-a}|, (a+b) dt), w_0 = 1/2."""
    total = 0.0
    far = False
    for a in range(A + 1):
        wa = 0.5 if a == 0 else 1.0
        bmax = min(A, M - a)
        for b in range(bmax + 1):
            wb = 0.5 if b == 0 else 1.0
            r = _dist(q, center + b, center - a)
            v, f = lookup(lag, inv_dr, a + b, r)
            if f:
                far = True
            total += wa * wb * v
    return -2.0 * dt * dt * total, far


@njit(cache=True, nogil=True)
def full_energy(q, w, M, lag, inv_dr, dt):
    """sum_{i,j, |i-j| <= M} w_i w_j dt^2 W(|q_i - q_j|, |i-j| dt), diagonal included."""
    L = q.shape[0]
    total = 0.0
    far = False
    for i in range(L):
        total += w[i] * w[i] * lag[0, 0]
        for j in range(i + 1, min(L, i + M + 1)):
            v, f = lookup(lag, inv_dr, j - i, _dist(q, i, j))
            if f:
                far = True
            total += 2.0 * w[i] * w[j] * v
    return total * dt * dt, far


@njit(cache=True, nogil=True)
def _bead_delta_e(q, i, new, w, M, lag, inv_dr, dt):
    L = q.shape[0]
    s = 0.0
    for j in range(max(0, i - M), min(L, i + M + 1)):
        if j == i:
            continue
        m = abs(j - i)
        vn, fn = lookup(lag, inv_dr, m, _dist_vec(new, q, j))
        if fn:
            return 0.0, True
        vo, _ = lookup(lag, inv_dr, m, _dist(q, i, j))
        s += w[j] * (vn - vo)
    return 2.0 * w[i] * s * dt * dt, False


@njit(cache=True, nogil=True)
def _block_delta_e(q, old, i0, n, w, M, lag, inv_dr, dt):
    """Energy change after the block q[i0:i0+n] replaced ``old`` (q holds the new values)."""
    L = q.shape[0]
    i1 = i0 + n
    s = 0.0
    for i in range(i0, i1):
        for j in range(max(0, i - M), min(L, i + M + 1)):
            if j == i:
                continue
            m = abs(j - i)
            if j >= i0 and j < i1:
                if j < i:
                    continue
                vn, fn = lookup(lag, inv_dr, m, _dist(q, i, j))
                if fn:
                    return 0.0, True
                r_old = 0.0
                for c in range(q.shape[1]):
                    x = old[i - i0, c] - old[j - i0, c]
                    r_old += x * x
                vo, _ = lookup(lag, inv_dr, m, math.sqrt(r_old))
            else:
                vn, fn = lookup(lag, inv_dr, m, _dist(q, i, j))
                if fn:
                    return 0.0, True
                vo, _ = lookup(lag, inv_dr, m, _dist_vec(old[i - i0], q, j))
            s += w[i] * w[j] * (vn - vo)
    return 2.0 * s * dt * dt, False


@njit(cache=True, nogil=True)
def ou_action(q, a, sig2, v):
    """Negative log density of the stationary discrete OU chain (constants dropped)."""
    L, d = q.shape
    s = 0.0
    for c in range(d):
        s += q[0, c] * q[0, c] / (2.0 * v)
        for i in range(L - 1):
            x = q[i + 1, c] - a * q[i, c]
            s += x * x / (2.0 * sig2)
    return s


@njit(cache=True, nogil=True)
def _ou_local(q, i, x, a, sig2, v):
    L, d = q.shape
    s = 0.0
    for c in range(d):
        if i == 0:
            s += x[c] * x[c] / (2.0 * v)
        else:
            y = x[c] - a * q[i - 1, c]
            s += y * y / (2.0 * sig2)
        if i < L - 1:
            y = q[i + 1, c] - a * x[c]
            s += y * y / (2.0 * sig2)
    return s


@njit(cache=True, nogil=True)
def kinetic_action(q, dt):
    L, d = q.shape
    s = 0.0
    for i in range(L - 1):
        for c in range(d):
            x = q[i + 1, c] - q[i, c]
            s += x * x
    return s / (2.0 * dt)


@njit(cache=True, nogil=True)
def _kinetic_local(q, i, x, dt):
    L, d = q.shape
    s = 0.0
    for c in range(d):
        if i > 0:
            y = x[c] - q[i - 1, c]
            s += y * y
        if i < L - 1:
            y = q[i + 1, c] - x[c]
            s += y * y
    return s / (2.0 * dt)


@njit(cache=True, nogil=True)
def potential_action(q, w, dt, vfunc):
    s = 0.0
    for i in range(q.shape[0]):
        s += w[i] * vfunc(q[i])
    return s * dt


@njit(cache=True, nogil=True)
def _regen_block_ou(q, i0, n, a, sig2, v, gen):
    L, d = q.shape
    i1 = i0 + n
    has_right = i1 < L
    for i in range(i0, i1):
        k = i1 - i  # steps from bead i to the right anchor
        if has_right:
            an = a**k
            rv = v * (1.0 - an * an)
        for c in range(d):
            if i == 0:
                m0 = 0.0
                p0 = 1.0 / v
            else:
                m0 = a * q[i - 1, c]
                p0 = 1.0 / sig2
            if has_right:
                prec = p0 + an * an / rv
                mean = (m0 * p0 + an * q[i1, c] / rv) / prec
            else:
                prec = p0
                mean = m0
            q[i, c] = mean + gen.standard_normal() / math.sqrt(prec)


@njit(cache=True, nogil=True)
def _regen_block_bm(q, i0, n, dt, gen):
    L, d = q.shape
    i1 = i0 + n
    if i0 > 0:
        has_right = i1 < L
        for i in range(i0, i1):
            k = i1 - i
            for c in range(d):
                if has_right:
                    mean = (k * q[i - 1, c] + q[i1, c]) / (k + 1.0)
                    var = dt * k / (k + 1.0)
                else:
                    mean = q[i - 1, c]
                    var = dt
                q[i, c] = mean + math.sqrt(var) * gen.standard_normal()
    else:
        # free left end: walk backward from the right anchor
        for i in range(i1 - 1, i0 - 1, -1):
            for c in range(d):
                q[i, c] = q[i + 1, c] + math.sqrt(dt) * gen.standard_normal()


@njit(cache=True, nogil=True)
def sweeps(q, w, mode, a, sig2, v, dt, lag, inv_dr, M, use_w, vfunc,
           step, shift_step, p_bead, p_block, block_len, n_sweeps, adapt,
           record_every, out, out_pos, energy, counts, gen):
    """Run ``n_sweeps`` sweeps of L proposals each.

    counts: int64 (7,) = proposals[3], accepted[3], far-rejections.
    Returns (energy, step, out_pos).  When ``record_every > 0`` the path is
    copied into ``out[out_pos]`` after every ``record_every``-th sweep.
    """
    L, d = q.shape
    new = np.empty(d)
    old = np.empty((block_len, d))
    general = mode == MODE_GENERAL
    for sweep in range(n_sweeps):
        acc_bead = 0
        n_bead = 0
        for _ in range(L):
            u = gen.random()
            if u < p_bead:
                i = int(gen.random() * L)
                for c in range(d):
                    new[c] = q[i, c] + step * gen.standard_normal()
                if mode == MODE_HARMONIC:
                    ds = _ou_local(q, i, new, a, sig2, v) - _ou_local(q, i, q[i], a, sig2, v)
                else:
                    ds = _kinetic_local(q, i, new, dt) - _kinetic_local(q, i, q[i], dt)
                    ds += w[i] * dt * (vfunc(new) - vfunc(q[i]))
                de = 0.0
                if use_w:
                    de, far = _bead_delta_e(q, i, new, w, M, lag, inv_dr, dt)
                    if far:
                        counts[6] += 1
                        counts[MOVE_BEAD] += 1
                        n_bead += 1
                        continue
                counts[MOVE_BEAD] += 1
                n_bead += 1
                x = ds + de
                if x <= 0.0 or gen.random() < math.exp(-x):
                    for c in range(d):
                        q[i, c] = new[c]
                    energy += de
                    counts[3 + MOVE_BEAD] += 1
                    acc_bead += 1
            elif u < p_bead + p_block:
                n = block_len
                i0 = int(gen.random() * (L - n + 1))
                for k in range(n):
                    for c in range(d):
                        old[k, c] = q[i0 + k, c]
                dv = 0.0
                if general:
                    for k in range(n):
                        dv -= w[i0 + k] * vfunc(q[i0 + k])
                if mode == MODE_HARMONIC:
                    _regen_block_ou(q, i0, n, a, sig2, v, gen)
                else:
                    _regen_block_bm(q, i0, n, dt, gen)
                    for k in range(n):
                        dv += w[i0 + k] * vfunc(q[i0 + k])
                    dv *= dt
                de = 0.0
                far = False
                if use_w:
                    de, far = _block_delta_e(q, old, i0, n, w, M, lag, inv_dr, dt)
                counts[MOVE_BLOCK] += 1
                x = de + dv
                if far:
                    counts[6] += 1
                    ok = False
                else:
                    ok = x <= 0.0 or gen.random() < math.exp(-x)
                if ok:
                    energy += de
                    counts[3 + MOVE_BLOCK] += 1
                else:
                    for k in range(n):
                        for c in range(d):
                            q[i0 + k, c] = old[k, c]
            else:
                for c in range(d):
                    new[c] = shift_step * gen.standard_normal()
                if mode == MODE_HARMONIC:
                    s_old = ou_action(q, a, sig2, v)
                    for i in range(L):
                        for c in range(d):
                            q[i, c] += new[c]
                    ds = ou_action(q, a, sig2, v) - s_old
                else:
                    s_old = potential_action(q, w, dt, vfunc)
                    for i in range(L):
                        for c in range(d):
                            q[i, c] += new[c]
                    ds = potential_action(q, w, dt, vfunc) - s_old
                counts[MOVE_SHIFT] += 1
                if ds <= 0.0 or gen.random() < math.exp(-ds):
                    counts[3 + MOVE_SHIFT] += 1
                else:
                    for i in range(L):
                        for c in range(d):
                            q[i, c] -= new[c]
        if adapt and n_bead > 0:
            rate = acc_bead / n_bead
            step *= math.exp(rate - 0.4)
        if record_every > 0 and (sweep + 1) % record_every == 0:
            for i in range(L):
                for c in range(d):
                    out[out_pos, i, c] = q[i, c]
            out_pos += 1
    return energy, step, out_pos


@njit(cache=True, nogil=True)
def zero_potential(x):
    return 0.0


@njit(cache=True, nogil=True)
def momentum_accumulate(q, center, A, M, k_nodes, omega, dt, dim, out):
    """out[n] += sum_{a,b} w_a w_b dt^2 e^{-omega_n (a+b) dt} K_d(k_n |q_b - q_{-a}|), a+b <= M."""
    nk = k_nodes.shape[0]
    decay = np.empty((M + 1, nk))
    for m in range(M + 1):
        for n in range(nk):
            decay[m, n] = math.exp(-omega[n] * m * dt)
    for a in range(A + 1):
        wa = 0.5 if a == 0 else 1.0
        bmax = min(A, M - a)
        for b in range(bmax + 1):
            wb = 0.5 if b == 0 else 1.0
            r = _dist(q, center + b, center - a)
            wt = wa * wb * dt * dt
            for n in range(nk):
                x = k_nodes[n] * r
                if dim == 1:
                    kern = math.cos(x)
                elif x < 1e-8:
                    kern = 1.0 - x * x / 6.0
                else:
                    kern = math.sin(x) / x
                out[n] += wt * decay[a + b, n] * kern


@njit(cache=True, nogil=True)
def radial_time_functional(radii, weights_t, decay_rows, k_nodes, coef, dim):
    """sum_s weights_t[s] sum_n coef[n] decay_rows[s, n] K_d(k_n radii[s])."""
    total = 0.0
    for s in range(radii.shape[0]):
        acc = 0.0
        for n in range(k_nodes.shape[0]):
            x = k_nodes[n] * radii[s]
            if dim == 1:
                kern = math.cos(x)
            elif x < 1e-8:
                kern = 1.0 - x * x / 6.0
            else:
                kern = math.sin(x) / x
            acc += coef[n] * decay_rows[s, n] * kern
        total += weights_t[s] * acc
    return total
