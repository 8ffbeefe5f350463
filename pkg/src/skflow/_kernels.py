"""Compiled inner loops: threshold-crossing scans and sorted merges."""
import numpy as np
from numba import njit


@njit(cache=True)
def merge_unique(a, b):
    """Sorted union of two sorted arrays (exact float equality dedups)."""
    na, nb = a.size, b.size
    out = np.empty(na + nb)
    i = j = k = 0
    while i < na and j < nb:
        if a[i] < b[j]:
            v = a[i]
            i += 1
        elif b[j] < a[i]:
            v = b[j]
            j += 1
        else:
            v = a[i]
            i += 1
            j += 1
        if k == 0 or out[k - 1] != v:
            out[k] = v
            k += 1
    while i < na:
        if k == 0 or out[k - 1] != a[i]:
            out[k] = a[i]
            k += 1
        i += 1
    while j < nb:
        if k == 0 or out[k - 1] != b[j]:
            out[k] = b[j]
            k += 1
        j += 1
    return out[:k]


@njit(cache=True)
def _dist2(x, ref):
    s = 0.0
    for i in range(x.size):
        d = x[i] - ref[i]
        s += d * d
    return s


@njit(cache=True)
def _opnorm(x, ref, d, m):
    diff = (x - ref).reshape(d, m)
    return np.linalg.svd(np.ascontiguousarray(diff))[1][0]


@njit(cache=True)
def scan_crossings(u, R, L, eps, cap, mode, d, m, guard):
    """First-passage times of an affine-interpolated path away from its last
    frozen value.

    ``u`` are nodes (last one is T), ``R`` right values and ``L`` left limits
    at the nodes (``L[0]`` unused); between nodes the path is affine from
    ``R[k]`` to ``L[k+1]``. A new time is recorded as soon as the distance to
    the frozen value reaches ``eps``, either inside a segment, through the
    left limit at a node or through the value at a node. ``T`` always closes
    the list. ``mode`` 0 uses the Euclidean norm, 1 the operator norm of a
    d×m matrix. ``guard`` is the forced step when rounding stalls a
    crossing at the previous time. Returns ``(times, values, count)``; ``count = -1`` means the
    capacity was exhausted.
    """
    N = u.size - 1
    D = R.shape[1]
    out_t = np.empty(cap)
    out_v = np.empty((cap, D))
    out_t[0] = u[0]
    out_v[0, :] = R[0]
    J = 1
    ref = R[0].copy()
    eps2 = eps * eps
    x = np.empty(D)
    B = np.empty(D)
    for k in range(N):
        h = u[k + 1] - u[k]
        for i in range(D):
            B[i] = (L[k + 1, i] - R[k, i]) / h
        pos = 0.0
        if out_t[J - 1] > u[k]:
            pos = out_t[J - 1] - u[k]
        bb = 0.0
        for i in range(D):
            bb += B[i] * B[i]
        while bb > 0.0:
            for i in range(D):
                x[i] = R[k, i] + B[i] * pos - ref[i]
            if mode == 0:
                db = 0.0
                dd = 0.0
                for i in range(D):
                    db += x[i] * B[i]
                    dd += x[i] * x[i]
                c0 = dd - eps2
                if c0 >= 0.0:
                    tau = 0.0
                else:
                    disc = db * db - bb * c0
                    tau = -c0 / (db + np.sqrt(disc))
            else:
                # operator norm is convex along the segment: bisect the first root
                rem = h - pos
                for i in range(D):
                    x[i] = R[k, i] + B[i] * (pos + rem) - ref[i]
                if _opnorm(x, np.zeros(D), d, m) < eps:
                    break
                lo, hi = 0.0, rem
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    if mid <= lo or mid >= hi:
                        break
                    for i in range(D):
                        x[i] = R[k, i] + B[i] * (pos + mid) - ref[i]
                    if _opnorm(x, np.zeros(D), d, m) >= eps:
                        hi = mid
                    else:
                        lo = mid
                tau = hi
            t_new = u[k] + (pos + tau)
            if t_new >= u[k + 1]:
                break
            if t_new <= out_t[J - 1]:
                t_new = max(np.nextafter(out_t[J - 1], np.inf), out_t[J - 1] + guard)
                if t_new >= u[k + 1]:
                    break
            if J + 1 >= cap:
                return out_t, out_v, -1
            pos = t_new - u[k]
            out_t[J] = t_new
            for i in range(D):
                out_v[J, i] = R[k, i] + B[i] * pos
                ref[i] = out_v[J, i]
            J += 1
        # node u[k+1]: left limit first, then the value there
        if mode == 0:
            hit = _dist2(L[k + 1], ref) >= eps2 or _dist2(R[k + 1], ref) >= eps2
        else:
            hit = _opnorm(L[k + 1], ref, d, m) >= eps or _opnorm(R[k + 1], ref, d, m) >= eps
        if k + 1 == N:
            if J + 1 > cap:
                return out_t, out_v, -1
            out_t[J] = u[N]
            for i in range(D):
                out_v[J, i] = R[N, i] if hit else ref[i]
            J += 1
        elif hit:
            if J + 1 >= cap:
                return out_t, out_v, -1
            out_t[J] = u[k + 1]
            for i in range(D):
                out_v[J, i] = R[k + 1, i]
                ref[i] = R[k + 1, i]
            J += 1
    return out_t, out_v, J


@njit(cache=True)
def locate_sorted(times, q):
    """For sorted queries: index k with ``times[k] <= q < times[k+1]``
    (``searchsorted(times, q, 'right') - 1``) by a single merge walk."""
    out = np.empty(q.size, dtype=np.int64)
    k = 0
    n = times.size
    for i in range(q.size):
        while k + 1 < n and times[k + 1] <= q[i]:
            k += 1
        if times[k] > q[i]:
            out[i] = -1
        else:
            out[i] = k
    return out


@njit(cache=True)
def combine2(t1, a1, c1, e1, t2, a2, c2, e2, w1, w2):
    """``w1 x + w2 y`` on the union of breakpoints."""
    times = merge_unique(t1, t2)
    K = times.size - 1
    D = a1.shape[1]
    a = np.empty((K, D))
    c = np.empty((K, D))
    i = 0
    j = 0
    k1 = t1.size - 2
    k2 = t2.size - 2
    for k in range(K):
        s = times[k]
        while i < k1 and t1[i + 1] <= s:
            i += 1
        while j < k2 and t2[j + 1] <= s:
            j += 1
        d1 = s - t1[i]
        d2 = s - t2[j]
        for q in range(D):
            a[k, q] = w1 * (a1[i, q] + c1[i, q] * d1) + w2 * (a2[j, q] + c2[j, q] * d2)
            c[k, q] = w1 * c1[i, q] + w2 * c2[j, q]
    term = w1 * e1 + w2 * e2
    return times, a, c, term


@njit(cache=True)
def sup_diff(t1, a1, c1, e1, t2, a2, c2, e2):
    """Euclidean ``sup_t |x(t) - y(t)|`` including left limits and T."""
    D = a1.shape[1]
    best = 0.0
    i = 0
    j = 0
    k1 = t1.size - 2
    k2 = t2.size - 2
    s = 0.0
    horizon = t1[t1.size - 1]
    while True:
        while i < k1 and t1[i + 1] <= s:
            i += 1
        while j < k2 and t2[j + 1] <= s:
            j += 1
        nxt1 = t1[i + 1]
        nxt2 = t2[j + 1]
        e = nxt1 if nxt1 < nxt2 else nxt2
        v0 = 0.0
        v1 = 0.0
        for q in range(D):
            x0 = a1[i, q] + c1[i, q] * (s - t1[i]) - (a2[j, q] + c2[j, q] * (s - t2[j]))
            x1 = a1[i, q] + c1[i, q] * (e - t1[i]) - (a2[j, q] + c2[j, q] * (e - t2[j]))
            v0 += x0 * x0
            v1 += x1 * x1
        if v0 > best:
            best = v0
        if v1 > best:
            best = v1
        if e >= horizon:
            break
        s = e
    vT = 0.0
    for q in range(D):
        x = e1[q] - e2[q]
        vT += x * x
    if vT > best:
        best = vT
    return np.sqrt(best)


@njit(cache=True)
def integrate_affine(tp, ap, cp, tY, aY, cY, eY, d, m):
    """Pathwise ``∫ P_{s-} dY_s`` for piecewise-affine ``P`` (rows are
    flattened d×m matrices) and ``Y``; exact at every node, secant between."""
    times = merge_unique(tp, tY)
    K = times.size - 1
    a = np.empty((K, d))
    c = np.empty((K, d))
    cur = np.zeros(d)
    ip = 0
    iy = 0
    kp = tp.size - 2
    ky = tY.size - 2
    sloped = False
    for q in range(cp.shape[0]):
        for r in range(cp.shape[1]):
            if cp[q, r] != 0.0:
                sloped = True
    yl = np.empty(m)
    yr = np.empty(m)
    for k in range(K):
        s = times[k]
        e = times[k + 1]
        h = e - s
        while ip < kp and tp[ip + 1] <= s:
            ip += 1
        while iy < ky and tY[iy + 1] <= s:
            iy += 1
        dp = s - tp[ip]
        for q in range(m):
            yl[q] = aY[iy, q] + cY[iy, q] * (e - tY[iy])
        if k + 1 == K:
            for q in range(m):
                yr[q] = eY[q]
        else:
            jy = iy
            while jy < ky and tY[jy + 1] <= e:
                jy += 1
            for q in range(m):
                yr[q] = aY[jy, q] + cY[jy, q] * (e - tY[jy])
        for r in range(d):
            a[k, r] = cur[r]
            slope = 0.0
            curv = 0.0
            jump = 0.0
            for q in range(m):
                p0 = ap[ip, r * m + q] + cp[ip, r * m + q] * dp
                slope += p0 * cY[iy, q]
                pl = p0
                if sloped:
                    curv += cp[ip, r * m + q] * cY[iy, q]
                    pl = p0 + cp[ip, r * m + q] * h
                jump += pl * (yr[q] - yl[q])
            if sloped:
                left = cur[r] + slope * h + curv * h * h / 2
                cs = (left - cur[r]) / h
                for _ in range(8):
                    got = cur[r] + cs * h
                    if got == left:
                        break
                    cs = np.nextafter(cs, np.inf) if got < left else np.nextafter(cs, -np.inf)
                c[k, r] = cs
                cur[r] = cur[r] + cs * h + jump
            else:
                c[k, r] = slope
                cur[r] = cur[r] + slope * h + jump
    return times, a, c, cur
