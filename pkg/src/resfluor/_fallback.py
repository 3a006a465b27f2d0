"""Pure-Python implementations of the compiled kernels in ``_core.pyx``.

Same signatures and results (to integrator tolerance for
``integrate_linear``, bit-identical for ``pair_histogram``).
"""

import numpy as np
from scipy.integrate import solve_ivp


def integrate_linear(l0, l1, seg_t0, seg_t1, seg_w0, seg_w1, x0, t_out, rtol, atol):
    l0 = np.asarray(l0, dtype=complex)
    l1 = np.asarray(l1, dtype=complex)
    t_out = np.asarray(t_out, dtype=float)
    out = np.zeros((t_out.size, 4), dtype=complex)
    y = np.array(x0, dtype=complex)
    io = int(np.searchsorted(t_out, seg_t0[0], side="right"))
    out[:io] = y
    for ta, tb, wa, wb in zip(seg_t0, seg_t1, seg_w0, seg_w1):
        if tb <= ta:
            continue
        slope = (wb - wa) / (tb - ta)

        def rhs(t, x, ta=ta, wa=wa, slope=slope):
            return (l0 + (wa + slope * (t - ta)) * l1) @ x

        stop = int(np.searchsorted(t_out, tb, side="right"))
        t_eval = t_out[io:stop]
        if not t_eval.size or t_eval[-1] < tb:
            t_eval = np.append(t_eval, tb)
        sol = solve_ivp(rhs, (ta, tb), y, method="RK45", rtol=rtol, atol=atol,
                        t_eval=t_eval)
        if sol.status < 0:
            raise FloatingPointError(sol.message)
        out[io:stop] = sol.y[:, :stop - io].T
        io = stop
        y = sol.y[:, -1].copy()
    out[io:] = y
    return out


def pair_histogram(ta, tb, bw, nb, same, chunk=1 << 20):
    ta = np.asarray(ta, dtype=np.int64)
    tb = np.asarray(tb, dtype=np.int64)
    counts = np.zeros(2 * nb + 1, dtype=np.int64)
    reach = (nb + 1) * bw
    lo = np.searchsorted(tb, ta - reach, side="left")
    hi = np.searchsorted(tb, ta + reach, side="right")
    n = hi - lo
    # expand (i, j) pairs in bounded chunks of the a-stream
    start = 0
    while start < ta.size:
        csum = np.cumsum(n[start:])
        stop = start + max(1, int(np.searchsorted(csum, chunk, side="right")))
        stop = min(stop, ta.size)
        nn = n[start:stop]
        tot = int(nn.sum())
        if tot:
            ia = np.repeat(np.arange(start, stop), nn)
            offs = np.arange(tot) - np.repeat(np.cumsum(nn) - nn, nn)
            jb = np.repeat(lo[start:stop], nn) + offs
            if same:
                keep = jb != ia
                ia, jb = ia[keep], jb[keep]
            d = tb[jb] - ta[ia]
            kb = (2 * np.abs(d) + bw) // (2 * bw)
            ok = kb <= nb
            idx = np.where(d[ok] >= 0, nb + kb[ok], nb - kb[ok])
            counts += np.bincount(idx, minlength=2 * nb + 1)
        start = stop
    return counts
