# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: adaptive Dormand-Prince stepping of the 4-component
Bloch system and the sorted two-pointer pair histogram."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, fmax, fmin, pow

cnp.import_array()

ctypedef double complex cplx

cdef double C2 = 1.0 / 5.0, C3 = 3.0 / 10.0, C4 = 4.0 / 5.0, C5 = 8.0 / 9.0
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0
cdef double A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0
cdef double B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = -71.0 / 57600.0, E3 = 71.0 / 16695.0, E4 = -71.0 / 1920.0
cdef double E5 = 17253.0 / 339200.0, E6 = -22.0 / 525.0, E7 = 1.0 / 40.0

# dense-output polynomial coefficients (rows: stages 1..7, cols: theta^1..theta^4)
cdef double P[7][4]
_P = (
    (1.0, -2.8535800653862835, 3.0717434641059005, -1.1270175653862835),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 4.023133379230305, -6.249321565289, 2.675424484351598),
    (0.0, -3.7324019615885042, 10.068970589843675, -5.685526961588504),
    (0.0, 2.5548038301849423, -6.399112377351017, 3.5219323679207912),
    (0.0, -1.3744241142186024, 3.272657752246729, -1.7672812570757455),
    (0.0, 1.3824689317781436, -3.764937863556287, 2.382468931778144),
)
for _i in range(7):
    for _j in range(4):
        P[_i][_j] = _P[_i][_j]


cdef inline void rhs(cplx[:, ::1] l0, cplx[:, ::1] l1, double w,
                     cplx* x, cplx* out) noexcept nogil:
    cdef int i, j
    cdef cplx acc
    for i in range(4):
        acc = 0
        for j in range(4):
            acc = acc + (l0[i, j] + w * l1[i, j]) * x[j]
        out[i] = acc


cdef inline double omega_at(double t, double ta, double tb, double wa, double wb) noexcept nogil:
    if tb <= ta:
        return wa
    return wa + (wb - wa) * (t - ta) / (tb - ta)


cdef inline double cabs2(cplx z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


def integrate_linear(cplx[:, ::1] l0, cplx[:, ::1] l1,
                     double[::1] seg_t0, double[::1] seg_t1,
                     double[::1] seg_w0, double[::1] seg_w1,
                     cplx[::1] x0, double[::1] t_out,
                     double rtol, double atol):
    """Integrate dx/dt = (l0 + omega(t) l1) x over contiguous linear-drive segments.

    ``t_out`` must be sorted and lie inside [seg_t0[0], seg_t1[-1]].
    Returns a (len(t_out), 4) complex array sampled by dense output.
    Raises FloatingPointError on step-size underflow.
    """
    cdef Py_ssize_t nseg = seg_t0.shape[0]
    cdef Py_ssize_t nout = t_out.shape[0]
    out_arr = np.zeros((nout, 4), dtype=np.complex128)
    cdef cplx[:, ::1] out = out_arr
    cdef cplx y[4]
    cdef cplx yn[4]
    cdef cplx ytmp[4]
    cdef cplx k[7][4]
    cdef cplx err
    cdef Py_ssize_t s, io = 0
    cdef int i, j, m
    cdef double t, t_end, ta, tb, wa, wb, h, hmax, h_prop = 0.0
    cdef double sc, en, d0, d1, factor, theta, q, th
    cdef bint have_h = False, last
    cdef double tiny

    for i in range(4):
        y[i] = x0[i]
    t = seg_t0[0]
    while io < nout and t_out[io] <= t:
        for i in range(4):
            out[io, i] = y[i]
        io += 1

    h = 0.0
    for s in range(nseg):
        ta = seg_t0[s]
        tb = seg_t1[s]
        wa = seg_w0[s]
        wb = seg_w1[s]
        t = ta
        t_end = tb
        if t_end <= t:
            continue
        hmax = t_end - t
        rhs(l0, l1, omega_at(t, ta, tb, wa, wb), y, k[0])
        if not have_h:
            d0 = 0.0
            d1 = 0.0
            for i in range(4):
                sc = atol + rtol * sqrt(cabs2(y[i]))
                d0 += cabs2(y[i]) / (sc * sc)
                d1 += cabs2(k[0][i]) / (sc * sc)
            d0 = sqrt(d0 / 4.0)
            d1 = sqrt(d1 / 4.0)
            if d0 < 1e-5 or d1 < 1e-5:
                h = 1e-6 * hmax if 1e-6 * hmax > 0 else 1e-6
            else:
                h = 0.01 * d0 / d1
            have_h = True
        h = fmin(h, hmax)
        while t < t_end:
            tiny = 1e-14 * fmax(fabs(t), 1.0)
            last = False
            if t + h >= t_end - tiny:
                h_prop = h
                h = t_end - t
                last = True
            if h < tiny:
                raise FloatingPointError("step size underflow at t=%g" % t)
            # stages
            for i in range(4):
                ytmp[i] = y[i] + h * A21 * k[0][i]
            rhs(l0, l1, omega_at(t + C2 * h, ta, tb, wa, wb), ytmp, k[1])
            for i in range(4):
                ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i])
            rhs(l0, l1, omega_at(t + C3 * h, ta, tb, wa, wb), ytmp, k[2])
            for i in range(4):
                ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i])
            rhs(l0, l1, omega_at(t + C4 * h, ta, tb, wa, wb), ytmp, k[3])
            for i in range(4):
                ytmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i]
                                      + A54 * k[3][i])
            rhs(l0, l1, omega_at(t + C5 * h, ta, tb, wa, wb), ytmp, k[4])
            for i in range(4):
                ytmp[i] = y[i] + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i]
                                      + A64 * k[3][i] + A65 * k[4][i])
            rhs(l0, l1, omega_at(t + h, ta, tb, wa, wb), ytmp, k[5])
            for i in range(4):
                yn[i] = y[i] + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i]
                                    + B5 * k[4][i] + B6 * k[5][i])
            rhs(l0, l1, omega_at(t + h, ta, tb, wa, wb), yn, k[6])
            en = 0.0
            for i in range(4):
                err = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i]
                           + E6 * k[5][i] + E7 * k[6][i])
                sc = atol + rtol * fmax(sqrt(cabs2(y[i])), sqrt(cabs2(yn[i])))
                en += cabs2(err) / (sc * sc)
            en = sqrt(en / 4.0)
            if en <= 1.0:
                # dense output for requested samples inside (t, t + h]
                while io < nout and t_out[io] <= t + h:
                    if t_out[io] >= t + h:
                        for i in range(4):
                            out[io, i] = yn[i]
                    else:
                        theta = (t_out[io] - t) / h
                        for i in range(4):
                            err = 0
                            for j in range(7):
                                q = 0.0
                                th = theta
                                for m in range(4):
                                    q += P[j][m] * th
                                    th *= theta
                                err = err + q * k[j][i]
                            out[io, i] = y[i] + h * err
                    io += 1
                t = t_end if last else t + h
                for i in range(4):
                    y[i] = yn[i]
                    k[0][i] = k[6][i]
                if en == 0.0:
                    factor = 10.0
                else:
                    factor = fmin(10.0, 0.9 * pow(en, -0.2))
                h = h * factor
                if last and h_prop > h:
                    h = h_prop
            else:
                factor = fmax(0.2, 0.9 * pow(en, -0.2))
                h = h * factor
    while io < nout:
        for i in range(4):
            out[io, i] = y[i]
        io += 1
    return out_arr


def pair_histogram(cnp.int64_t[::1] ta, cnp.int64_t[::1] tb,
                   cnp.int64_t bw, cnp.int64_t nb, bint same):
    """Count lags tb - ta into 2*nb+1 bins of width ``bw`` centred on k*bw.

    Both inputs sorted ascending. Bin index rounds half away from zero so
    that swapping the inputs mirrors the histogram exactly. With ``same``
    the inputs are the same array and the i == j pairs are skipped.
    """
    cdef Py_ssize_t na = ta.shape[0], nbb = tb.shape[0]
    counts_arr = np.zeros(2 * nb + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef Py_ssize_t i, j, lo = 0
    cdef cnp.int64_t reach = (nb + 1) * bw
    cdef cnp.int64_t d, ad, kb
    with nogil:
        for i in range(na):
            while lo < nbb and tb[lo] < ta[i] - reach:
                lo += 1
            j = lo
            while j < nbb and tb[j] <= ta[i] + reach:
                if same and j == i:
                    j += 1
                    continue
                d = tb[j] - ta[i]
                ad = d if d >= 0 else -d
                kb = (2 * ad + bw) // (2 * bw)
                if kb <= nb:
                    if d >= 0:
                        counts[nb + kb] += 1
                    else:
                        counts[nb - kb] += 1
                j += 1
    return counts_arr
