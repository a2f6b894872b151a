# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the fused LSTM layer (forward and BPTT)."""

from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

import numpy as np


cdef extern from "_lstm_cell.h" nogil:
    void gates_logistic(int n, double *z)
    void cell_state(int H, double *z, const double *c_prev, double *c)
    void tanh_block(int n, const double *c, double *tc)
    void cell_output(int H, const double *z, const double *tc, double *h)
    void cell_backward(int H, const double *z, const double *c_prev, const double *tc,
                       const double *dh_out, double *dh, double *dc, double *dz)


def forward(const double[:, :, ::1] xs, const double[:, ::1] w_hh, double[:, :, ::1] Z,
            double[:, :, ::1] Cs, double[:, :, ::1] TC, double[:, :, ::1] Hs):
    """Run the recurrence.

    ``xs`` holds x @ w_ih + b and ``w_hh`` the recurrent weights, both with gate
    columns pre-scaled by -1 (i, f, o) and -2 (g). Z receives post-activation
    gates; Cs and Hs carry a leading zero state at index 0.
    """
    cdef int T = xs.shape[0], B = xs.shape[1], G = xs.shape[2]
    cdef int H = G // 4
    cdef int t, b
    cdef double one = 1.0
    cdef char transN = b'N'
    cdef double *w = <double *>&w_hh[0, 0]
    with nogil:
        memset(&Cs[0, 0, 0], 0, B * H * sizeof(double))
        memset(&Hs[0, 0, 0], 0, B * H * sizeof(double))
        for t in range(T):
            memcpy(&Z[t, 0, 0], &xs[t, 0, 0], B * G * sizeof(double))
            # row-major Z[t] (B x G) += Hs[t] (B x H) @ w_hh (H x G)
            dgemm(&transN, &transN, &G, &B, &H, &one, w, &G, &Hs[t, 0, 0], &H, &one, &Z[t, 0, 0], &G)
            gates_logistic(B * G, &Z[t, 0, 0])
            for b in range(B):
                cell_state(H, &Z[t, b, 0], &Cs[t, b, 0], &Cs[t + 1, b, 0])
            tanh_block(B * H, &Cs[t + 1, 0, 0], &TC[t, 0, 0])
            for b in range(B):
                cell_output(H, &Z[t, b, 0], &TC[t, b, 0], &Hs[t + 1, b, 0])


def backward(const double[:, :, ::1] dH, const double[:, ::1] w_hh_t, const double[:, :, ::1] Z,
             const double[:, :, ::1] Cs, const double[:, :, ::1] TC, double[:, :, ::1] DZ):
    """Back-propagate through time; DZ receives pre-activation gate gradients."""
    cdef int T = Z.shape[0], B = Z.shape[1], G = Z.shape[2]
    cdef int H = G // 4
    cdef int t, b
    cdef double one = 1.0, zero = 0.0
    cdef char transN = b'N'
    cdef double[:, ::1] dh = np.zeros((B, H))
    cdef double[:, ::1] dc = np.zeros((B, H))
    cdef double *wt = <double *>&w_hh_t[0, 0]
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                cell_backward(H, &Z[t, b, 0], &Cs[t, b, 0], &TC[t, b, 0], &dH[t, b, 0],
                              &dh[b, 0], &dc[b, 0], &DZ[t, b, 0])
            # row-major dh (B x H) = DZ[t] (B x G) @ w_hh^T (G x H)
            dgemm(&transN, &transN, &H, &B, &G, &one, wt, &H, &DZ[t, 0, 0], &G, &zero, &dh[0, 0], &H)
