# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: batched local SGD for softmax regression and
fixed-order weighted combination of parameter vectors."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def combine(const double[:, ::1] coeffs, const double[:, ::1] vectors):
    cdef Py_ssize_t m_count = coeffs.shape[0]
    cdef Py_ssize_t k_count = coeffs.shape[1]
    cdef Py_ssize_t dim = vectors.shape[1]
    out_arr = np.zeros((m_count, dim))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t m, k, d
    cdef double c
    for m in range(m_count):
        for k in range(k_count):
            c = coeffs[m, k]
            if c != 0.0:
                for d in range(dim):
                    out[m, d] = out[m, d] + c * vectors[k, d]
    return out_arr


def softmax_local_step(const double[:, ::1] params, const double[:, ::1] X,
                       const cnp.int64_t[::1] y, const cnp.int64_t[::1] idx,
                       const cnp.int64_t[::1] offsets, double lr, int num_classes):
    cdef Py_ssize_t n_clients = params.shape[0]
    cdef Py_ssize_t dim = params.shape[1]
    cdef Py_ssize_t nf = X.shape[1]
    cdef Py_ssize_t split = nf * num_classes
    out_arr = np.array(params, copy=True)
    cdef double[:, ::1] out = out_arr
    grad_arr = np.empty(dim)
    cdef double[::1] grad = grad_arr
    prob_arr = np.empty(num_classes)
    cdef double[::1] prob = prob_arr
    cdef Py_ssize_t k, r, row, f, c, start, stop, nb
    cdef double zmax, total, xv, scale
    for k in range(n_clients):
        start = offsets[k]
        stop = offsets[k + 1]
        nb = stop - start
        if nb == 0:
            continue
        for f in range(dim):
            grad[f] = 0.0
        for r in range(start, stop):
            row = idx[r]
            for c in range(num_classes):
                prob[c] = params[k, split + c]
            for f in range(nf):
                xv = X[row, f]
                if xv != 0.0:
                    for c in range(num_classes):
                        prob[c] += xv * params[k, f * num_classes + c]
            zmax = prob[0]
            for c in range(1, num_classes):
                if prob[c] > zmax:
                    zmax = prob[c]
            total = 0.0
            for c in range(num_classes):
                prob[c] = exp(prob[c] - zmax)
                total += prob[c]
            for c in range(num_classes):
                prob[c] /= total
            prob[y[row]] -= 1.0
            for f in range(nf):
                xv = X[row, f]
                if xv != 0.0:
                    for c in range(num_classes):
                        grad[f * num_classes + c] += xv * prob[c]
            for c in range(num_classes):
                grad[split + c] += prob[c]
        scale = lr / nb
        for f in range(dim):
            out[k, f] -= scale * grad[f]
    return out_arr
