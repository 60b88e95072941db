# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled block pass for the aggregation primitive.

Destination rows are handed out to OpenMP threads in dynamic chunks. Each row
is loaded into a thread-private accumulator once, every block-local neighbour
message is folded in, and the row is stored once.
"""
from cython.parallel cimport parallel, prange
from libc.stdint cimport int64_t
from libc.stdlib cimport free, malloc

ctypedef fused elem_t:
    int64_t
    float
    double

# operator codes mirror aggforge.graph.BINARY_OPS / REDUCE_OPS
cdef enum:
    ADD = 0
    SUB = 1
    MUL = 2
    DIV = 3
    COPYLHS = 4
    COPYRHS = 5

cdef enum:
    RSUM = 0
    RMAX = 1
    RMIN = 2


cdef inline elem_t _message(int op, elem_t x, elem_t y) noexcept nogil:
    cdef elem_t q
    if op == COPYLHS:
        return x
    elif op == COPYRHS:
        return y
    elif op == ADD:
        return x + y
    elif op == SUB:
        return x - y
    elif op == MUL:
        return x * y
    if elem_t is int64_t:
        # floor division, matching numpy.floor_divide; zero divisors are rejected upstream
        q = x / y
        if (x % y != 0) and ((x < 0) != (y < 0)):
            q = q - 1
        return q
    else:
        return x / y


cdef inline elem_t _reduce(int op, elem_t t, elem_t m) noexcept nogil:
    if op == RSUM:
        return t + m
    elif op == RMAX:
        return m if m > t else t
    return m if m < t else t


def block_pass(const int64_t[::1] row_ptr, const int64_t[::1] col_idx,
               const int64_t[::1] edge_id, const elem_t[:, ::1] fV,
               const elem_t[:, ::1] fE, elem_t[:, ::1] out,
               int binop, int redop, Py_ssize_t chunk, int workers):
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t d = out.shape[1]
    cdef Py_ssize_t v, j, k, u, e
    cdef elem_t *acc
    cdef elem_t x, y
    # C array so the flag is shared, not thread-private
    cdef int failed[1]
    failed[0] = 0

    with nogil, parallel(num_threads=workers):
        acc = <elem_t *> malloc(d * sizeof(elem_t))
        if acc == NULL:
            failed[0] = 1
        else:
            for v in prange(n, schedule="dynamic", chunksize=chunk):
                if row_ptr[v] < row_ptr[v + 1]:
                    for j in range(d):
                        acc[j] = out[v, j]
                    for k in range(row_ptr[v], row_ptr[v + 1]):
                        u = col_idx[k]
                        e = edge_id[k]
                        for j in range(d):
                            x = fV[u, j] if binop != COPYRHS else fE[e, j]
                            y = fE[e, j] if binop != COPYLHS else fV[u, j]
                            acc[j] = _reduce(redop, acc[j], _message(binop, x, y))
                    for j in range(d):
                        out[v, j] = acc[j]
            free(acc)
    if failed[0]:
        raise MemoryError("could not allocate row accumulator")
