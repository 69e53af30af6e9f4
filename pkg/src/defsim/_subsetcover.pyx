# cython: boundscheck=False, wraparound=False, cdivision=True
"""Exhaustive minimal-cost dependency-closed cover over <= 20 parameters.

Tight C loop over all 2**n parameter subsets; the pure-Python fallback in
defsim.deception implements the same contract via branch and bound.
"""


def min_cost_closed_cover(double[::1] costs, unsigned int[::1] closures,
                          unsigned int[::1] paths):
    """Return (best_mask, best_cost); best_mask -1 when no feasible subset.

    A subset is feasible when it intersects every path mask and is closed
    under the per-parameter dependency closures. Ties on cost resolve to the
    numerically smallest mask.
    """
    cdef int n = costs.shape[0]
    cdef int npaths = paths.shape[0]
    cdef unsigned long long total = 1ULL << n
    cdef unsigned long long mask
    cdef unsigned int m, needed
    cdef int i, j, ok
    cdef double best_cost = 0.0
    cdef double cost
    cdef long long best_mask = -1

    if n > 25:
        raise ValueError("subset enumeration bounded at 25 parameters")

    for mask in range(total):
        m = <unsigned int> mask
        ok = 1
        for j in range(npaths):
            if (m & paths[j]) == 0:
                ok = 0
                break
        if not ok:
            continue
        cost = 0.0
        needed = 0
        for i in range(n):
            if m & (1u << i):
                cost += costs[i]
                needed |= closures[i]
        if (needed & ~m) != 0:
            continue
        if best_mask < 0 or cost < best_cost:
            best_cost = cost
            best_mask = <long long> m
    return best_mask, best_cost
