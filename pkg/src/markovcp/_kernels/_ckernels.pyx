# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring kernel (see ``_pykernels`` for the reference twin)."""

from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport free, malloc

cdef extern from *:
    """
    #include <stdint.h>
    #define MCP_GOLDEN 0x9E3779B97F4A7C15ULL
    #define MCP_STREAM_MULT 0xD1B54A32D192ED03ULL
    #define MCP_EMPTY 0xFFFFFFFFFFFFFFFFULL
    static inline uint64_t mcp_mix64(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    static inline uint64_t mcp_stream_key(uint64_t seed, uint64_t stream) {
        return mcp_mix64(mcp_mix64(seed + MCP_GOLDEN) ^ (stream * MCP_STREAM_MULT));
    }
    static inline uint64_t mcp_draw(uint64_t key, uint64_t counter) {
        return mcp_mix64(key + (counter + 1) * MCP_GOLDEN);
    }
    static inline uint64_t mcp_bounded(uint64_t z, uint64_t bound) {
        return (uint64_t)(((unsigned __int128)z * bound) >> 64);
    }
    static inline double mcp_uniform_open(uint64_t z) {
        return ((double)(z >> 12) + 0.5) * (1.0 / 4503599627370496.0);
    }
    """
    uint64_t MCP_EMPTY
    uint64_t mcp_stream_key(uint64_t seed, uint64_t stream) nogil
    uint64_t mcp_draw(uint64_t key, uint64_t counter) nogil
    uint64_t mcp_bounded(uint64_t z, uint64_t bound) nogil
    double mcp_uniform_open(uint64_t z) nogil

cdef enum:
    MAX_RANKED_BLOCKS = 20

cdef uint64_t[21] FACT
FACT[0] = 1
for _k in range(1, 21):
    FACT[_k] = FACT[_k - 1] * <uint64_t>_k


cdef struct Ctx:
    int m
    int T
    int H
    int N
    int plus
    int plus_state
    int jstep
    int pre_len
    int n_perm
    double tol
    int D
    int head_len
    int last
    double s_id
    int64_t greater
    int64_t equal
    int* aug
    int* occ
    int* perm
    int* avail
    int* win
    int64_t* counts
    double* P
    double* pw
    int64_t* map_k
    int64_t* map_v
    uint64_t* table
    uint64_t table_mask


cdef inline double score_window(Ctx* c) noexcept nogil:
    cdef double total = 0.0
    cdef int j, a, m = c.m
    cdef double s
    if c.jstep:
        a = c.win[0]
        for j in range(1, c.H + 1):
            total += c.pw[(j - 1) * m * m + a * m + c.win[j]]
    else:
        for j in range(1, c.H + 1):
            total += c.P[c.win[j - 1] * m + c.win[j]]
    s = 1.0 - total / c.H
    if s < 0.0:
        s = 0.0
    if s > 1.0:
        s = 1.0
    return s


cdef inline void tally(Ctx* c, double s) noexcept nogil:
    cdef double diff = s - c.s_id
    if diff > c.tol:
        c.greater += 1
    elif diff >= -c.tol:
        c.equal += 1


cdef inline void fill_head(Ctx* c, int k) noexcept nogil:
    cdef int p = c.head_len - 1
    while k > 0:
        k -= 1
        c.win[k] = c.aug[p]
        p -= 1
    if not c.plus:
        c.win[c.pre_len] = c.last


cdef inline void fill_from_perm(Ctx* c) noexcept nogil:
    cdef int k = c.pre_len
    cdef int r = 0
    cdef int b, p
    while k > 0 and r < c.D:
        b = c.perm[c.D - 1 - r]
        p = c.occ[b + 1] - 1
        while k > 0 and p >= c.occ[b]:
            k -= 1
            c.win[k] = c.aug[p]
            p -= 1
        r += 1
    fill_head(c, k)


cdef inline bint next_permutation(int* a, int n) noexcept nogil:
    cdef int i = n - 2
    cdef int j, t
    while i >= 0 and a[i] >= a[i + 1]:
        i -= 1
    if i < 0:
        return False
    j = n - 1
    while a[j] <= a[i]:
        j -= 1
    t = a[i]; a[i] = a[j]; a[j] = t
    i += 1
    j = n - 1
    while i < j:
        t = a[i]; a[i] = a[j]; a[j] = t
        i += 1
        j -= 1
    return True


cdef inline void unrank(Ctx* c, uint64_t rank) noexcept nogil:
    cdef int D = c.D
    cdef int k, q
    cdef uint64_t f, idx
    for k in range(D):
        c.avail[k] = k
    for k in range(D):
        f = FACT[D - 1 - k]
        idx = rank // f
        rank = rank % f
        c.perm[k] = c.avail[idx]
        for q in range(<int>idx, D - 1 - k):
            c.avail[q] = c.avail[q + 1]


cdef inline bint table_insert(Ctx* c, uint64_t v) noexcept nogil:
    """Insert ``v``; return False if it was already present."""
    cdef uint64_t h = (v * 0x9E3779B97F4A7C15ULL) >> 20
    h = h & c.table_mask
    while c.table[h] != MCP_EMPTY:
        if c.table[h] == v:
            return False
        h = (h + 1) & c.table_mask
    c.table[h] = v
    return True


cdef void score_one(Ctx* c, uint64_t cand, uint64_t seed,
                    double* q_out, double* sid_out, int64_t* nperm_out,
                    int64_t* g_out, int64_t* e_out, double* u_out) noexcept nogil:
    cdef int m = c.m, T = c.T, H = c.H, N = c.N
    cdef int j, a, b, k, p, r, pos, nm, qq
    cdef uint64_t rest = cand
    cdef int64_t rs
    cdef double acc
    cdef uint64_t key, total, jj, t, base
    cdef int64_t count, p_idx, chosen, vpos
    cdef bint found

    for j in range(H - 1, -1, -1):
        c.aug[T + j] = <int>(rest % <uint64_t>m)
        rest = rest // <uint64_t>m
    if c.plus:
        c.aug[N - 1] = c.plus_state

    # calibration counts were preloaded past the first m*m slots
    for k in range(m * m):
        c.counts[k] = c.counts[m * m + k]
    for p in range(T - 1, N - 1):
        c.counts[c.aug[p] * m + c.aug[p + 1]] += 1
    for a in range(m):
        rs = 0
        for b in range(m):
            rs += c.counts[a * m + b]
        if rs > 0:
            for b in range(m):
                c.P[a * m + b] = <double>c.counts[a * m + b] / <double>rs
        else:
            for b in range(m):
                c.P[a * m + b] = 1.0 / m
    if c.jstep:
        for k in range(m * m):
            c.pw[k] = c.P[k]
        for j in range(1, H):
            for a in range(m):
                for b in range(m):
                    acc = 0.0
                    for k in range(m):
                        acc += c.pw[(j - 1) * m * m + a * m + k] * c.P[k * m + b]
                    c.pw[j * m * m + a * m + b] = acc

    c.last = c.aug[N - 1]
    nm = 0
    for p in range(N):
        if c.aug[p] == c.last:
            c.occ[nm] = p
            nm += 1
    c.D = nm - 1
    c.head_len = c.occ[0]

    pos = N - 1 - c.pre_len
    for k in range(c.pre_len):
        c.win[k] = c.aug[pos + k]
    if not c.plus:
        c.win[c.pre_len] = c.last
    c.s_id = score_window(c)

    key = mcp_stream_key(seed, cand)
    u_out[0] = mcp_uniform_open(mcp_draw(key, 0))
    c.greater = 0
    c.equal = 0

    if c.D <= MAX_RANKED_BLOCKS:
        total = FACT[c.D]
        if total <= <uint64_t>c.n_perm:
            count = <int64_t>total
            for k in range(c.D):
                c.perm[k] = k
            while True:
                fill_from_perm(c)
                tally(c, score_window(c))
                if not next_permutation(c.perm, c.D):
                    break
        else:
            # the identity (rank 0) plus n_perm - 1 distinct non-identity ranks
            count = c.n_perm
            c.equal += 1
            for k in range(<int>(c.table_mask + 1)):
                c.table[k] = MCP_EMPTY
            jj = total - <uint64_t>c.n_perm
            for k in range(c.n_perm - 1):
                t = mcp_bounded(mcp_draw(key, 1 + <uint64_t>k), jj + 1)
                if not table_insert(c, t):
                    table_insert(c, jj)
                jj += 1
            for k in range(<int>(c.table_mask + 1)):
                if c.table[k] != MCP_EMPTY:
                    unrank(c, c.table[k] + 1)
                    fill_from_perm(c)
                    tally(c, score_window(c))
    else:
        count = c.n_perm
        c.equal += 1
        for p_idx in range(c.n_perm - 1):
            base = 1 + <uint64_t>p_idx * <uint64_t>c.D
            nm = 0
            k = c.pre_len
            r = 0
            while k > 0 and r < c.D:
                pos = c.D - 1 - r
                chosen = <int64_t>mcp_bounded(mcp_draw(key, base + <uint64_t>r), <uint64_t>(pos + 1))
                vpos = pos
                found = False
                for qq in range(nm):
                    if c.map_k[qq] == pos:
                        vpos = c.map_v[qq]
                for qq in range(nm):
                    if c.map_k[qq] == chosen:
                        found = True
                        a = <int>c.map_v[qq]
                        c.map_v[qq] = vpos
                        break
                if not found:
                    a = <int>chosen
                    c.map_k[nm] = chosen
                    c.map_v[nm] = vpos
                    nm += 1
                p = c.occ[a + 1] - 1
                while k > 0 and p >= c.occ[a]:
                    k -= 1
                    c.win[k] = c.aug[p]
                    p -= 1
                r += 1
            fill_head(c, k)
            tally(c, score_window(c))

    q_out[0] = (c.greater + u_out[0] * c.equal) / count
    sid_out[0] = c.s_id
    nperm_out[0] = count
    g_out[0] = c.greater
    e_out[0] = c.equal


def score_candidates(const int64_t[::1] calib, const int64_t[:, ::1] base_counts,
                     int m, int horizon, uint64_t lo, uint64_t hi, int n_perm,
                     bint jstep, int plus_state, uint64_t seed, double tol,
                     double[::1] out_q, double[::1] out_sid,
                     int64_t[::1] out_nperm, int64_t[::1] out_greater,
                     int64_t[::1] out_equal, double[::1] out_u):
    """Score candidates ``lo..hi-1`` (lexicographic indices) into the out arrays."""
    cdef Ctx c
    cdef int T = calib.shape[0]
    cdef int k, a, b
    cdef uint64_t cand, tsize
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    c.m = m
    c.T = T
    c.H = horizon
    c.plus = 1 if plus_state >= 0 else 0
    c.plus_state = plus_state
    c.N = T + horizon + c.plus
    c.jstep = jstep
    c.pre_len = horizon + c.plus
    c.n_perm = n_perm
    c.tol = tol
    tsize = 1
    while tsize < 2 * <uint64_t>n_perm:
        tsize *= 2
    c.table_mask = tsize - 1

    c.aug = <int*>malloc(c.N * sizeof(int))
    c.occ = <int*>malloc((c.N + 1) * sizeof(int))
    c.perm = <int*>malloc((c.N + 1) * sizeof(int))
    c.avail = <int*>malloc((c.N + 1) * sizeof(int))
    c.win = <int*>malloc((horizon + 2) * sizeof(int))
    c.counts = <int64_t*>malloc(2 * m * m * sizeof(int64_t))
    c.P = <double*>malloc(m * m * sizeof(double))
    c.pw = <double*>malloc(horizon * m * m * sizeof(double))
    c.map_k = <int64_t*>malloc((c.pre_len + 1) * sizeof(int64_t))
    c.map_v = <int64_t*>malloc((c.pre_len + 1) * sizeof(int64_t))
    c.table = <uint64_t*>malloc(tsize * sizeof(uint64_t))
    if (not c.aug or not c.occ or not c.perm or not c.avail or not c.win
            or not c.counts or not c.P or not c.pw or not c.map_k
            or not c.map_v or not c.table):
        free(c.aug); free(c.occ); free(c.perm); free(c.avail); free(c.win)
        free(c.counts); free(c.P); free(c.pw); free(c.map_k); free(c.map_v)
        free(c.table)
        raise MemoryError()
    for k in range(T):
        c.aug[k] = <int>calib[k]
    for a in range(m):
        for b in range(m):
            c.counts[m * m + a * m + b] = base_counts[a, b]
    try:
        with nogil:
            cand = lo
            while cand < hi:
                k = <int>(cand - lo)
                score_one(&c, cand, seed, &out_q[k], &out_sid[k],
                          &out_nperm[k], &out_greater[k], &out_equal[k],
                          &out_u[k])
                cand += 1
    finally:
        free(c.aug); free(c.occ); free(c.perm); free(c.avail); free(c.win)
        free(c.counts); free(c.P); free(c.pw); free(c.map_k); free(c.map_v)
        free(c.table)
