"""Pure-Python scoring kernel.

Line-for-line twin of ``_ckernels.pyx``.  Arithmetic is performed in the same
order so both backends return bit-identical p-values.
"""

from itertools import permutations
from math import factorial

from .._rng import bounded, draw, stream_key, uniform_open

MAX_RANKED_BLOCKS = 20


def _score(win, horizon, P, powers, jstep):
    total = 0.0
    if jstep:
        a = win[0]
        for j in range(1, horizon + 1):
            total += powers[j - 1][a][win[j]]
    else:
        for j in range(1, horizon + 1):
            total += P[win[j - 1]][win[j]]
    s = 1.0 - total / horizon
    if s < 0.0:
        s = 0.0
    if s > 1.0:
        s = 1.0
    return s


def _unrank(rank, D):
    avail = list(range(D))
    perm = []
    for k in range(D):
        f = factorial(D - 1 - k)
        idx = rank // f
        rank %= f
        perm.append(avail.pop(idx))
    return perm


def _floyd_ranks(key, total, n):
    chosen = set()
    for s, j in enumerate(range(total - n, total)):
        t = bounded(draw(key, 1 + s), j + 1)
        chosen.add(j if t in chosen else t)
    return chosen


def _candidate(c, calib, base_counts, m, horizon, n_perm, jstep, plus_state,
               seed, tol):
    T = len(calib)
    plus = 1 if plus_state >= 0 else 0
    x = [0] * horizon
    rest = c
    for j in range(horizon - 1, -1, -1):
        x[j] = rest % m
        rest //= m
    aug = list(calib) + x + ([plus_state] if plus else [])
    N = len(aug)

    counts = [row[:] for row in base_counts]
    for p in range(T - 1, N - 1):
        counts[aug[p]][aug[p + 1]] += 1
    P = []
    for a in range(m):
        rs = sum(counts[a])
        if rs > 0:
            P.append([counts[a][b] / rs for b in range(m)])
        else:
            P.append([1.0 / m] * m)
    powers = None
    if jstep:
        powers = [P]
        for _ in range(1, horizon):
            prev = powers[-1]
            nxt = []
            for a in range(m):
                row = []
                for b in range(m):
                    acc = 0.0
                    for k in range(m):
                        acc += prev[a][k] * P[k][b]
                    row.append(acc)
                nxt.append(row)
            powers.append(nxt)

    i = aug[N - 1]
    occ = [p for p in range(N) if aug[p] == i]
    D = len(occ) - 1
    head_len = occ[0]
    pre_len = horizon + plus

    win = [0] * (horizon + 1)
    start = N - 1 - pre_len
    for k in range(pre_len):
        win[k] = aug[start + k]
    if not plus:
        win[pre_len] = i
    s_id = _score(win, horizon, P, powers, jstep)

    key = stream_key(seed, c)
    u = uniform_open(draw(key, 0))

    def fill_head(k):
        p = head_len - 1
        while k > 0:
            k -= 1
            win[k] = aug[p]
            p -= 1
        if not plus:
            win[pre_len] = i

    def fill_from_order(order):
        k = pre_len
        r = 0
        while k > 0 and r < D:
            b = order[D - 1 - r]
            p = occ[b + 1] - 1
            while k > 0 and p >= occ[b]:
                k -= 1
                win[k] = aug[p]
                p -= 1
            r += 1
        fill_head(k)

    greater = 0
    equal = 0

    def tally(s):
        nonlocal greater, equal
        diff = s - s_id
        if diff > tol:
            greater += 1
        elif diff >= -tol:
            equal += 1

    if D <= MAX_RANKED_BLOCKS:
        total = factorial(D)
        if total <= n_perm:
            count = total
            for order in permutations(range(D)):
                fill_from_order(order)
                tally(_score(win, horizon, P, powers, jstep))
        else:
            # the identity (rank 0) plus n_perm - 1 distinct non-identity ranks
            count = n_perm
            equal += 1
            for rank in _floyd_ranks(key, total - 1, n_perm - 1):
                fill_from_order(_unrank(rank + 1, D))
                tally(_score(win, horizon, P, powers, jstep))
    else:
        count = n_perm
        equal += 1
        for p_idx in range(n_perm - 1):
            base = 1 + p_idx * D
            swapped = {}
            k = pre_len
            r = 0
            while k > 0 and r < D:
                pos = D - 1 - r
                j = bounded(draw(key, base + r), pos + 1)
                b = swapped.get(j, j)
                swapped[j] = swapped.get(pos, pos)
                p = occ[b + 1] - 1
                while k > 0 and p >= occ[b]:
                    k -= 1
                    win[k] = aug[p]
                    p -= 1
                r += 1
            fill_head(k)
            tally(_score(win, horizon, P, powers, jstep))

    q = (greater + u * equal) / count
    return q, s_id, count, greater, equal, u


def score_candidates(calib, base_counts, m, horizon, lo, hi, n_perm, jstep,
                     plus_state, seed, tol, out_q, out_sid, out_nperm,
                     out_greater, out_equal, out_u):
    """Score candidates ``lo..hi-1`` (lexicographic indices) into the out arrays.

    ``calib`` holds 0-based states; ``plus_state`` is -1 when no artificial
    post-horizon state is appended.  Output slot ``c - lo`` receives candidate
    ``c``.
    """
    calib = [int(v) for v in calib]
    base = [[int(v) for v in row] for row in base_counts]
    for c in range(lo, hi):
        q, sid, cnt, g, e, u = _candidate(
            c, calib, base, m, horizon, n_perm, jstep, plus_state, seed, tol
        )
        k = c - lo
        out_q[k] = q
        out_sid[k] = sid
        out_nperm[k] = cnt
        out_greater[k] = g
        out_equal[k] = e
        out_u[k] = u
