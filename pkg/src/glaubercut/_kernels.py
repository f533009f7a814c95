"""Compiled inner loops.  Everything here works on flat arrays; the public
modules own validation and bookkeeping.

Event arrays are always sorted by time, so event index order is time order.
``aux`` is a 2-D int64 array: a permutation of the alphabet per event for the
permutation policy, the Metropolis proposal offset in column 0, unused
otherwise.
"""

import numpy as np
from numba import njit

HB = 0       # heat-bath, plain inverse CDF (the monotone coupling for Ising)
THRESH = 1   # heat-bath with the threshold/floor layout
PERM = 2     # colouring permutation rule
MH = 3       # Metropolis with proposal offset

UNKNOWN = -1


@njit(cache=True)
def site_logits(x, conf, ptr, nbr, tid, tables, h, out):
    q = h.shape[1]
    for s in range(q):
        out[s] = h[x, s]
    for k in range(ptr[x], ptr[x + 1]):
        t = tid[k]
        sy = conf[nbr[k]]
        for s in range(q):
            out[s] += tables[t, s, sy]


@njit(cache=True)
def masked_logits(x, conf, loc, ptr, nbr, tid, tables, h, out):
    """Logits with neighbours outside the current ball (loc < 0) severed.
    ``conf`` is indexed by local ball position."""
    q = h.shape[1]
    for s in range(q):
        out[s] = h[x, s]
    for k in range(ptr[x], ptr[x + 1]):
        j = loc[nbr[k]]
        if j >= 0:
            t = tid[k]
            sy = conf[j]
            for s in range(q):
                out[s] += tables[t, s, sy]


@njit(cache=True)
def inverse_cdf(logits, u, w):
    """Spin with cumulative weight first exceeding ``u * total`` in alphabet
    order; -1 if every spin has zero weight."""
    q = logits.shape[0]
    top = -np.inf
    for s in range(q):
        if logits[s] > top:
            top = logits[s]
    if top == -np.inf:
        return -1
    total = 0.0
    for s in range(q):
        w[s] = np.exp(logits[s] - top)
        total += w[s]
    target = u * total
    cum = 0.0
    last = -1
    for s in range(q):
        if w[s] > 0.0:
            last = s
        cum += w[s]
        if target < cum:
            return s
    return last


@njit(cache=True)
def threshold_choice(logits, u, floor, zeta, w):
    """Floor draw on [0, zeta), residual draw on [zeta, 1)."""
    q = logits.shape[0]
    if u < zeta:
        cum = 0.0
        last = -1
        for s in range(q):
            if floor[s] > 0.0:
                last = s
            cum += floor[s]
            if u < cum:
                return s
        return last
    top = -np.inf
    for s in range(q):
        if logits[s] > top:
            top = logits[s]
    if top == -np.inf:
        return -1
    total = 0.0
    for s in range(q):
        w[s] = np.exp(logits[s] - top)
        total += w[s]
    rtot = 0.0
    for s in range(q):
        r = w[s] / total - floor[s]
        if r < 0.0:
            r = 0.0
        w[s] = r
        rtot += r
    if rtot <= 0.0:
        # conditional equals the floor; any floor spin is a valid residual
        return inverse_cdf(np.log(floor), (u - zeta) / (1.0 - zeta), w)
    target = (u - zeta) / (1.0 - zeta) * rtot
    cum = 0.0
    last = -1
    for s in range(q):
        if w[s] > 0.0:
            last = s
        cum += w[s]
        if target < cum:
            return s
    return last


@njit(cache=True)
def perm_choice(logits, perm):
    for k in range(perm.shape[0]):
        c = perm[k]
        if logits[c] > -np.inf:
            return c
    return -1


@njit(cache=True)
def metropolis_choice(logits, cur, offset, u):
    q = logits.shape[0]
    new = (cur + offset) % q
    ratio = np.exp(logits[new] - logits[cur])
    if u < ratio:
        return new
    return cur


@njit(cache=True)
def choose(policy, logits, cur, u, aux_row, floor, zeta, w):
    if policy == HB:
        return inverse_cdf(logits, u, w)
    if policy == THRESH:
        return threshold_choice(logits, u, floor, zeta, w)
    if policy == PERM:
        return perm_choice(logits, aux_row)
    return metropolis_choice(logits, cur, aux_row[0], u)


@njit(cache=True)
def single_update_counts(x, conf, us, aux, policy, ptr, nbr, tid, tables, h, floor, zeta):
    """Histogram of the new spin at ``x`` over the rows ``(us[i], aux[i])``;
    the last slot counts infeasible updates."""
    q = h.shape[1]
    logits = np.empty(q)
    w = np.empty(q)
    counts = np.zeros(q + 1, dtype=np.int64)
    site_logits(x, conf, ptr, nbr, tid, tables, h, logits)
    for i in range(us.shape[0]):
        s = choose(policy, logits, conf[x], us[i], aux[i], floor, zeta, w)
        counts[q if s < 0 else s] += 1
    return counts


@njit(cache=True)
def run_chain(conf, sites, us, aux, times, grid, snaps, policy,
              ptr, nbr, tid, tables, h, floor, zeta):
    """Evolve ``conf`` in place through all events; ``snaps[g]`` receives the
    configuration at ``grid[g]`` (state just before the first later event).
    Returns -1 on success or the index of the first infeasible update."""
    q = h.shape[1]
    logits = np.empty(q)
    w = np.empty(q)
    g = 0
    ng = grid.shape[0]
    for i in range(sites.shape[0]):
        while g < ng and times[i] > grid[g]:
            snaps[g, :] = conf
            g += 1
        x = sites[i]
        site_logits(x, conf, ptr, nbr, tid, tables, h, logits)
        s = choose(policy, logits, conf[x], us[i], aux[i], floor, zeta, w)
        if s < 0:
            return i
        conf[x] = s
    while g < ng:
        snaps[g, :] = conf
        g += 1
    return -1


@njit(cache=True)
def grand_monotone(lo, up, X, sites, us, aux, times, grid, unknown_snaps,
                   ptr, nbr, tid, tables, h):
    """Monotone grand coupling: lower/upper envelopes plus explicit chains.

    Returns (sandwich violations, coalescence time or inf)."""
    q = h.shape[1]
    logits = np.empty(q)
    w = np.empty(q)
    n = lo.shape[0]
    K = X.shape[0]
    n_unknown = 0
    for v in range(n):
        if lo[v] != up[v]:
            n_unknown += 1
    coal = 0.0 if n_unknown == 0 else np.inf
    violations = 0
    for k in range(K):
        for v in range(n):
            if X[k, v] < lo[v] or X[k, v] > up[v]:
                violations += 1
    g = 0
    ng = grid.shape[0]
    for i in range(sites.shape[0]):
        while g < ng and times[i] > grid[g]:
            for v in range(n):
                unknown_snaps[g, v] = lo[v] != up[v]
            g += 1
        if n_unknown == 0 and K == 0 and g == ng:
            break
        x = sites[i]
        before = lo[x] != up[x]
        site_logits(x, lo, ptr, nbr, tid, tables, h, logits)
        lo[x] = inverse_cdf(logits, us[i], w)
        site_logits(x, up, ptr, nbr, tid, tables, h, logits)
        up[x] = inverse_cdf(logits, us[i], w)
        after = lo[x] != up[x]
        if before and not after:
            n_unknown -= 1
            if n_unknown == 0:
                coal = times[i]
        elif after and not before:
            n_unknown += 1
        if lo[x] > up[x]:
            violations += 1
        for k in range(K):
            site_logits(x, X[k], ptr, nbr, tid, tables, h, logits)
            X[k, x] = inverse_cdf(logits, us[i], w)
            if X[k, x] < lo[x] or X[k, x] > up[x]:
                violations += 1
    while g < ng:
        for v in range(n):
            unknown_snaps[g, v] = lo[v] != up[v]
        g += 1
    return violations, coal


@njit(cache=True)
def grand_threshold(val, X, sites, us, aux, times, grid, unknown_snaps,
                    ptr, nbr, tid, tables, h, floor, zeta):
    """Threshold bounding chain: ``val[v]`` is the common spin or UNKNOWN.

    Returns (false-determined count over explicit chains, coalescence time)."""
    q = h.shape[1]
    logits = np.empty(q)
    w = np.empty(q)
    n = val.shape[0]
    K = X.shape[0]
    n_unknown = 0
    for v in range(n):
        if val[v] == UNKNOWN:
            n_unknown += 1
    coal = 0.0 if n_unknown == 0 else np.inf
    bad = 0
    g = 0
    ng = grid.shape[0]
    for i in range(sites.shape[0]):
        while g < ng and times[i] > grid[g]:
            for v in range(n):
                unknown_snaps[g, v] = val[v] == UNKNOWN
            g += 1
        if n_unknown == 0 and K == 0 and g == ng:
            break
        x = sites[i]
        before = val[x] == UNKNOWN
        u = us[i]
        if u < zeta:
            val[x] = threshold_choice(logits, u, floor, zeta, w)
        else:
            known = True
            for k in range(ptr[x], ptr[x + 1]):
                if val[nbr[k]] == UNKNOWN:
                    known = False
                    break
            if known:
                site_logits(x, val, ptr, nbr, tid, tables, h, logits)
                val[x] = threshold_choice(logits, u, floor, zeta, w)
            else:
                val[x] = UNKNOWN
        after = val[x] == UNKNOWN
        if before and not after:
            n_unknown -= 1
            if n_unknown == 0:
                coal = times[i]
        elif after and not before:
            n_unknown += 1
        for k in range(K):
            site_logits(x, X[k], ptr, nbr, tid, tables, h, logits)
            X[k, x] = threshold_choice(logits, u, floor, zeta, w)
            if val[x] != UNKNOWN and X[k, x] != val[x]:
                bad += 1
    while g < ng:
        for v in range(n):
            unknown_snaps[g, v] = val[v] == UNKNOWN
        g += 1
    return bad, coal


@njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def _lowbit_index(x):
    k = 0
    while not (x >> k) & 1:
        k += 1
    return k


@njit(cache=True)
def perm_set_update(x, sets, perm, ptr, nbr, h):
    """Superset of the colours the permutation rule can pick at ``x`` given
    neighbour colour sets (bitmasks).  Colours with -inf effective field
    (clamped neighbours) are always blocked."""
    q = h.shape[1]
    forced = 0
    possible = 0
    for s in range(q):
        if h[x, s] == -np.inf:
            forced |= 1 << s
    cap = ptr[x + 1] - ptr[x] + _popcount(forced) + 1
    for k in range(ptr[x], ptr[x + 1]):
        sy = sets[nbr[k]]
        possible |= sy
        if _popcount(sy) == 1:
            forced |= sy
    # at most deg distinct colours can be blocked, so the choice lies in
    # the first deg + 1 positions of the permutation
    out = 0
    for k in range(min(q, cap)):
        c = perm[k]
        bit = 1 << c
        if forced & bit:
            continue
        out |= bit
        if not possible & bit:
            break
    return out


@njit(cache=True)
def grand_permutation(sets, X, sites, us, aux, times, grid, unknown_snaps,
                      ptr, nbr, tid, tables, h):
    """Colour-set bounding chain for the permutation coupling.

    Returns (count of explicit-chain colours outside their set, coalescence time)."""
    q = h.shape[1]
    logits = np.empty(q)
    n = sets.shape[0]
    K = X.shape[0]
    n_unknown = 0
    for v in range(n):
        if _popcount(sets[v]) != 1:
            n_unknown += 1
    coal = 0.0 if n_unknown == 0 else np.inf
    bad = 0
    g = 0
    ng = grid.shape[0]
    for i in range(sites.shape[0]):
        while g < ng and times[i] > grid[g]:
            for v in range(n):
                unknown_snaps[g, v] = _popcount(sets[v]) != 1
            g += 1
        if n_unknown == 0 and K == 0 and g == ng:
            break
        x = sites[i]
        before = _popcount(sets[x]) != 1
        sets[x] = perm_set_update(x, sets, aux[i], ptr, nbr, h)
        after = _popcount(sets[x]) != 1
        if before and not after:
            n_unknown -= 1
            if n_unknown == 0:
                coal = times[i]
        elif after and not before:
            n_unknown += 1
        for k in range(K):
            site_logits(x, X[k], ptr, nbr, tid, tables, h, logits)
            X[k, x] = perm_choice(logits, aux[i])
            if not (sets[x] >> X[k, x]) & 1:
                bad += 1
    while g < ng:
        for v in range(n):
            unknown_snaps[g, v] = _popcount(sets[v]) != 1
        g += 1
    return bad, coal


# ---------------------------------------------------------------------------
# Contact process
# ---------------------------------------------------------------------------

@njit(cache=True)
def contact_run(seed, n, eu, ev, heal, infect, grid, counts):
    """Gillespie simulation from all-infected; ``counts[g]`` = infected at grid[g]."""
    np.random.seed(seed)
    state = np.ones(n, dtype=np.uint8)
    infected = n
    m = eu.shape[0]
    total = n * heal + m * infect
    t = 0.0
    g = 0
    ng = grid.shape[0]
    if total <= 0.0:
        for k in range(ng):
            counts[k] = infected
        return
    p_heal = n * heal / total
    while g < ng:
        t += np.random.exponential(1.0 / total)
        while g < ng and t > grid[g]:
            counts[g] = infected
            g += 1
        if g >= ng:
            break
        if infected == 0:
            # absorbing
            while g < ng:
                counts[g] = 0
                g += 1
            break
        if np.random.random() < p_heal:
            v = np.random.randint(0, n)
            if state[v]:
                state[v] = 0
                infected -= 1
        else:
            e = np.random.randint(0, m)
            a = eu[e]
            b = ev[e]
            if state[a] and not state[b]:
                state[b] = 1
                infected += 1
            elif state[b] and not state[a]:
                state[a] = 1
                infected += 1


# ---------------------------------------------------------------------------
# Barrier (ball-restricted) chains
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ball_events(ball, ev_ptr, ev_idx, first_time_idx, buf):
    """Collect global event indices (>= first_time_idx) of sites in ``ball``,
    sorted (hence time-ordered)."""
    cnt = 0
    for a in range(ball.shape[0]):
        v = ball[a]
        for k in range(ev_ptr[v], ev_ptr[v + 1]):
            e = ev_idx[k]
            if e >= first_time_idx:
                buf[cnt] = e
                cnt += 1
    out = np.sort(buf[:cnt])
    return out


@njit(cache=True)
def ball_center_unknown(policy, center, ball, first_idx, loc, ev_ptr, ev_idx,
                        sites, us, aux, ptr, nbr, tid, tables, h, floor, zeta, buf):
    """Run the grand coupling of the ball chain at ``center`` over events with
    global index >= first_idx; return True if the centre is undetermined."""
    nb = ball.shape[0]
    q = h.shape[1]
    for a in range(nb):
        loc[ball[a]] = a
    evs = _ball_events(ball, ev_ptr, ev_idx, first_idx, buf)
    logits = np.empty(q)
    w = np.empty(q)
    c = loc[center]
    result = True
    if policy == HB:
        lo = np.zeros(nb, dtype=np.int64)
        up = np.full(nb, q - 1, dtype=np.int64)
        for e in evs:
            x = sites[e]
            j = loc[x]
            masked_logits(x, lo, loc, ptr, nbr, tid, tables, h, logits)
            lo[j] = inverse_cdf(logits, us[e], w)
            masked_logits(x, up, loc, ptr, nbr, tid, tables, h, logits)
            up[j] = inverse_cdf(logits, us[e], w)
        result = lo[c] != up[c]
    elif policy == THRESH:
        val = np.full(nb, UNKNOWN, dtype=np.int64)
        for e in evs:
            x = sites[e]
            j = loc[x]
            u = us[e]
            if u < zeta:
                val[j] = threshold_choice(logits, u, floor, zeta, w)
            else:
                known = True
                for k in range(ptr[x], ptr[x + 1]):
                    jj = loc[nbr[k]]
                    if jj >= 0 and val[jj] == UNKNOWN:
                        known = False
                        break
                if known:
                    masked_logits(x, val, loc, ptr, nbr, tid, tables, h, logits)
                    val[j] = threshold_choice(logits, u, floor, zeta, w)
                else:
                    val[j] = UNKNOWN
        result = val[c] == UNKNOWN
    else:
        full = (1 << q) - 1
        sets = np.full(nb, full, dtype=np.int64)
        for e in evs:
            x = sites[e]
            j = loc[x]
            forced = 0
            possible = 0
            for s in range(q):
                if h[x, s] == -np.inf:
                    forced |= 1 << s
            cap = ptr[x + 1] - ptr[x] + _popcount(forced) + 1
            for k in range(ptr[x], ptr[x + 1]):
                jj = loc[nbr[k]]
                if jj >= 0:
                    sy = sets[jj]
                    possible |= sy
                    if _popcount(sy) == 1:
                        forced |= sy
            out = 0
            perm = aux[e]
            for k in range(min(q, cap)):
                cc = perm[k]
                bit = 1 << cc
                if forced & bit:
                    continue
                out |= bit
                if not possible & bit:
                    break
            sets[j] = out
        result = _popcount(sets[c]) != 1
    for a in range(nb):
        loc[ball[a]] = -1
    return result


@njit(cache=True)
def barrier_frames(policy, active, ball_ptr, ball_sites, first_idx, n, ev_ptr, ev_idx,
                   sites, us, aux, ptr, nbr, tid, tables, h, floor, zeta):
    """Evaluate the undetermined-centre indicator for every centre in
    ``active`` with events from ``first_idx`` on."""
    loc = np.full(n, -1, dtype=np.int64)
    maxb = 0
    for i in range(active.shape[0]):
        v = active[i]
        tot = 0
        for a in range(ball_ptr[v], ball_ptr[v + 1]):
            s = ball_sites[a]
            tot += ev_ptr[s + 1] - ev_ptr[s]
        if tot > maxb:
            maxb = tot
    buf = np.empty(maxb + 1, dtype=np.int64)
    out = np.zeros(active.shape[0], dtype=np.bool_)
    for i in range(active.shape[0]):
        v = active[i]
        ball = ball_sites[ball_ptr[v]:ball_ptr[v + 1]]
        out[i] = ball_center_unknown(policy, v, ball, first_idx, loc, ev_ptr, ev_idx,
                                     sites, us, aux, ptr, nbr, tid, tables, h, floor, zeta, buf)
    return out


@njit(cache=True)
def barrier_apply(policy, conf0, ball_ptr, ball_sites, n, ev_ptr, ev_idx,
                  sites, us, aux, ptr, nbr, tid, tables, h, floor, zeta):
    """Barrier operator: run every ball chain from the projection of ``conf0``
    and return each centre's value in its own ball."""
    q = h.shape[1]
    loc = np.full(n, -1, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    maxb = 0
    for v in range(n):
        tot = 0
        for a in range(ball_ptr[v], ball_ptr[v + 1]):
            s = ball_sites[a]
            tot += ev_ptr[s + 1] - ev_ptr[s]
        if tot > maxb:
            maxb = tot
    buf = np.empty(maxb + 1, dtype=np.int64)
    logits = np.empty(q)
    w = np.empty(q)
    for v in range(n):
        ball = ball_sites[ball_ptr[v]:ball_ptr[v + 1]]
        nb = ball.shape[0]
        for a in range(nb):
            loc[ball[a]] = a
        conf = np.empty(nb, dtype=np.int64)
        for a in range(nb):
            conf[a] = conf0[ball[a]]
        evs = _ball_events(ball, ev_ptr, ev_idx, 0, buf)
        for e in evs:
            x = sites[e]
            masked_logits(x, conf, loc, ptr, nbr, tid, tables, h, logits)
            s = choose(policy, logits, conf[loc[x]], us[e], aux[e], floor, zeta, w)
            conf[loc[x]] = s
        out[v] = conf[loc[v]]
        for a in range(nb):
            loc[ball[a]] = -1
    return out


@njit(cache=True)
def balls_graph(ptr, nbr, n, r):
    """Graph-metric balls of radius ``r`` around every site, as CSR
    (sorted members)."""
    stamp = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    cap = max(n * 8, 16)
    out = np.empty(cap, dtype=np.int64)
    pos = 0
    for v in range(n):
        head = 0
        tail = 0
        queue[tail] = v
        tail += 1
        stamp[v] = v
        depth[v] = 0
        while head < tail:
            a = queue[head]
            head += 1
            if depth[a] == r:
                continue
            for k in range(ptr[a], ptr[a + 1]):
                b = nbr[k]
                if stamp[b] != v:
                    stamp[b] = v
                    depth[b] = depth[a] + 1
                    queue[tail] = b
                    tail += 1
        if pos + tail > cap:
            while pos + tail > cap:
                cap *= 2
            grown = np.empty(cap, dtype=np.int64)
            grown[:pos] = out[:pos]
            out = grown
        members = np.sort(queue[:tail])
        out[pos:pos + tail] = members
        pos += tail
        out_ptr[v + 1] = pos
    return out_ptr, out[:pos].copy()


@njit(cache=True)
def ball_union_mask(centres, ball_ptr, ball_sites, n):
    mask = np.zeros(n, dtype=np.bool_)
    for i in range(centres.shape[0]):
        v = centres[i]
        for a in range(ball_ptr[v], ball_ptr[v + 1]):
            mask[ball_sites[a]] = True
    return mask


@njit(cache=True)
def apply_map_batch(confs, sites, us, aux, policy, ptr, nbr, tid, tables, h, floor, zeta):
    """Apply the update map to every row of ``confs`` in place; returns the
    number of rows that hit an update with no feasible spin."""
    q = h.shape[1]
    logits = np.empty(q)
    w = np.empty(q)
    bad = 0
    for r in range(confs.shape[0]):
        conf = confs[r]
        for i in range(sites.shape[0]):
            x = sites[i]
            site_logits(x, conf, ptr, nbr, tid, tables, h, logits)
            s = choose(policy, logits, conf[x], us[i], aux[i], floor, zeta, w)
            if s < 0:
                bad += 1
                break
            conf[x] = s
    return bad


@njit(cache=True)
def barrier_apply_batch(policy, confs, ball_ptr, ball_sites, n, ev_ptr, ev_idx,
                        sites, us, aux, ptr, nbr, tid, tables, h, floor, zeta):
    out = np.empty_like(confs)
    for r in range(confs.shape[0]):
        out[r] = barrier_apply(policy, confs[r], ball_ptr, ball_sites, n, ev_ptr, ev_idx,
                               sites, us, aux, ptr, nbr, tid, tables, h, floor, zeta)
    return out
