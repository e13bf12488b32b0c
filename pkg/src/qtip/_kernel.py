"""Compiled stepping kernel for the corridor microsimulator.

All state lives in flat arrays owned by the caller. Positions are the
vehicle *front* in corridor coordinates; a vehicle occupies
``[x - length, x]``. Obstacles are stationary footprints ``[rear, front]``.
"""
import math

import numpy as np
from numba import njit

# indices into the float parameter vector
P_DT = 0
P_A = 1
P_B = 2
P_S0 = 3
P_T = 4
P_DELTA = 5
P_LEN = 6
P_BMAX = 7
P_POLITE = 8
P_THRESH = 9
P_BSAFE = 10
P_BSAFE_MAND = 11
P_LOOKAHEAD = 12
P_COOLDOWN = 13
P_ZONE_V = 14
P_ZONE_UP = 15
P_ZONE_DOWN = 16
P_ROAD_END = 17
P_B_ACTIVATE = 18
P_LC_EVERY = 19
P_BIAS_RIGHT = 20
P_ZONE_ADJ = 21
N_PARAMS = 22

# indices into the integer counter vector
C_INJECTED = 0
C_EXITED = 1
C_NEXT_ARRIVAL = 2
C_FREE_TOP = 3
C_NLANES = 4
C_NACTIVE = 5
C_STEP = 6
N_COUNTERS = 7

INF = 1.0e12


@njit(cache=True, inline="always")
def idm_accel(v, v0, gap, dv, p):
    a = p[P_A]
    r = v / v0
    if p[P_DELTA] == 4.0:
        r2 = r * r
        free = 1.0 - r2 * r2
    else:
        free = 1.0 - r ** p[P_DELTA]
    if gap >= INF * 0.5:
        acc = a * free
    else:
        s_star = p[P_S0] + max(0.0, v * p[P_T] + v * dv / (2.0 * math.sqrt(a * p[P_B])))
        q = s_star / max(gap, 0.01)
        # IDM+ combination: free-road and interaction terms do not add up
        acc = a * min(free, 1.0 - q * q)
    if acc < -p[P_BMAX]:
        acc = -p[P_BMAX]
    return acc


@njit(cache=True, inline="always")
def _effective_v0(L, x, vdes, obs_lane, obs_rear, obs_front, obs_on, p):
    zv = p[P_ZONE_V]
    if zv <= 0.0:
        return vdes
    for k in range(obs_lane.shape[0]):
        if p[P_ZONE_ADJ] > 0.0 and abs(L - obs_lane[k]) > 1:
            continue
        if obs_on[k] and obs_rear[k] - p[P_ZONE_UP] <= x <= obs_front[k] + p[P_ZONE_DOWN]:
            return min(vdes, zv)
    return vdes


@njit(cache=True, inline="always")
def _obstacle_ahead(lane, x, obs_lane, obs_rear, obs_on):
    """Rear position of the nearest active obstacle ahead of x in lane."""
    best = INF
    for k in range(obs_lane.shape[0]):
        if obs_on[k] and obs_lane[k] == lane and obs_rear[k] >= x - 1e-9 and obs_rear[k] < best:
            best = obs_rear[k]
    return best


@njit(cache=True, inline="always")
def _overlaps_obstacle(lane, x, p, obs_lane, obs_rear, obs_front, obs_on):
    s0 = p[P_S0]
    for k in range(obs_lane.shape[0]):
        if obs_on[k] and obs_lane[k] == lane:
            if x > obs_rear[k] - s0 and x - p[P_LEN] < obs_front[k] + s0:
                return True
    return False


@njit(cache=True)
def _blocked_lanes_near(xo_rear, xo_front, nl, obs_lane, obs_rear, obs_front, obs_on):
    blocked = np.zeros(nl, dtype=np.bool_)
    for k in range(obs_lane.shape[0]):
        if obs_on[k] and obs_front[k] >= xo_rear - 30.0 and obs_rear[k] <= xo_front + 30.0:
            blocked[obs_lane[k]] = True
    return blocked


@njit(cache=True)
def _resort(order, n, x, lane, nl, lane_start):
    """Insertion-sort ``order[:n]`` by (lane, x); cheap since it is nearly sorted."""
    for j in range(1, n):
        o = order[j]
        key_l = lane[o]
        key_x = x[o]
        k = j - 1
        while k >= 0:
            q = order[k]
            if lane[q] > key_l or (lane[q] == key_l and x[q] > key_x):
                order[k + 1] = q
                k -= 1
            else:
                break
        order[k + 1] = o
    ln = 0
    lane_start[0] = 0
    for j in range(n):
        li = lane[order[j]]
        while ln < li:
            ln += 1
            lane_start[ln] = j
    while ln < nl:
        ln += 1
        lane_start[ln] = n


@njit(cache=True, inline="always")
def _neighbours(L, xq, order, lane_start, x, skip):
    """(follower slot, leader slot) in lane L around position xq, -1 if none."""
    lo = lane_start[L]
    hi = lane_start[L + 1]
    # first index with x > xq
    a, b = lo, hi
    while a < b:
        m = (a + b) // 2
        if x[order[m]] > xq:
            b = m
        else:
            a = m + 1
    lead = -1
    j = a
    while j < hi:
        if order[j] != skip:
            lead = order[j]
            break
        j += 1
    fol = -1
    j = a - 1
    while j >= lo:
        if order[j] != skip:
            fol = order[j]
            break
        j -= 1
    return fol, lead


@njit(cache=True, inline="always")
def _lead_gap(L, xi, lead, x, v, obs_lane, obs_rear, obs_on, p):
    """Gap and leader speed for a vehicle at xi in lane L given leader slot."""
    gap = INF
    vl = 0.0
    if lead >= 0:
        gap = x[lead] - p[P_LEN] - xi
        vl = v[lead]
    orr = _obstacle_ahead(L, xi, obs_lane, obs_rear, obs_on)
    if orr < INF and orr - xi < gap:
        gap = orr - xi
        vl = 0.0
    return gap, vl


@njit(cache=True, inline="always")
def _acc_with(i, L, xi, vi, lead, x, v, vdes, obs_lane, obs_rear, obs_front, obs_on, p, any_on):
    if not any_on:
        if lead >= 0:
            return idm_accel(vi, vdes[i], x[lead] - p[P_LEN] - xi, vi - v[lead], p), x[lead] - p[P_LEN] - xi
        return idm_accel(vi, vdes[i], INF, 0.0, p), INF
    gap, vl = _lead_gap(L, xi, lead, x, v, obs_lane, obs_rear, obs_on, p)
    v0 = _effective_v0(L, xi, vdes[i], obs_lane, obs_rear, obs_front, obs_on, p)
    dv = vi - vl if gap < INF * 0.5 else 0.0
    return idm_accel(vi, v0, gap, dv, p), gap


@njit(cache=True)
def _lane_changes(x, v, lane, vdes, cool, active, order, lane_start, n,
                  obs_lane, obs_rear, obs_front, obs_on, p, nl, any_on):
    s0 = p[P_S0]
    vlen = p[P_LEN]
    moved_lane = np.empty(n, dtype=np.int64)
    moved_x = np.empty(n)
    n_moved = 0
    # front to back, lane by lane
    for jj in range(n - 1, -1, -1):
        i = order[jj]
        if cool[i] > 0.0:
            continue
        li = lane[i]
        xi = x[i]
        vi = v[i]
        fol_c, lead_c = _neighbours(li, xi, order, lane_start, x, i)
        a_cur, gap_cur = _acc_with(i, li, xi, vi, lead_c, x, v, vdes,
                                   obs_lane, obs_rear, obs_front, obs_on, p, any_on)
        orr = _obstacle_ahead(li, xi, obs_lane, obs_rear, obs_on)
        mandatory = orr < INF and orr - xi <= p[P_LOOKAHEAD]
        dir_lo = -1
        dir_hi = 1
        if not mandatory:
            # an unimpeded driver only considers moving back to the right
            if idm_accel(vi, vdes[i], INF, 0.0, p) - a_cur < p[P_THRESH]:
                if p[P_BIAS_RIGHT] <= 0.0 or li + 1 >= nl:
                    continue
                dir_lo = 0
        if mandatory:
            # head for the nearest lane that is open at this obstacle
            ofront = orr
            for k in range(obs_lane.shape[0]):
                if obs_on[k] and obs_lane[k] == li and obs_rear[k] == orr:
                    ofront = obs_front[k]
            blocked = _blocked_lanes_near(orr, ofront, nl, obs_lane, obs_rear, obs_front, obs_on)
            best_d = nl + 1
            for L in range(nl):
                if not blocked[L] and abs(L - li) < best_d:
                    best_d = abs(L - li)
            if best_d > nl:
                continue
            has_lo = li - best_d >= 0 and not blocked[li - best_d]
            has_hi = li + best_d < nl and not blocked[li + best_d]
            dir_lo = -1 if has_lo else 0
            dir_hi = 1 if has_hi else 0
        best_score = -INF
        best_L = -1
        for d in (dir_lo, dir_hi):
            if d == 0:
                continue
            L = li + d
            if L < 0 or L >= nl:
                continue
            if _overlaps_obstacle(L, xi, p, obs_lane, obs_rear, obs_front, obs_on):
                continue
            if not mandatory:
                o2 = _obstacle_ahead(L, xi, obs_lane, obs_rear, obs_on)
                if o2 < INF and o2 - xi <= p[P_LOOKAHEAD]:
                    continue
            conflict = False
            for q in range(n_moved):
                if moved_lane[q] == L and abs(moved_x[q] - xi) < 2.0 * (vlen + s0) + 10.0:
                    conflict = True
                    break
            if conflict:
                continue
            nf, nld = _neighbours(L, xi, order, lane_start, x, i)
            a_new, gap_new = _acc_with(i, L, xi, vi, nld, x, v, vdes,
                                       obs_lane, obs_rear, obs_front, obs_on, p, any_on)
            if gap_new < s0:
                continue
            a_nf_new = 0.0
            a_nf_old = 0.0
            if nf >= 0:
                gap_f = xi - vlen - x[nf]
                if gap_f < s0:
                    continue
                v0f = vdes[nf]
                if any_on:
                    v0f = _effective_v0(L, x[nf], vdes[nf], obs_lane, obs_rear, obs_front, obs_on, p)
                a_nf_new = idm_accel(v[nf], v0f, gap_f, v[nf] - vi, p)
                bsafe = p[P_BSAFE_MAND] if mandatory else p[P_BSAFE]
                if a_nf_new < -bsafe:
                    continue
                a_nf_old, _g = _acc_with(nf, L, x[nf], v[nf], nld, x, v, vdes,
                                         obs_lane, obs_rear, obs_front, obs_on, p, any_on)
            if mandatory:
                score = a_new
            else:
                a_of_new = 0.0
                a_of_old = 0.0
                if fol_c >= 0:
                    a_of_old, _g = _acc_with(fol_c, li, x[fol_c], v[fol_c], i, x, v, vdes,
                                             obs_lane, obs_rear, obs_front, obs_on, p, any_on)
                    a_of_new, _g = _acc_with(fol_c, li, x[fol_c], v[fol_c], lead_c, x, v, vdes,
                                             obs_lane, obs_rear, obs_front, obs_on, p, any_on)
                score = (a_new - a_cur
                         + p[P_POLITE] * ((a_nf_new - a_nf_old) + (a_of_new - a_of_old))
                         - p[P_THRESH] + d * p[P_BIAS_RIGHT])
                if score <= 0.0:
                    continue
            if score > best_score:
                best_score = score
                best_L = L
        if best_L >= 0:
            lane[i] = best_L
            cool[i] = p[P_COOLDOWN]
            moved_lane[n_moved] = best_L
            moved_x[n_moved] = xi
            n_moved += 1


@njit(cache=True)
def advance(n_steps, t0, order, x, v, vdes, lane, active, vid, cool,
            obs_lane, obs_rear, obs_front, obs_start, obs_end, obs_on,
            arr_t, arr_lane, arr_vdes, free_stack, counters, p,
            link_bounds, link_sum, link_steps, diag):
    """Advance the simulation by ``n_steps`` steps starting at time ``t0`` (s).

    ``link_sum``/``link_steps`` accumulate per-step space-mean speeds (m/s)
    and the number of steps with at least one vehicle on each link.
    ``diag[0]`` tracks the minimum same-lane gap seen after each step.
    """
    dt = p[P_DT]
    s0 = p[P_S0]
    vlen = p[P_LEN]
    nl = counters[C_NLANES]
    cap = x.shape[0]
    lane_start = np.empty(nl + 1, dtype=np.int64)
    acc = np.zeros(cap)
    n_links = link_bounds.shape[0] - 1
    stat_s = np.zeros(n_links)
    stat_c = np.zeros(n_links, dtype=np.int64)
    ins_slot = np.zeros(nl, dtype=np.int64)
    t = t0
    for _step in range(n_steps):
        # obstacles appear once their footprint is clear and followers can stop
        for k in range(obs_lane.shape[0]):
            if t >= obs_end[k]:
                obs_on[k] = False
            elif t >= obs_start[k] and not obs_on[k]:
                clear = True
                for j in range(counters[C_NACTIVE]):
                    i = order[j]
                    if lane[i] == obs_lane[k]:
                        stop = v[i] * v[i] / (2.0 * p[P_B_ACTIVATE])
                        if x[i] > obs_rear[k] - s0 - stop - 1.0 and x[i] - vlen < obs_front[k] + s0:
                            clear = False
                            break
                if clear:
                    obs_on[k] = True

        any_on = False
        for k in range(obs_lane.shape[0]):
            if obs_on[k]:
                any_on = True
        n = counters[C_NACTIVE]
        _resort(order, n, x, lane, nl, lane_start)
        if counters[C_STEP] % int(p[P_LC_EVERY]) == 0:
            _lane_changes(x, v, lane, vdes, cool, active, order, lane_start, n,
                          obs_lane, obs_rear, obs_front, obs_on, p, nl, any_on)
            _resort(order, n, x, lane, nl, lane_start)
        counters[C_STEP] += 1

        # accelerations
        for L in range(nl):
            hi = lane_start[L + 1]
            for j in range(lane_start[L], hi):
                i = order[j]
                lead = order[j + 1] if j + 1 < hi else -1
                a_i, _g = _acc_with(i, L, x[i], v[i], lead, x, v, vdes,
                                    obs_lane, obs_rear, obs_front, obs_on, p, any_on)
                acc[i] = a_i

        # ballistic update, then enforce the minimum gap front to back
        for L in range(nl):
            hi = lane_start[L + 1]
            for j in range(hi - 1, lane_start[L] - 1, -1):
                i = order[j]
                vi = v[i]
                a_i = acc[i]
                vn = vi + a_i * dt
                if vn < 0.0:
                    dx = -vi * vi / (2.0 * a_i) if a_i < 0.0 else 0.0
                    vn = 0.0
                else:
                    dx = 0.5 * (vi + vn) * dt
                v0 = vdes[i]
                if vn > v0:
                    vn = v0
                xo = x[i]
                xn = xo + dx
                bound = INF
                vb = 0.0
                if j + 1 < hi:
                    ld = order[j + 1]
                    bound = x[ld] - vlen - s0
                    vb = v[ld]
                orr = _obstacle_ahead(L, xo, obs_lane, obs_rear, obs_on)
                if orr - s0 < bound:
                    bound = orr - s0
                    vb = 0.0
                if xn > bound:
                    xn = max(xo, bound)
                    if vn > vb:
                        vn = vb
                x[i] = xn
                v[i] = vn
                if bound < INF * 0.5:
                    g = bound + s0 - xn
                    if g < diag[0]:
                        diag[0] = g
                if cool[i] > 0.0:
                    cool[i] -= dt

        # exits, compacting the order
        m = 0
        for j in range(n):
            i = order[j]
            if x[i] > p[P_ROAD_END]:
                active[i] = False
                counters[C_EXITED] += 1
                counters[C_FREE_TOP] += 1
                free_stack[counters[C_FREE_TOP] - 1] = i
            else:
                order[m] = i
                m += 1
        n = m

        t += dt

        # injection: FIFO entry queue, at most one vehicle per lane per step
        used = np.zeros(nl, dtype=np.bool_)
        n_new = 0
        while counters[C_NEXT_ARRIVAL] < arr_t.shape[0] and arr_t[counters[C_NEXT_ARRIVAL]] <= t:
            q = counters[C_NEXT_ARRIVAL]
            # rear-most vehicle per lane
            best_L = -1
            best_gap = -1.0
            best_vl = 0.0
            pref = arr_lane[q]
            for L in range(nl):
                if used[L]:
                    continue
                rear = INF
                vl = 0.0
                for j in range(n):
                    r = order[j]
                    if lane[r] == L:
                        rear = x[r] - vlen
                        vl = v[r]
                        break
                orr = _obstacle_ahead(L, 0.0, obs_lane, obs_rear, obs_on)
                if orr < rear:
                    rear = orr
                    vl = 0.0
                gap = rear
                if gap < s0 + 2.0:
                    continue
                score = gap + (1.0e6 if L == pref else 0.0)
                if score > best_gap:
                    best_gap = score
                    best_L = L
                    best_vl = vl
            if best_L < 0:
                break
            if counters[C_FREE_TOP] == 0:
                break
            L = best_L
            rear = best_gap - (1.0e6 if L == pref else 0.0)
            vin = arr_vdes[q]
            if rear < INF * 0.5:
                vsafe = math.sqrt(best_vl * best_vl + 2.0 * p[P_B] * max(0.0, rear - s0))
                if vsafe < vin:
                    vin = vsafe
            counters[C_FREE_TOP] -= 1
            i = free_stack[counters[C_FREE_TOP]]
            active[i] = True
            x[i] = 0.0
            v[i] = vin
            vdes[i] = arr_vdes[q]
            lane[i] = L
            vid[i] = q
            cool[i] = 0.0
            used[L] = True
            ins_slot[L] = i
            n_new += 1
            counters[C_INJECTED] += 1
            counters[C_NEXT_ARRIVAL] += 1

        for L in range(nl):
            if used[L]:
                order[n] = ins_slot[L]
                n += 1
        counters[C_NACTIVE] = n

        # link statistics
        for k in range(n_links):
            stat_s[k] = 0.0
            stat_c[k] = 0
        for j in range(n):
            i = order[j]
            for k in range(n_links):
                if link_bounds[k] <= x[i] < link_bounds[k + 1]:
                    stat_s[k] += v[i]
                    stat_c[k] += 1
                    break
        for k in range(n_links):
            if stat_c[k] > 0:
                link_sum[k] += stat_s[k] / stat_c[k]
                link_steps[k] += 1
    return t
