"""Compiled batch simulators.

Two kernels, one per vertex representation:

* ``tree_batch`` for the big world and the comb. A vertex is a pair
  ``(sheet, zp)``: ``sheet`` names a copy of Z^d (the address prefix
  ``sign (z_1, ..., z_{n-1})``) and ``zp`` is the packed last component.
  Sheets are created lazily on the first long-range birth into them and
  carry the prefix hash, so a vertex's RNG key equals
  ``topology.address_key`` of its address.
* ``small_world_batch`` for the torus with a matching, vertices ``0..n-1``.

Both run replicates one after the other with scratch buffers reused
between them. All randomness comes from the keyed mixer in ``rng``, with
the same key layout as the pure-Python steppers in ``dynamics``.
"""

import numba as nb
import numpy as np

from .rng import (
    GAMMA_CHANNEL,
    GAMMA_TARGET_CHANNEL,
    GRAPH_TAG,
    LONG_CHANNEL,
    fisher_yates_matching,
    nb_combine,
    nb_mix64,
    nb_unit,
)
from .topology import PACK_BIAS, PACK_BITS, pack_delta, trial_offsets

EXTINCT = 0
CENSORED = 1
RETURNED = 2
SURVIVED = 3
WINDOW_HIT = 4
RESOURCE = 5
STATUS_NAMES = ("Extinct", "Censored", "Returned", "Survived", "WindowHit", "Resource")

FAMILY_BIG = 0
FAMILY_COMB = 1
MODE_CP = 0
MODE_BRW = 1

_LONG = np.uint64(LONG_CHANNEL)
_GAMMA = np.uint64(GAMMA_CHANNEL)
_GAMMA_T = np.uint64(GAMMA_TARGET_CHANNEL)
_GRAPH = np.uint64(GRAPH_TAG)
_HK = np.uint64(0x9E3779B97F4A7C15)
_ONE = np.uint64(1)


def zero_code(d):
    return sum(PACK_BIAS << (PACK_BITS * i) for i in range(d))


def packed_trial_offsets(m, d):
    return np.array([pack_delta(y) for y in trial_offsets(m, d)], dtype=np.int64)


# ------------------------------------------------------------- helpers


@nb.njit(cache=True, inline="always")
def _slot(ka, kb, stamp, gen, mask, a, b):
    h = nb_mix64(np.uint64(a) * _HK ^ np.uint64(b))
    i = np.int64(h & np.uint64(mask))
    while stamp[i] == gen:
        if ka[i] == a and kb[i] == b:
            return i
        i = (i + 1) & mask
    return i


@nb.njit(cache=True)
def _grow1(arr, n):
    out = np.empty(n, dtype=arr.dtype)
    out[: arr.size] = arr
    return out


@nb.njit(cache=True)
def _rehash(ka_list, kb_list, count, cap, gen):
    """Fresh table of capacity ``cap`` holding entries ``i < count`` of the key lists."""
    ka = np.zeros(cap, dtype=np.int64)
    kb = np.zeros(cap, dtype=np.int64)
    val = np.zeros(cap, dtype=np.int64)
    stamp = np.zeros(cap, dtype=np.int64)
    mask = cap - 1
    for i in range(count):
        s = _slot(ka, kb, stamp, gen, mask, ka_list[i], kb_list[i])
        ka[s] = ka_list[i]
        kb[s] = kb_list[i]
        val[s] = i
        stamp[s] = gen
    return ka, kb, val, stamp


@nb.njit(cache=True, inline="always")
def _linf_steps(zp, d, m):
    """ceil(||z||_inf / m) for packed z."""
    best = 0
    fmask = (np.int64(1) << PACK_BITS) - 1
    for i in range(d):
        c = ((zp >> (PACK_BITS * i)) & fmask) - PACK_BIAS
        if c < 0:
            c = -c
        if c > best:
            best = c
    return (best + m - 1) // m


@nb.njit(cache=True)
def _short_block(skey, n_trials, p, logq, out):
    """Fill ``out`` with successful trial indices (geometric skipping); return the count."""
    if p <= 0.0 or n_trials <= 0:
        return 0
    if p >= 1.0:
        for i in range(n_trials):
            out[i] = i
        return n_trials
    k = 0
    idx = -1
    j = np.uint64(0)
    while True:
        u = nb_unit(nb_combine(skey, j))
        j += _ONE
        g = np.log1p(-u) / logq
        if g >= n_trials:
            break
        idx += np.int64(g) + 1
        if idx >= n_trials:
            break
        out[k] = idx
        k += 1
    return k


# ------------------------------------------------------------ tree kernel


@nb.njit(cache=True)
def tree_batch(
    base_keys,
    family,
    mode,
    d,
    m,
    p_short,
    beta,
    offsets,
    init_parent,
    init_ppos,
    init_level,
    init_hash,
    init_dist,
    start_sheet,
    start_zp,
    horizon,
    stop_on_return,
    window_start,
    survive_cap,
    trunc_cap,
    prune_far,
    max_sites,
    rec_pop,
    rec_origin,
):
    """Simulate one process per entry of ``base_keys`` on the big world or comb.

    Sheets ``0`` and ``1`` are the level-1 copies ``+`` and ``-``; sheets
    given in ``init_*`` (built from the start addresses) are restored before
    every replicate. ``offsets`` are packed closed-ball offsets, self first.

    Returns ``(status, time, first_return, pops, origin)``; ``pops`` and
    ``origin`` have one row per replicate when recorded, else shape (0, 0).
    """
    n_rep = base_keys.size
    M = offsets.size
    z0 = np.int64(0)
    for i in range(d):
        z0 |= np.int64(PACK_BIAS) << (PACK_BITS * i)
    logq = np.log1p(-p_short) if 0.0 < p_short < 1.0 else 0.0

    status = np.empty(n_rep, dtype=np.int64)
    stime = np.empty(n_rep, dtype=np.int64)
    first_ret = np.full(n_rep, -1, dtype=np.int64)
    pops = np.zeros((n_rep if rec_pop else 0, horizon + 1 if rec_pop else 0), dtype=np.int64)
    orig = np.zeros((n_rep if rec_origin else 0, horizon + 1 if rec_origin else 0), dtype=np.uint8)

    n_init = init_parent.size
    scap = 1024
    while scap < 2 * n_init:
        scap *= 2
    sh_parent = np.empty(scap, dtype=np.int64)
    sh_ppos = np.empty(scap, dtype=np.int64)
    sh_level = np.empty(scap, dtype=np.int64)
    sh_hash = np.empty(scap, dtype=np.uint64)
    sh_dist = np.empty(scap, dtype=np.int64)
    ccap = 2 * scap
    cka = np.zeros(ccap, dtype=np.int64)
    ckb = np.zeros(ccap, dtype=np.int64)
    cval = np.zeros(ccap, dtype=np.int64)
    cstamp = np.zeros(ccap, dtype=np.int64)

    pcap = 1024
    cur_s = np.empty(pcap, dtype=np.int64)
    cur_z = np.empty(pcap, dtype=np.int64)
    cur_c = np.empty(pcap, dtype=np.int64)
    new_s = np.empty(pcap, dtype=np.int64)
    new_z = np.empty(pcap, dtype=np.int64)
    new_c = np.empty(pcap, dtype=np.int64)
    vcap = 2 * pcap
    vka = np.zeros(vcap, dtype=np.int64)
    vkb = np.zeros(vcap, dtype=np.int64)
    vval = np.zeros(vcap, dtype=np.int64)
    vstamp = np.zeros(vcap, dtype=np.int64)
    hits = np.empty(M, dtype=np.int64)

    vgen = np.int64(0)
    cgen = np.int64(0)

    for rep in range(n_rep):
        base = base_keys[rep]
        # restore the initial sheets
        cgen += 1
        n_sheets = n_init
        for k in range(n_init):
            sh_parent[k] = init_parent[k]
            sh_ppos[k] = init_ppos[k]
            sh_level[k] = init_level[k]
            sh_hash[k] = init_hash[k]
            sh_dist[k] = init_dist[k]
            if init_parent[k] >= 0:
                sl = _slot(cka, ckb, cstamp, cgen, ccap - 1, init_parent[k], init_ppos[k])
                cka[sl] = init_parent[k]
                ckb[sl] = init_ppos[k]
                cval[sl] = k
                cstamp[sl] = cgen
        n_children = n_init

        # start state, merged through the vertex table
        vgen += 1
        n_cur = 0
        while start_sheet.size + 1 > pcap or 2 * (start_sheet.size + 1) > vcap:
            pcap *= 2
            cur_s = _grow1(cur_s, pcap)
            cur_z = _grow1(cur_z, pcap)
            cur_c = _grow1(cur_c, pcap)
            new_s = _grow1(new_s, pcap)
            new_z = _grow1(new_z, pcap)
            new_c = _grow1(new_c, pcap)
            vcap = 2 * pcap
            vka, vkb, vval, vstamp = _rehash(cur_s, cur_z, 0, vcap, vgen)
        total = 0
        origin_in = False
        for k in range(start_sheet.size):
            sl = _slot(vka, vkb, vstamp, vgen, vcap - 1, start_sheet[k], start_zp[k])
            if vstamp[sl] == vgen:
                if mode == MODE_BRW:
                    cur_c[vval[sl]] += 1
                    total += 1
                continue
            vstamp[sl] = vgen
            vka[sl] = start_sheet[k]
            vkb[sl] = start_zp[k]
            vval[sl] = n_cur
            cur_s[n_cur] = start_sheet[k]
            cur_z[n_cur] = start_zp[k]
            cur_c[n_cur] = 1
            n_cur += 1
            total += 1
            if start_sheet[k] == 0 and start_zp[k] == z0:
                origin_in = True
        if rec_pop:
            pops[rep, 0] = total
        if rec_origin and origin_in:
            orig[rep, 0] = 1

        st = CENSORED
        stt = horizon
        if n_cur == 0:
            st = EXTINCT
            stt = 0
        t = 0
        while n_cur > 0 and t < horizon:
            tkey = nb_combine(base, np.uint64(t))
            vgen += 1
            n_new = 0
            total = 0
            for i in range(n_cur):
                s = cur_s[i]
                zp = cur_z[i]
                xkey = nb_combine(tkey, nb_combine(sh_hash[s], np.uint64(zp)))
                is_tooth = family == FAMILY_COMB and s != 0
                for part in range(cur_c[i]):
                    # room for M + 1 more sites and one more sheet
                    if n_new + M + 2 > pcap or 2 * (n_new + M + 2) > vcap:
                        newcap = 2 * pcap
                        while n_new + M + 2 > newcap:
                            newcap *= 2
                        cur_s = _grow1(cur_s, newcap)
                        cur_z = _grow1(cur_z, newcap)
                        cur_c = _grow1(cur_c, newcap)
                        new_s = _grow1(new_s, newcap)
                        new_z = _grow1(new_z, newcap)
                        new_c = _grow1(new_c, newcap)
                        pcap = newcap
                        vcap = 2 * pcap
                        vka, vkb, vval, vstamp = _rehash(new_s, new_z, n_new, vcap, vgen)
                    if n_sheets + 2 > scap:
                        scap *= 2
                        sh_parent = _grow1(sh_parent, scap)
                        sh_ppos = _grow1(sh_ppos, scap)
                        sh_level = _grow1(sh_level, scap)
                        sh_hash = _grow1(sh_hash, scap)
                        sh_dist = _grow1(sh_dist, scap)
                    if 2 * (n_children + 2) > ccap:
                        ccap *= 2
                        child_p = np.empty(n_sheets, dtype=np.int64)
                        child_z = np.empty(n_sheets, dtype=np.int64)
                        nc = 0
                        for k in range(n_sheets):
                            if sh_parent[k] >= 0:
                                child_p[nc] = sh_parent[k]
                                child_z[nc] = sh_ppos[k]
                                nc += 1
                        cka, ckb, cval, cstamp = _rehash(child_p, child_z, nc, ccap, cgen)
                        # rehash stores list positions; map back to sheet ids
                        nc = 0
                        ids = np.empty(n_sheets, dtype=np.int64)
                        for k in range(n_sheets):
                            if sh_parent[k] >= 0:
                                ids[nc] = k
                                nc += 1
                        for k in range(ccap):
                            if cstamp[k] == cgen:
                                cval[k] = ids[cval[k]]

                    skey = nb_combine(xkey, np.uint64(part))
                    # self + short block
                    nh = 0
                    if not is_tooth:
                        nh = _short_block(skey, M, p_short, logq, hits)
                    for h in range(nh):
                        ts = s
                        tz = zp + offsets[hits[h]]
                        sl = _slot(vka, vkb, vstamp, vgen, vcap - 1, ts, tz)
                        if vstamp[sl] == vgen:
                            if mode == MODE_BRW:
                                new_c[vval[sl]] += 1
                                total += 1
                        else:
                            vstamp[sl] = vgen
                            vka[sl] = ts
                            vkb[sl] = tz
                            vval[sl] = n_new
                            new_s[n_new] = ts
                            new_z[n_new] = tz
                            new_c[n_new] = 1
                            n_new += 1
                            total += 1
                    # long-range trial
                    if nb_unit(nb_combine(skey, _LONG)) < beta:
                        if family == FAMILY_BIG:
                            go_down = zp != z0
                            drop = (not go_down) and sh_level[s] >= 2
                        else:
                            go_down = s == 0 and zp != z0
                            drop = s >= 2
                        if go_down:
                            sl = _slot(cka, ckb, cstamp, cgen, ccap - 1, s, zp)
                            if cstamp[sl] == cgen:
                                ts = cval[sl]
                            else:
                                ts = n_sheets
                                n_sheets += 1
                                n_children += 1
                                cstamp[sl] = cgen
                                cka[sl] = s
                                ckb[sl] = zp
                                cval[sl] = ts
                                sh_parent[ts] = s
                                sh_ppos[ts] = zp
                                sh_level[ts] = sh_level[s] + 1
                                sh_hash[ts] = nb_combine(sh_hash[s], np.uint64(zp))
                                sh_dist[ts] = sh_dist[s] + _linf_steps(zp, d, m) + 1
                            tz = z0
                        elif drop:
                            ts = sh_parent[s]
                            tz = sh_ppos[s]
                        else:
                            ts = 1 - s
                            tz = z0
                        sl = _slot(vka, vkb, vstamp, vgen, vcap - 1, ts, tz)
                        if vstamp[sl] == vgen:
                            if mode == MODE_BRW:
                                new_c[vval[sl]] += 1
                                total += 1
                        else:
                            vstamp[sl] = vgen
                            vka[sl] = ts
                            vkb[sl] = tz
                            vval[sl] = n_new
                            new_s[n_new] = ts
                            new_z[n_new] = tz
                            new_c[n_new] = 1
                            n_new += 1
                            total += 1
            t += 1

            # exact pruning of sites that cannot reach the origin by prune_far, then
            # truncation to the trunc_cap particles closest to the origin
            if prune_far > 0 or (trunc_cap > 0 and total > trunc_cap):
                dist = np.empty(n_new, dtype=np.int64)
                for i in range(n_new):
                    dist[i] = sh_dist[new_s[i]] + _linf_steps(new_z[i], d, m)
                keep = np.ones(n_new, dtype=np.bool_)
                kept_total = total
                if prune_far > 0:
                    for i in range(n_new):
                        if t + dist[i] > prune_far:
                            keep[i] = False
                            kept_total -= new_c[i]
                if trunc_cap > 0 and kept_total > trunc_cap:
                    # counting selection on the (small, integer) distances: keep the
                    # closest sites, ties broken by insertion order
                    dmax = 0
                    for i in range(n_new):
                        if keep[i] and dist[i] > dmax:
                            dmax = dist[i]
                    mass = np.zeros(dmax + 1, dtype=np.int64)
                    for i in range(n_new):
                        if keep[i]:
                            mass[dist[i]] += new_c[i]
                    cut = 0
                    below = 0
                    while below + mass[cut] < trunc_cap:
                        below += mass[cut]
                        cut += 1
                    budget = trunc_cap - below
                    for i in range(n_new):
                        if not keep[i] or dist[i] < cut:
                            continue
                        if dist[i] > cut or budget <= 0:
                            keep[i] = False
                        else:
                            if new_c[i] > budget:
                                new_c[i] = budget
                            budget -= new_c[i]
                    kept_total = trunc_cap
                if kept_total < total:
                    vgen += 1
                    k = 0
                    total = 0
                    for i in range(n_new):
                        if keep[i]:
                            new_s[k] = new_s[i]
                            new_z[k] = new_z[i]
                            new_c[k] = new_c[i]
                            total += new_c[k]
                            sl = _slot(vka, vkb, vstamp, vgen, vcap - 1, new_s[k], new_z[k])
                            vstamp[sl] = vgen
                            vka[sl] = new_s[k]
                            vkb[sl] = new_z[k]
                            vval[sl] = k
                            k += 1
                    n_new = k

            sl = _slot(vka, vkb, vstamp, vgen, vcap - 1, np.int64(0), z0)
            origin_in = vstamp[sl] == vgen
            if rec_pop:
                pops[rep, t] = total
            if rec_origin and origin_in:
                orig[rep, t] = 1

            cur_s, new_s = new_s, cur_s
            cur_z, new_z = new_z, cur_z
            cur_c, new_c = new_c, cur_c
            n_cur = n_new

            if origin_in and first_ret[rep] < 0:
                first_ret[rep] = t
            if n_cur == 0:
                st = EXTINCT
                stt = t
                break
            if stop_on_return and origin_in:
                st = RETURNED
                stt = t
                break
            if window_start >= 0 and origin_in and t >= window_start:
                st = WINDOW_HIT
                stt = t
                break
            if total > max_sites:
                st = RESOURCE
                stt = t
                break
            if survive_cap > 0 and total >= survive_cap:
                st = SURVIVED
                stt = t
                break
        status[rep] = st
        stime[rep] = stt
    return status, stime, first_ret, pops, orig


# ------------------------------------------------------ small-world kernel


@nb.njit(cache=True)
def small_world_batch(
    base_keys,
    mode,
    table,
    vkeys,
    fixed_match,
    per_replicate_graph,
    p_short,
    beta,
    gamma,
    start,
    origin,
    horizon,
    stop_on_return,
    window_start,
    survive_cap,
    rec_stride,
):
    """Simulate one process per entry of ``base_keys`` on a small world.

    ``table`` is the ``(n, M)`` trial table (self first). With
    ``per_replicate_graph`` each replicate draws its own matching from its
    base key; otherwise ``fixed_match`` is used throughout.

    Returns ``(status, time, first_return, pops, origin)``; ``pops`` holds
    the total every ``rec_stride`` steps (shape (0, 0) when ``rec_stride`` is 0).
    """
    n_rep = base_keys.size
    n, M = table.shape
    logq = np.log1p(-p_short) if 0.0 < p_short < 1.0 else 0.0
    status = np.empty(n_rep, dtype=np.int64)
    stime = np.empty(n_rep, dtype=np.int64)
    first_ret = np.full(n_rep, -1, dtype=np.int64)
    n_rec = horizon // rec_stride + 1 if rec_stride > 0 else 0
    pops = np.zeros((n_rep if rec_stride > 0 else 0, n_rec), dtype=np.int64)
    orig = np.zeros((n_rep if rec_stride > 0 else 0, n_rec), dtype=np.uint8)

    stamp = np.zeros(n, dtype=np.int64)
    pos = np.zeros(n, dtype=np.int64)
    cur_v = np.empty(n, dtype=np.int64)
    cur_c = np.empty(n, dtype=np.int64)
    new_v = np.empty(n, dtype=np.int64)
    new_c = np.empty(n, dtype=np.int64)
    hits = np.empty(M, dtype=np.int64)
    gen = np.int64(0)

    for rep in range(n_rep):
        base = base_keys[rep]
        if per_replicate_graph:
            match = fisher_yates_matching(n, np.int64(nb_combine(base, _GRAPH) >> _ONE))
        else:
            match = fixed_match
        gen += 1
        n_cur = 0
        total = 0
        for k in range(start.size):
            v = start[k]
            if stamp[v] == gen:
                if mode == MODE_BRW:
                    cur_c[pos[v]] += 1
                    total += 1
                continue
            stamp[v] = gen
            pos[v] = n_cur
            cur_v[n_cur] = v
            cur_c[n_cur] = 1
            n_cur += 1
            total += 1
        if rec_stride > 0:
            pops[rep, 0] = total
            orig[rep, 0] = 1 if stamp[origin] == gen else 0

        st = CENSORED
        stt = horizon
        if n_cur == 0:
            st = EXTINCT
            stt = 0
        t = 0
        while n_cur > 0 and t < horizon:
            tkey = nb_combine(base, np.uint64(t))
            gen += 1
            n_new = 0
            total = 0
            for i in range(n_cur):
                x = cur_v[i]
                xkey = nb_combine(tkey, vkeys[x])
                for part in range(cur_c[i]):
                    skey = nb_combine(xkey, np.uint64(part))
                    nh = _short_block(skey, M, p_short, logq, hits)
                    for h in range(nh + 2):
                        if h < nh:
                            w = table[x, hits[h]]
                        elif h == nh:
                            if nb_unit(nb_combine(skey, _LONG)) >= beta:
                                continue
                            w = match[x]
                        else:
                            if gamma <= 0.0 or nb_unit(nb_combine(skey, _GAMMA)) >= gamma:
                                continue
                            w = np.int64(nb_unit(nb_combine(skey, _GAMMA_T)) * n)
                            if w >= n:
                                w = n - 1
                        if stamp[w] == gen:
                            if mode == MODE_BRW:
                                new_c[pos[w]] += 1
                                total += 1
                        else:
                            stamp[w] = gen
                            pos[w] = n_new
                            new_v[n_new] = w
                            new_c[n_new] = 1
                            n_new += 1
                            total += 1
            t += 1
            origin_in = stamp[origin] == gen
            if rec_stride > 0 and t % rec_stride == 0:
                pops[rep, t // rec_stride] = total
                orig[rep, t // rec_stride] = 1 if origin_in else 0
            cur_v, new_v = new_v, cur_v
            cur_c, new_c = new_c, cur_c
            n_cur = n_new
            if origin_in and first_ret[rep] < 0:
                first_ret[rep] = t
            if n_cur == 0:
                st = EXTINCT
                stt = t
                break
            if stop_on_return and origin_in:
                st = RETURNED
                stt = t
                break
            if window_start >= 0 and origin_in and t >= window_start:
                st = WINDOW_HIT
                stt = t
                break
            if survive_cap > 0 and total >= survive_cap:
                st = SURVIVED
                stt = t
                break
        status[rep] = st
        stime[rep] = stt
    return status, stime, first_ret, pops, orig
