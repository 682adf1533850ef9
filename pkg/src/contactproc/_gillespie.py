"""Compiled event loop for lattice and torus simulations.

Active sites live in an indexed coordinate array (uniform sampling of the
source) plus a hash map from packed coordinates to array slot (membership and
O(1) removal).
"""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.typed import Dict

STATUS_ALIVE = 0
STATUS_EXTINCT = 1
STATUS_CAPPED = 2
STATUS_OUT_OF_RANGE = 3

# lattice coordinates are packed into 21 bits per axis
PACK_BITS = 21
PACK_OFFSET = 1 << (PACK_BITS - 1)
MAX_PACKED_DIM = 3


@njit(cache=True, nogil=True)
def _pack(x, wrap):
    key = 0
    d = x.shape[0]
    if wrap[0] > 0:
        mult = 1
        for k in range(d):
            key += x[k] * mult
            mult *= wrap[k]
        return key
    for k in range(d):
        key |= (x[k] + PACK_OFFSET) << (PACK_BITS * k)
    return key


@njit(cache=True, nogil=True)
def run_replica(rng, offsets, cum, total_a, delta, wrap, init, horizon, cap, grid):
    """Simulate one replica.

    Returns ``(sizes_on_grid, status, extinction_time, t_end, events, final_sites)``.
    Infection attempts onto an already infected site are no-ops.
    """
    d = init.shape[1]
    m = offsets.shape[0]
    ngrid = grid.shape[0]
    sizes = np.zeros(ngrid)
    capacity = max(64, 2 * init.shape[0])
    pos = np.empty((capacity, d), dtype=np.int64)
    slot = Dict.empty(key_type=types.int64, value_type=types.int64)
    n = 0
    for r in range(init.shape[0]):
        key = _pack(init[r], wrap)
        if key not in slot:
            slot[key] = n
            pos[n] = init[r]
            n += 1
    lim = PACK_OFFSET - 1
    rate_per_site = total_a + delta
    t = 0.0
    gi = 0
    events = 0
    status = STATUS_ALIVE
    t_ext = np.inf
    if n > cap:
        status = STATUS_CAPPED
    tgt = np.empty(d, dtype=np.int64)
    while status == STATUS_ALIVE:
        if n == 0:
            status = STATUS_EXTINCT
            t_ext = t
            break
        total = rate_per_site * n
        if total <= 0.0:
            break
        t_next = t + rng.exponential(1.0 / total)
        while gi < ngrid and grid[gi] < t_next:
            sizes[gi] = n
            gi += 1
        if t_next >= horizon:
            break
        t = t_next
        events += 1
        u = rng.random() * rate_per_site
        src = int(rng.random() * n)
        if src >= n:
            src = n - 1
        if u < delta:
            last = n - 1
            del slot[_pack(pos[src], wrap)]
            if src != last:
                pos[src] = pos[last]
                slot[_pack(pos[src], wrap)] = src
            n -= 1
            continue
        v = (u - delta) / total_a
        k = 0
        while k < m - 1 and cum[k] <= v:
            k += 1
        for c in range(d):
            x = pos[src, c] + offsets[k, c]
            if wrap[c] > 0:
                x %= wrap[c]
            elif x > lim or x < -lim:
                status = STATUS_OUT_OF_RANGE
            tgt[c] = x
        if status != STATUS_ALIVE:
            break
        key = _pack(tgt, wrap)
        if key in slot:
            continue
        if n == capacity:
            grown = np.empty((2 * capacity, d), dtype=np.int64)
            grown[:n] = pos[:n]
            pos = grown
            capacity *= 2
        pos[n] = tgt
        slot[key] = n
        n += 1
        if n > cap:
            status = STATUS_CAPPED
    t_end = t if status != STATUS_ALIVE else horizon
    if status == STATUS_EXTINCT:
        while gi < ngrid:
            sizes[gi] = 0.0
            gi += 1
    else:
        # alive at the horizon, or frozen at the cap
        while gi < ngrid and (status != STATUS_ALIVE or grid[gi] <= horizon):
            sizes[gi] = n
            gi += 1
    return sizes, status, t_ext, t_end, events, pos[:n].copy()
