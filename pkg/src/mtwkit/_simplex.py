"""Primal network simplex for dense bipartite transportation problems.

Costs are int64 (the caller scales floats to a fixed resolution), so reduced
costs, pivot comparisons, and node potentials are exact integers and the
algorithm terminates exactly.  Masses stay float64: tree flows are plain
sums and differences of the input masses, never divided, so the returned
plan is deterministic and balances to float accuracy.

Anti-cycling uses Cunningham's rule: the leaving arc is the last blocking
arc met when traversing the pivot cycle in the direction of the entering
arc's flow, starting from the apex, which keeps the spanning tree strongly
feasible.  Entering arcs are found by Dantzig's rule within sqrt-sized
blocks scanned cyclically (Bland over blocks).

Arc layout for m sources and k targets: arc e < m*k joins source e // k to
target e % k; arc m*k + p is the artificial arc joining node p to the root
(source -> root, root -> target) at a prohibitive cost.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_UNBOUNDED = 1
STATUS_PIVOT_LIMIT = 2


@njit(cache=True)
def _solve_core(m, k, cost, a, b, big, max_pivots):
    n_nodes = m + k + 1  # + root
    root = m + k
    n_real = m * k
    n_arcs = n_real + m + k

    flow = np.zeros(n_arcs, dtype=np.float64)
    pi = np.zeros(n_nodes, dtype=np.int64)
    parent = np.full(n_nodes, -1, dtype=np.int64)
    pred = np.full(n_nodes, -1, dtype=np.int64)  # arc to parent
    size = np.ones(n_nodes, dtype=np.int64)
    nxt = np.empty(n_nodes, dtype=np.int64)      # depth-first thread
    prv = np.empty(n_nodes, dtype=np.int64)
    last = np.empty(n_nodes, dtype=np.int64)     # last descendant in thread

    # Initial spanning tree: every node hangs off the root via its
    # artificial arc, carrying its full supply or demand.
    for p in range(m + k):
        parent[p] = root
        pred[p] = n_real + p
        flow[n_real + p] = a[p] if p < m else b[p - m]
        pi[p] = big if p < m else -big
        last[p] = p
    size[root] = n_nodes
    pi[root] = 0
    last[root] = m + k - 1
    nxt[root] = 0
    prv[0] = root
    for p in range(m + k - 1):
        nxt[p] = p + 1
        prv[p + 1] = p
    nxt[m + k - 1] = root
    prv[root] = m + k - 1

    def arc_tail(e):
        if e < n_real:
            return e // k
        p = e - n_real
        return p if p < m else root

    def arc_head(e):
        if e < n_real:
            return m + e % k
        p = e - n_real
        return root if p < m else p

    block = int(np.sqrt(n_arcs)) + 1
    n_blocks = (n_arcs + block - 1) // block

    up_p = np.empty(n_nodes, dtype=np.int64)   # scratch paths to the apex
    up_q = np.empty(n_nodes, dtype=np.int64)

    pivots = 0
    start = 0
    stale_blocks = 0
    while stale_blocks < n_blocks:
        # --- entering arc: most negative reduced cost within the block
        stop = start + block
        best_rc = np.int64(0)
        enter = -1
        for e in range(start, stop):
            ee = e if e < n_arcs else e - n_arcs
            t = ee // k if ee < n_real else (ee - n_real if ee - n_real < m else root)
            h = m + ee % k if ee < n_real else (root if ee - n_real < m else ee - n_real)
            rc = cost[ee] - pi[t] + pi[h]
            if rc < best_rc:
                best_rc = rc
                enter = ee
        start = stop if stop < n_arcs else stop - n_arcs
        if enter < 0:
            stale_blocks += 1
            continue
        stale_blocks = 0
        pivots += 1
        if pivots > max_pivots:
            return STATUS_PIVOT_LIMIT, flow, pi, pivots

        p_in = arc_tail(enter)
        q_in = arc_head(enter)

        # --- pivot cycle: apex -> p_in, entering arc, q_in -> apex
        u, v = p_in, q_in
        lp = 0
        lq = 0
        while u != v:
            if size[u] < size[v]:
                up_p[lp] = u
                lp += 1
                u = parent[u]
            elif size[v] < size[u]:
                up_q[lq] = v
                lq += 1
                v = parent[v]
            else:
                up_p[lp] = u
                lp += 1
                u = parent[u]
                up_q[lq] = v
                lq += 1
                v = parent[v]
        # apex = u == v

        # --- leaving arc: last blocking arc in circulation order
        # circulation: apex -> p_in (down p-path), entering, q_in -> apex (up)
        delta = np.inf
        leave_node = -1  # child-side node of the leaving arc
        # down the p-side: traversal parent -> child; arc blocks if directed
        # child -> parent (flow decreases)
        for i in range(lp - 1, -1, -1):
            vnode = up_p[i]
            e = pred[vnode]
            decreases = arc_tail(e) == vnode
            if decreases and flow[e] <= delta:
                delta = flow[e]
                leave_node = vnode
        # up the q-side: traversal child -> parent; arc blocks if directed
        # parent -> child
        for i in range(lq):
            vnode = up_q[i]
            e = pred[vnode]
            decreases = arc_head(e) == vnode
            if decreases and flow[e] <= delta:
                delta = flow[e]
                leave_node = vnode
        if leave_node < 0:
            return STATUS_UNBOUNDED, flow, pi, pivots

        # --- push delta around the cycle
        if delta > 0.0:
            flow[enter] += delta
            for i in range(lp):
                vnode = up_p[i]
                e = pred[vnode]
                if arc_tail(e) == vnode:
                    flow[e] -= delta
                else:
                    flow[e] += delta
            for i in range(lq):
                vnode = up_q[i]
                e = pred[vnode]
                if arc_tail(e) == vnode:
                    flow[e] += delta
                else:
                    flow[e] -= delta

        # --- structural update: replace the leaving arc by the entering arc
        # subtree being cut is rooted at leave_node; decide which endpoint of
        # the entering arc lies inside it (walk up from both ends).
        in_sub_q = False
        w = q_in
        while w != -1:
            if w == leave_node:
                in_sub_q = True
                break
            w = parent[w]
        sub_end = q_in if in_sub_q else p_in
        out_end = p_in if in_sub_q else q_in

        # remove (parent[leave_node], leave_node)
        s = parent[leave_node]
        size_t = size[leave_node]
        prev_t = prv[leave_node]
        last_t = last[leave_node]
        next_last_t = nxt[last_t]
        parent[leave_node] = -1
        pred[leave_node] = -1
        nxt[prev_t] = next_last_t
        prv[next_last_t] = prev_t
        nxt[last_t] = leave_node
        prv[leave_node] = last_t
        while s != -1:
            size[s] -= size_t
            if last[s] == last_t:
                last[s] = prev_t
            s = parent[s]

        # re-root the cut subtree at sub_end: walk the ancestor chain and
        # repeatedly make the current root a child of the next node down
        depth = 0
        w = sub_end
        while w != -1:
            up_p[depth] = w
            depth += 1
            w = parent[w]
        for i in range(depth - 1, 0, -1):
            px = up_p[i]      # current root of the cut subtree
            qx = up_p[i - 1]  # its child on the chain; becomes the new root
            size_p = size[px]
            last_p = last[px]
            prev_q = prv[qx]
            last_q = last[qx]
            next_last_q = nxt[last_q]
            parent[px] = qx
            parent[qx] = -1
            pred[px] = pred[qx]
            pred[qx] = -1
            size[px] = size_p - size[qx]
            size[qx] = size_p
            # detach qx's thread segment, then splice px's remainder under qx
            nxt[prev_q] = next_last_q
            prv[next_last_q] = prev_q
            nxt[last_q] = qx
            prv[qx] = last_q
            if last_p == last_q:
                last[px] = prev_q
                last_p = prev_q
            prv[px] = last_q
            nxt[last_q] = px
            nxt[last_p] = qx
            prv[qx] = last_p
            last[qx] = last_p

        # attach sub_end under out_end via the entering arc
        last_p = last[out_end]
        next_last_p = nxt[last_p]
        size_q = size[sub_end]
        last_q = last[sub_end]
        parent[sub_end] = out_end
        pred[sub_end] = enter
        nxt[last_p] = sub_end
        prv[sub_end] = last_p
        prv[next_last_p] = last_q
        nxt[last_q] = next_last_p
        w = out_end
        while w != -1:
            size[w] += size_q
            if last[w] == last_p:
                last[w] = last_q
            w = parent[w]

        # potentials on the attached subtree shift by the entering arc's
        # (pre-pivot) reduced cost, signed by its orientation
        if sub_end == q_in:
            d = pi[p_in] - cost[enter] - pi[q_in]
        else:
            d = pi[q_in] + cost[enter] - pi[p_in]
        w = sub_end
        pi[w] += d
        stopn = nxt[last[sub_end]]
        w = nxt[w]
        while w != stopn:
            pi[w] += d
            w = nxt[w]

    return STATUS_OK, flow, pi, pivots


def solve_transport_int(cost_int, a, b, max_pivots=None):
    """Solve min <cost, plan> s.t. plan 1 = a, plan^T 1 = b, plan >= 0.

    cost_int: (m, k) int64; a, b: positive float64 with equal sums.
    Returns (flow on real arcs as an (m, k) array, u_int, v_int, pivots)
    where u_int[i] + v_int[j] <= cost_int[i, j] with equality on the support.
    """
    from .errors import SolverStalled

    cost_int = np.ascontiguousarray(cost_int, dtype=np.int64)
    m, k = cost_int.shape
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cmax = int(np.max(np.abs(cost_int))) if cost_int.size else 0
    big = np.int64((m + k + 1) * (cmax + 1))
    flat = np.concatenate([cost_int.ravel(), np.full(m + k, big, dtype=np.int64)])
    if max_pivots is None:
        max_pivots = max(1_000_000, 200 * (m + k))
    status, flow, pi, pivots = _solve_core(m, k, flat, a, b, big, max_pivots)
    if status == STATUS_UNBOUNDED:
        raise SolverStalled("pivot cycle without a blocking arc (unbounded)")
    if status == STATUS_PIVOT_LIMIT:
        raise SolverStalled(f"network simplex exceeded {max_pivots} pivots")
    art = flow[m * k :]
    if np.max(np.abs(art)) > 1e-9 * max(1.0, float(np.sum(a))):
        raise SolverStalled(
            f"artificial arcs still carry {np.max(np.abs(art)):.3e} mass; "
            "measures are not balanced"
        )
    plan = flow[: m * k].reshape(m, k)
    u_int = pi[:m].copy()
    v_int = -pi[m : m + k].copy()
    return plan, u_int, v_int, pivots
