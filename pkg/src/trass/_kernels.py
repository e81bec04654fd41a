"""Compiled contact kernels shared by the geometry helpers and the push simulator.

Convex parts are packed as a (P, V, 2) float array padded along V, with a
per-part vertex count. Blocks are stored in their local frame and posed
with (x, y, theta) rows.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

EPS = 1e-12
# Vertices within this distance of a support plane belong to the support feature.
FEATURE_TOL = 1e-9


def pack_parts(parts) -> tuple[np.ndarray, np.ndarray]:
    vmax = max(len(p) for p in parts)
    packed = np.zeros((len(parts), vmax, 2))
    counts = np.zeros(len(parts), dtype=np.int64)
    for i, part in enumerate(parts):
        packed[i, : len(part)] = part
        counts[i] = len(part)
    return packed, counts


@nb.njit(cache=True)
def _project(part, n, ax, ay):
    lo = np.inf
    hi = -np.inf
    for k in range(n):
        v = part[k, 0] * ax + part[k, 1] * ay
        lo = min(lo, v)
        hi = max(hi, v)
    return lo, hi


@nb.njit(cache=True)
def _translation_interval(pa, na, pb, nb_, dx, dy):
    """Open interval of t for which pb + t*d has interior overlap with pa.

    Returns (lo, hi) with lo >= hi meaning no t overlaps.
    """
    lo = -np.inf
    hi = np.inf
    for which in range(2):
        part = pa if which == 0 else pb
        n = na if which == 0 else nb_
        for k in range(n):
            k1 = (k + 1) % n
            ex = part[k1, 0] - part[k, 0]
            ey = part[k1, 1] - part[k, 1]
            norm = math.hypot(ex, ey)
            if norm < EPS:
                continue
            ax = ey / norm
            ay = -ex / norm
            a0, a1 = _project(pa, na, ax, ay)
            b0, b1 = _project(pb, nb_, ax, ay)
            dn = dx * ax + dy * ay
            s_lo = a0 - b1
            s_hi = a1 - b0
            if abs(dn) < EPS:
                if not (s_lo < 0.0 < s_hi):
                    return 0.0, 0.0
                continue
            t0 = s_lo / dn
            t1 = s_hi / dn
            if t0 > t1:
                t0, t1 = t1, t0
            lo = max(lo, t0)
            hi = min(hi, t1)
            if lo >= hi:
                return 0.0, 0.0
    return lo, hi


@nb.njit(cache=True)
def _pair_depth(pa, na, pb, nb_):
    """Smallest projection overlap over all separating axes (<= 0 if disjoint)."""
    depth = np.inf
    for which in range(2):
        part = pa if which == 0 else pb
        n = na if which == 0 else nb_
        for k in range(n):
            k1 = (k + 1) % n
            ex = part[k1, 0] - part[k, 0]
            ey = part[k1, 1] - part[k, 1]
            norm = math.hypot(ex, ey)
            if norm < EPS:
                continue
            ax = ey / norm
            ay = -ex / norm
            a0, a1 = _project(pa, na, ax, ay)
            b0, b1 = _project(pb, nb_, ax, ay)
            depth = min(depth, min(a1 - b0, b1 - a0))
    return depth


@nb.njit(cache=True)
def _support_contact(pa, na, pb, nb_, dx, dy):
    """Midpoint of the support features of pa along +d and pb along -d."""
    ux = -dy
    uy = dx
    a_max = -np.inf
    for k in range(na):
        a_max = max(a_max, pa[k, 0] * dx + pa[k, 1] * dy)
    b_min = np.inf
    for k in range(nb_):
        b_min = min(b_min, pb[k, 0] * dx + pb[k, 1] * dy)
    ua0 = np.inf
    ua1 = -np.inf
    for k in range(na):
        if pa[k, 0] * dx + pa[k, 1] * dy >= a_max - FEATURE_TOL:
            u = pa[k, 0] * ux + pa[k, 1] * uy
            ua0 = min(ua0, u)
            ua1 = max(ua1, u)
    ub0 = np.inf
    ub1 = -np.inf
    for k in range(nb_):
        if pb[k, 0] * dx + pb[k, 1] * dy <= b_min + FEATURE_TOL:
            u = pb[k, 0] * ux + pb[k, 1] * uy
            ub0 = min(ub0, u)
            ub1 = max(ub1, u)
    lo = max(ua0, ub0)
    hi = min(ua1, ub1)
    if lo <= hi:
        tc = 0.5 * (lo + hi)
    elif ua1 < ub0:
        tc = 0.5 * (ua1 + ub0)
    else:
        tc = 0.5 * (ub1 + ua0)
    nc = 0.5 * (a_max + b_min)
    return nc * dx + tc * ux, nc * dy + tc * uy


@nb.njit(cache=True)
def _bounds(parts, counts):
    """Center and bounding radius of every part."""
    n = parts.shape[0]
    out = np.zeros((n, 3))
    for i in range(n):
        cx = 0.0
        cy = 0.0
        for k in range(counts[i]):
            cx += parts[i, k, 0]
            cy += parts[i, k, 1]
        cx /= counts[i]
        cy /= counts[i]
        r = 0.0
        for k in range(counts[i]):
            r = max(r, math.hypot(parts[i, k, 0] - cx, parts[i, k, 1] - cy))
        out[i, 0] = cx
        out[i, 1] = cy
        out[i, 2] = r
    return out


@nb.njit(cache=True)
def _add_dir(dirs, n_dirs, ax, ay):
    for q in range(n_dirs):
        if abs(dirs[q, 0] - ax) < 1e-12 and abs(dirs[q, 1] - ay) < 1e-12:
            return n_dirs
    dirs[n_dirs, 0] = ax
    dirs[n_dirs, 1] = ay
    return n_dirs + 1


@nb.njit(cache=True)
def parts_overlap(parts_a, counts_a, parts_b, counts_b):
    """Separate the union of parts_b from the union of parts_a by translating b.

    Candidate directions are the edge normals of every overlapping part
    pair (both signs); for each, the smallest shift that clears every
    part pair is found by sweeping the per-pair overlap intervals.
    Returns (hit, mtv_x, mtv_y, contact_x, contact_y).
    """
    n_a = parts_a.shape[0]
    n_b = parts_b.shape[0]
    n_pairs = n_a * n_b
    ba = _bounds(parts_a, counts_a)
    bb = _bounds(parts_b, counts_b)
    overlapping = np.zeros(n_pairs, dtype=np.bool_)
    any_hit = False
    for i in range(n_a):
        for j in range(n_b):
            if math.hypot(ba[i, 0] - bb[j, 0], ba[i, 1] - bb[j, 1]) >= ba[i, 2] + bb[j, 2]:
                continue
            if _pair_depth(parts_a[i], counts_a[i], parts_b[j], counts_b[j]) > EPS:
                overlapping[i * n_b + j] = True
                any_hit = True
    if not any_hit:
        return False, 0.0, 0.0, 0.0, 0.0

    max_dirs = 0
    for p in range(n_pairs):
        if overlapping[p]:
            max_dirs += 2 * (counts_a[p // n_b] + counts_b[p % n_b])
    dirs = np.zeros((max_dirs, 2))
    n_dirs = 0
    for p in range(n_pairs):
        if not overlapping[p]:
            continue
        for which in range(2):
            part = parts_a[p // n_b] if which == 0 else parts_b[p % n_b]
            n = counts_a[p // n_b] if which == 0 else counts_b[p % n_b]
            for k in range(n):
                k1 = (k + 1) % n
                ex = part[k1, 0] - part[k, 0]
                ey = part[k1, 1] - part[k, 1]
                norm = math.hypot(ex, ey)
                if norm < EPS:
                    continue
                n_dirs = _add_dir(dirs, n_dirs, ey / norm, -ex / norm)
                n_dirs = _add_dir(dirs, n_dirs, -ey / norm, ex / norm)

    los = np.zeros(n_pairs)
    his = np.zeros(n_pairs)
    ts = np.empty(n_dirs)
    bindings = np.empty(n_dirs, dtype=np.int64)
    for q in range(n_dirs):
        dx = dirs[q, 0]
        dy = dirs[q, 1]
        for p in range(n_pairs):
            i = p // n_b
            j = p % n_b
            # closest approach of the part centers while b slides along +d
            rx = bb[j, 0] - ba[i, 0]
            ry = bb[j, 1] - ba[i, 1]
            along = rx * dx + ry * dy
            if along >= 0.0:
                reach = math.hypot(rx, ry)
            else:
                reach = abs(rx * dy - ry * dx)
            if reach >= ba[i, 2] + bb[j, 2]:
                los[p] = 0.0
                his[p] = 0.0
                continue
            los[p], his[p] = _translation_interval(
                parts_a[i], counts_a[i], parts_b[j], counts_b[j], dx, dy
            )
        t = 0.0
        binding = -1
        changed = True
        while changed:
            changed = False
            for p in range(n_pairs):
                if los[p] < his[p] and los[p] < t - EPS and t < his[p] - EPS:
                    t = his[p]
                    binding = p
                    changed = True
        ts[q] = t
        bindings[q] = binding
    # Near-ties go to the smallest line angle, which d and -d share, so swapping
    # the arguments picks the mirrored direction.
    t_min = ts.min()
    best_d = -1
    best_phi = np.inf
    for q in range(n_dirs):
        if ts[q] > t_min + EPS:
            continue
        phi = math.atan2(dirs[q, 1], dirs[q, 0])
        if phi < 0.0:
            phi += math.pi
        if phi >= math.pi - 1e-12:
            phi = 0.0
        if phi < best_phi - 1e-12:
            best_phi = phi
            best_d = q
    best_t = ts[best_d]
    best_pair = bindings[best_d]
    dx = dirs[best_d, 0]
    dy = dirs[best_d, 1]
    cx, cy = _support_contact(
        parts_a[best_pair // n_b], counts_a[best_pair // n_b],
        parts_b[best_pair % n_b], counts_b[best_pair % n_b], dx, dy,
    )
    return True, best_t * dx, best_t * dy, cx, cy


@nb.njit(cache=True)
def circle_overlap(cx, cy, radius, parts, counts):
    """Deepest penetration of a disc into any convex part.

    Returns (hit, move_x, move_y, contact_x, contact_y) where move is the
    translation of the parts that clears the disc from the deepest part.
    """
    best = EPS
    hit = False
    mx = 0.0
    my = 0.0
    px = 0.0
    py = 0.0
    for i in range(parts.shape[0]):
        part = parts[i]
        n = counts[i]
        inside = True
        # closest boundary point and inward distance to nearest edge
        qd = np.inf
        qx = 0.0
        qy = 0.0
        edge_d = np.inf
        enx = 0.0
        eny = 0.0
        for k in range(n):
            k1 = (k + 1) % n
            ex = part[k1, 0] - part[k, 0]
            ey = part[k1, 1] - part[k, 1]
            ln2 = ex * ex + ey * ey
            rx = cx - part[k, 0]
            ry = cy - part[k, 1]
            cr = ex * ry - ey * rx
            ln = math.sqrt(ln2)
            if cr <= 0.0:
                inside = False
            if cr / ln < edge_d:
                edge_d = cr / ln
                enx = ey / ln
                eny = -ex / ln
            s = (rx * ex + ry * ey) / ln2
            s = min(1.0, max(0.0, s))
            fx = part[k, 0] + s * ex
            fy = part[k, 1] + s * ey
            d = math.hypot(cx - fx, cy - fy)
            if d < qd:
                qd = d
                qx = fx
                qy = fy
        if inside:
            depth = edge_d + radius
            if depth > best:
                best = depth
                hit = True
                mx = -depth * enx
                my = -depth * eny
                px = cx - edge_d * enx
                py = cy - edge_d * eny
        elif qd < radius:
            depth = radius - qd
            if depth > best:
                best = depth
                hit = True
                if qd > EPS:
                    nx = (qx - cx) / qd
                    ny = (qy - cy) / qd
                else:
                    nx = -enx
                    ny = -eny
                mx = depth * nx
                my = depth * ny
                px = 0.5 * (qx + cx + radius * nx)
                py = 0.5 * (qy + cy + radius * ny)
    return hit, mx, my, px, py


@nb.njit(cache=True)
def place_parts(local, counts, x, y, theta, out):
    c = math.cos(theta)
    s = math.sin(theta)
    for i in range(local.shape[0]):
        for k in range(counts[i]):
            lx = local[i, k, 0]
            ly = local[i, k, 1]
            out[i, k, 0] = x + c * lx - s * ly
            out[i, k, 1] = y + s * lx + c * ly


@nb.njit(cache=True)
def _wrap(theta):
    w = theta - 2.0 * math.pi * np.round(theta / (2.0 * math.pi))
    if w <= -math.pi:
        w += 2.0 * math.pi
    elif w > math.pi:
        w -= 2.0 * math.pi
    return w


@nb.njit(cache=True)
def _move(pose, b, mx, my, contact_x, contact_y, beta, rotate):
    rx = contact_x - pose[b, 0]
    ry = contact_y - pose[b, 1]
    pose[b, 0] += mx
    pose[b, 1] += my
    if rotate:
        dtheta = beta * (rx * my - ry * mx) / (rx * rx + ry * ry + 1e-6)
        pose[b, 2] = _wrap(pose[b, 2] + dtheta)


@nb.njit(cache=True)
def push_step(pose_in, local0, counts0, local1, counts1, radii, action,
              pusher_radius, step_length, beta, halfwidth, max_iters):
    """Quasi-static linear push; returns the new (2, 3) pose array."""
    pose = pose_in.copy()
    prev = pose_in.copy()
    w0 = np.empty_like(local0)
    w1 = np.empty_like(local1)
    sx = action[0]
    sy = action[1]
    ex = action[2] - sx
    ey = action[3] - sy
    length = math.hypot(ex, ey)
    n_inc = max(1, int(math.ceil(length / step_length - 1e-9)))
    # the pusher is lowered at the start point; landing on a block voids the push
    place_parts(local0, counts0, pose[0, 0], pose[0, 1], pose[0, 2], w0)
    place_parts(local1, counts1, pose[1, 0], pose[1, 1], pose[1, 2], w1)
    if circle_overlap(sx, sy, pusher_radius, w0, counts0)[0] or circle_overlap(sx, sy, pusher_radius, w1, counts1)[0]:
        return pose
    for k in range(n_inc + 1):
        px = sx + ex * k / n_inc
        py = sy + ey * k / n_inc
        prev[:, :] = pose
        moved0 = 0.0
        moved1 = 0.0
        for b in range(2):
            for it in range(max_iters):
                if math.hypot(px - pose[b, 0], py - pose[b, 1]) > radii[b] + pusher_radius:
                    break
                if b == 0:
                    place_parts(local0, counts0, pose[0, 0], pose[0, 1], pose[0, 2], w0)
                    hit, mx, my, cx, cy = circle_overlap(px, py, pusher_radius, w0, counts0)
                else:
                    place_parts(local1, counts1, pose[1, 0], pose[1, 1], pose[1, 2], w1)
                    hit, mx, my, cx, cy = circle_overlap(px, py, pusher_radius, w1, counts1)
                if not hit:
                    break
                _move(pose, b, mx, my, cx, cy, beta, True)
                if b == 0:
                    moved0 += math.hypot(mx, my)
                else:
                    moved1 += math.hypot(mx, my)
        if moved0 == 0.0 and moved1 == 0.0:
            continue
        pushed = 0 if moved0 >= moved1 else 1
        other = 1 - pushed
        for it in range(max_iters + 1):
            if math.hypot(pose[0, 0] - pose[1, 0], pose[0, 1] - pose[1, 1]) > radii[0] + radii[1]:
                break
            place_parts(local0, counts0, pose[0, 0], pose[0, 1], pose[0, 2], w0)
            place_parts(local1, counts1, pose[1, 0], pose[1, 1], pose[1, 2], w1)
            if pushed == 0:
                hit, mx, my, cx, cy = parts_overlap(w0, counts0, w1, counts1)
            else:
                hit, mx, my, cx, cy = parts_overlap(w1, counts1, w0, counts0)
            if not hit:
                break
            # final pass translates only, which always separates
            _move(pose, other, mx, my, cx, cy, beta, it < max_iters - 1)
        out_of_bounds = False
        for b in range(2):
            if abs(pose[b, 0]) > halfwidth or abs(pose[b, 1]) > halfwidth:
                out_of_bounds = True
        if out_of_bounds:
            # a block would leave the workspace: the pusher stalls here
            pose[:, :] = prev
            break
    return pose


@nb.njit(cache=True)
def rollout_batch(pose0, local0, counts0, local1, counts1, radii, actions,
                  pusher_radius, step_length, beta, halfwidth, max_iters):
    """Simulate (K, N, 4) action sequences from one start; returns (K, N, 2, 3)."""
    n_seq = actions.shape[0]
    horizon = actions.shape[1]
    out = np.empty((n_seq, horizon, 2, 3))
    for i in range(n_seq):
        pose = pose0.copy()
        for t in range(horizon):
            pose = push_step(pose, local0, counts0, local1, counts1, radii, actions[i, t],
                             pusher_radius, step_length, beta, halfwidth, max_iters)
            out[i, t] = pose
    return out


@nb.njit(cache=True)
def _ray_circle(px, py, ux, uy, cx, cy, r):
    # smallest s >= 0 with |p + s u - c| = r, or inf
    dx = px - cx
    dy = py - cy
    b = dx * ux + dy * uy
    c = dx * dx + dy * dy - r * r
    disc = b * b - c
    if disc < 0.0:
        return np.inf
    s = -b - math.sqrt(disc)
    return s if s >= 0.0 else np.inf


@nb.njit(cache=True)
def _part_entry(part, n, px, py, ux, uy, r):
    """Travel before a disc of radius r moving from p along unit u first touches the part."""
    inside = True
    best_d2 = np.inf
    for i in range(n):
        ax, ay = part[i, 0], part[i, 1]
        bx, by = part[(i + 1) % n, 0], part[(i + 1) % n, 1]
        ex, ey = bx - ax, by - ay
        if ex * (py - ay) - ey * (px - ax) < 0.0:
            inside = False
        t = ((px - ax) * ex + (py - ay) * ey) / (ex * ex + ey * ey)
        t = min(1.0, max(0.0, t))
        qx, qy = ax + t * ex - px, ay + t * ey - py
        best_d2 = min(best_d2, qx * qx + qy * qy)
    if inside or best_d2 <= r * r:
        return 0.0
    s_best = np.inf
    for i in range(n):
        ax, ay = part[i, 0], part[i, 1]
        bx, by = part[(i + 1) % n, 0], part[(i + 1) % n, 1]
        ex, ey = bx - ax, by - ay
        el = math.hypot(ex, ey)
        nx, ny = ey / el, -ex / el
        s_best = min(s_best, _ray_circle(px, py, ux, uy, ax, ay, r))
        denom = ux * nx + uy * ny
        if denom >= 0.0:
            continue
        # line of the edge pushed out by r: (q - a) . n = r
        s = (r - ((px - ax) * nx + (py - ay) * ny)) / denom
        if s < 0.0 or s >= s_best:
            continue
        qx, qy = px + s * ux - ax, py + s * uy - ay
        t = (qx * ex + qy * ey) / (el * el)
        if 0.0 <= t <= 1.0:
            s_best = s
    return s_best


@nb.njit(cache=True)
def first_contact(poses, actions, local0, counts0, local1, counts1, radius):
    """Per push and block: travel to first contact with the pusher (inf if none
    along the segment) and the pusher center at contact in the block frame.

    Returns a (K, 2, 3) array of (travel, local x, local y).
    """
    k_total = poses.shape[0]
    out = np.empty((k_total, 2, 3))
    w0 = np.empty_like(local0)
    w1 = np.empty_like(local1)
    for k in range(k_total):
        sx, sy = actions[k, 0], actions[k, 1]
        dx, dy = actions[k, 2] - sx, actions[k, 3] - sy
        length = math.hypot(dx, dy)
        if length > EPS:
            ux, uy = dx / length, dy / length
        else:
            ux, uy = 1.0, 0.0
        place_parts(local0, counts0, poses[k, 0, 0], poses[k, 0, 1], poses[k, 0, 2], w0)
        place_parts(local1, counts1, poses[k, 1, 0], poses[k, 1, 1], poses[k, 1, 2], w1)
        for b in range(2):
            s_best = np.inf
            if b == 0:
                for i in range(w0.shape[0]):
                    s_best = min(s_best, _part_entry(w0[i], counts0[i], sx, sy, ux, uy, radius))
            else:
                for i in range(w1.shape[0]):
                    s_best = min(s_best, _part_entry(w1[i], counts1[i], sx, sy, ux, uy, radius))
            if s_best > length:
                out[k, b, 0] = np.inf
                out[k, b, 1] = 0.0
                out[k, b, 2] = 0.0
                continue
            qx = sx + s_best * ux - poses[k, b, 0]
            qy = sy + s_best * uy - poses[k, b, 1]
            c, s = math.cos(poses[k, b, 2]), math.sin(poses[k, b, 2])
            out[k, b, 0] = s_best
            out[k, b, 1] = c * qx + s * qy
            out[k, b, 2] = -s * qx + c * qy
    return out


@nb.njit(cache=True)
def block_sweep(poses, actions, first, local0, counts0, local1, counts1):
    """Translation along each push direction after which the block ``first[k]``
    would run into the other block (0 if already touching, inf if never)."""
    k_total = poses.shape[0]
    out = np.empty(k_total)
    w0 = np.empty_like(local0)
    w1 = np.empty_like(local1)
    for k in range(k_total):
        dx, dy = actions[k, 2] - actions[k, 0], actions[k, 3] - actions[k, 1]
        length = math.hypot(dx, dy)
        if length > EPS:
            ux, uy = dx / length, dy / length
        else:
            ux, uy = 1.0, 0.0
        place_parts(local0, counts0, poses[k, 0, 0], poses[k, 0, 1], poses[k, 0, 2], w0)
        place_parts(local1, counts1, poses[k, 1, 0], poses[k, 1, 1], poses[k, 1, 2], w1)
        best = np.inf
        for i in range(w0.shape[0]):
            for j in range(w1.shape[0]):
                if first[k] == 0:
                    lo, hi = _translation_interval(w1[j], counts1[j], w0[i], counts0[i], ux, uy)
                else:
                    lo, hi = _translation_interval(w0[i], counts0[i], w1[j], counts1[j], ux, uy)
                if lo < hi and hi > 0.0:
                    best = min(best, max(lo, 0.0))
        out[k] = best
    return out
