"""Sampling-based path planners on a boolean configuration-space grid.

Points are metric ``(u, v)`` coordinates over a grid of cells with side
``res``: cell ``(row, col) = (floor(v / res), floor(u / res))``. Anything
outside the grid counts as blocked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

PLANNER_KINDS = ("RrtConnect", "LazyPrm")


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "RrtConnect"
    rrt_iterations: int = 20
    rrt_restarts: int = 2
    prm_schedule: tuple = (500, 2000, 5000)
    prm_neighbors: int = 10
    resolution: float = 0.05
    smoothing_attempts: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PLANNER_KINDS:
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.rrt_iterations <= 0 or self.rrt_restarts < 0 or self.resolution <= 0:
            raise ValueError("planner budgets must be positive")
        if not self.prm_schedule or any(n <= 0 for n in self.prm_schedule):
            raise ValueError("planner budgets must be positive")
        object.__setattr__(self, "prm_schedule", tuple(int(n) for n in self.prm_schedule))


class GridChecker:
    """Point and straight-edge validity against a free-space grid."""

    def __init__(self, free: np.ndarray, res: float, step: float = 0.05):
        self.free = np.asarray(free, dtype=bool)
        self.res = res
        self.step = step
        self.rows, self.cols = self.free.shape
        self.width = self.cols * res
        self.height = self.rows * res
        self.checks = 0

    def points_free(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        c = np.floor(pts[:, 0] / self.res).astype(int)
        r = np.floor(pts[:, 1] / self.res).astype(int)
        ok = (r >= 0) & (r < self.rows) & (c >= 0) & (c < self.cols)
        out = np.zeros(len(pts), dtype=bool)
        out[ok] = self.free[r[ok], c[ok]]
        return out

    def is_free(self, p) -> bool:
        return bool(self.points_free(np.asarray(p, dtype=np.float64))[0])

    def edge_points(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        n = max(int(math.ceil(np.hypot(*(b - a)) / self.step)), 1)
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        return a + t * (b - a)

    def edge_free(self, a, b) -> bool:
        self.checks += 1
        return bool(self.points_free(self.edge_points(a, b)).all())


def path_length(path) -> float:
    p = np.asarray(path, dtype=np.float64)
    if len(p) < 2:
        return 0.0
    return float(np.hypot(*np.diff(p, axis=0).T).sum())


def densify(path, step: float) -> np.ndarray:
    """Insert points so consecutive points are at most ``step`` apart."""
    p = np.asarray(path, dtype=np.float64)
    if len(p) < 2:
        return p.copy()
    out = [p[:1]]
    for a, b in zip(p[:-1], p[1:]):
        n = max(int(math.ceil(np.hypot(*(b - a)) / step - 1e-9)), 1)
        t = np.linspace(0.0, 1.0, n + 1)[1:, None]
        out.append(a + t * (b - a))
    return np.vstack(out)


def shortcut(path, checker: GridChecker, attempts: int, rng) -> np.ndarray:
    """Random shortcutting: join two random path points when the edge is free."""
    p = [np.asarray(q, dtype=np.float64) for q in path]
    for _ in range(attempts):
        if len(p) < 3:
            break
        i, j = sorted(rng.choice(len(p), size=2, replace=False))
        if j - i < 2:
            continue
        if checker.edge_free(p[i], p[j]):
            p = p[:i + 1] + p[j:]
    return np.asarray(p)


class _Tree:
    def __init__(self, root, cap: int = 4096):
        self.nodes = np.empty((cap, 2))
        self.parent = np.empty(cap, dtype=int)
        self.n = 0
        self.add(root, -1)

    def add(self, q, parent: int) -> int:
        if self.n == len(self.nodes):
            self.nodes = np.vstack([self.nodes, np.empty_like(self.nodes)])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent)])
        self.nodes[self.n] = q
        self.parent[self.n] = parent
        self.n += 1
        return self.n - 1

    def nearest(self, q) -> int:
        d = self.nodes[:self.n] - q
        return int(np.argmin(d[:, 0] ** 2 + d[:, 1] ** 2))

    def path_to_root(self, i: int) -> list:
        out = []
        while i >= 0:
            out.append(self.nodes[i].copy())
            i = self.parent[i]
        return out


def _extend(tree: _Tree, target, checker: GridChecker, step: float):
    """Greedily grow ``tree`` towards ``target`` in ``step`` increments.

    Returns ``(last_index, reached)``.
    """
    i = tree.nearest(target)
    q = tree.nodes[i].copy()
    target = np.asarray(target, dtype=np.float64)
    while True:
        d = target - q
        dist = math.hypot(d[0], d[1])
        if dist < 1e-12:
            return i, True
        nxt = target.copy() if dist <= step else q + d * (step / dist)
        if not checker.edge_free(q, nxt):
            return i, False
        i = tree.add(nxt, i)
        q = nxt


def rrt_connect(checker: GridChecker, start, goal, cfg: PlannerConfig, rng):
    """Bidirectional RRT with greedy connection; ``(path or None, stats)``."""
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    stats = {"iterations": 0, "nodes": 0, "attempts": 0}
    if checker.edge_free(start, goal):
        return np.vstack([start, goal]), stats
    lo = np.zeros(2)
    hi = np.array([checker.width, checker.height])
    for _ in range(cfg.rrt_restarts + 1):
        stats["attempts"] += 1
        ta, tb = _Tree(start), _Tree(goal)
        for _ in range(cfg.rrt_iterations):
            stats["iterations"] += 1
            sample = rng.uniform(lo, hi)
            ia, _ = _extend(ta, sample, checker, cfg.resolution)
            ib, reached = _extend(tb, ta.nodes[ia], checker, cfg.resolution)
            if reached:
                stats["nodes"] += ta.n + tb.n
                pa = ta.path_to_root(ia)[::-1]
                pb = tb.path_to_root(ib)[1:]
                path = np.asarray(pa + pb)
                if np.allclose(path[0], goal):
                    path = path[::-1]
                return path, stats
            ta, tb = tb, ta
        stats["nodes"] += ta.n + tb.n
    return None, stats


def lazy_prm(checker: GridChecker, start, goal, cfg: PlannerConfig, rng):
    """Roadmap over free samples; edges are only checked on candidate paths."""
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    stats = {"iterations": 0, "nodes": 0, "attempts": 0}
    if checker.edge_free(start, goal):
        return np.vstack([start, goal]), stats
    hi = np.array([checker.width, checker.height])
    free_cells = np.argwhere(checker.free)
    if len(free_cells) == 0:
        return None, stats
    for n_samples in cfg.prm_schedule:
        stats["attempts"] += 1
        stats["iterations"] += n_samples
        cells = free_cells[rng.integers(len(free_cells), size=n_samples)]
        jitter = rng.uniform(0.0, 1.0, size=(n_samples, 2))
        pts = np.stack([(cells[:, 1] + jitter[:, 0]) * checker.res,
                        (cells[:, 0] + jitter[:, 1]) * checker.res], axis=1)
        pts = np.clip(pts, 0.0, hi - 1e-9)
        nodes = np.vstack([start, goal, pts])
        n = len(nodes)
        stats["nodes"] += n
        k = min(cfg.prm_neighbors + 1, n)
        dist, idx = cKDTree(nodes).query(nodes, k=k)
        a = np.repeat(np.arange(n), k - 1)
        b = idx[:, 1:].ravel()
        d = dist[:, 1:].ravel()
        keep = (a != b) & np.isfinite(d)
        a, b, d = a[keep], b[keep], d[keep]
        lo_, hi_ = np.minimum(a, b), np.maximum(a, b)
        key = lo_ * n + hi_
        _, first = np.unique(key, return_index=True)
        ea, eb, ew = lo_[first], hi_[first], np.maximum(d[first], 1e-9)
        valid = np.ones(len(ea), dtype=bool)
        edge_id = {(int(x), int(y)): e for e, (x, y) in enumerate(zip(ea, eb))}
        checked = np.zeros(len(ea), dtype=bool)
        while True:
            m = valid
            g = csr_matrix((np.concatenate([ew[m], ew[m]]),
                            (np.concatenate([ea[m], eb[m]]), np.concatenate([eb[m], ea[m]]))), shape=(n, n))
            dmat, pred = dijkstra(g, directed=False, indices=0, return_predecessors=True)
            if not np.isfinite(dmat[1]):
                break
            chain = [1]
            while chain[-1] != 0:
                chain.append(int(pred[chain[-1]]))
            chain = chain[::-1]
            ok = True
            for u, v in zip(chain[:-1], chain[1:]):
                e = edge_id[(min(u, v), max(u, v))]
                if checked[e]:
                    continue
                checked[e] = True
                if not checker.edge_free(nodes[u], nodes[v]):
                    valid[e] = False
                    ok = False
                    break
            if ok:
                return nodes[chain], stats
    return None, stats


def plan_path(free: np.ndarray, res: float, start, goal, cfg: PlannerConfig, rng=None):
    """Plan, shortcut and densify a path on a free-space grid.

    Returns ``(path or None, stats)``; ``stats['reason']`` explains failures.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    checker = GridChecker(free, res, cfg.resolution)
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if not checker.is_free(goal):
        return None, {"reason": "goal_blocked", "iterations": 0, "nodes": 0, "attempts": 0, "edge_checks": 0}
    if not checker.is_free(start):
        return None, {"reason": "start_blocked", "iterations": 0, "nodes": 0, "attempts": 0, "edge_checks": 0}
    if np.allclose(start, goal, atol=1e-12):
        return start[None, :].copy(), {"reason": "", "iterations": 0, "nodes": 1, "attempts": 0, "edge_checks": 0}
    fn = rrt_connect if cfg.kind == "RrtConnect" else lazy_prm
    path, stats = fn(checker, start, goal, cfg, rng)
    if path is None:
        stats["reason"] = "no_path"
        stats["edge_checks"] = checker.checks
        return None, stats
    path = shortcut(path, checker, cfg.smoothing_attempts, rng)
    path = densify(path, cfg.resolution)
    stats["reason"] = ""
    stats["edge_checks"] = checker.checks
    return path, stats


def path_is_free(free: np.ndarray, res: float, path, step: float = 0.05) -> bool:
    """Exhaustive check of every segment at ``step`` resolution."""
    checker = GridChecker(free, res, step)
    p = np.asarray(path, dtype=np.float64)
    if len(p) == 1:
        return checker.is_free(p[0])
    return all(checker.edge_free(a, b) for a, b in zip(p[:-1], p[1:]))
