"""Availability / accuracy / earliness costs, NSGA-II and hypervolume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

REFERENCE = (1.0, 1.0)


@dataclass(frozen=True)
class Outcome:
    predicted: Optional[int]
    truth: int
    t_star: Optional[int]
    length: int

    def __post_init__(self):
        if (self.predicted is None) != (self.t_star is None):
            raise ValueError("predicted and t_star must be both set or both None")


def _require(outcomes: Sequence[Outcome]) -> None:
    if len(outcomes) == 0:
        raise ValueError("cost of an empty outcome set is undefined")


def cost_accuracy(outcomes: Sequence[Outcome]) -> float:
    """Error rate over the sequences that received a prediction (0 if none did)."""
    _require(outcomes)
    made = [o for o in outcomes if o.predicted is not None]
    if not made:
        return 0.0
    return sum(o.predicted != o.truth for o in made) / len(made)


def cost_earliness(outcomes: Sequence[Outcome]) -> float:
    """Mean ``t* / L``; a sequence without prediction counts as 1."""
    _require(outcomes)
    return sum(1.0 if o.t_star is None else o.t_star / o.length for o in outcomes) / len(outcomes)


def cost_availability(outcomes: Sequence[Outcome]) -> float:
    """Fraction of sequences that ended without a prediction."""
    _require(outcomes)
    return sum(o.predicted is None for o in outcomes) / len(outcomes)


@dataclass(frozen=True)
class CostPoint:
    c_av: float
    c_ac: float
    c_ea: float = 0.0
    gamma: object = None

    @property
    def costs(self) -> tuple:
        return (self.c_av, self.c_ac)


@dataclass
class ParetoFront:
    points: list
    reference: tuple = REFERENCE
    hypervolume: float = 0.0
    history: list = field(default_factory=list)  # archive hypervolume after each generation


@dataclass(frozen=True)
class NsgaConfig:
    population: int = 8
    generations: int = 16
    eta_crossover: float = 15.0
    crossover_rate: float = 0.9
    eta_mutation: float = 20.0
    mutation_rate: Optional[float] = None  # None -> 1 / n_var
    lower: float = -1.0
    upper: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise ValueError(f"population must be even and >= 4, got {self.population}")
        if self.generations < 1:
            raise ValueError(f"generations must be >= 1, got {self.generations}")


def evaluate_gamma(gamma, dataset, model) -> CostPoint:
    """Run the online loop over ``dataset`` with trigger ``gamma`` and aggregate the costs."""
    from .harness import run_dataset

    outcomes = run_dataset(dataset, model, gamma)
    return CostPoint(cost_availability(outcomes), cost_accuracy(outcomes), cost_earliness(outcomes), gamma)


# -- Pareto machinery ----------------------------------------------------------

def dominates(a, b) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def non_dominated_sort(points) -> list:
    """Fast non-dominated sort (minimization). Returns fronts as lists of indices."""
    F = np.asarray(points, dtype=float)
    n = len(F)
    if n == 0:
        raise ValueError("non_dominated_sort needs at least one point")
    le = (F[:, None, :] <= F[None, :, :]).all(axis=2)
    lt = (F[:, None, :] < F[None, :, :]).any(axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while len(current):
        fronts.append([int(i) for i in current])
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def crowding_distance(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    n = len(F)
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for m in range(F.shape[1]):
        order = np.argsort(F[:, m], kind="stable")
        span = F[order[-1], m] - F[order[0], m]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (F[order[2:], m] - F[order[:-2], m]) / span
    return dist


def hypervolume(front, reference=REFERENCE) -> float:
    """Area dominated by ``front`` inside the box bounded by ``reference``."""
    pts = np.asarray([p.costs if isinstance(p, CostPoint) else p for p in front], dtype=float).reshape(-1, 2)
    rx, ry = reference
    if len(pts) == 0:
        return 0.0
    if (pts < 0).any() or (pts[:, 0] > rx).any() or (pts[:, 1] > ry).any():
        raise ValueError("hypervolume: every point must lie in [0, reference]")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    area = 0.0
    best_y = ry
    for i, (x, y) in enumerate(pts):
        best_y = min(best_y, y)
        x_next = pts[i + 1, 0] if i + 1 < len(pts) else rx
        area += (x_next - x) * (ry - best_y)
    return float(area)


def bounded_hypervolume(front, reference=REFERENCE) -> float:
    """Hypervolume counting only the points inside the reference box."""
    inside = [p for p in front if all(0.0 <= c <= r for c, r in zip(p.costs, reference))]
    return hypervolume(inside, reference)


def pareto_points(F: np.ndarray) -> np.ndarray:
    """Indices of the non-dominated rows of ``F``."""
    return np.array(non_dominated_sort(F)[0], dtype=int)


# -- variation -----------------------------------------------------------------

def _sbx(p1: np.ndarray, p2: np.ndarray, cfg: NsgaConfig, rng: np.random.Generator):
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() > cfg.crossover_rate:
        return c1, c2
    lo, hi, eta = cfg.lower, cfg.upper, cfg.eta_crossover
    for j in range(len(p1)):
        if rng.random() > 0.5 or abs(p1[j] - p2[j]) < 1e-14:
            continue
        y1, y2 = min(p1[j], p2[j]), max(p1[j], p2[j])
        u = rng.random()

        def spread(beta):
            alpha = 2.0 - beta ** -(eta + 1.0)
            if u <= 1.0 / alpha:
                return (u * alpha) ** (1.0 / (eta + 1.0))
            return (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))

        b1 = spread(1.0 + 2.0 * (y1 - lo) / (y2 - y1))
        b2 = spread(1.0 + 2.0 * (hi - y2) / (y2 - y1))
        v1 = min(max(0.5 * ((y1 + y2) - b1 * (y2 - y1)), lo), hi)
        v2 = min(max(0.5 * ((y1 + y2) + b2 * (y2 - y1)), lo), hi)
        if rng.random() < 0.5:
            v1, v2 = v2, v1
        c1[j], c2[j] = v1, v2
    return c1, c2


def _mutate(x: np.ndarray, cfg: NsgaConfig, rng: np.random.Generator) -> np.ndarray:
    y = x.copy()
    lo, hi, eta = cfg.lower, cfg.upper, cfg.eta_mutation
    rate = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / len(x)
    power = 1.0 / (eta + 1.0)
    for j in range(len(x)):
        if rng.random() >= rate:
            continue
        d1, d2 = (y[j] - lo) / (hi - lo), (hi - y[j]) / (hi - lo)
        u = rng.random()
        if u < 0.5:
            val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
            dq = val ** power - 1.0
        else:
            val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
            dq = 1.0 - val ** power
        y[j] = min(max(y[j] + dq * (hi - lo), lo), hi)
    return y


def _rank_and_crowd(F: np.ndarray):
    rank = np.empty(len(F), dtype=int)
    crowd = np.empty(len(F))
    fronts = non_dominated_sort(F)
    for r, idx in enumerate(fronts):
        rank[idx] = r
        crowd[idx] = crowding_distance(F[idx])
    return rank, crowd, fronts


def _tournament(rank, crowd, rng) -> int:
    a, b = rng.integers(len(rank), size=2)
    if rank[a] != rank[b]:
        return int(a if rank[a] < rank[b] else b)
    if crowd[a] != crowd[b]:
        return int(a if crowd[a] > crowd[b] else b)
    return int(a if rng.random() < 0.5 else b)


def _survive(F: np.ndarray, n: int) -> np.ndarray:
    chosen = []
    for idx in non_dominated_sort(F):
        if len(chosen) + len(idx) <= n:
            chosen.extend(idx)
            continue
        crowd = crowding_distance(F[idx])
        order = sorted(range(len(idx)), key=lambda k: (-crowd[k], idx[k]))
        chosen.extend(idx[k] for k in order[:n - len(chosen)])
        break
    return np.array(chosen, dtype=int)


def nsga2(config: NsgaConfig, objective: Callable, n_var: int,
          make_point: Optional[Callable] = None) -> ParetoFront:
    """NSGA-II over the box ``[lower, upper]^n_var``.

    ``objective(x)`` returns ``(c_av, c_ac)`` or a ``CostPoint``. Every
    evaluated individual enters an archive; the returned front is the
    archive's non-dominated set, so its hypervolume never decreases from one
    generation to the next.
    """
    rng = np.random.default_rng(config.seed)
    N = config.population

    archive_x: list = []
    archive_pts: list = []
    seen = {}

    def evaluate(x: np.ndarray) -> CostPoint:
        key = tuple(float(v) for v in x)
        if key in seen:
            return archive_pts[seen[key]]
        res = objective(np.array(key))
        point = res if isinstance(res, CostPoint) else CostPoint(float(res[0]), float(res[1]),
                                                                  float(res[2]) if len(res) > 2 else 0.0, key)
        if point.gamma is None:
            point = CostPoint(point.c_av, point.c_ac, point.c_ea, key)
        seen[key] = len(archive_pts)
        archive_x.append(key)
        archive_pts.append(point)
        return point

    def archive_front() -> list:
        F = np.array([p.costs for p in archive_pts])
        return [archive_pts[i] for i in sorted(pareto_points(F))]

    pop = rng.uniform(config.lower, config.upper, size=(N, n_var))
    F = np.array([evaluate(x).costs for x in pop])
    history = [bounded_hypervolume(archive_front())]

    for _ in range(config.generations):
        rank, crowd, _ = _rank_and_crowd(F)
        children = []
        while len(children) < N:
            a = pop[_tournament(rank, crowd, rng)]
            b = pop[_tournament(rank, crowd, rng)]
            c1, c2 = _sbx(a, b, config, rng)
            children += [_mutate(c1, config, rng), _mutate(c2, config, rng)]
        children = np.array(children[:N])
        Fc = np.array([evaluate(x).costs for x in children])
        merged, Fm = np.vstack([pop, children]), np.vstack([F, Fc])
        keep = _survive(Fm, N)
        pop, F = merged[keep], Fm[keep]
        history.append(bounded_hypervolume(archive_front()))

    front = archive_front()
    return ParetoFront(front, REFERENCE, bounded_hypervolume(front), history)


def select_operating_point(front) -> CostPoint:
    """Point with the smallest ``c_av + c_ac``; ties go to lower ``c_ac``, then lower ``c_ea``."""
    points = front.points if isinstance(front, ParetoFront) else list(front)
    if not points:
        raise ValueError("cannot select from an empty front")
    return min(points, key=lambda p: (round(p.c_av + p.c_ac, 12), round(p.c_ac, 12), round(p.c_ea, 12)))
