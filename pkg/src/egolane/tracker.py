"""Per-lane hypotheses and their in-lane Kalman filters.

Each hypothesis assumes the vehicle drives in one map lane and tracks its
(lateral offset from that lane's center, heading) from the ego-lane marking
points. Longitudinal position is dead-reckoned and shared by all hypotheses.

The single-hypothesis functions (``predict``, ``associate``, ``update``) are
the reference formulation. ``track_batch`` runs the same filter for many
hypotheses at once with array operations and is what the pipeline uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import mmq as mmq_mod
from .sim import LOOKAHEAD, N_POINTS, SLOT_OFFSETS, CHANNEL_NAMES as SLOT_NAMES, MapModel, SensorFrame


class HypothesisStateError(RuntimeError):
    """Operation attempted on an inactive hypothesis."""


@dataclass(frozen=True)
class TrackerConfig:
    max_hypotheses: int = 6
    gate: float = 0.9
    r_floor: float = 1e-4
    q_lateral: float = 0.01
    q_heading: float = 0.001
    p0_lateral: float = 0.25
    p0_heading: float = 0.01
    chi2_p: float = mmq_mod.DEFAULT_P
    lateral_bound_lanes: float = 2.0

    def process_noise(self, dt: float) -> np.ndarray:
        return np.diag([self.q_lateral * dt, self.q_heading * dt])

    def initial_covariance(self) -> np.ndarray:
        return np.diag([self.p0_lateral, self.p0_heading])

    def noise_var(self, point_noise_sigma: float) -> float:
        return max(point_noise_sigma ** 2, self.r_floor)


@dataclass(frozen=True)
class Hypothesis:
    id: int
    lane_index: int
    state: np.ndarray = field(default_factory=lambda: np.zeros(2))
    covariance: np.ndarray = field(default_factory=lambda: np.diag([0.25, 0.01]))
    active: bool = True


@dataclass(frozen=True)
class AssociationResult:
    channel: int
    residual: np.ndarray  # inlier residuals, perceived minus predicted
    innovation_cov: np.ndarray  # H P H^T + R over the inliers
    outlier_count: int
    dof: int
    jacobian: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    noise_var: float = 1e-4

    @property
    def attempted(self) -> int:
        return self.outlier_count + self.dof


def generate_hypotheses(gnss_fix, map: MapModel, K: int, config: TrackerConfig = TrackerConfig()) -> list:
    """One hypothesis per lane, nearest lane center to the GNSS fix first."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    lateral = float(gnss_fix[1])
    centers = map.lane_centers()
    order = sorted(range(map.num_lanes), key=lambda k: (abs(lateral - centers[k]), k))
    return [Hypothesis(i, lane, np.zeros(2), config.initial_covariance())
            for i, lane in enumerate(order[:min(K, map.num_lanes)])]


def _require_active(h: Hypothesis) -> None:
    if not h.active:
        raise HypothesisStateError(f"hypothesis {h.id} is inactive")


def predict(h: Hypothesis, odometry, dt: float, config: TrackerConfig = TrackerConfig()) -> Hypothesis:
    _require_active(h)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    speed, yaw_rate = float(odometry[0]), float(odometry[1])
    y, psi = h.state
    state = np.array([y + speed * np.sin(psi) * dt, psi + yaw_rate * dt])
    F = np.array([[1.0, speed * np.cos(psi) * dt], [0.0, 1.0]])
    P = F @ h.covariance @ F.T + config.process_noise(dt)
    return replace(h, state=state, covariance=0.5 * (P + P.T))


def _lane_boundary(map: MapModel, lane: int, slot: int) -> Optional[float]:
    idx = lane + int(SLOT_OFFSETS[slot])
    return float(map.boundary_offsets[idx]) if map.has_boundary(idx) else None


def predicted_points(h: Hypothesis, map: MapModel, boundary: float):
    """Predicted lateral offsets of a boundary at the lookahead ranges, and the Jacobian."""
    y, psi = h.state
    Y = map.lane_center(h.lane_index) + y
    c, s = np.cos(psi), np.sin(psi)
    pred = (boundary - Y - LOOKAHEAD * s) / c
    H = np.column_stack([np.full(N_POINTS, -1.0 / c), ((boundary - Y) * s - LOOKAHEAD) / c ** 2])
    return pred, H


def associate(frame: SensorFrame, map: MapModel, h: Hypothesis, point_noise_sigma: float,
              config: TrackerConfig = TrackerConfig()) -> list:
    """Gate perceived marking points against the hypothesis' map boundaries."""
    _require_active(h)
    R = config.noise_var(point_noise_sigma)
    results = []
    for slot, name in enumerate(SLOT_NAMES):
        marking = frame.perceived.get(name)
        if marking is None or marking.points is None:
            continue
        boundary = _lane_boundary(map, h.lane_index, slot)
        if boundary is None:
            results.append(AssociationResult(slot, np.zeros(0), np.zeros((0, 0)), N_POINTS, 0, np.zeros((0, 2)), R))
            continue
        pred, H = predicted_points(h, map, boundary)
        residual = marking.points[:, 1] - pred
        inlier = np.abs(residual) <= config.gate
        H_in = H[inlier]
        S = H_in @ h.covariance @ H_in.T + R * np.eye(int(inlier.sum()))
        results.append(AssociationResult(slot, residual[inlier], S, int((~inlier).sum()),
                                         int(inlier.sum()), H_in, R))
    return results


def associate_types(frame: SensorFrame, map: MapModel, h: Hypothesis) -> list:
    """``(slot, observed_type, map_type_or_None)`` for every perceived type."""
    out = []
    for slot, name in enumerate(SLOT_NAMES):
        marking = frame.perceived.get(name)
        if marking is None or marking.type is None:
            continue
        idx = h.lane_index + int(SLOT_OFFSETS[slot])
        expected = map.boundary_types[idx] if map.has_boundary(idx) else None
        out.append((slot, marking.type, expected))
    return out


def update(h: Hypothesis, assoc: list):
    """Kalman update from the ego-lane marking inliers.

    Adjacent-lane channels are scored by the caller but never move the state.
    Returns the updated hypothesis and the pre-update association summaries.
    """
    _require_active(h)
    ego = [a for a in assoc if a.channel in (0, 1) and a.dof > 0]
    if not ego:
        return h, list(assoc)
    r = np.concatenate([a.residual for a in ego])
    H = np.vstack([a.jacobian for a in ego])
    R = np.diag(np.concatenate([np.full(a.dof, a.noise_var) for a in ego]))
    P = h.covariance
    S = H @ P @ H.T + R
    K = np.linalg.solve(S, H @ P).T
    state = h.state + K @ r
    I_KH = np.eye(2) - K @ H
    P_post = I_KH @ P @ I_KH.T + K @ R @ K.T
    return replace(h, state=state, covariance=0.5 * (P_post + P_post.T)), list(assoc)


def deactivate_if_off_map(h: Hypothesis, map: MapModel, station: float,
                          config: TrackerConfig = TrackerConfig()) -> Hypothesis:
    if not h.active:
        return h
    if station > map.map_extent or abs(h.state[0]) > config.lateral_bound_lanes * map.lane_width:
        return replace(h, active=False)
    return h


def score_channels(assoc: list, type_pairs: list, p: float = mmq_mod.DEFAULT_P) -> np.ndarray:
    """The 8-slot MMQ vector (NaN = missing) from one step's associations."""
    out = np.full(mmq_mod.N_CHANNELS, np.nan)
    for a in assoc:
        nis_value = mmq_mod.nis(a.residual, a.innovation_cov) if a.dof else 0.0
        score = mmq_mod.channel_mmq(nis_value, a.outlier_count, a.dof, p)
        if score is not None:
            out[a.channel] = score
    for slot, observed, expected in type_pairs:
        nis_value, dof = mmq_mod.type_pseudo_nis([observed], [expected], p)
        out[4 + slot] = mmq_mod.channel_mmq(nis_value, 0, dof, p)
    return out


@dataclass
class TrackResult:
    """Per-hypothesis outputs of a tracking run over one sequence."""

    hypotheses: list  # initial Hypothesis list
    mmq: list  # (length_h, 8) arrays
    lateral: list  # (length_h,) implied global lateral after each update
    lengths: list


def track_batch(sequences: list, config: TrackerConfig = TrackerConfig()) -> list:
    """Run every hypothesis of every sequence through the filter, vectorized.

    Returns one ``TrackResult`` per sequence.
    """
    rows = []  # (seq index, hypothesis)
    hyps_per_seq = []
    for s, seq in enumerate(sequences):
        hyps = generate_hypotheses(seq.gnss[0], seq.map, config.max_hypotheses, config)
        hyps_per_seq.append(hyps)
        rows.extend((s, h) for h in hyps)
    B = len(rows)
    if B == 0:
        return []
    seq_idx = np.array([s for s, _ in rows])
    lens = np.array([len(seq) for seq in sequences])
    Lmax = int(lens.max())

    maps = [seq.map for seq in sequences]
    center = np.array([maps[s].lane_center(h.lane_index) for s, h in rows])
    lane_width = np.array([maps[s].lane_width for s, _ in rows])
    extent = np.array([maps[s].map_extent for s, _ in rows])
    bnd = np.full((B, 4), np.nan)
    btype = np.full((B, 4), -1)
    for b, (s, h) in enumerate(rows):
        for slot in range(4):
            idx = h.lane_index + int(SLOT_OFFSETS[slot])
            if maps[s].has_boundary(idx):
                bnd[b, slot] = maps[s].boundary_offsets[idx]
                btype[b, slot] = int(maps[s].boundary_types[idx])
    R = np.array([config.noise_var(sequences[s].config.point_noise_sigma) for s, _ in rows])
    dt = np.array([sequences[s].config.dt for s, _ in rows])

    # shared dead-reckoned station per sequence
    n_seq = len(sequences)
    station = np.full((n_seq, Lmax), np.inf)
    points = np.full((n_seq, Lmax, 4, N_POINTS), np.nan)
    types = np.full((n_seq, Lmax, 4), -1)
    odometry = np.zeros((n_seq, Lmax, 2))
    for s, seq in enumerate(sequences):
        n = len(seq)
        station[s, :n] = seq.gnss[0, 0] + np.concatenate([[0.0], np.cumsum(seq.odometry[1:, 0] * seq.config.dt)])
        points[s, :n] = seq.points
        types[s, :n] = seq.types
        odometry[s, :n] = seq.odometry

    x = np.zeros((B, 2))
    P = np.tile(config.initial_covariance(), (B, 1, 1))
    active = np.ones(B, dtype=bool)
    length = np.zeros(B, dtype=int)
    out_mmq = np.full((B, Lmax, 8), np.nan)
    out_lat = np.full((B, Lmax), np.nan)
    q = np.array([config.q_lateral, config.q_heading])
    quantum = mmq_mod.chi2inv(config.chi2_p, 1)

    for i in range(Lmax):
        active &= i < lens[seq_idx]
        active &= station[seq_idx, i] <= extent
        active &= np.abs(x[:, 0]) <= config.lateral_bound_lanes * lane_width
        if not active.any():
            break
        a = np.flatnonzero(active)
        sa = seq_idx[a]
        xa, Pa = x[a], P[a]

        if i > 0:
            odo = odometry[sa, i]
            v, w = odo[:, 0], odo[:, 1]
            psi = xa[:, 1]
            F = np.zeros((len(a), 2, 2))
            F[:, 0, 0] = F[:, 1, 1] = 1.0
            F[:, 0, 1] = v * np.cos(psi) * dt[a]
            xa = np.column_stack([xa[:, 0] + v * np.sin(psi) * dt[a], psi + w * dt[a]])
            Pa = F @ Pa @ np.transpose(F, (0, 2, 1))
            Pa[:, 0, 0] += q[0] * dt[a]
            Pa[:, 1, 1] += q[1] * dt[a]

        z = points[sa, i]  # (n, 4, 10)
        ztype = types[sa, i]

        y, psi = xa[:, 0], xa[:, 1]
        c, sn = np.cos(psi), np.sin(psi)
        Y = center[a] + y
        rel = bnd[a] - Y[:, None]  # (n, 4)
        pred = (rel[:, :, None] - LOOKAHEAD[None, None, :] * sn[:, None, None]) / c[:, None, None]
        resid = z - pred
        present = ~np.isnan(z)
        with np.errstate(invalid="ignore"):
            inlier = present & (np.abs(resid) <= config.gate)
        dof = inlier.sum(axis=2)
        outliers = present.sum(axis=2) - dof
        r0 = np.where(inlier, resid, 0.0)
        h0 = np.broadcast_to((-1.0 / c)[:, None, None], r0.shape)
        h1 = np.where(inlier, (rel[:, :, None] * sn[:, None, None] - LOOKAHEAD) / c[:, None, None] ** 2, 0.0)
        h0 = np.where(inlier, h0, 0.0)

        # per-channel H^T H and H^T r
        HtH = np.empty(r0.shape[:2] + (2, 2))
        HtH[..., 0, 0] = (h0 * h0).sum(axis=2)
        HtH[..., 0, 1] = HtH[..., 1, 0] = (h0 * h1).sum(axis=2)
        HtH[..., 1, 1] = (h1 * h1).sum(axis=2)
        Htr = np.stack([(h0 * r0).sum(axis=2), (h1 * r0).sum(axis=2)], axis=-1)
        rr = (r0 * r0).sum(axis=2)

        # NIS through the Woodbury identity: S^-1 = (I - H (R P^-1 + H^T H)^-1 H^T) / R
        Ra = R[a]
        Pinv = np.linalg.inv(Pa)
        A = Ra[:, None, None, None] * Pinv[:, None] + HtH
        sol = np.linalg.solve(A, Htr[..., None])[..., 0]
        nis_geo = np.maximum((rr - (Htr * sol).sum(axis=-1)) / Ra[:, None], 0.0)
        geo = mmq_mod.mmq_array(nis_geo, outliers, dof, config.chi2_p)

        seen = ztype >= 0
        mismatch = (ztype != btype[a]).astype(float)
        typ = mmq_mod.mmq_array(mismatch * quantum, np.zeros_like(mismatch), seen.astype(int), config.chi2_p)

        out_mmq[a, i, :4] = geo
        out_mmq[a, i, 4:] = typ

        # information-form update from the two ego channels
        info = Pinv + (HtH[:, 0] + HtH[:, 1]) / Ra[:, None, None]
        P_post = np.linalg.inv(info)
        P_post = 0.5 * (P_post + np.transpose(P_post, (0, 2, 1)))
        g = (Htr[:, 0] + Htr[:, 1]) / Ra[:, None]
        xa = xa + (P_post @ g[..., None])[..., 0]

        x[a], P[a] = xa, P_post
        out_lat[a, i] = center[a] + xa[:, 0]
        length[a] = i + 1

    results = []
    b = 0
    for s, hyps in enumerate(hyps_per_seq):
        n = len(hyps)
        results.append(TrackResult(
            hypotheses=hyps,
            mmq=[out_mmq[b + j, :length[b + j]] for j in range(n)],
            lateral=[out_lat[b + j, :length[b + j]] for j in range(n)],
            lengths=[int(length[b + j]) for j in range(n)],
        ))
        b += n
    return results
