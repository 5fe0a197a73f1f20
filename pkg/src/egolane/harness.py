"""Online ego-lane identification loop, labeling, splitting and evaluation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import classifier, moo
from .classifier import BoostedModel, TrainingSet, extract_features, feature_matrix
from .sim import SAMPLE_RATE, SequenceRecord
from .tracker import TrackerConfig, TrackResult, track_batch
from .trigger import (
    DEFAULT_HORIZON, GAMMA_LENGTH, METHOD_NAMES, NoActiveHypotheses, TriggerParams, fire, fire_array, sort_probs,
)

AMBIGUITY_EPS = 1e-6
SPLIT_RATIOS = (0.49, 0.33, 0.18)


@dataclass
class LabeledSequence:
    sequence: SequenceRecord
    track: TrackResult
    labels: dict  # hypothesis id -> bool
    valid: bool
    _traces: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def scenario_id(self) -> int:
        return self.sequence.scenario_id

    @property
    def mmq(self) -> list:
        return self.track.mmq

    @property
    def length(self) -> int:
        return len(self.sequence)

    @property
    def true_id(self) -> Optional[int]:
        for hid, is_true in self.labels.items():
            if is_true:
                return hid
        return None


@dataclass(frozen=True)
class Prediction:
    hypothesis_id: Optional[int] = None
    t_star: Optional[int] = None

    def __post_init__(self):
        if (self.hypothesis_id is None) != (self.t_star is None):
            raise ValueError("hypothesis_id and t_star must be both set or both None")


@dataclass
class EvalRow:
    method: str
    variant: str
    earliness_s: float
    availability: float
    accuracy: float
    hypervolume: float = float("nan")
    test_hypervolume: float = float("nan")
    accuracy_vacuous: bool = False
    gamma: Optional[list] = None
    c_av: float = float("nan")
    c_ac: float = float("nan")
    c_ea: float = float("nan")
    mean_t_star: float = float("nan")


@dataclass
class EvalReport:
    rows: list
    curve: Optional[dict] = None
    predictions: dict = field(default_factory=dict)  # variant -> list of (scenario_id, Prediction)


# -- MMQ series and labels -------------------------------------------------------

def build_mmq_series(seqs: Sequence[SequenceRecord], K: int = 6,
                     config: TrackerConfig = TrackerConfig()) -> list:
    """Track every hypothesis of every sequence; one ``TrackResult`` per sequence.

    Each hypothesis emits an 8-channel MMQ row per frame until it deactivates.
    """
    if config.max_hypotheses != K:
        config = TrackerConfig(**{**config.__dict__, "max_hypotheses": K})
    return track_batch(list(seqs), config)


def label_sequences(seq: SequenceRecord, track: TrackResult) -> LabeledSequence:
    """A hypothesis is true iff it is the unique closest to the truth at every frame."""
    n = len(seq)
    ids = [h.id for h in track.hypotheses]
    dist = np.full((n, len(ids)), np.inf)
    for j, lat in enumerate(track.lateral):
        dist[:len(lat), j] = np.abs(lat - seq.truth_pose[:len(lat), 1])
    labels = {hid: False for hid in ids}
    if n == 0 or not ids:
        return LabeledSequence(seq, track, labels, False)
    order = np.sort(dist, axis=1)
    closest = np.argmin(dist, axis=1)
    unique = np.isfinite(order[:, 0])
    if len(ids) > 1:
        # frames with no active hypothesis give inf - inf and count as ambiguous
        with np.errstate(invalid="ignore"):
            unique &= (order[:, 1] - order[:, 0]) >= AMBIGUITY_EPS
    valid = bool(unique.all() and (closest == closest[0]).all())
    if valid:
        labels[ids[int(closest[0])]] = True
    return LabeledSequence(seq, track, labels, valid)


def build_dataset(seqs: Sequence[SequenceRecord], K: int = 6,
                  config: TrackerConfig = TrackerConfig()) -> list:
    """Track and label; invalid sequences are kept but flagged."""
    tracks = build_mmq_series(seqs, K, config)
    return [label_sequences(s, t) for s, t in zip(seqs, tracks)]


def _split_key(scenario_id: int) -> str:
    return hashlib.sha256(str(int(scenario_id)).encode()).hexdigest()


def split_dataset(sequences: Sequence, ratios=SPLIT_RATIOS):
    """Deterministic train / optimization / test partition ordered by a hash of the scenario id."""
    if len(sequences) < 10:
        raise ValueError(f"need at least 10 sequences to split, got {len(sequences)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    ordered = sorted(sequences, key=lambda s: _split_key(s.scenario_id))
    n = len(ordered)
    n_train = int(round(ratios[0] * n))
    n_opt = int(round(ratios[1] * n))
    train = ordered[:n_train]
    opt = ordered[n_train:n_train + n_opt]
    test = ordered[n_train + n_opt:]
    key = lambda s: s.scenario_id
    return sorted(train, key=key), sorted(opt, key=key), sorted(test, key=key)


# -- training ------------------------------------------------------------------

def training_set(sequences: Sequence[LabeledSequence], stride: int = classifier.TRAIN_STRIDE) -> TrainingSet:
    X, y = [], []
    for ls in sequences:
        if not ls.valid:
            continue
        for h, series in zip(ls.track.hypotheses, ls.mmq):
            if len(series) == 0:
                continue
            rows, labels = classifier.sample_training_rows(series, ls.labels[h.id], stride)
            X.append(rows)
            y.append(labels)
    if not X:
        raise classifier.TrainingError("no valid labeled sequences to train on")
    return TrainingSet(np.vstack(X), np.concatenate(y))


def train_model(sequences: Sequence[LabeledSequence], rounds: int = 100, depth: int = 3,
                learning_rate: float = 0.1) -> BoostedModel:
    return classifier.fit(training_set(sequences), rounds=rounds, depth=depth, learning_rate=learning_rate)


# -- online loop ---------------------------------------------------------------

def _model_key(model: BoostedModel) -> str:
    # cached on the instance, outside metadata, so saved models stay unchanged
    key = getattr(model, "_fingerprint", None)
    if key is None:
        key = hashlib.sha256(json.dumps(model.to_json(), sort_keys=True).encode()).hexdigest()
        model._fingerprint = key
    return key


def _check_schema(model: BoostedModel) -> None:
    schema = model.metadata.get("schema")
    if schema is not None and schema != classifier.SCHEMA:
        raise classifier.SchemaError(f"model schema {schema} != feature schema {classifier.SCHEMA}")


def probability_trace(ls: LabeledSequence, model: BoostedModel) -> np.ndarray:
    """``(L, n_hyp)`` true-probabilities per step; NaN once a hypothesis is inactive.

    Row ``t - 1`` is computed from the first ``t`` MMQ frames only.
    """
    key = _model_key(model)
    cached = ls._traces.get(key)
    if cached is not None:
        return cached["probs"]
    _check_schema(model)
    L = ls.length
    probs = np.full((L, len(ls.track.hypotheses)), np.nan)
    feats, slots = [], []
    for j, series in enumerate(ls.mmq):
        n = min(len(series), L)
        if n:
            feats.append(feature_matrix(series[:n]))
            slots.append((j, n))
    if feats:
        p = model.predict_proba(np.vstack(feats))
        start = 0
        for j, n in slots:
            probs[:n, j] = p[start:start + n]
            start += n
    ls._traces[key] = {"probs": probs, "sorted": _sorted_arrays(probs)}
    return probs


def _sorted_arrays(probs: np.ndarray):
    filled = np.where(np.isnan(probs), -np.inf, probs)
    any_active = np.isfinite(filled).any(axis=1)
    argmax = np.argmax(filled, axis=1)  # first index wins ties
    p1 = filled[np.arange(len(filled)), argmax]
    if filled.shape[1] > 1:
        rest = filled.copy()
        rest[np.arange(len(filled)), argmax] = -np.inf
        p2 = rest.max(axis=1)
    else:
        p2 = np.full(len(filled), -np.inf)
    p2 = np.where(np.isfinite(p2), p2, 0.0)
    p1 = np.where(any_active, p1, 0.0)
    return p1, p2, argmax, any_active


def run_sequence_online(ls: LabeledSequence, model: BoostedModel, trigger: TriggerParams) -> Prediction:
    """Step through the sequence and commit at the first step the trigger fires."""
    probability_trace(ls, model)
    p1, p2, argmax, any_active = ls._traces[_model_key(model)]["sorted"]
    ids = [h.id for h in ls.track.hypotheses]
    L = ls.length
    t = np.arange(1, L + 1)
    # the sequence ends once every hypothesis has dropped out
    dead = np.flatnonzero(~any_active)
    stop = int(dead[0]) if len(dead) else L
    fired = np.flatnonzero(fire_array(trigger, p1[:stop], p2[:stop], t[:stop]))
    if len(fired) == 0:
        return Prediction()
    i = int(fired[0])
    return Prediction(ids[int(argmax[i])], i + 1)


def replay_online(ls: LabeledSequence, model: BoostedModel, trigger: TriggerParams,
                  frames_seen: Optional[list] = None) -> Prediction:
    """Literal step-by-step loop: features, probabilities, sorting, trigger.

    Slow; kept as the reference the cached path is checked against.
    ``frames_seen`` records the highest MMQ frame index read at each step.
    """
    for t in range(1, ls.length + 1):
        probs = {}
        for h, series in zip(ls.track.hypotheses, ls.mmq):
            if len(series) >= t:
                fv = extract_features(series[:t])
                probs[h.id] = classifier.predict_proba(model, fv)
        if frames_seen is not None:
            frames_seen.append(t - 1)
        try:
            sp = sort_probs(probs, t)
        except NoActiveHypotheses:
            return Prediction()
        if fire(sp, trigger):
            return Prediction(sp.argmax_id, t)
    return Prediction()


def outcome(ls: LabeledSequence, pred: Prediction) -> moo.Outcome:
    return moo.Outcome(pred.hypothesis_id, ls.true_id, pred.t_star, ls.length)


def run_dataset(dataset: Sequence[LabeledSequence], model: BoostedModel, trigger: TriggerParams) -> list:
    return [outcome(ls, run_sequence_online(ls, model, trigger)) for ls in dataset if ls.valid]


# -- evaluation ----------------------------------------------------------------

def metrics_from_outcomes(outcomes: Sequence[moo.Outcome], sample_rate: int = SAMPLE_RATE) -> dict:
    if not outcomes:
        raise ValueError("cannot evaluate an empty set")
    made = [o for o in outcomes if o.predicted is not None]
    availability = len(made) / len(outcomes)
    if made:
        accuracy = sum(o.predicted == o.truth for o in made) / len(made)
        earliness = float(np.mean([o.t_star / sample_rate for o in made]))
        mean_t = float(np.mean([o.t_star for o in made]))
    else:
        accuracy, earliness, mean_t = 1.0, 0.0, float("nan")
    return {
        "earliness_s": earliness,
        "availability": availability,
        "accuracy": accuracy,
        "accuracy_vacuous": not made,
        "mean_t_star": mean_t,
    }


def evaluate(test: Sequence[LabeledSequence], model: BoostedModel, trigger: TriggerParams,
             front_hypervolume: float = float("nan"), method: Optional[str] = None) -> EvalRow:
    """Availability, earliness (s) and accuracy of one trigger on ``test``."""
    valid = [ls for ls in test if ls.valid]
    if not valid:
        raise ValueError("cannot evaluate an empty test set")
    outs = run_dataset(valid, model, trigger)
    m = metrics_from_outcomes(outs)
    return EvalRow(
        method=method or METHOD_NAMES[trigger.variant],
        variant=trigger.variant,
        earliness_s=m["earliness_s"],
        availability=m["availability"],
        accuracy=m["accuracy"],
        hypervolume=front_hypervolume,
        accuracy_vacuous=m["accuracy_vacuous"],
        gamma=list(trigger.gamma),
        c_av=moo.cost_availability(outs),
        c_ac=moo.cost_accuracy(outs),
        c_ea=moo.cost_earliness(outs),
        mean_t_star=m["mean_t_star"],
    )


def optimize_trigger(opt: Sequence[LabeledSequence], model: BoostedModel, variant: str,
                     nsga: moo.NsgaConfig = moo.NsgaConfig(), horizon: int = DEFAULT_HORIZON) -> moo.ParetoFront:
    """NSGA-II over the trigger's gamma box on the optimization set."""
    valid = [ls for ls in opt if ls.valid]
    if not valid:
        raise ValueError("optimization set has no valid sequences")

    def objective(g):
        return moo.evaluate_gamma(TriggerParams(variant, tuple(g), horizon), valid, model)

    return moo.nsga2(nsga, objective, GAMMA_LENGTH[variant])


def no_trigger_curve(test: Sequence[LabeledSequence], model: BoostedModel) -> np.ndarray:
    """Accuracy of the per-step argmax with a forced prediction at every ``t``.

    Row ``t - 1`` averages over the sequences still running at ``t``; NaN when none are.
    """
    valid = [ls for ls in test if ls.valid]
    L = max(ls.length for ls in valid)
    hits = np.zeros(L)
    count = np.zeros(L)
    for ls in valid:
        probability_trace(ls, model)
        _, _, argmax, any_active = ls._traces[_model_key(model)]["sorted"]
        ids = np.array([h.id for h in ls.track.hypotheses])
        n = ls.length
        live = any_active[:n]
        hits[:n] += live & (ids[argmax[:n]] == ls.true_id)
        count[:n] += live
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, hits / np.maximum(count, 1), np.nan)


def cumulative_trigger_fraction(predictions: Sequence[Prediction], L: int) -> np.ndarray:
    out = np.zeros(L)
    for p in predictions:
        if p.t_star is not None and p.t_star <= L:
            out[p.t_star - 1:] += 1
    return out / max(len(predictions), 1)


def front_on(front: moo.ParetoFront, data: Sequence[LabeledSequence], model: BoostedModel) -> float:
    """Re-evaluate a front's parameter vectors on ``data`` and return the hypervolume of the result."""
    points = [moo.evaluate_gamma(p.gamma, [ls for ls in data if ls.valid], model) for p in front.points]
    F = np.array([p.costs for p in points])
    return moo.hypervolume([points[i] for i in moo.pareto_points(F)])


def compare_methods(opt: Sequence[LabeledSequence], test: Sequence[LabeledSequence], model: BoostedModel,
                    nsga: moo.NsgaConfig = moo.NsgaConfig(), variants=("s1", "s2", "s3", "s4"),
                    horizon: int = DEFAULT_HORIZON, curve_variant: str = "s4") -> EvalReport:
    """Optimize each trigger variant, pick its operating point and score it on the test set."""
    rows = []
    fronts = {}
    predictions = {}
    valid_test = [ls for ls in test if ls.valid]
    for k, variant in enumerate(variants):
        cfg = moo.NsgaConfig(**{**nsga.__dict__, "seed": nsga.seed + 1000 * k})
        front = optimize_trigger(opt, model, variant, cfg, horizon)
        fronts[variant] = front
        chosen = moo.select_operating_point(front).gamma
        row = evaluate(valid_test, model, chosen, front.hypervolume)
        row.test_hypervolume = front_on(front, valid_test, model)
        rows.append(row)
        predictions[variant] = [(ls.scenario_id, run_sequence_online(ls, model, chosen)) for ls in valid_test]

    accuracy = no_trigger_curve(valid_test, model)
    L = len(accuracy)
    curve_preds = [p for _, p in predictions.get(curve_variant, [])]
    curve = {
        "t": np.arange(1, L + 1),
        "no_trigger_accuracy": accuracy,
        "cumulative_trigger_fraction": cumulative_trigger_fraction(curve_preds, L),
    }
    report = EvalReport(rows, curve, predictions)
    report.fronts = fronts
    return report


def report_records(report: EvalReport) -> list:
    """Table rows for report.json; floats are plain Python values so the dump is byte-stable."""
    out = []
    for r in report.rows:
        out.append({
            "method": r.method,
            "variant": r.variant,
            "earliness_s": float(r.earliness_s),
            "availability": float(r.availability),
            "accuracy": float(r.accuracy),
            "hypervolume": float(r.hypervolume),
            "test_hypervolume": float(r.test_hypervolume),
            "accuracy_vacuous": bool(r.accuracy_vacuous),
            "gamma": [float(g) for g in r.gamma],
        })
    return out


def benchmark(seed: int, count: int = 300, base=None, nsga: Optional[moo.NsgaConfig] = None,
              tracker: TrackerConfig = TrackerConfig(), variants=("s1", "s2", "s3", "s4")):
    """Simulate, track, split, train and compare on ``count`` fresh scenarios.

    Returns ``(report, (train, opt, test), model)``.
    """
    from .sim import ScenarioConfig, generate_batch

    base = base or ScenarioConfig()
    nsga = nsga or moo.NsgaConfig(seed=seed)
    dataset = build_dataset(generate_batch(base, count, seed), tracker.max_hypotheses, tracker)
    train, opt, test = split_dataset([ls for ls in dataset if ls.valid])
    model = train_model(train)
    return compare_methods(opt, test, model, nsga, variants), (train, opt, test), model
