"""ROC-AUC evaluation: global score, homework / session-length / usage
stratifications, and the within-session probability trajectory.

AUC uses the average-rank (Mann-Whitney) formulation: the probability
that a uniformly random positive outranks a uniformly random negative,
with ties counted one half.  All stratified scores pool the actions of
the stratum's sessions (or students) into one score/label set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from eosnet.features import DEFAULT_UTC_OFFSET_MINUTES, featurize
from eosnet.net import ModelParams, forward
from eosnet.sessions import HomeworkClass, LabeledSequence, session_homework_class

N_TRAJECTORY_CHUNKS = 20
MIN_TRAJECTORY_LENGTH = 20

LENGTH_BUCKETS: tuple[tuple[int, Optional[int]], ...] = (
    (1, 5), (6, 10), (11, 20), (21, 30), (31, 40), (41, 50),
    (51, 60), (61, 70), (71, 80), (81, 90), (91, None),
)


def bucket_key(count: int) -> str:
    """Map a positive count onto its interval label, e.g. 7 -> '6-10'."""
    for lo, hi in LENGTH_BUCKETS:
        if hi is None:
            if count >= lo:
                return f"{lo}-max"
        elif lo <= count <= hi:
            return f"{lo}-{hi}"
    raise ValueError(f"count must be positive, got {count}")


def auc(scores, labels) -> Optional[float]:
    """Average-rank AUC; None when only one class is present."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {y.shape}")
    pos = y != 0
    n_pos = int(pos.sum())
    n_neg = s.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    cumulative = np.cumsum(counts)
    avg_rank = cumulative - (counts - 1) / 2.0  # mean of each tie group's ranks
    rank_sum = float(avg_rank[inverse][pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(slots=True)
class ScoredSession:
    """One session's predicted probabilities plus stratification metadata."""

    student_id: str
    index: int
    homework: HomeworkClass
    probs: np.ndarray  # (length,), aligned with the session's actions

    @property
    def length(self) -> int:
        return self.probs.shape[0]

    @property
    def labels(self) -> np.ndarray:
        labels = np.zeros(self.length, dtype=np.int8)
        labels[-1] = 1
        return labels


def score(params: ModelParams, seq: LabeledSequence, level,
          utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES) -> np.ndarray:
    """Inference probabilities for one student's full history.

    ``level`` follows :class:`eosnet.training.Level` semantics: session
    level resets the recurrent state at every session start, student
    level carries it across the whole history.
    """
    frames = featurize(seq, utc_offset_minutes=utc_offset_minutes)
    resets = None
    if getattr(level, "value", level) == "session":
        resets = np.zeros(seq.n_actions, dtype=bool)
        pos = 0
        for session in seq.sessions:
            resets[pos] = True
            pos += len(session)
    probs, _ = forward(params, frames, reset_mask=resets)
    return probs


def scored_sessions(seq: LabeledSequence, probs: np.ndarray) -> list[ScoredSession]:
    """Split a student's per-action probabilities back into sessions."""
    if probs.shape[0] != seq.n_actions:
        raise ValueError("probabilities do not align with the sequence")
    out = []
    pos = 0
    for session in seq.sessions:
        out.append(ScoredSession(
            student_id=seq.student_id,
            index=session.index,
            homework=session_homework_class(session),
            probs=probs[pos:pos + len(session)].copy(),
        ))
        pos += len(session)
    return out


@dataclass(slots=True)
class EvalReport:
    """Every evaluation output: global and stratified AUCs, trajectory."""

    global_auc: Optional[float] = None
    homework_auc: dict = field(default_factory=dict)   # HomeworkClass -> float
    length_auc: dict = field(default_factory=dict)     # "1-5" ... "91-max" -> float
    div5_auc: tuple = (None, None)                     # (divisible, not divisible)
    usage_auc: dict = field(default_factory=dict)      # session-count bucket -> float
    trajectory: Optional[np.ndarray] = None            # (20,) chunk means
    eos_mean_prob: Optional[float] = None

    def metric_lines(self) -> list[str]:
        """Flatten to ``metric,stratum,value`` rows (absent strata omitted)."""
        rows: list[str] = []

        def put(metric, stratum, value):
            if value is not None:
                rows.append(f"{metric},{stratum},{value!r}")

        put("auc", "global", self.global_auc)
        for cls in HomeworkClass:
            put("auc", f"homework_{cls.value}", self.homework_auc.get(cls))
        for lo, hi in LENGTH_BUCKETS:
            key = f"{lo}-{hi if hi is not None else 'max'}"
            put("auc", f"length_{key}", self.length_auc.get(key))
        put("auc", "div5", self.div5_auc[0])
        put("auc", "nondiv5", self.div5_auc[1])
        for lo, hi in LENGTH_BUCKETS:
            key = f"{lo}-{hi if hi is not None else 'max'}"
            put("auc", f"usage_{key}", self.usage_auc.get(key))
        put("mean_prob", "eos", self.eos_mean_prob)
        return rows

    def trajectory_rows(self) -> list[str]:
        """Plot-data rows ``chunk,mean_prob`` for chunks 1..20."""
        if self.trajectory is None:
            return []
        return [f"{i + 1},{float(v)!r}" for i, v in enumerate(self.trajectory)]


def _pooled_auc(sessions: Sequence[ScoredSession]) -> Optional[float]:
    if not sessions:
        return None
    scores = np.concatenate([s.probs for s in sessions])
    labels = np.concatenate([s.labels for s in sessions])
    return auc(scores, labels)


def trajectory(sessions: Sequence[ScoredSession]) -> Optional[tuple[np.ndarray, float]]:
    """Mean probability per 5% chunk over sessions of length >= 20, plus
    the mean probability at their true end-of-session actions.

    Action j (0-based) of a length-L session lands in chunk
    floor(20*j/L), which distributes remainders evenly and gives exactly
    one action per chunk at L = 20.
    """
    sums = np.zeros(N_TRAJECTORY_CHUNKS)
    counts = np.zeros(N_TRAJECTORY_CHUNKS)
    eos_sum = 0.0
    eos_count = 0
    for session in sessions:
        length = session.length
        if length < MIN_TRAJECTORY_LENGTH:
            continue
        chunks = (N_TRAJECTORY_CHUNKS * np.arange(length)) // length
        np.add.at(sums, chunks, session.probs)
        np.add.at(counts, chunks, 1)
        eos_sum += float(session.probs[-1])
        eos_count += 1
    if eos_count == 0:
        return None
    return sums / counts, eos_sum / eos_count


def compute_report(sessions: Sequence[ScoredSession]) -> EvalReport:
    """Assemble the full report from scored sessions."""
    report = EvalReport()
    report.global_auc = _pooled_auc(sessions)

    for cls in HomeworkClass:
        value = _pooled_auc([s for s in sessions if s.homework is cls])
        if value is not None:
            report.homework_auc[cls] = value

    for lo, hi in LENGTH_BUCKETS:
        members = [s for s in sessions
                   if s.length >= lo and (hi is None or s.length <= hi)]
        value = _pooled_auc(members)
        if value is not None:
            key = f"{lo}-{hi if hi is not None else 'max'}"
            report.length_auc[key] = value

    report.div5_auc = (
        _pooled_auc([s for s in sessions if s.length % 5 == 0]),
        _pooled_auc([s for s in sessions if s.length % 5 != 0]),
    )

    session_counts: dict[str, int] = {}
    for session in sessions:
        session_counts[session.student_id] = session_counts.get(session.student_id, 0) + 1
    for lo, hi in LENGTH_BUCKETS:
        students = {sid for sid, n in session_counts.items()
                    if n >= lo and (hi is None or n <= hi)}
        value = _pooled_auc([s for s in sessions if s.student_id in students])
        if value is not None:
            key = f"{lo}-{hi if hi is not None else 'max'}"
            report.usage_auc[key] = value

    traj = trajectory(sessions)
    if traj is not None:
        report.trajectory, report.eos_mean_prob = traj
    return report
