"""Training orchestration: per-student loss re-weighting, splits, batched
truncated-BPTT windows, and the early-stopped RMSprop loop.

Two training levels share one architecture and one code path.  Student
level runs each student's full history as a single sequence with weights
equal to the student's average session length at end-of-session steps.
Session level zeroes the recurrent state at every session start and
weights each end-of-session step by its own session's length.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from eosnet.errors import DataValidationError, NumericalFault
from eosnet.evaluation import auc
from eosnet.features import DEFAULT_UTC_OFFSET_MINUTES, featurize
from eosnet.net import (
    ModelParams,
    OptState,
    backward_batch,
    forward_batch,
    init_params,
    rmsprop_update,
)
from eosnet.sessions import LabeledSequence

_SPLIT_NS = 0x53504C54
_BATCH_NS = 0xB47C4E5
_DROPOUT_NS = 0xD709


class Level(Enum):
    STUDENT = "student"
    SESSION = "session"


@dataclass(slots=True)
class TrainConfig:
    learning_rate: float = 0.001
    dropout_p: float = 0.4
    batch_size: int = 64
    patience: Optional[int] = 3  # None disables early stopping
    tbptt_window: int = 200
    max_epochs: int = 50
    level: Level = Level.STUDENT
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.level, str):
            self.level = Level(self.level)
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.tbptt_window < 1:
            raise ValueError("tbptt_window must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")


@dataclass(slots=True)
class Split:
    """Disjoint student-id partition: ~81% train, ~9% validation, ~10% test."""

    train: list[str]
    validation: list[str]
    test: list[str]


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def split_students(student_ids: Iterable[str], seed: int) -> Split:
    """Shuffle ids deterministically and slice test = round(N/10),
    validation = round((N - test)/10), train = the rest."""
    ids = sorted(set(student_ids))
    n = len(ids)
    if n < 10:
        raise DataValidationError(f"need at least 10 students to split, got {n}")
    rng = np.random.default_rng([_SPLIT_NS, seed])
    perm = rng.permutation(n)
    n_test = _round_half_up(0.1 * n)
    n_val = _round_half_up(0.1 * (n - n_test))
    test = sorted(ids[i] for i in perm[:n_test])
    validation = sorted(ids[i] for i in perm[n_test:n_test + n_val])
    train = sorted(ids[i] for i in perm[n_test + n_val:])
    return Split(train=train, validation=validation, test=test)


def student_weights(seq: LabeledSequence) -> np.ndarray:
    """1.0 everywhere except label-1 steps, which carry the student's
    average session length (actions / sessions)."""
    weights = np.ones(seq.n_actions)
    ratio = seq.n_actions / len(seq.sessions)
    weights[seq.labels == 1] = ratio
    return weights


def session_weights(seq: LabeledSequence) -> np.ndarray:
    """Session-level analogue: each end-of-session step weighs its own
    session's length."""
    weights = np.ones(seq.n_actions)
    pos = -1
    for session in seq.sessions:
        pos += len(session)
        weights[pos] = float(len(session))
    return weights


@dataclass(slots=True)
class TrainSequence:
    """Featurized per-student training data for one level."""

    student_id: str
    features: np.ndarray  # (n, 13)
    labels: np.ndarray    # (n,) float64
    weights: np.ndarray   # (n,)
    resets: np.ndarray    # (n,) bool

    def __len__(self) -> int:
        return self.labels.shape[0]


def prepare_sequence(seq: LabeledSequence, level: Level,
                     utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES) -> TrainSequence:
    """Featurize one student and attach level-appropriate weights/resets."""
    features = featurize(seq, utc_offset_minutes=utc_offset_minutes)
    resets = np.zeros(seq.n_actions, dtype=bool)
    if level is Level.SESSION:
        pos = 0
        for session in seq.sessions:
            resets[pos] = True
            pos += len(session)
        weights = session_weights(seq)
    else:
        weights = student_weights(seq)
    return TrainSequence(
        student_id=seq.student_id,
        features=features,
        labels=seq.labels.astype(np.float64),
        weights=weights,
        resets=resets,
    )


@dataclass(slots=True)
class Window:
    """One padded TBPTT window of a batch, time-major."""

    X: np.ndarray        # (T, B, D)
    labels: np.ndarray   # (T, B)
    weights: np.ndarray  # (T, B)
    resets: np.ndarray   # (T, B) bool
    valid: np.ndarray    # (T, B) bool


@dataclass(slots=True)
class Batch:
    student_ids: list[str]
    lengths: list[int]
    windows: list[Window]


def _build_batch(group: Sequence[TrainSequence], tbptt_window: int) -> Batch:
    lanes = len(group)
    max_len = max(len(s) for s in group)
    dim = group[0].features.shape[1]
    windows = []
    for start in range(0, max_len, tbptt_window):
        span = min(tbptt_window, max_len - start)
        X = np.zeros((span, lanes, dim))
        labels = np.zeros((span, lanes))
        weights = np.zeros((span, lanes))
        resets = np.zeros((span, lanes), dtype=bool)
        valid = np.zeros((span, lanes), dtype=bool)
        for lane, seq in enumerate(group):
            count = min(span, len(seq) - start)
            if count <= 0:
                continue
            stop = start + count
            X[:count, lane] = seq.features[start:stop]
            labels[:count, lane] = seq.labels[start:stop]
            weights[:count, lane] = seq.weights[start:stop]
            resets[:count, lane] = seq.resets[start:stop]
            valid[:count, lane] = True
        windows.append(Window(X=X, labels=labels, weights=weights,
                              resets=resets, valid=valid))
    return Batch(student_ids=[s.student_id for s in group],
                 lengths=[len(s) for s in group], windows=windows)


def make_batches(sequences: Sequence[TrainSequence], batch_size: int,
                 tbptt_window: int, seed: int, epoch: int = 0) -> list[Batch]:
    """Deterministic epoch batching.

    Students are shuffled, then stably sorted by length so each batch
    holds similar lengths (less padding waste); batch order is shuffled
    again.  Each student's frames are cut into consecutive windows of at
    most ``tbptt_window`` steps; recurrent state carries across a batch's
    windows while gradients do not.
    """
    if not sequences:
        return []
    rng = np.random.default_rng([_BATCH_NS, seed, epoch])
    perm = rng.permutation(len(sequences))
    order = sorted(perm.tolist(), key=lambda idx: len(sequences[idx]))
    groups = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    batches = [
        _build_batch([sequences[i] for i in groups[g]], tbptt_window)
        for g in rng.permutation(len(groups))
    ]
    return batches


def score_sequences(params: ModelParams, sequences: Sequence[TrainSequence],
                    batch_size: int = 64) -> dict[str, np.ndarray]:
    """Inference-mode probabilities for many students, batched.

    Deterministic: students are processed in (length, id) order and each
    batch runs as one padded forward pass.
    """
    hidden = params.hidden_size
    order = sorted(range(len(sequences)),
                   key=lambda i: (len(sequences[i]), sequences[i].student_id))
    out: dict[str, np.ndarray] = {}
    for start in range(0, len(order), batch_size):
        group = [sequences[i] for i in order[start:start + batch_size]]
        batch = _build_batch(group, tbptt_window=max(len(s) for s in group))
        window = batch.windows[0]
        h = np.zeros((len(group), hidden))
        c = np.zeros((len(group), hidden))
        result = forward_batch(params, window.X, window.resets, h, c)
        for lane, seq in enumerate(group):
            out[seq.student_id] = result.probs[:len(seq), lane].copy()
    return out


class EarlyStopper:
    """Patience-based stopper tracking the best validation score."""

    def __init__(self, patience: Optional[int]):
        self.patience = patience
        self.best_score: Optional[float] = None
        self.best_epoch: Optional[int] = None
        self.stale = 0

    def update(self, score: float, epoch: int) -> bool:
        """Record an epoch score; returns True when training should stop."""
        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.patience is not None and self.stale >= self.patience


@dataclass(slots=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float
    seconds: float


@dataclass(slots=True)
class TrainResult:
    params: ModelParams
    history: list[EpochStats]
    best_epoch: int
    best_val_auc: float


def train(config: TrainConfig, train_seqs: Sequence[TrainSequence],
          val_seqs: Sequence[TrainSequence],
          progress=None) -> TrainResult:
    """Run the full training loop and return the best-validation model.

    One RMSprop update per window; epoch loss is the weight-normalized
    BCE over all valid steps.  After each epoch the pooled validation AUC
    decides early stopping (patience epochs without improvement).
    """
    if not train_seqs or not val_seqs:
        raise DataValidationError("train and validation sets must be non-empty")
    params = init_params(config.seed)
    opt = OptState.for_params(params)
    stopper = EarlyStopper(config.patience)
    history: list[EpochStats] = []
    best_params = params.copy()

    val_labels = np.concatenate([s.labels for s in val_seqs]) if val_seqs else None

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(train_seqs, config.batch_size,
                               config.tbptt_window, config.seed, epoch)
        loss_num = 0.0
        loss_den = 0.0
        for b_idx, batch in enumerate(batches):
            lanes = len(batch.student_ids)
            h = np.zeros((lanes, params.hidden_size))
            c = np.zeros((lanes, params.hidden_size))
            for w_idx, window in enumerate(batch.windows):
                rng = np.random.default_rng(
                    [_DROPOUT_NS, config.seed, epoch, b_idx, w_idx])
                try:
                    result = forward_batch(params, window.X, window.resets, h, c,
                                           dropout_p=config.dropout_p, rng=rng,
                                           want_cache=True)
                    grads, num, den = backward_batch(params, result.cache,
                                                     window.labels, window.weights,
                                                     window.valid)
                except NumericalFault as fault:
                    raise NumericalFault("training diverged", epoch=epoch,
                                         batch=b_idx, window=w_idx) from fault
                if not math.isfinite(num):
                    raise NumericalFault("training diverged", epoch=epoch,
                                         batch=b_idx, window=w_idx)
                if den > 0.0:
                    params, opt = rmsprop_update(params, grads, opt,
                                                 lr=config.learning_rate)
                h, c = result.h, result.c
                loss_num += num
                loss_den += den
        train_loss = loss_num / loss_den if loss_den else 0.0

        scored = score_sequences(params, val_seqs, config.batch_size)
        val_scores = np.concatenate([scored[s.student_id] for s in val_seqs])
        val_auc = auc(val_scores, val_labels)
        val_auc = float("nan") if val_auc is None else val_auc

        seconds = time.perf_counter() - t0
        history.append(EpochStats(epoch, train_loss, val_auc, seconds))
        if progress is not None:
            progress(history[-1])

        improved = stopper.best_score is None or val_auc > stopper.best_score
        stop = stopper.update(val_auc, epoch)
        if improved:
            best_params = params.copy()
        if stop:
            break

    return TrainResult(
        params=best_params,
        history=history,
        best_epoch=stopper.best_epoch if stopper.best_epoch is not None else 0,
        best_val_auc=stopper.best_score if stopper.best_score is not None else float("nan"),
    )
