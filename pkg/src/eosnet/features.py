"""Per-action feature encoding.

Every action becomes a 13-dimensional float vector with the layout below.
``featurize`` runs over a labelled sequence; :class:`StreamFeaturizer`
produces the identical encoding one action at a time (used for live
scoring, where features must be computable causally) and is the single
code path both share.

Layout (column indices):

==== =======================================================
0-2  time-of-day one-hot: [08,12), [12,15), [15,08) local
3    log-compressed time since last action, capped at 900 s
4    log-compressed time since last session, capped at 30 d,
     constant within a session
5-7  action-kind one-hot: fillout, multichoice, material
8    lesson id changed vs previous action
9    topic id changed vs previous action
10   answered correctly (0 for material views)
11   done as homework
12   action starts a new session
==== =======================================================

A student's first-ever action takes 1.0 for both time features, 0 for the
change flags, and 1 for the session-start flag.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from eosnet.ingest import ActionKind, RawAction
from eosnet.sessions import DEFAULT_GAP_SECONDS, LabeledSequence

FEATURE_DIM = 13

# column indices
TOD_8_12, TOD_12_15, TOD_15_8 = 0, 1, 2
TIME_SINCE_ACTION = 3
TIME_SINCE_SESSION = 4
KIND_FILLOUT, KIND_MULTICHOICE, KIND_MATERIAL = 5, 6, 7
LESSON_CHANGED = 8
TOPIC_CHANGED = 9
CORRECT = 10
HOMEWORK = 11
SESSION_START = 12

ACTION_GAP_CAP_SECONDS = 900
SESSION_GAP_CAP_SECONDS = 30 * 86400

DEFAULT_UTC_OFFSET_MINUTES = 60  # fixed offset, no DST handling

_KIND_COLUMN = {
    ActionKind.FILL_OUT_QUESTION: KIND_FILLOUT,
    ActionKind.MULTIPLE_CHOICE_QUESTION: KIND_MULTICHOICE,
    ActionKind.MATERIAL: KIND_MATERIAL,
}


def time_of_day_bucket(timestamp: int, utc_offset_minutes: int) -> np.ndarray:
    """One-hot over the three local-time buckets [8,12), [12,15), [15,8)."""
    local = (timestamp + 60 * utc_offset_minutes) % 86400
    hour = local / 3600.0
    out = np.zeros(3)
    if 8.0 <= hour < 12.0:
        out[TOD_8_12] = 1.0
    elif 12.0 <= hour < 15.0:
        out[TOD_12_15] = 1.0
    else:
        out[TOD_15_8] = 1.0
    return out


def transform_gap(delta_seconds: int, cap_seconds: int) -> float:
    """Map a non-negative gap into [0, 1]: ln(1+delta)/ln(1+cap), capped."""
    if delta_seconds < 0:
        raise ValueError("negative gap")
    if cap_seconds <= 0:
        raise ValueError("cap must be positive")
    return min(math.log1p(delta_seconds) / math.log1p(cap_seconds), 1.0)


class StreamFeaturizer:
    """Causal per-student featurizer.

    Feeds one action at a time and returns its feature vector.  Session
    starts can be supplied explicitly (when sessions were segmented
    beforehand) or inferred from the gap rule; both agree whenever the
    sessions came from the default segmentation.  The internal state is
    serializable so scoring can be resumed across process invocations.
    """

    def __init__(self, utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES,
                 gap_seconds: int = DEFAULT_GAP_SECONDS):
        self.utc_offset_minutes = utc_offset_minutes
        self.gap_seconds = gap_seconds
        self.last_timestamp: Optional[int] = None
        self.last_lesson: Optional[str] = None
        self.last_topic: Optional[str] = None
        self.session_gap_value = 1.0  # column 4, constant within a session

    def push(self, action: RawAction, session_start: Optional[bool] = None) -> np.ndarray:
        first_ever = self.last_timestamp is None
        if not first_ever and action.timestamp < self.last_timestamp:
            raise ValueError(
                f"out-of-order timestamp {action.timestamp} after {self.last_timestamp}"
            )
        if session_start is None:
            session_start = first_ever or (
                action.timestamp - self.last_timestamp > self.gap_seconds
            )

        frame = np.zeros(FEATURE_DIM)
        frame[0:3] = time_of_day_bucket(action.timestamp, self.utc_offset_minutes)
        if first_ever:
            frame[TIME_SINCE_ACTION] = 1.0
        else:
            frame[TIME_SINCE_ACTION] = transform_gap(
                action.timestamp - self.last_timestamp, ACTION_GAP_CAP_SECONDS
            )
        if session_start and not first_ever:
            self.session_gap_value = transform_gap(
                action.timestamp - self.last_timestamp, SESSION_GAP_CAP_SECONDS
            )
        frame[TIME_SINCE_SESSION] = self.session_gap_value
        frame[_KIND_COLUMN[action.kind]] = 1.0
        if not first_ever:
            frame[LESSON_CHANGED] = float(action.lesson_id != self.last_lesson)
            frame[TOPIC_CHANGED] = float(action.topic_id != self.last_topic)
        frame[CORRECT] = float(action.correct is True)
        frame[HOMEWORK] = float(action.homework)
        frame[SESSION_START] = float(session_start)

        self.last_timestamp = action.timestamp
        self.last_lesson = action.lesson_id
        self.last_topic = action.topic_id
        return frame

    def to_dict(self) -> dict:
        return {
            "utc_offset_minutes": self.utc_offset_minutes,
            "gap_seconds": self.gap_seconds,
            "last_timestamp": self.last_timestamp,
            "last_lesson": self.last_lesson,
            "last_topic": self.last_topic,
            "session_gap_value": self.session_gap_value,
        }

    @classmethod
    def from_dict(cls, state: dict) -> "StreamFeaturizer":
        featurizer = cls(
            utc_offset_minutes=state["utc_offset_minutes"],
            gap_seconds=state["gap_seconds"],
        )
        featurizer.last_timestamp = state["last_timestamp"]
        featurizer.last_lesson = state["last_lesson"]
        featurizer.last_topic = state["last_topic"]
        featurizer.session_gap_value = state["session_gap_value"]
        return featurizer


def featurize(seq: LabeledSequence,
              utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES) -> np.ndarray:
    """Encode every action of a labelled sequence; returns (n, 13)."""
    featurizer = StreamFeaturizer(utc_offset_minutes=utc_offset_minutes)
    frames = np.zeros((seq.n_actions, FEATURE_DIM))
    row = 0
    for session in seq.sessions:
        for position, action in enumerate(session.actions):
            frames[row] = featurizer.push(action, session_start=position == 0)
            row += 1
    return frames
