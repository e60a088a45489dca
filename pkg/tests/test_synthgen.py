"""Synthetic generator: determinism, calibration, and structure."""

import numpy as np
import pytest

from eosnet.ingest import format_action
from eosnet.sessions import HomeworkClass, label, segment, session_homework_class
from eosnet.synthgen import GenConfig, generate, profile_multipliers, summarize


def small_config(**overrides):
    defaults = dict(n_students=60, seed=7)
    defaults.update(overrides)
    return GenConfig(**defaults)


class TestDeterminism:
    def test_same_seed_byte_identical(self):
        a = generate(small_config())
        b = generate(small_config())
        text_a = [format_action(x) for lg in a for x in lg.actions]
        text_b = [format_action(x) for lg in b for x in lg.actions]
        assert text_a == text_b

    def test_different_seed_differs(self):
        a = generate(small_config())
        b = generate(small_config(seed=8))
        text_a = [format_action(x) for lg in a for x in lg.actions]
        text_b = [format_action(x) for lg in b for x in lg.actions]
        assert text_a != text_b


class TestStructure:
    def test_all_homework_config_gives_div5_lengths(self):
        logs = generate(small_config(homework_session_fraction=1.0,
                                     partly_fraction=0.0))
        for log in logs:
            for session in segment(log):
                assert len(session) % 5 == 0
                assert session_homework_class(session) is HomeworkClass.ONLY

    def test_sessionizer_recovers_generated_boundaries(self):
        logs = generate(small_config())
        for log in logs:
            sessions = segment(log)
            # within-session gaps <= 900, between-session gaps > 900
            for session in sessions:
                ts = [a.timestamp for a in session.actions]
                assert all(b - a <= 900 for a, b in zip(ts, ts[1:]))
            for prev, cur in zip(sessions, sessions[1:]):
                gap = cur.actions[0].timestamp - prev.actions[-1].timestamp
                assert gap > 900

    def test_partly_sessions_mix_flags(self):
        logs = generate(small_config(partly_fraction=1.0,
                                     homework_session_fraction=0.0))
        for log in logs:
            for session in segment(log):
                flags = [a.homework for a in session.actions]
                assert any(flags) and not all(flags)

    def test_valid_actions(self):
        logs = generate(small_config())
        for log in logs:
            previous = None
            for action in log.actions:
                assert action.timestamp >= 0
                if action.kind.is_question:
                    assert action.correct is not None
                else:
                    assert action.correct is None
                if previous is not None:
                    assert action.timestamp >= previous
                previous = action.timestamp


class TestCalibration:
    @pytest.fixture(scope="class")
    def corpus(self):
        return generate(GenConfig(n_students=1500, seed=42))

    def test_homework_fractions_near_targets(self, corpus):
        summary = summarize(corpus)
        assert summary.homework_fractions[HomeworkClass.ONLY] == pytest.approx(
            0.483, abs=0.03)
        assert summary.homework_fractions[HomeworkClass.PARTLY] == pytest.approx(
            0.255, abs=0.03)
        assert summary.homework_fractions[HomeworkClass.NONE] == pytest.approx(
            0.262, abs=0.03)

    def test_length_histogram_spikes_at_multiples_of_five(self, corpus):
        hist = summarize(corpus).session_length_hist
        for peak in (5, 10, 15, 20):
            assert hist[peak] > hist[peak - 1]
            assert hist[peak] > hist[peak + 1]

    def test_profile_induces_cross_session_length_correlation(self, corpus):
        multipliers = profile_multipliers(GenConfig(n_students=1500, seed=42))
        pairs = []
        for log in corpus:
            m = multipliers[log.student_id]
            for session in segment(log):
                pairs.append((m, len(session)))
        values = np.array(pairs)
        # Spearman rank correlation, computed directly
        def ranks(x):
            order = np.argsort(x, kind="mergesort")
            r = np.empty(len(x))
            r[order] = np.arange(len(x))
            return r
        rx, ry = ranks(values[:, 0]), ranks(values[:, 1])
        rho = np.corrcoef(rx, ry)[0, 1]
        assert rho > 0.3

    def test_scale_near_desk_target(self, corpus):
        # default config is tuned to ~50 actions per student
        summary = summarize(corpus)
        mean_actions = summary.n_actions / summary.n_students
        assert 35 <= mean_actions <= 70


class TestSummarize:
    def test_empty(self):
        summary = summarize([])
        assert summary.n_students == 0
        assert summary.n_sessions == 0
        assert summary.n_actions == 0

    def test_lines_schema(self):
        summary = summarize(generate(small_config(n_students=5)))
        lines = summary.lines()
        assert lines[0].startswith("n_students,")
        assert any(line.startswith("hist_session_length,") for line in lines)
