"""Tests for Bradley-Terry fitting."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from mesh3d_bench.errors import NotConnected, ParseError, SeparatedGraph, UnknownId
from mesh3d_bench.geometry import make_rng
from mesh3d_bench.preference import (
    PreferenceRecord,
    ScoreVector,
    fit_bt,
    load_records,
    predict_prob,
    score_vector,
)


def records(*pairs):
    """Expand ``(winner, loser, count)`` triples into records."""
    return [PreferenceRecord(winner=w, loser=l) for w, l, n in pairs for _ in range(n)]


class TestFit:
    """Test maximum-likelihood scores."""

    def test_three_to_one(self):
        """Test that a 3:1 record gives a score gap of ln 3."""
        fit = fit_bt(records(("A", "B", 3), ("B", "A", 1)))
        assert fit.converged
        assert fit.scores["A"] - fit.scores["B"] == pytest.approx(math.log(3), abs=1e-6)
        assert fit.scores["A"] + fit.scores["B"] == pytest.approx(0.0, abs=1e-12)
        assert fit.probabilities["A"]["B"] == pytest.approx(0.75, abs=1e-6)
        assert fit.records == 4

    def test_balanced_records(self):
        """Test that a balanced cycle gives equal scores."""
        fit = fit_bt(records(("A", "B", 2), ("B", "C", 2), ("C", "A", 2)))
        for score in fit.scores.values():
            assert score == pytest.approx(0.0, abs=1e-9)

    def test_nll_never_increases(self):
        """Test that every iteration lowers the negative log-likelihood."""
        fit = fit_bt(records(("A", "B", 5), ("B", "A", 2), ("B", "C", 4), ("C", "B", 1), ("C", "A", 1), ("A", "C", 3)))
        steps = np.diff(fit.nll)
        assert (steps <= 1e-12).all()

    def test_recovers_simulated_scores(self):
        """Test that scores are recovered from simulated comparisons."""
        truth = {"A": 0.8, "B": 0.2, "C": -0.3, "D": -0.7}
        ids = list(truth)
        rng = make_rng(31)
        simulated = []
        for _ in range(20000):
            a, b = rng.choice(len(ids), size=2, replace=False)
            p = 1.0 / (1.0 + math.exp(truth[ids[b]] - truth[ids[a]]))
            if rng.uniform() < p:
                simulated.append(PreferenceRecord(winner=ids[a], loser=ids[b]))
            else:
                simulated.append(PreferenceRecord(winner=ids[b], loser=ids[a]))
        fit = fit_bt(simulated)
        for method, score in truth.items():
            assert fit.scores[method] == pytest.approx(score, abs=0.1)

    def test_relabeling_permutes_scores(self):
        """Test that renaming methods carries each score to its new name."""
        original = records(("A", "B", 5), ("B", "A", 2), ("B", "C", 4), ("C", "B", 1), ("C", "A", 1), ("A", "C", 3))
        rename = {"A": "zeta", "B": "alpha", "C": "mu"}
        renamed = [PreferenceRecord(winner=rename[r.winner], loser=rename[r.loser]) for r in original]
        fit = fit_bt(original)
        again = fit_bt(renamed)
        for method, new_name in rename.items():
            assert again.scores[new_name] == pytest.approx(fit.scores[method], abs=1e-7)

    def test_translation_leaves_probabilities_unchanged(self):
        """Test that shifting every score by a constant predicts the same preferences."""
        scores = score_vector(fit_bt(records(("A", "B", 3), ("B", "A", 1), ("B", "C", 2), ("C", "B", 1), ("A", "C", 1), ("C", "A", 1))))
        shifted = ScoreVector(scores.ids, scores.scores + 2.5)
        for a in scores.ids:
            for b in scores.ids:
                if a != b:
                    assert predict_prob(shifted, a, b) == pytest.approx(predict_prob(scores, a, b), abs=1e-12)

    def test_pseudo_count(self):
        """Test that a pseudo count makes an unbeaten record finite."""
        fit = fit_bt(records(("A", "B", 3)), pseudo_count=1.0)
        assert fit.scores["A"] - fit.scores["B"] == pytest.approx(math.log(4), abs=1e-6)

    def test_iteration_limit(self, caplog):
        """Test the not-converged path."""
        fit = fit_bt(records(("A", "B", 3), ("B", "A", 1), ("B", "C", 2), ("C", "A", 1), ("A", "C", 1)), max_iter=1)
        assert not fit.converged
        assert fit.iterations == 1
        assert "without converging" in caplog.text


class TestGraphChecks:
    """Test comparison graph validation."""

    def test_separated_graph(self):
        """Test that an undefeated method is reported with exit code 3."""
        with pytest.raises(SeparatedGraph) as exc:
            fit_bt(records(("A", "B", 2), ("A", "C", 1), ("B", "C", 1), ("C", "B", 1)))
        assert exc.value.exit_code == 3
        assert exc.value.details["undefeated"] == ["A"]
        assert exc.value.details["components"] == [["A"], ["B", "C"]]

    def test_separated_groups_without_undefeated_method(self):
        """Test that two cycles where one dominates are reported as components."""
        with pytest.raises(SeparatedGraph) as exc:
            fit_bt(records(("C", "D", 1), ("D", "C", 1), ("A", "B", 1), ("B", "A", 1), ("C", "A", 1)))
        assert exc.value.details["undefeated"] == []
        assert exc.value.details["winless"] == []
        assert exc.value.details["components"] == [["C", "D"], ["A", "B"]]

    def test_disconnected_graph(self):
        """Test that two unrelated groups are rejected."""
        with pytest.raises(NotConnected) as exc:
            fit_bt(records(("A", "B", 1), ("B", "A", 1), ("C", "D", 1), ("D", "C", 1)))
        assert exc.value.details["components"] == [["A", "B"], ["C", "D"]]

    def test_self_comparison(self):
        """Test that a method cannot beat itself."""
        with pytest.raises(ValidationError):
            PreferenceRecord(winner="A", loser="A")


class TestPrediction:
    """Test probabilities from scores."""

    def test_predict_prob(self):
        """Test the logistic link and unknown ids."""
        scores = score_vector(fit_bt(records(("A", "B", 3), ("B", "A", 1))))
        assert predict_prob(scores, "A", "B") == pytest.approx(0.75, abs=1e-6)
        assert predict_prob(scores, "A", "B") + predict_prob(scores, "B", "A") == pytest.approx(1.0)
        with pytest.raises(UnknownId):
            predict_prob(scores, "A", "Z")


class TestRecordFiles:
    """Test preference CSV loading."""

    def test_load(self, tmp_path):
        """Test reading winner,loser rows."""
        path = tmp_path / "prefs.csv"
        path.write_text("winner,loser\nA, B\nB,A\n")
        loaded = load_records(path)
        assert [(r.winner, r.loser) for r in loaded] == [("A", "B"), ("B", "A")]

    def test_missing_columns(self, tmp_path):
        """Test that the header must name both columns."""
        path = tmp_path / "prefs.csv"
        path.write_text("first,second\nA,B\n")
        with pytest.raises(ParseError):
            load_records(path)

    def test_bad_row(self, tmp_path):
        """Test that a self comparison is reported with its line."""
        path = tmp_path / "prefs.csv"
        path.write_text("winner,loser\nA,B\nC,C\n")
        with pytest.raises(ParseError) as exc:
            load_records(path)
        assert exc.value.details["line"] == 3
