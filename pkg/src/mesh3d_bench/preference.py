"""Bradley-Terry scores from pairwise preference records.

``P(a beats b) = exp(p_a) / (exp(p_a) + exp(p_b))``. Scores are fitted by
minorization-maximization on the strengths ``exp(p)`` and reported with the
gauge ``sum(p) == 0``.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, model_validator
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NotConnected, ParseError, SeparatedGraph, UnknownId

logger = logging.getLogger(__name__)


class PreferenceRecord(BaseModel):
    """One comparison: ``winner`` was preferred over ``loser``."""

    winner: str = Field(..., min_length=1, description="Preferred method id.")
    loser: str = Field(..., min_length=1, description="Other method id.")

    @model_validator(mode="after")
    def _distinct(self):
        if self.winner == self.loser:
            raise ValueError(f"method '{self.winner}' cannot be compared with itself")
        return self


@dataclass(frozen=True, eq=False)
class ScoreVector:
    ids: List[str]
    scores: np.ndarray

    def __getitem__(self, method: str) -> float:
        try:
            return float(self.scores[self.ids.index(method)])
        except ValueError:
            raise UnknownId(f"unknown method id '{method}'", details={"id": method})

    def as_dict(self) -> Dict[str, float]:
        return {m: float(s) for m, s in zip(self.ids, self.scores)}


class BtFit(BaseModel):
    """Fitted scores plus convergence diagnostics."""

    scores: Dict[str, float] = Field(..., description="Gauge-fixed score per method.")
    probabilities: Dict[str, Dict[str, float]] = Field(
        ..., description="P(row beats column) for every ordered pair."
    )
    iterations: int = Field(..., description="MM iterations run.")
    converged: bool = Field(..., description="Max score change fell below tolerance.")
    nll: List[float] = Field(..., description="Negative log-likelihood after each iteration.")
    records: int = Field(..., description="Number of comparisons fitted.")


def win_matrix(records: Iterable[PreferenceRecord], ids: List[str]) -> np.ndarray:
    """``wins[i, j]`` = times ``ids[i]`` beat ``ids[j]``."""
    position = {m: k for k, m in enumerate(ids)}
    wins = np.zeros((len(ids), len(ids)))
    for record in records:
        wins[position[record.winner], position[record.loser]] += 1.0
    return wins


def negative_log_likelihood(scores: np.ndarray, wins: np.ndarray) -> float:
    diff = scores[:, None] - scores[None, :]
    # -log sigmoid(d) = log(1 + exp(-d))
    return float(np.sum(wins * np.logaddexp(0.0, -diff)))


def strong_components(wins: np.ndarray, ids: List[str]) -> List[List[str]]:
    """Strongly connected components of the win graph, unbeaten groups first.

    Components are ordered topologically by "some member beat some member";
    ties go to the component with the smallest sorted ids.
    """
    n, label = connected_components(csr_matrix(wins > 0), directed=True, connection="strong")
    groups = [sorted(ids[i] for i in np.flatnonzero(label == c)) for c in range(n)]
    beats = np.zeros((n, n), dtype=bool)
    rows, cols = np.nonzero(wins > 0)
    beats[label[rows], label[cols]] = True
    np.fill_diagonal(beats, False)
    order: List[int] = []
    remaining = list(range(n))
    while remaining:
        unbeaten = [c for c in remaining if not beats[remaining, c].any()]
        first = min(unbeaten, key=lambda c: groups[c])
        order.append(first)
        remaining.remove(first)
    return [groups[c] for c in order]


def _check_graph(wins: np.ndarray, ids: List[str]) -> None:
    compared = csr_matrix((wins + wins.T) > 0)
    n_weak, _ = connected_components(compared, directed=False)
    if n_weak > 1:
        _, component = connected_components(compared, directed=False)
        groups = [[ids[i] for i in np.flatnonzero(component == c)] for c in range(n_weak)]
        raise NotConnected(
            f"comparison graph has {n_weak} disconnected components",
            details={"components": groups},
        )
    components = strong_components(wins, ids)
    if len(components) > 1:
        undefeated = [ids[i] for i in np.flatnonzero(wins.sum(axis=0) == 0)]
        winless = [ids[i] for i in np.flatnonzero(wins.sum(axis=1) == 0)]
        raise SeparatedGraph(
            f"win graph splits into {len(components)} groups that never beat the groups "
            "ahead of them; scores diverge",
            details={"undefeated": undefeated, "winless": winless, "components": components},
        )


def fit_bt(
    records: List[PreferenceRecord],
    tolerance: float = 1e-8,
    max_iter: int = 10000,
    pseudo_count: float = 0.0,
) -> BtFit:
    """Maximum-likelihood scores by minorization-maximization.

    ``pseudo_count`` is added in both directions to every pair that was
    compared at least once.
    """
    if not records:
        raise ValueError("at least one preference record is required")
    if pseudo_count < 0:
        raise ValueError("pseudo_count must be non-negative")
    ids = sorted({r.winner for r in records} | {r.loser for r in records})
    wins = win_matrix(records, ids)
    compared = (wins + wins.T) > 0
    wins = wins + pseudo_count * compared
    _check_graph(wins, ids)

    games = wins + wins.T
    total_wins = wins.sum(axis=1)
    strength = np.ones(len(ids))
    scores = np.zeros(len(ids))
    nll: List[float] = []
    converged = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        pair_sum = strength[:, None] + strength[None, :]
        denom = np.sum(np.divide(games, pair_sum, out=np.zeros_like(games), where=games > 0), axis=1)
        strength = total_wins / denom
        new_scores = np.log(strength)
        new_scores -= new_scores.mean()
        strength = np.exp(new_scores)
        change = float(np.max(np.abs(new_scores - scores)))
        scores = new_scores
        nll.append(negative_log_likelihood(scores, wins))
        if change < tolerance:
            converged = True
            break
    if not converged:
        logger.warning(f"Bradley-Terry fit stopped after {max_iter} iterations without converging")
    logger.debug(f"Bradley-Terry: {len(ids)} methods, {iterations} iterations, NLL {nll[-1]:.6g}")

    vector = ScoreVector(ids, scores)
    return BtFit(
        scores=vector.as_dict(),
        probabilities=probability_matrix(vector),
        iterations=iterations,
        converged=converged,
        nll=nll,
        records=len(records),
    )


def predict_prob(scores: ScoreVector, a: str, b: str) -> float:
    """Probability that ``a`` is preferred over ``b``."""
    diff = scores[a] - scores[b]
    return float(1.0 / (1.0 + np.exp(-diff)))


def probability_matrix(scores: ScoreVector) -> Dict[str, Dict[str, float]]:
    return {a: {b: predict_prob(scores, a, b) for b in scores.ids if b != a} for a in scores.ids}


def score_vector(fit: BtFit) -> ScoreVector:
    ids = list(fit.scores)
    return ScoreVector(ids, np.array([fit.scores[m] for m in ids]))


def load_records(path: Union[str, Path]) -> List[PreferenceRecord]:
    """Read a ``winner,loser`` CSV."""
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    missing = {"winner", "loser"} - set(frame.columns)
    if missing:
        raise ParseError(
            f"{path}: missing columns {sorted(missing)}", details={"path": str(path)}
        )
    records = []
    for row, (winner, loser) in enumerate(zip(frame["winner"], frame["loser"]), start=2):
        try:
            records.append(PreferenceRecord(winner=winner.strip(), loser=loser.strip()))
        except ValidationError as e:
            raise ParseError(
                f"{path}:{row}: invalid record: {e.errors()[0]['msg']}",
                details={"path": str(path), "line": row},
            )
    return records
