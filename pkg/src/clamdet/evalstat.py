"""Classification metrics, the exact McNemar test and Elo ratings."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _core

# reference values from the published evaluation; used for report formatting only
PUBLISHED_OOD_F1 = {"Riffusion": 53.46, "Yue": 68.80, "Voice clone": 50.94, "Suno 4": 64.58}
PUBLISHED_ELO = {
    "Riffusion (ours)": 1105.58, "Udio (ours)": 1093.34, "Real": 1032.84, "Suno (ours)": 1013.76,
    "Voice Clones (ours)": 1007.23, "Yue (ours)": 958.37, "Diffrythm (ours)": 934.14,
    "Suno (SONICS)": 901.75, "Udio (SONICS)": 887.44,
}


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    id: str
    true: int
    pred: int
    score: float


def confusion_f1(true: Sequence[int], pred: Sequence[int]) -> dict:
    """Confusion counts and metrics with fake (1) as the positive class."""
    t = np.asarray(true, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.size == 0:
        raise ContractError("confusion_f1 needs at least one prediction")
    if t.shape != p.shape:
        raise ContractError(f"{t.size} labels but {p.size} predictions")
    tp = int(np.sum((t == 1) & (p == 1)))
    fp = int(np.sum((t == 0) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    tn = int(np.sum((t == 0) & (p == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "accuracy": (tp + tn) / t.size,
            "precision": precision, "recall": recall, "f1": f1}


def prediction_metrics(preds: Sequence[Prediction]) -> dict:
    return confusion_f1([p.true for p in preds], [p.pred for p in preds])


# -- McNemar ----------------------------------------------------------------------

def binomial_two_sided(n: int, k: int) -> float:
    """min(1, 2 * P[X <= k]) for X ~ Bin(n, 1/2), evaluated exactly."""
    if n == 0:
        return 1.0
    tail = sum(math.comb(n, i) for i in range(0, min(k, n) + 1))
    return float(min(Fraction(1), Fraction(2 * tail, 2 ** n)))


def mcnemar_table(preds_a: Sequence[Prediction], preds_b: Sequence[Prediction]) -> tuple[int, int, int, int]:
    """(both correct, both wrong, only A correct, only B correct)."""
    a_map = {p.id: p for p in preds_a}
    b_map = {p.id: p for p in preds_b}
    if len(a_map) != len(preds_a) or len(b_map) != len(preds_b):
        raise ContractError("duplicate ids in a prediction set")
    if a_map.keys() != b_map.keys():
        missing = sorted(a_map.keys() ^ b_map.keys())[:5]
        raise ContractError(f"prediction sets cover different ids, e.g. {missing}")
    both = neither = only_a = only_b = 0
    for tid, pa in a_map.items():
        pb = b_map[tid]
        if pa.true != pb.true:
            raise ContractError(f"true label of {tid!r} differs between prediction sets")
        ca, cb = pa.pred == pa.true, pb.pred == pb.true
        if ca and cb:
            both += 1
        elif ca:
            only_a += 1
        elif cb:
            only_b += 1
        else:
            neither += 1
    return both, neither, only_a, only_b


def mcnemar_exact(preds_a: Sequence[Prediction], preds_b: Sequence[Prediction]) -> dict:
    a, b, c, d = mcnemar_table(preds_a, preds_b)
    return {"table": (a, b, c, d), "p_value": binomial_two_sided(c + d, min(c, d))}


# -- Elo ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchRecord:
    model_a: str
    model_b: str
    a_wins: bool
    index: int = 0


def elo_rank(matches: Sequence[MatchRecord], k_factor: float = 32.0,
             initial: float = 1000.0) -> dict[str, float]:
    """Sequential Elo over the log in order; models are listed by first appearance."""
    if not matches:
        raise ContractError("elo_rank needs at least one match")
    if k_factor <= 0:
        raise ContractError("K must be positive")
    names: dict[str, int] = {}
    a_idx = np.empty(len(matches), dtype=np.int64)
    b_idx = np.empty(len(matches), dtype=np.int64)
    score_a = np.empty(len(matches), dtype=np.float64)
    for i, m in enumerate(matches):
        if m.model_a == m.model_b:
            raise ContractError(f"match {i}: model {m.model_a!r} cannot play itself")
        a_idx[i] = names.setdefault(m.model_a, len(names))
        b_idx[i] = names.setdefault(m.model_b, len(names))
        score_a[i] = 1.0 if m.a_wins else 0.0
    ratings = _core.elo_sequential(a_idx, b_idx, score_a, len(names), float(k_factor), float(initial))
    return {name: float(ratings[i]) for name, i in names.items()}


def leaderboard(ratings: Mapping[str, float]) -> list[tuple[str, float]]:
    return sorted(ratings.items(), key=lambda kv: (-kv[1], kv[0]))


# -- file formats --------------------------------------------------------------------

def read_predictions(path: str | Path) -> list[Prediction]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh, delimiter="\t")
        header = next(rows, None)
        if header != ["id", "true", "pred", "score"]:
            raise ContractError(f"{path}:1: header must be 'id true pred score'")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            try:
                tid, true, pred, sc = row
                p = Prediction(tid, int(true), int(pred), float(sc))
            except ValueError as exc:
                raise ContractError(f"{path}:{lineno}: {exc}") from None
            if p.true not in (0, 1) or p.pred not in (0, 1) or not 0.0 <= p.score <= 1.0:
                raise ContractError(f"{path}:{lineno}: labels must be 0/1 and score in [0, 1]")
            out.append(p)
    return out


def write_predictions(preds: Iterable[Prediction], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "true", "pred", "score"])
        for p in preds:
            w.writerow([p.id, p.true, p.pred, f"{p.score:.6f}"])


def read_matches(path: str | Path) -> list[MatchRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh, delimiter="\t")
        header = next(rows, None)
        if header != ["model_a", "model_b", "outcome"]:
            raise ContractError(f"{path}:1: header must be 'model_a model_b outcome'")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 3 or row[2] not in ("a_wins", "b_wins"):
                raise ContractError(f"{path}:{lineno}: expected 'model_a model_b a_wins|b_wins'")
            if row[0] == row[1]:
                raise ContractError(f"{path}:{lineno}: self-match for {row[0]!r}")
            out.append(MatchRecord(row[0], row[1], row[2] == "a_wins", len(out)))
    return out


def format_table(header: Sequence[str], rows: Sequence[Sequence], aligns: str | None = None) -> str:
    """Aligned plain-text table; ``aligns`` holds one 'l' or 'r' per column."""
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    aligns = aligns or "l" + "r" * (len(header) - 1)
    lines = []
    for k, r in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if a == "l" else c.rjust(w) for c, w, a in zip(r, widths, aligns)))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def per_generator_report(preds: Sequence[Prediction], generators: Mapping[str, str]) -> list[tuple[str, int, float]]:
    """Rows (generator, samples, F1 %) per generator plus an overall row."""
    groups: dict[str, list[Prediction]] = {}
    for p in preds:
        groups.setdefault(generators.get(p.id, "unknown"), []).append(p)
    rows = []
    for g in sorted(groups):
        m = prediction_metrics(groups[g])
        # real-only groups have no positives; accuracy is the meaningful number there
        value = m["f1"] if any(p.true == 1 for p in groups[g]) else m["accuracy"]
        rows.append((g, len(groups[g]), 100.0 * value))
    rows.append(("Overall", len(preds), 100.0 * prediction_metrics(preds)["f1"]))
    return rows
