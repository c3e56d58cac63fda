"""Word-recognition metrics: exact-match accuracy and Levenshtein distance."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyTestSet


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit-cost insertions, deletions and substitutions."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class RecognitionStats:
    """Confusion counts for word recognition.

    Every test item carries a ground-truth word, so there are no true
    negatives: an exact match is a TP and anything else is an FN.  The four
    counters are kept so reports can show the full accuracy formula.
    """

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    total_edit_distance: int = 0
    n_items: int = 0

    @property
    def accuracy(self) -> float:
        denom = self.tp + self.tn + self.fp + self.fn
        if denom == 0:
            raise EmptyTestSet("no items were evaluated")
        return (self.tp + self.tn) / denom

    def add(self, predicted: str, truth: str, case_sensitive: bool = True) -> None:
        if not case_sensitive:
            predicted, truth = predicted.lower(), truth.lower()
        self.n_items += 1
        if predicted == truth:
            self.tp += 1
        else:
            self.fn += 1
            self.total_edit_distance += edit_distance(predicted, truth)

    def as_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "accuracy": self.accuracy if self.n_items else None,
            "total_edit_distance": self.total_edit_distance,
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
        }


def evaluate_pairs(pairs: Iterable[tuple[str, str]], case_sensitive: bool = True) -> RecognitionStats:
    stats = RecognitionStats()
    for predicted, truth in pairs:
        stats.add(predicted, truth, case_sensitive)
    return stats


def accuracy(pairs: Sequence[tuple[str, str]], case_sensitive: bool = True) -> float:
    if len(pairs) == 0:
        raise EmptyTestSet("accuracy needs at least one (predicted, truth) pair")
    return evaluate_pairs(pairs, case_sensitive).accuracy


def total_edit_distance(pairs: Iterable[tuple[str, str]], case_sensitive: bool = True) -> int:
    total = 0
    for predicted, truth in pairs:
        if not case_sensitive:
            predicted, truth = predicted.lower(), truth.lower()
        total += edit_distance(predicted, truth)
    return total


def read_prediction_file(path) -> list[tuple[str, str]]:
    """Parse ``predicted<TAB>truth`` lines."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        predicted, sep, truth = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'predicted<TAB>truth'")
        pairs.append((predicted, truth))
    return pairs


def write_prediction_file(path, pairs: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for predicted, truth in pairs:
            fh.write(f"{predicted}\t{truth}\n")
