"""Evaluation reports: exact-count accuracies, per-patch grids, confusion counts."""
from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyProbeSet
from .hierarchy import PatchHierarchy, PatchId
from .local import ABSTAIN_LABEL
from .pipeline import MatcherBundle, deploy, flat_vote


def atomic_write(path: str | Path, data: str | bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def fmt(x: float) -> str:
    return f"{x:.6f}"


@dataclass
class EvaluationReport:
    ids: list[str]
    truth: np.ndarray
    predicted: np.ndarray
    scores: np.ndarray
    patches: tuple[PatchId, ...]
    local_patch_accuracy: np.ndarray
    global_patch_accuracy: np.ndarray
    baseline_predicted: np.ndarray
    classes: np.ndarray
    groups: list[str] = field(default_factory=list)
    hierarchy: PatchHierarchy | None = None
    label: str = ""

    @property
    def n_probes(self) -> int:
        return int(self.truth.shape[0])

    @property
    def n_correct(self) -> int:
        return int(np.sum(self.predicted == self.truth))

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_probes

    @property
    def rank1(self) -> float:
        # the final rule yields a single identity per probe, so rank-1 == accuracy
        return self.accuracy

    @property
    def baseline_accuracy(self) -> float:
        return float(np.sum(self.baseline_predicted == self.truth)) / self.n_probes

    @property
    def mean_local_patch_accuracy(self) -> float:
        return float(np.mean(self.local_patch_accuracy))

    @property
    def mean_global_patch_accuracy(self) -> float:
        return float(np.mean(self.global_patch_accuracy))

    def confusion(self) -> tuple[np.ndarray, np.ndarray]:
        """Counts with rows = true class, columns = predicted class (0 = abstain)."""
        cols = np.concatenate([[ABSTAIN_LABEL], self.classes])
        mat = np.zeros((self.classes.shape[0], cols.shape[0]), dtype=np.int64)
        row_of = {int(c): k for k, c in enumerate(self.classes)}
        col_of = {int(c): k for k, c in enumerate(cols)}
        for t, p in zip(self.truth, self.predicted):
            mat[row_of[int(t)], col_of.get(int(p), 0)] += 1
        return cols, mat

    def group_table(self) -> list[tuple[str, int, int, float]]:
        if not self.groups or not any(self.groups):
            return []
        out = []
        for g in sorted(set(self.groups)):
            sel = np.array([x == g for x in self.groups])
            n = int(sel.sum())
            k = int(np.sum(self.predicted[sel] == self.truth[sel]))
            out.append((g, n, k, k / n))
        return out

    def level_grid(self, values: np.ndarray, level: int) -> np.ndarray:
        """Per-patch values of one level laid out on the level's grid."""
        h = self.hierarchy
        pos = {p: k for k, p in enumerate(self.patches)}
        members = [p for p in self.patches if p.level == level]
        if h is not None and h.spec.mode == "grid":
            rows, cols = h.spec.levels[level - 1]
            grid = np.zeros((rows, cols))
            for p in members:
                grid[(p.index - 1) // cols, (p.index - 1) % cols] = values[pos[p]]
            return grid
        return np.array([[values[pos[p]] for p in members]])

    # -- rendering ----------------------------------------------------------------------
    def summary_rows(self) -> list[tuple[str, str]]:
        return [
            ("probes", str(self.n_probes)),
            ("correct", str(self.n_correct)),
            ("accuracy", fmt(self.accuracy)),
            ("rank1", fmt(self.rank1)),
            ("flat_local_vote_accuracy", fmt(self.baseline_accuracy)),
            ("mean_local_patch_accuracy", fmt(self.mean_local_patch_accuracy)),
            ("mean_global_patch_accuracy", fmt(self.mean_global_patch_accuracy)),
        ]

    def to_text(self) -> str:
        title = f"Evaluation{': ' + self.label if self.label else ''}"
        lines = [title, "=" * len(title)]
        width = max(len(k) for k, _ in self.summary_rows())
        lines += [f"{k.ljust(width)}  {v}" for k, v in self.summary_rows()]
        levels = sorted({p.level for p in self.patches})
        lines += ["", "per-level mean patch accuracy", "level  patches  local     global"]
        for lv in levels:
            sel = np.array([p.level == lv for p in self.patches])
            lines.append(f"{lv:<5}  {int(sel.sum()):<7}  {fmt(self.local_patch_accuracy[sel].mean())}  "
                         f"{fmt(self.global_patch_accuracy[sel].mean())}")
        groups = self.group_table()
        if groups:
            lines += ["", "group  probes  correct  accuracy"]
            lines += [f"{g}  {n}  {k}  {fmt(a)}" for g, n, k, a in groups]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, prefix: str = "", figures: bool = True) -> list[Path]:
        out = Path(out_dir)
        written = []

        def put(name, text):
            path = out / f"{prefix}{name}"
            atomic_write(path, text)
            written.append(path)

        put("report.txt", self.to_text())
        put("summary.csv", csv_text([("metric", "value"), *self.summary_rows()]))
        put("predictions.csv", csv_text(
            [("id", "truth", "predicted", "score", "baseline")] +
            [(i, int(t), int(p), fmt(s) if np.isfinite(s) else "-inf", int(b))
             for i, t, p, s, b in zip(self.ids, self.truth, self.predicted, self.scores,
                                      self.baseline_predicted)]))
        put("per_patch.csv", csv_text(
            [("patch", "level", "index", "local_accuracy", "global_accuracy")] +
            [(str(p), p.level, p.index, fmt(a), fmt(b))
             for p, a, b in zip(self.patches, self.local_patch_accuracy, self.global_patch_accuracy)]))
        for lv in sorted({p.level for p in self.patches}):
            for name, values in (("local", self.local_patch_accuracy), ("global", self.global_patch_accuracy)):
                grid = self.level_grid(values, lv)
                put(f"{name}_level{lv}.csv", csv_text([[fmt(x) for x in row] for row in grid]))
        cols, mat = self.confusion()
        put("confusion.csv", csv_text([["truth\\predicted", *map(int, cols)]] +
                                      [[int(c), *map(int, row)] for c, row in zip(self.classes, mat)]))
        groups = self.group_table()
        if groups:
            put("groups.csv", csv_text([("group", "probes", "correct", "accuracy")] +
                                       [(g, n, k, fmt(a)) for g, n, k, a in groups]))
        if figures:
            from .plotting import plot_patch_accuracy
            path = out / f"{prefix}patch_accuracy.png"
            plot_patch_accuracy(self, path)
            written.append(path)
        return written


def evaluate(bundle: MatcherBundle, probes, truth, ids: Sequence[str] | None = None,
             groups: Sequence[str] | None = None, label: str = "") -> EvaluationReport:
    probes = list(probes)
    if not probes:
        raise EmptyProbeSet("no probes to evaluate")
    truth = np.asarray(truth, dtype=np.int64)
    result = deploy(bundle, probes)
    return EvaluationReport(
        ids=list(ids) if ids is not None else [str(k) for k in range(len(probes))],
        truth=truth,
        predicted=result.labels,
        scores=result.scores,
        patches=result.local.patches,
        local_patch_accuracy=result.local.accuracy(truth),
        global_patch_accuracy=result.global_.accuracy(truth),
        baseline_predicted=flat_vote(result.local),
        classes=bundle.gallery_labels,
        groups=list(groups) if groups is not None else [],
        hierarchy=bundle.hierarchy,
        label=label,
    )
