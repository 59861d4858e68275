"""Metrics persistence and summarisation.

One CSV per (configuration, seed), append-only, flushed per row so a
partial log survives an abort.  The column set is fixed (schema versioned
in docs/metrics-schema.md); empty cells mean "not applicable to this
event kind".  Numbers are formatted with repr-round-trip precision so a
rerun of the same configuration is byte-identical.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict

import numpy as np

from .errors import DataError

__all__ = ["COLUMNS", "MetricsWriter", "read_metrics", "episode_returns", "final_performance", "report"]

COLUMNS = [
    "run_id", "seed", "variant", "distractors", "event", "step", "episode_idx",
    "total", "nce", "kl_filter", "reward_nll", "recon", "return", "wall_ms",
]

_FLOAT_FIELDS = {"total", "nce", "kl_filter", "reward_nll", "recon", "return", "wall_ms"}
_INT_FIELDS = {"seed", "distractors", "step", "episode_idx"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


class MetricsWriter:
    """Streams agent events into the fixed CSV schema."""

    def __init__(self, path, run_id: str, seed: int, variant: str, distractors: int):
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(COLUMNS)
        self._fh.flush()
        self._static = {"run_id": run_id, "seed": seed, "variant": variant, "distractors": distractors}

    def __call__(self, event: dict) -> None:
        row = dict(self._static)
        row["event"] = event["event"]
        row["step"] = event.get("step")
        row["episode_idx"] = event.get("episode_idx")
        for key in ("total", "nce", "kl_filter", "reward_nll", "recon", "return", "wall_ms"):
            row[key] = event.get(key)
        self._writer.writerow([_fmt(row.get(c)) for c in COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    """Parse one metrics file back into typed rows."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COLUMNS:
            unexpected = set(header or []) ^ set(COLUMNS)
            raise DataError(f"{path}: metrics schema mismatch (offending columns: {sorted(unexpected)})")
        rows = []
        for raw in reader:
            row = {}
            for col, cell in zip(COLUMNS, raw):
                if cell == "":
                    row[col] = None
                elif col in _FLOAT_FIELDS:
                    row[col] = float(cell)
                elif col in _INT_FIELDS:
                    row[col] = int(cell)
                else:
                    row[col] = cell
            rows.append(row)
    return rows


def episode_returns(rows) -> list[tuple[int, float]]:
    return [(r["episode_idx"], r["return"]) for r in rows if r["event"] == "episode"]


def final_performance(rows, window: int = 10) -> tuple[float, bool]:
    """Mean return of the last ``window`` episodes; flags truncation if the
    log holds fewer."""
    returns = [ret for _, ret in episode_returns(rows)]
    if not returns:
        raise DataError("metrics file contains no episode rows")
    truncated = len(returns) < window
    tail = returns[-window:]
    return float(np.mean(tail)), truncated


def _group_rows(paths):
    groups = defaultdict(dict)
    for path in sorted(str(p) for p in paths):
        rows = read_metrics(path)
        if not rows:
            raise DataError(f"{path}: empty metrics file")
        key = (rows[0]["variant"], rows[0]["distractors"])
        groups[key][rows[0]["seed"]] = rows
    return groups


def report(paths, window: int = 10) -> str:
    """Text summary: per (variant, distractors) group the across-seed mean
    of final performance, plus each variant's distractor-robustness ratio
    when both arms are present."""
    groups = _group_rows(paths)
    lines = []
    warnings = []
    finals = {}
    header = f"{'group':28s} {'seeds':>5s} {'episodes':>8s} {'final':>14s}"
    lines.append(header)
    lines.append("-" * len(header))
    for (variant, distractors), by_seed in sorted(groups.items()):
        per_seed = []
        n_eps = None
        for seed in sorted(by_seed):
            value, truncated = final_performance(by_seed[seed], window)
            per_seed.append(value)
            n_eps = len(episode_returns(by_seed[seed]))
            if truncated:
                warnings.append(
                    f"warning: {variant} distractors={distractors} seed={seed} has fewer than "
                    f"{window} episodes; used all {n_eps}"
                )
        final = float(np.mean(per_seed))
        finals[(variant, distractors)] = final
        label = f"{variant} distractors={distractors}"
        lines.append(f"{label:28s} {len(per_seed):5d} {n_eps:8d} {final:14.9f}")
    for variant in sorted({v for v, _ in finals}):
        base = finals.get((variant, 0))
        if base is None:
            continue
        for (v, d), val in sorted(finals.items()):
            if v == variant and d > 0:
                lines.append(
                    f"robustness ratio {variant} (distractors={d} vs 0): {val / base:.9f}"
                )
    out = io.StringIO()
    for w in warnings:
        print(w, file=out)
    for line in lines:
        print(line, file=out)
    return out.getvalue()
