"""Evaluation metrics and per-day result records.

The per-day CSV schema is the external contract:
``day_id,setting,L,B,D,C,ROI,D_star,feasible,agent``. Day ids carry a
trailing ``-sNN`` token naming the evaluation seed so per-seed metrics
can be recovered from one flat file.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = ["day_id", "setting", "L", "B", "D", "C", "ROI", "D_star", "feasible", "agent"]

_SEED_TOKEN = re.compile(r"-s(\d+)$")


@dataclass(frozen=True)
class DayResult:
    """One day's outcome for one agent."""

    day_id: str
    setting: str
    roi_limit: float
    budget: float
    delivery: float
    cost: float
    oracle_value: float
    feasible: bool
    agent: str

    @property
    def roi(self) -> float:
        return self.delivery / self.cost if self.cost > 0 else math.inf


def normalized_score(result: DayResult) -> float:
    """Per-day score: oracle-normalized delivery if feasible, else 0.

    A day whose oracle is zero scores 1 when feasibly matching it (zero
    delivery) and 0 otherwise, keeping scores in [0, 1].
    """
    if not result.feasible:
        return 0.0
    if result.oracle_value <= 0:
        return 1.0 if result.delivery == 0 else 0.0
    return result.delivery / result.oracle_value


def ans(results: Sequence[DayResult]) -> float:
    """Average normalized score over all days."""
    if len(results) == 0:
        raise ValueError("ans needs at least one result")
    return sum(normalized_score(r) for r in results) / len(results)


def csr(results: Sequence[DayResult]) -> float:
    """Fraction of days satisfying all constraints."""
    if len(results) == 0:
        raise ValueError("csr needs at least one result")
    return sum(1 for r in results if r.feasible) / len(results)


def andr(results: Sequence[DayResult]) -> float:
    """Mean normalized delivery regret over feasible days, in percent."""
    feasible = [r for r in results if r.feasible]
    if not feasible:
        raise ValueError("andr is undefined without a feasible day")
    return sum((normalized_score(r) - 1.0) * 100.0 for r in feasible) / len(feasible)


def _format(value: float) -> str:
    return repr(float(value))


def write_day_results(results: Iterable[DayResult], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in results:
            writer.writerow(
                [
                    r.day_id,
                    r.setting,
                    _format(r.roi_limit),
                    _format(r.budget),
                    _format(r.delivery),
                    _format(r.cost),
                    _format(r.roi),
                    _format(r.oracle_value),
                    "true" if r.feasible else "false",
                    r.agent,
                ]
            )


def read_day_results(path: str | Path) -> list[DayResult]:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header}")
        out: list[DayResult] = []
        for row in reader:
            out.append(
                DayResult(
                    day_id=row[0],
                    setting=row[1],
                    roi_limit=float(row[2]),
                    budget=float(row[3]),
                    delivery=float(row[4]),
                    cost=float(row[5]),
                    oracle_value=float(row[7]),
                    feasible=row[8] == "true",
                    agent=row[9],
                )
            )
    return out


def seed_of(result: DayResult) -> int | None:
    match = _SEED_TOKEN.search(result.day_id)
    return int(match.group(1)) if match else None


def split_of(result: DayResult) -> str:
    return result.day_id.split("-", 1)[0]


@dataclass(frozen=True)
class SummaryRow:
    agent: str
    split: str
    metric: str
    mean: float
    median: float
    q1: float
    q3: float


def summarize(results: Sequence[DayResult]) -> list[SummaryRow]:
    """Per-(agent, split) metric statistics across evaluation seeds.

    ANDR is aggregated over the seeds where it is defined; it is NaN for
    an agent with no feasible day anywhere.
    """
    groups: dict[tuple[str, str], dict[int | None, list[DayResult]]] = {}
    for r in results:
        key = (r.agent, split_of(r))
        groups.setdefault(key, {}).setdefault(seed_of(r), []).append(r)

    rows: list[SummaryRow] = []
    for (agent, split) in sorted(groups):
        by_seed = groups[(agent, split)]
        per_seed = {
            "ANS": [ans(rs) for rs in by_seed.values()],
            "CSR": [csr(rs) for rs in by_seed.values()],
            "ANDR": [andr(rs) for rs in by_seed.values() if any(r.feasible for r in rs)],
        }
        for metric in ("ANS", "CSR", "ANDR"):
            values = per_seed[metric]
            if not values:
                rows.append(SummaryRow(agent, split, metric, math.nan, math.nan, math.nan, math.nan))
                continue
            q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
            rows.append(
                SummaryRow(
                    agent,
                    split,
                    metric,
                    mean=float(np.mean(values)),
                    median=float(med),
                    q1=float(q1),
                    q3=float(q3),
                )
            )
    return rows


SUMMARY_HEADER = ["agent", "split", "metric", "mean", "median", "q1", "q3"]


def write_summary(rows: Iterable[SummaryRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for r in rows:
            writer.writerow(
                [r.agent, r.split, r.metric, _format(r.mean), _format(r.median), _format(r.q1), _format(r.q3)]
            )


def read_summary(path: str | Path) -> list[SummaryRow]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SUMMARY_HEADER:
            raise ValueError(f"unexpected summary header: {header}")
        return [
            SummaryRow(
                agent=row[0],
                split=row[1],
                metric=row[2],
                mean=float(row[3]),
                median=float(row[4]),
                q1=float(row[5]),
                q3=float(row[6]),
            )
            for row in reader
        ]
