"""
Error-rate reports: per split rows plus mean and sample standard deviation.

Machine-readable output uses fixed field names (FIELDS) and is written both
as JSON and CSV; the human-readable summary goes to the terminal.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .predict import HistoryPoint, PredictionResult
from .sampler import SampleStore

FIELDS = ("task", "split_id", "hamming_error", "zero_one_error", "n_samples", "runtime_seconds")


@dataclass(frozen=True)
class SplitMetrics:
    task: str
    split_id: int
    hamming_error: float
    zero_one_error: float
    n_samples: Optional[int] = None
    runtime_seconds: Optional[float] = None


def _mean_std(values: Sequence[float]):
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


@dataclass
class MetricsReport:
    splits: List[SplitMetrics] = field(default_factory=list)

    @property
    def hamming(self):
        """(mean, sample std) of the hamming error across splits."""
        return _mean_std([s.hamming_error for s in self.splits])

    @property
    def zero_one(self):
        return _mean_std([s.zero_one_error for s in self.splits])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(s) for s in self.splits], columns=list(FIELDS))

    def to_dict(self) -> dict:
        hamming_mean, hamming_std = self.hamming
        zero_one_mean, zero_one_std = self.zero_one
        return {
            "splits": [asdict(s) for s in self.splits],
            "aggregate": {
                "n_splits": len(self.splits),
                "hamming_error_mean": hamming_mean,
                "hamming_error_std": hamming_std,
                "zero_one_error_mean": zero_one_mean,
                "zero_one_error_std": zero_one_std,
            },
        }

    def write(self, out_dir: Union[str, Path], stem: str = "metrics") -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{stem}.json"
        csv_path = out_dir / f"{stem}.csv"
        with open(json_path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        self.to_frame().to_csv(csv_path, index=False, float_format="%.10g")
        return [json_path, csv_path]

    def render(self) -> str:
        lines = [f"   {'Split':<8}{'Hamming':>10}{'0/1':>10}{'Samples':>10}"]
        lines.append(f"   {'-' * 38}")
        for s in self.splits:
            lines.append(
                f"   {s.split_id:<8}{s.hamming_error * 100:>9.2f}%"
                f"{s.zero_one_error * 100:>9.2f}%{'-' if s.n_samples is None else s.n_samples:>10}"
            )
        hamming_mean, hamming_std = self.hamming
        zero_one_mean, zero_one_std = self.zero_one
        lines.append(f"   {'-' * 38}")
        lines.append(
            f"   Hamming error: {hamming_mean * 100:.2f} ± {hamming_std * 100:.2f}  |  "
            f"0/1 error: {zero_one_mean * 100:.2f} ± {zero_one_std * 100:.2f}"
        )
        return "\n".join(lines)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "MetricsReport":
        with open(path) as f:
            data = json.load(f)
        return cls([SplitMetrics(**row) for row in data["splits"]])


def history_frame(history: Sequence[HistoryPoint]) -> pd.DataFrame:
    """Error against number of f samples used, one row per sample."""
    return pd.DataFrame(
        [asdict(p) for p in history],
        columns=["stamp", "n_f_samples", "hamming_error", "zero_one_error"],
    )


def trace_frame(store: SampleStore) -> pd.DataFrame:
    """One row per recorded sample: stamp, log-likelihood, hyperparameters."""
    return pd.DataFrame({
        "stamp": store.stamps,
        "log_lik": store.sample_log_liks,
        "h_p": [c.h_p for c in store.sample_configs],
        "gamma": [c.gamma for c in store.sample_configs],
    }, columns=["stamp", "log_lik", "h_p", "gamma"])


def marginals_frame(result: PredictionResult, alphabet: Sequence[str]) -> pd.DataFrame:
    rows = []
    for n, node in enumerate(result.marginals):
        for t, probs in enumerate(node):
            rows.append([n, t, *probs])
    return pd.DataFrame(rows, columns=["sequence", "position", *alphabet])
