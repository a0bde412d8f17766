"""Per-step training records and their long-format CSV."""

import csv
import io
from collections.abc import Iterable
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path

from muonlab.matrix import format_decimal
from muonlab.optimizers import UpdateStats

CSV_HEADER = ("step", "train_loss", "val_loss", "lr", "param", "update_rms", "weight_rms")


@dataclass(frozen=True)
class StepRecord:
    step: int
    train_loss: float
    val_loss: float
    lr: float
    params: tuple[UpdateStats, ...]


@dataclass
class MetricsLog:
    """Append-only; steps must strictly increase."""

    records: list[StepRecord] = field(default_factory=list)

    def append(
        self,
        step: int,
        train_loss: float,
        val_loss: float,
        lr: float,
        params: Iterable[UpdateStats],
    ) -> None:
        if self.records and step <= self.records[-1].step:
            raise ValueError(f"step {step} does not follow step {self.records[-1].step}")
        self.records.append(StepRecord(step, train_loss, val_loss, lr, tuple(params)))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> StepRecord:
        return self.records[-1]

    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def update_rms(self, name: str) -> list[float]:
        return [s.update_rms for r in self.records for s in r.params if s.name == name]

    def max_weight_rms(self, matrices_only: bool = True) -> float:
        """Largest post-step weight RMS at the final step."""
        values = [
            s.weight_rms
            for s in self.final.params
            if not matrices_only or s.name.endswith(".weight")
        ]
        return max(values, default=0.0)

    def to_csv_text(self, precision: int = 17) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for record in self.records:
            head = [
                record.step,
                format_decimal(record.train_loss, precision),
                format_decimal(record.val_loss, precision),
                format_decimal(record.lr, precision),
            ]
            for stats in record.params:
                writer.writerow(
                    head
                    + [
                        stats.name,
                        format_decimal(stats.update_rms, precision),
                        format_decimal(stats.weight_rms, precision),
                    ]
                )
        return buf.getvalue()

    def write_csv(self, path: str | PathLike[str], precision: int = 17) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv_text(precision))
        return path
