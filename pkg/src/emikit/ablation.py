"""Ablation sweeps over modality subsets and module toggles.

Each cell (modalities, enhancement on/off, quality weighting on/off) is
trained once per seed; the report carries mean and standard deviation of
the validation correlation, in both machine-readable and plain-text form.
Failures in one cell are recorded and do not abort the sweep.
"""

from __future__ import annotations

import dataclasses
import json
import traceback
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .errors import UsageError
from .training import train_stage2

DEFAULT_SUBSETS = ("v", "v+t", "a", "v+a", "a+t", "v+a+t")
DEFAULT_TOGGLES = ((False, False), (True, False), (False, True), (True, True))


@dataclass
class AblationPlan:
    """Modality subsets (run with both modules on) plus module toggles
    applied to the full subset."""

    subsets: tuple = DEFAULT_SUBSETS
    toggles: tuple = DEFAULT_TOGGLES
    seeds: tuple = (0, 1, 2, 3, 4)

    def validate(self):
        for subset in self.subsets:
            if not any(m in subset.lower() for m in "vat"):
                raise UsageError(f"ablation subset {subset!r} has no modality")
        if not self.seeds:
            raise UsageError("ablation needs at least one seed")
        return self

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        plan = cls(
            subsets=tuple(data.get("modality_subsets", DEFAULT_SUBSETS)),
            toggles=tuple((bool(t[0]), bool(t[1]))
                          for t in data.get("module_toggles", DEFAULT_TOGGLES)),
            seeds=tuple(int(s) for s in data.get("seeds", (0, 1, 2, 3, 4))),
        )
        return plan.validate()

    def cells(self):
        """Deduplicated (name, modalities, tfe, qam) cells."""
        seen, out = set(), []
        for subset in self.subsets:
            key = (subset.lower(), True, True)
            if key not in seen:
                seen.add(key)
                out.append((subset.upper(), subset, True, True))
        full = self.subsets[-1] if self.subsets else "v+a+t"
        for tfe, qam in self.toggles:
            key = (full.lower(), tfe, qam)
            if key in seen:
                continue
            seen.add(key)
            suffix = f" [TFE={'on' if tfe else 'off'}, QAM={'on' if qam else 'off'}]"
            out.append((full.upper() + suffix, full, tfe, qam))
        return out


@dataclass
class AblationResult:
    rows: list = field(default_factory=list)

    def row(self, name):
        for row in self.rows:
            if row["cell"] == name:
                return row
        raise KeyError(name)

    def to_json(self):
        return json.dumps({"rows": self.rows}, indent=2, sort_keys=True)

    def text_table(self):
        lines = [f"{'cell':<34} {'TFE':<4} {'QAM':<4} {'mean rho':>9} {'std':>7}  seeds"]
        lines.append("-" * len(lines[0]))
        for row in self.rows:
            if row.get("error"):
                lines.append(f"{row['cell']:<34} {'-':<4} {'-':<4} {'failed':>9}")
                continue
            lines.append(
                f"{row['cell']:<34} {'on' if row['tfe'] else 'off':<4} "
                f"{'on' if row['qam'] else 'off':<4} "
                f"{row['rho_mean']:>9.4f} {row['rho_std']:>7.4f}  "
                + ",".join(f"{r:.3f}" for r in row["rho_per_seed"]))
        return "\n".join(lines)


def run_ablation(plan: AblationPlan, samples, cfg: Config, progress=None):
    """Train one model per cell per seed and collate validation correlation.

    Cells sharing a seed share the corpus split and shuffling stream, so
    paired comparisons across cells are meaningful.
    """
    plan.validate()
    result = AblationResult()
    for name, subset, tfe, qam in plan.cells():
        per_seed, failures = [], []
        for seed in plan.seeds:
            cell_cfg = dataclasses.replace(
                cfg, seed=int(seed), modalities=subset, use_tfe=tfe, use_qam=qam)
            try:
                outcome = train_stage2(samples, cell_cfg)
                per_seed.append(float(outcome.best_rho))
            except Exception as exc:  # keep sweeping, surface the failure
                failures.append(f"seed {seed}: {exc!r}")
                traceback.print_exc()
        row = {
            "cell": name,
            "modalities": subset,
            "tfe": tfe,
            "qam": qam,
            "rho_per_seed": per_seed,
            "rho_mean": float(np.mean(per_seed)) if per_seed else None,
            "rho_std": float(np.std(per_seed)) if per_seed else None,
            "error": "; ".join(failures) if failures else None,
        }
        result.rows.append(row)
        if progress:
            progress(row)
    return result
