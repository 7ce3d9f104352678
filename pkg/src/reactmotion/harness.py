"""Error-accumulation study on the synthetic corpus.

Trains every architecture with and without person-ID embedding under the
same budget, then rolls each model out closed-loop in both stream mode
(mirrored warmup) and offline mode (test-data warmup) on a held-out pair.
Each of the twelve rollouts yields one drift-over-horizon CSV.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DivergenceError
from .generation import Mode, run_offline, run_stream
from .metrics import DriftReport, bone_drift, write_drift_csv
from .models import Arch, ModelConfig
from .nn import OptimizerConfig
from .skeleton import default_topology
from .synthetic import synthetic_corpus
from .training import TrainRunConfig, split_dataset, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HarnessConfig:
    n_pairs: int = 4
    n_frames: int = 200
    horizon: int = 100
    max_steps: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    model: ModelConfig = field(
        default_factory=lambda: ModelConfig(d_model=32, n_heads=4, d_ffn=64, dropout=0.0, n_routers=8)
    )


@dataclass
class CurveResult:
    arch: Arch
    person_id: bool
    mode: Mode
    report: DriftReport
    diverged_at: int | None
    csv_path: Path

    @property
    def name(self) -> str:
        return curve_name(self.arch, self.person_id, self.mode)


def curve_name(arch: Arch, person_id: bool, mode: Mode) -> str:
    return f"drift_{arch.value}_id-{'on' if person_id else 'off'}_{mode.value}"


def run_error_accumulation(out_dir: str | Path, cfg: HarnessConfig = HarnessConfig()) -> list[CurveResult]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    topo = default_topology()
    pairs = synthetic_corpus(cfg.n_pairs, cfg.n_frames, topo, cfg.seed)
    train_pairs, test_pairs = split_dataset(pairs, fraction=1 / cfg.n_pairs, seed=cfg.seed)
    test = test_pairs[0]
    results = []
    for arch in Arch:
        for pid in (False, True):
            run = TrainRunConfig(
                model=cfg.model.with_(arch=arch, use_person_id=pid),
                optimizer=OptimizerConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size),
                epochs=10**6,
                seed=cfg.seed,
                max_steps=cfg.max_steps,
            )
            trained = train(run, train_pairs)
            log.info("%s id=%s final loss %.4g", arch.value, pid, trained.losses[-1])
            for mode in (Mode.STREAM, Mode.OFFLINE):
                diverged = None
                try:
                    if mode is Mode.STREAM:
                        generated, _ = run_stream(trained.model, test.subject, cfg.horizon, topo)
                    else:
                        generated, _ = run_offline(trained.model, test, cfg.horizon, topo)
                except DivergenceError as exc:
                    diverged = exc.index
                    generated = exc.partial[0]
                report = bone_drift(generated, topo) if len(generated) else None
                path = out / f"{curve_name(arch, pid, mode)}.csv"
                if report is not None:
                    write_drift_csv(report, path)
                else:
                    path.write_text("frame,mean_rel_err,max_rel_err\n")
                results.append(CurveResult(arch, pid, mode, report, diverged, path))
    write_summary(results, out / "summary.csv")
    return results


def write_summary(results: list[CurveResult], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve", "arch", "person_id", "mode", "horizon", "mean", "max", "final_mean",
                    "first_exceedance", "diverged_at"])
        for r in results:
            s = r.report.summary() if r.report is not None else {}
            w.writerow([
                r.name, r.arch.value, int(r.person_id), r.mode.value, s.get("horizon", 0),
                f"{s.get('mean', float('nan')):.6g}", f"{s.get('max', float('nan')):.6g}",
                f"{s.get('final_mean', float('nan')):.6g}",
                "" if s.get("first_exceedance") is None else s["first_exceedance"],
                "" if r.diverged_at is None else r.diverged_at,
            ])
