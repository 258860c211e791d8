"""End-to-end phases: morph, build, train, experiment and accounting runs."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .bftm import (MorphConfig, MorphResult, SimilarityMatrix, accounting_run, default_degree, run_morphing,
                   stats_from_json, stats_to_csv, stats_to_json)
from .config import ExperimentConfig, serialize_config
from .errors import IncompleteMatrixError, StagedInputError
from .graph import Topology, split_partitions, union
from .learn import (Dataset, ModelParams, RoundMetrics, metrics_to_csv, partition_data, prologue_train,
                    synth_dataset, train_phase3)
from .proxy import GlobalDataset, Proxy, compute_proxy, proxy_bytes
from .seeds import derive_seeds
from .selection import (ClusterAssignment, CliquePlan, ccc_heterogeneous, homogeneous_baseline, kmeans_rows,
                        objective_score)

log = logging.getLogger(__name__)

MATRIX_FILE = "matrix.bin"
MORPH_STATS_FILE = "morph_stats.json"
MANIFEST_FILE = "manifest.json"


@dataclass
class Workspace:
    """Everything derived deterministically from the config before morphing."""

    train: Dataset
    test: Dataset
    global_data: GlobalDataset
    locals: list[Dataset]
    prologue: list[ModelParams]
    proxies: list[Proxy]


def prepare(cfg: ExperimentConfig) -> Workspace:
    d = cfg.dataset
    centres = derive_seeds(cfg.seed, "centres")
    train = synth_dataset(d.classes, d.dims, d.per_class, 0.0, centres, d.separation,
                          derive_seeds(cfg.seed, "train-samples"))
    test = synth_dataset(d.classes, d.dims, d.test_per_class, 0.0, centres, d.separation,
                         derive_seeds(cfg.seed, "test-samples"))
    shifted = synth_dataset(d.classes, d.dims, d.global_per_class, d.global_shift, centres, d.separation,
                            derive_seeds(cfg.seed, "global-samples"))
    global_data = GlobalDataset(shifted.features)
    locals_ = partition_data(train, cfg.partition.spec(), cfg.n, derive_seeds(cfg.seed, "partition"))
    prologue = prologue_train(locals_, cfg.train.config(derive_seeds(cfg.seed, "prologue")))
    proxies = [compute_proxy(p, global_data) for p in prologue]
    return Workspace(train, test, global_data, locals_, prologue, proxies)


def morph_config(cfg: ExperimentConfig, **extra) -> MorphConfig:
    return MorphConfig(degree=cfg.degree, max_rounds=cfg.morph.max_rounds, seed=derive_seeds(cfg.seed, "morph"),
                       proxy_bytes=cfg.proxy_bytes, tuple_bytes=cfg.morph.tuple_bytes, **extra)


def morph(cfg: ExperimentConfig, ws: Workspace) -> MorphResult:
    result = run_morphing(ws.proxies, cfg.n, morph_config(cfg))
    if not result.complete and not cfg.morph.early_stop:
        raise IncompleteMatrixError(
            f"matrix incomplete after {result.rounds} rounds; raise morph.max_rounds or set morph.early_stop")
    log.info("morphing finished in %d rounds (fill %d/%d)", result.rounds, result.matrix.fill,
             result.matrix.capacity)
    return result


@dataclass
class Plans:
    assignment: ClusterAssignment
    hetero: CliquePlan
    homo: CliquePlan

    def topology(self, mode: str) -> Topology:
        return (self.hetero if mode == "hetero" else self.homo).topology()


def build(cfg: ExperimentConfig, matrix: SimilarityMatrix) -> Plans:
    k = cfg.selection.k or default_degree(cfg.n)
    spc = cfg.selection.samples_per_cluster or default_degree(cfg.n)
    assignment = kmeans_rows(matrix, min(k, cfg.n), derive_seeds(cfg.seed, "kmeans"))
    hetero, _ = ccc_heterogeneous(assignment, spc, derive_seeds(cfg.seed, "ccc"))
    homo, _ = homogeneous_baseline(assignment, hetero)
    return Plans(assignment, hetero, homo)


def train_topology(cfg: ExperimentConfig, ws: Workspace, plan: CliquePlan, t: Topology) -> list[RoundMetrics]:
    tcfg = cfg.train.config(derive_seeds(cfg.seed, "phase3"))
    return train_phase3(t, plan, ws.locals, ws.test, tcfg, init=ws.prologue)


def partitioned(plan: CliquePlan, p: int) -> Topology:
    t = plan.topology()
    return union(split_partitions(t, plan.cliques, p))


@dataclass
class Comparison:
    """Heterogeneous vs homogeneous curves for one topology variant."""

    label: str
    hetero: list[RoundMetrics]
    homo: list[RoundMetrics]

    @property
    def deltas(self) -> list[float]:
        return [a.mean_accuracy - b.mean_accuracy for a, b in zip(self.hetero, self.homo)]

    @property
    def final_delta(self) -> float:
        return self.deltas[-1]


@dataclass
class ExperimentReport:
    rounds_morphed: int
    participants: dict[str, int]
    scores: dict[str, float]
    comparisons: list[Comparison] = field(default_factory=list)

    def comparison(self, label: str) -> Comparison:
        return next(c for c in self.comparisons if c.label == label)

    def to_dict(self) -> dict:
        return {
            "rounds_morphed": self.rounds_morphed,
            "participants": self.participants,
            "objective_scores": self.scores,
            "comparisons": [
                {
                    "label": c.label,
                    "final_hetero": c.hetero[-1].mean_accuracy,
                    "final_homo": c.homo[-1].mean_accuracy,
                    "final_delta": c.final_delta,
                    "delta_per_round": c.deltas,
                }
                for c in self.comparisons
            ],
        }


def comparison_csv(comparisons: list[Comparison]) -> str:
    lines = ["variant,round,hetero_mean_accuracy,homo_mean_accuracy,delta"]
    for c in comparisons:
        for a, b in zip(c.hetero, c.homo):
            lines.append(f"{c.label},{a.round},{a.mean_accuracy!r},{b.mean_accuracy!r},"
                         f"{a.mean_accuracy - b.mean_accuracy!r}")
    return "\n".join(lines) + "\n"


def compare(cfg: ExperimentConfig, ws: Workspace, plans: Plans, matrix: SimilarityMatrix,
            rounds_morphed: int) -> tuple[ExperimentReport, dict[str, list[RoundMetrics]]]:
    """Train both plans (and every requested partition variant)."""
    curves: dict[str, list[RoundMetrics]] = {}
    report = ExperimentReport(
        rounds_morphed=rounds_morphed,
        participants={"hetero": len(plans.hetero.participants), "homo": len(plans.homo.participants)},
        scores={},
    )
    dense = matrix.dense(impute=True)
    for mode, plan in (("hetero", plans.hetero), ("homo", plans.homo)):
        report.scores[mode] = objective_score(plan, plan.topology(), dense)
        curves[mode] = train_topology(cfg, ws, plan, plan.topology())
    report.comparisons.append(Comparison("ring", curves["hetero"], curves["homo"]))
    for p in cfg.partitions:
        if p > min(len(plans.hetero.cliques), len(plans.homo.cliques)):
            log.warning("skipping p=%d: only %d cliques", p, len(plans.hetero.cliques))
            continue
        for mode, plan in (("hetero", plans.hetero), ("homo", plans.homo)):
            curves[f"{mode}_p{p}"] = train_topology(cfg, ws, plan, partitioned(plan, p))
        report.comparisons.append(Comparison(f"p{p}", curves[f"hetero_p{p}"], curves[f"homo_p{p}"]))
    return report, curves


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """In-memory full pipeline; no files written."""
    ws = prepare(cfg)
    result = morph(cfg, ws)
    plans = build(cfg, result.matrix)
    report, _ = compare(cfg, ws, plans, result.matrix, result.rounds)
    return report


# ---------------------------------------------------------------- staged runs


def _write(out: Path, name: str, data: str | bytes, written: list[str]):
    path = out / name
    if isinstance(data, str):
        path.write_text(data, encoding="utf-8")
    else:
        path.write_bytes(data)
    written.append(name)


def _write_morph(out: Path, result: MorphResult, written: list[str]):
    _write(out, MATRIX_FILE, result.matrix.to_bytes(), written)
    _write(out, MORPH_STATS_FILE, stats_to_json(result.stats), written)


def _write_plans(out: Path, plans: Plans, written: list[str]):
    for mode, plan in (("hetero", plans.hetero), ("homo", plans.homo)):
        _write(out, f"plan_{mode}.json", plan.to_json(), written)
        _write(out, f"topology_{mode}.json", plan.topology().to_json(), written)


def _require(out: Path, *names: str):
    missing = [n for n in names if not (out / n).exists()]
    if missing:
        raise StagedInputError(f"missing staged inputs in {out}: {', '.join(missing)}")


def _load_plans(out: Path) -> dict[str, CliquePlan]:
    _require(out, "plan_hetero.json", "plan_homo.json")
    return {mode: CliquePlan.from_json((out / f"plan_{mode}.json").read_text()) for mode in ("hetero", "homo")}


def write_manifest(out: Path, written: list[str]):
    files = {}
    for name in sorted(set(written)):
        files[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    (out / MANIFEST_FILE).write_text(json.dumps({"files": files}, indent=1, sort_keys=True) + "\n")


def run_pipeline(cfg: ExperimentConfig, out: str | Path) -> list[str]:
    """Execute ``cfg.mode`` writing artifacts under ``out``; returns file names.

    Staged modes read what the previous stage wrote: ``build`` needs
    ``matrix.bin``; ``train`` needs ``plan_*.json``. The data, partition and
    prologue models are regenerated from the config, which is deterministic.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    _write(out, "config.yaml", serialize_config(cfg), written)
    mode = cfg.mode

    if mode == "accounting":
        d = cfg.dataset
        pbytes = cfg.proxy_bytes if cfg.proxy_bytes is not None else proxy_bytes(d.classes * d.global_per_class,
                                                                                 d.classes)
        acc = accounting_run(cfg.n, cfg.degree, pbytes, cfg.morph.tuple_bytes, derive_seeds(cfg.seed, "morph"),
                             cfg.morph.max_rounds)
        _write(out, "accounting.csv", stats_to_csv(acc.per_round), written)
        _write(out, "accounting_totals.json", json.dumps(acc.totals.to_dict(), indent=1, sort_keys=True), written)
    elif mode == "morph":
        ws = prepare(cfg)
        _write_morph(out, morph(cfg, ws), written)
    elif mode == "build":
        _require(out, MATRIX_FILE)
        plans = build(cfg, SimilarityMatrix.load(out / MATRIX_FILE))
        _write_plans(out, plans, written)
    elif mode == "train":
        plans = _load_plans(out)
        ws = prepare(cfg)
        for name, plan in plans.items():
            _write(out, f"metrics_{name}.csv", metrics_to_csv(train_topology(cfg, ws, plan, plan.topology())), written)
    elif mode == "experiment":
        ws = prepare(cfg)
        result = morph(cfg, ws)
        _write_morph(out, result, written)
        plans = build(cfg, result.matrix)
        _write_plans(out, plans, written)
        report, curves = compare(cfg, ws, plans, result.matrix, result.rounds)
        for name, rows in curves.items():
            _write(out, f"metrics_{name}.csv", metrics_to_csv(rows), written)
        _write(out, "comparison.csv", comparison_csv(report.comparisons), written)
        _write(out, "report.json", json.dumps(report.to_dict(), indent=1, sort_keys=True), written)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    write_manifest(out, written)
    return written


def load_morph_stats(out: str | Path):
    return stats_from_json((Path(out) / MORPH_STATS_FILE).read_text())
