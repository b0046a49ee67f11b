"""Experiment configs, the ground-truth cache and the optimize/search runners.

Everything that affects results lives in the config; the output directory
and worker count may also come from ``TNSTRUCT_OUT`` / ``TNSTRUCT_THREADS``.
Summaries and traces contain no wall-clock data, so reruns are byte-identical;
timings go to a separate ``timing.json``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .builders import layered_ertn, randomize, reset_identity, tetramer_singlet
from .contraction import energy, to_state_vector
from .models import (GroundTruth, TwoSiteHamiltonian, build_random_xy, build_tetramer, decrease_ratio,
                     entanglement_profile, exact_ground, infidelity_per_site, relative_error)
from .network import TensorNetwork, deserialize, dof_count, serialize, validate
from .optim import Schedule, optimize
from .sdrg import build_er_sdrg
from .search import SearchConfig, run_search


class ConfigError(ValueError):
    pass


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True, allow_inf_nan=False)


class ScheduleSpec(_Spec):
    n_iter: int = Field(ge=0)
    eta_init: float = 0.1
    eta_end: float = 1e-4
    delta: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _rates(self):
        self.build()
        return self

    def build(self) -> Schedule:
        return Schedule(self.n_iter, self.eta_init, self.eta_end, self.delta)


class TetramerSpec(_Spec):
    kind: Literal["tetramer"]
    L: int = Field(4, ge=2)
    J: float = 1.0
    Jp: float = 0.0


class RandomXYSpec(_Spec):
    kind: Literal["random-xy"]
    n_sites: int = Field(ge=2)
    seeds: list[int] = Field(min_length=1)


ModelSpec = Annotated[Union[TetramerSpec, RandomXYSpec], Field(discriminator="kind")]


class StructureSpec(_Spec):
    kind: Literal["mera", "er-sdrg", "tetramer-singlet", "file"]
    path: str | None = None
    init: Literal["random", "identity", "keep"] = "random"


class SearchSpec(_Spec):
    n_replicas: int = Field(1, ge=1)
    beta_min: float | None = None  # None means beta -> infinity
    beta_max: float | None = None
    repetitions: int = Field(1, ge=0)
    initial: ScheduleSpec | None = None
    local: ScheduleSpec
    global_: ScheduleSpec = Field(alias="global")
    delta_structure: float | None = None
    delta_replica: float | None = None
    e_ref: Literal["oracle", "none"] = "oracle"
    local_backend: Literal["adam", "ev"] = "adam"
    rerandomize_eval: ScheduleSpec | None = None

    @model_validator(mode="after")
    def _betas(self):
        lo, hi = self.beta_min, self.beta_max
        if (lo is None) != (hi is None) or (lo is not None and not 0 < lo <= hi):
            raise ValueError("give both beta_min and beta_max with 0 < beta_min <= beta_max, or neither")
        return self


class MetricsSpec(_Spec):
    delta: bool = True
    infidelity: bool = True
    entanglement: bool = False


class ExperimentConfig(_Spec):
    model: ModelSpec
    structure: StructureSpec
    schedule: ScheduleSpec | None = None
    search: SearchSpec | None = None
    metrics: MetricsSpec = MetricsSpec()
    seed: int = 0
    oracle_cache: str | None = None

    @model_validator(mode="after")
    def _consistent(self):
        s, m = self.structure.kind, self.model.kind
        if s == "er-sdrg" and m != "random-xy":
            raise ValueError("er-sdrg structures need a random-xy model")
        if s == "tetramer-singlet" and m != "tetramer":
            raise ValueError("tetramer-singlet structures need a tetramer model")
        if s == "file" and not self.structure.path:
            raise ValueError("structure kind 'file' needs a path")
        if s == "mera" and m == "random-xy" and self.model.n_sites < 2:
            raise ValueError("mera needs at least two sites")
        return self

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def canonical(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True)


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    import yaml
    from pydantic import ValidationError
    try:
        raw = yaml.safe_load(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        if seed is not None:
            raw["seed"] = seed
        return ExperimentConfig.model_validate(raw)
    except (OSError, yaml.YAMLError, ValidationError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ------------------------------------------------------------- instances
class Instance:
    def __init__(self, tag: str, H: TwoSiteHamiltonian, disorder=None, disorder_seed: int | None = None):
        self.tag, self.H, self.disorder, self.disorder_seed = tag, H, disorder, disorder_seed


def instances(cfg: ExperimentConfig) -> list[Instance]:
    m = cfg.model
    if m.kind == "tetramer":
        return [Instance(f"tetramer-L{m.L}-J{m.J!r}-Jp{m.Jp!r}", build_tetramer(m.L, m.J, m.Jp))]
    out = []
    for s in m.seeds:
        H, inst = build_random_xy(m.n_sites, s)
        out.append(Instance(f"xy-N{m.n_sites}-s{s}", H, inst, s))
    return out


def instance_rng(cfg: ExperimentConfig, inst: Instance) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 0 if inst.disorder_seed is None else inst.disorder_seed])


def build_structure(cfg: ExperimentConfig, inst: Instance, rng: np.random.Generator) -> TensorNetwork:
    s, n = cfg.structure, inst.H.n_sites
    if s.kind == "mera":
        net = layered_ertn(n)
    elif s.kind == "tetramer-singlet":
        net = tetramer_singlet(n // 4)
    elif s.kind == "er-sdrg":
        net, _ = build_er_sdrg(inst.disorder)
    else:
        try:
            net = deserialize(Path(s.path).read_bytes())
        except OSError as exc:
            raise ConfigError(f"cannot read network {s.path}: {exc}") from exc
        if net.n_sites != n:
            raise ConfigError(f"network has {net.n_sites} sites, model has {n}")
    if s.init == "random":
        return randomize(net, rng)
    if s.init == "identity":
        return reset_identity(net)
    return net


# ----------------------------------------------------------------- oracle
def oracle(H: TwoSiteHamiltonian, cache_dir: str | Path | None) -> tuple[GroundTruth, bool]:
    """Ground truth for ``H``, read from or written to a content-addressed cache."""
    if cache_dir is None:
        return exact_ground(H), False
    cache = Path(cache_dir)
    path = cache / f"{H.content_hash()}.npz"
    if path.exists():
        with np.load(path) as f:
            gap = float(f["gap"])
            return GroundTruth(float(f["energy"]), f["state"], float(f["residual"]),
                               None if math.isnan(gap) else gap, str(f["method"])), True
    gt = exact_ground(H)
    cache.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, energy=gt.energy, state=gt.state, residual=gt.residual,
             gap=math.nan if gt.gap is None else gt.gap, method=gt.method)
    _atomic_write(path, buf.getvalue())
    return gt, False


def _cache_dir(cfg: ExperimentConfig, out: Path) -> Path:
    return Path(cfg.oracle_cache) if cfg.oracle_cache else out / "oracle"


# ---------------------------------------------------------------- writers
def _atomic_write(path: Path, data: bytes | str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data.encode() if isinstance(data, str) else data)
    os.replace(tmp, path)


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


def format_rows(header: list[str], rows, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "jsonl":
        return "".join(json.dumps(dict(zip(header, r)), sort_keys=True) + "\n" for r in rows)
    raise ConfigError(f"unknown format {fmt!r}")


def write_rows(path: Path, header, rows, fmt: str):
    _atomic_write(path.with_suffix("." + fmt), format_rows(header, rows, fmt))


def write_jsonl(path: Path, records):
    _atomic_write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


# ---------------------------------------------------------------- metrics
def network_metrics(net: TensorNetwork, H: TwoSiteHamiltonian, gt: GroundTruth | None, spec: MetricsSpec) -> dict:
    E = energy(net, H)
    out = {"energy": E, "dof": dof_count(net), "kinds": net.kind_counts()}
    if gt is not None and spec.delta:
        out["delta"] = abs(relative_error(E, gt.energy))
    need_psi = (spec.infidelity or spec.entanglement) and net.n_sites <= 20
    psi = to_state_vector(net) if need_psi else None
    if psi is not None and gt is not None and gt.state is not None and spec.infidelity:
        out["infidelity"] = infidelity_per_site(psi, gt.state, net.n_sites)
    if psi is not None and spec.entanglement:
        out["entropy"] = entanglement_profile(psi, net.n_sites)
    return out


def compare_metrics(before: dict, after: dict, gt: GroundTruth | None, H: TwoSiteHamiltonian, spec: MetricsSpec) -> dict:
    s = {"E_gs": None if gt is None else gt.energy, "before": before, "after": after}
    if "delta" in before and "delta" in after and before["delta"] > 0:
        s["R"] = decrease_ratio(before["delta"], after["delta"])
    if spec.entanglement and gt is not None and gt.state is not None:
        s["entropy_exact"] = entanglement_profile(gt.state, H.n_sites)
    return s


def profile_rows(summary: dict):
    if "entropy" not in summary["after"]:
        return []
    exact = summary.get("entropy_exact") or [math.nan] * len(summary["after"]["entropy"])
    return [(L, b, a, e) for L, (b, a, e) in
            enumerate(zip(summary["before"]["entropy"], summary["after"]["entropy"], exact), start=1)]


PROFILE_HEADER = ["L", "S_before", "S_network", "S_exact"]
TRACE_HEADER = ["repetition", "replica", "stage", "iteration", "energy", "eta", "stop", "delta"]


def _signed(E, gt):
    return None if gt is None else relative_error(E, gt.energy)


def _aggregate(summaries: list[dict]) -> dict:
    agg = {"instances": len(summaries)}
    for key in ("R",):
        vals = [s[key] for s in summaries if key in s]
        if vals:
            agg[f"mean_{key}"] = float(np.mean(vals))
    for side in ("before", "after"):
        for key in ("delta", "infidelity"):
            vals = [s[side][key] for s in summaries if key in s[side]]
            if vals:
                agg[f"mean_{key}_{side}"] = float(np.mean(vals))
    return agg


# ---------------------------------------------------------------- runners
def _finish(out: Path, cfg: ExperimentConfig, command: str, summaries: list[dict], timing: dict) -> dict:
    result = {"command": command, "config_digest": cfg.digest(), "seed": cfg.seed,
              "instances": summaries, "aggregate": _aggregate(summaries)}
    _atomic_write(out / "config.json", cfg.canonical() + "\n")
    _atomic_write(out / "summary.json", dumps(result))
    _atomic_write(out / "timing.json", dumps(timing))
    return result


def _instance_files(inst_dir: Path, before: TensorNetwork, after: TensorNetwork, summary: dict, fmt: str):
    _atomic_write(inst_dir / "before.tn.json", serialize(before))
    _atomic_write(inst_dir / "final.tn.json", serialize(after))
    _atomic_write(inst_dir / "summary.json", dumps(summary))
    rows = profile_rows(summary)
    if rows:
        write_rows(inst_dir / "profile", PROFILE_HEADER, rows, fmt)


def run_optimize(cfg: ExperimentConfig, out: Path, fmt: str = "csv") -> dict:
    """Fixed-structure optimization from the configured initial tensors."""
    if cfg.schedule is None:
        raise ConfigError("optimize needs a 'schedule' section")
    out = Path(out)
    summaries, timing = [], {}
    for inst in instances(cfg):
        t0 = time.perf_counter()
        gt, _ = oracle(inst.H, _cache_dir(cfg, out))
        net0 = build_structure(cfg, inst, instance_rng(cfg, inst))
        net, trace = optimize(net0, inst.H, cfg.schedule.build())
        rows = [(0, 0, "optimize", l, E, eta, stop, _signed(E, gt)) for l, E, eta, stop in trace.rows()]
        rows.append((0, 0, "optimize", len(trace.energies) + 1, trace.best_energy, 0.0, "retained",
                     _signed(trace.best_energy, gt)))
        inst_dir = out / inst.tag
        write_rows(inst_dir / "trace", TRACE_HEADER, rows, fmt)
        before = network_metrics(net0, inst.H, gt, cfg.metrics)
        after = network_metrics(net, inst.H, gt, cfg.metrics)
        summary = dict(compare_metrics(before, after, gt, inst.H, cfg.metrics), instance=inst.tag,
                       disorder_seed=inst.disorder_seed, iterations=len(trace.energies),
                       stop_reason=trace.stop_reason)
        _instance_files(inst_dir, net0, net, summary, fmt)
        summaries.append(summary)
        timing[inst.tag] = time.perf_counter() - t0
    return _finish(out, cfg, "optimize", summaries, timing)


def search_config(cfg: ExperimentConfig, inst: Instance, gt: GroundTruth | None) -> SearchConfig:
    s = cfg.search
    inf = math.inf
    return SearchConfig(
        n_replicas=s.n_replicas,
        beta_min=inf if s.beta_min is None else s.beta_min,
        beta_max=inf if s.beta_max is None else s.beta_max,
        repetitions=s.repetitions,
        local=s.local.build(), global_=s.global_.build(),
        initial=None if s.initial is None else s.initial.build(),
        delta_structure=inf if s.delta_structure is None else s.delta_structure,
        delta_replica=inf if s.delta_replica is None else s.delta_replica,
        e_ref=gt.energy if (s.e_ref == "oracle" and gt is not None) else None,
        seed=(cfg.seed, 0 if inst.disorder_seed is None else inst.disorder_seed),
        local_backend=s.local_backend,
    )


def run_search_experiment(cfg: ExperimentConfig, out: Path, fmt: str = "csv", threads: int = 1,
                          progress=None) -> dict:
    """Structural search per instance; "before" is the network after the initial optimization."""
    if cfg.search is None:
        raise ConfigError("search needs a 'search' section")
    out = Path(out)
    summaries, timing = [], {}
    for inst in instances(cfg):
        t0 = time.perf_counter()
        gt, _ = oracle(inst.H, _cache_dir(cfg, out))
        scfg = search_config(cfg, inst, gt)
        rng = instance_rng(cfg, inst)
        nets = [build_structure(cfg, inst, rng) for _ in range(scfg.n_replicas)]
        res = run_search(inst.H, nets, scfg, threads=threads,
                         progress=None if progress is None else (lambda k, reps: progress(inst.tag, k, reps)))
        net0 = res.initial_nets[int(np.argmin(res.initial_energies))]
        inst_dir = out / inst.tag
        write_rows(inst_dir / "trace", TRACE_HEADER, [r + (_signed(r[4], gt),) for r in res.traces], fmt)
        write_jsonl(inst_dir / "moves.jsonl", res.moves)
        write_jsonl(inst_dir / "exchanges.jsonl", res.exchanges)
        write_jsonl(inst_dir / "prunings.jsonl", res.prunings)
        before = network_metrics(net0, inst.H, gt, cfg.metrics)
        after = network_metrics(res.best_net, inst.H, gt, cfg.metrics)
        summary = dict(compare_metrics(before, after, gt, inst.H, cfg.metrics), instance=inst.tag,
                       disorder_seed=inst.disorder_seed, moves=len(res.moves),
                       prunings=len(res.prunings),
                       argmin_adopted=all(m["adopted"] == int(np.argmin(m["energies"])) for m in res.moves))
        if cfg.search.rerandomize_eval is not None:
            trial = randomize(res.best_net, rng)
            _, tr = optimize(trial, inst.H, cfg.search.rerandomize_eval.build())
            summary["rerandomized_delta"] = None if gt is None else abs(relative_error(tr.best_energy, gt.energy))
        _instance_files(inst_dir, net0, res.best_net, summary, fmt)
        summaries.append(summary)
        timing[inst.tag] = time.perf_counter() - t0
    return _finish(out, cfg, "search", summaries, timing)


# ----------------------------------------------------------------- verify
def verify_run(out: Path, tol: float = 1e-10) -> list[str]:
    """Recompute every per-instance metric from the persisted networks; returns mismatch messages."""
    out = Path(out)
    cfg = ExperimentConfig.model_validate_json((out / "config.json").read_text())
    problems = []
    for inst in instances(cfg):
        inst_dir = out / inst.tag
        summary = json.loads((inst_dir / "summary.json").read_text())
        gt, _ = oracle(inst.H, _cache_dir(cfg, out))
        for side, name in (("before", "before.tn.json"), ("after", "final.tn.json")):
            net = deserialize((inst_dir / name).read_bytes())
            rep = validate(net)
            if not rep.ok:
                problems.append(f"{inst.tag}/{name}: isometry deviation {rep.max_deviation:.2e}")
            got = network_metrics(net, inst.H, gt, cfg.metrics)
            for key, want in summary[side].items():
                problems += _compare(f"{inst.tag}/{side}/{key}", want, got.get(key), tol)
    return problems


def _compare(label, want, got, tol) -> list[str]:
    if isinstance(want, dict) or isinstance(want, int) and not isinstance(want, bool):
        return [] if want == got else [f"{label}: stored {want}, recomputed {got}"]
    a = np.asarray(want, dtype=float)
    b = np.asarray(got, dtype=float)
    if a.shape != b.shape or not np.all(np.abs(a - b) <= tol):
        return [f"{label}: stored {want}, recomputed {got}"]
    return []
