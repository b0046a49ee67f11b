"""Command-line driver.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 size cap exceeded.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import experiment as ex
from .models import CapExceeded, ConvergenceError
from .moves import classify_pair, enumerate_candidates, refresh_exclusions
from .network import SerializationError, StructureError, deserialize, serialize
from .optim import NumericalError
from .sdrg import build_er_sdrg

EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAP = 2, 3, 4

log = logging.getLogger("tnstruct")


class _Harness(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except CapExceeded as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_CAP)
        except (ex.ConfigError, SerializationError, StructureError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_CONFIG)
        except (NumericalError, ConvergenceError, ArithmeticError, np.linalg.LinAlgError) as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_NUMERIC)


def _common(f):
    f = click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), default="csv",
                     show_default=True, help="Trace file format.")(f)
    f = click.option("--threads", type=int, default=lambda: int(os.environ.get("TNSTRUCT_THREADS", "1")),
                     help="Worker processes for replicas [env TNSTRUCT_THREADS].")(f)
    f = click.option("--seed", type=int, default=None, help="Override the config's master seed.")(f)
    f = click.option("--out", type=click.Path(file_okay=False, path_type=Path),
                     default=lambda: os.environ.get("TNSTRUCT_OUT", "runs"),
                     help="Output directory [env TNSTRUCT_OUT].")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
                     required=True, help="YAML or JSON experiment config.")(f)
    return f


def _load(config_path, seed):
    if not config_path.exists():
        raise ex.ConfigError(f"config {config_path} not found")
    return ex.load_config(config_path, seed)


def _emit(obj):
    click.echo(json.dumps(obj, sort_keys=True))


@click.group(cls=_Harness)
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose):
    """Structural search for isometric tensor networks."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("oracle")
@_common
def cmd_oracle(config_path, out, seed, threads, fmt):
    """Exact ground energies, cached by Hamiltonian content hash."""
    cfg = _load(config_path, seed)
    rows = []
    for inst in ex.instances(cfg):
        gt, cached = ex.oracle(inst.H, ex._cache_dir(cfg, out))
        rows.append((inst.tag, inst.H.content_hash(), gt.energy, gt.residual, gt.method))
        log.info("%s: E_gs=%r (%s)", inst.tag, gt.energy, "cached" if cached else "computed")
    ex.write_rows(out / "oracle", ["instance", "hash", "energy", "residual", "method"], rows, fmt)
    for r in rows:
        _emit({"instance": r[0], "hash": r[1], "energy": r[2], "residual": r[3]})


@main.command("optimize")
@_common
def cmd_optimize(config_path, out, seed, threads, fmt):
    """Optimize every tensor of a fixed structure."""
    cfg = _load(config_path, seed)
    res = ex.run_optimize(cfg, out, fmt)
    _emit(res["aggregate"])


@main.command("search")
@_common
def cmd_search(config_path, out, seed, threads, fmt):
    """Run the structural search."""
    cfg = _load(config_path, seed)

    def progress(tag, k, reps):
        log.info("%s repetition %d: energies %s", tag, k, [r.energy for r in reps])

    res = ex.run_search_experiment(cfg, out, fmt, threads=threads, progress=progress)
    _emit(res["aggregate"])


@main.command("metrics")
@_common
@click.option("--network", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--instance", "disorder_seed", type=int, default=None, help="Disorder seed (random-xy models).")
def cmd_metrics(config_path, out, seed, threads, fmt, network, disorder_seed):
    """Delta, per-site infidelity and entanglement profile of a stored network."""
    cfg = _load(config_path, seed)
    insts = ex.instances(cfg)
    if disorder_seed is not None:
        insts = [i for i in insts if i.disorder_seed == disorder_seed]
        if not insts:
            raise ex.ConfigError(f"disorder seed {disorder_seed} is not in the config")
    inst = insts[0]
    net = deserialize(network.read_bytes())
    gt, _ = ex.oracle(inst.H, ex._cache_dir(cfg, out))
    spec = cfg.metrics.model_copy(update={"entanglement": True})
    m = ex.network_metrics(net, inst.H, gt, spec)
    exact = ex.entanglement_profile(gt.state, inst.H.n_sites)
    rows = [(L, s, e) for L, (s, e) in enumerate(zip(m["entropy"], exact), start=1)]
    ex.write_rows(out / "profile", ["L", "S_network", "S_exact"], rows, fmt)
    _emit({k: v for k, v in m.items() if k != "entropy"})


@main.command("sdrg-init")
@_common
def cmd_sdrg_init(config_path, out, seed, threads, fmt):
    """Write ER-SDRG networks and decimation histories for each disorder seed."""
    cfg = _load(config_path, seed)
    if cfg.model.kind != "random-xy":
        raise ex.ConfigError("sdrg-init needs a random-xy model")
    for inst in ex.instances(cfg):
        rng = ex.instance_rng(cfg, inst) if cfg.structure.init == "random" else None
        net, trace = build_er_sdrg(inst.disorder, rng)
        ex._atomic_write(out / f"{inst.tag}.tn.json", serialize(net))
        ex.write_jsonl(out / f"{inst.tag}.events.jsonl", trace.records())
        _emit({"instance": inst.tag, "kinds": net.kind_counts(), "events": len(trace.events)})


@main.command("enumerate-moves")
@click.option("--network", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
def cmd_enumerate_moves(network):
    """List every selectable edge with its pair type and candidate rewirings."""
    net = deserialize(network.read_bytes())
    flags = refresh_exclusions(net, {e: 0 for e in net.edges})
    for p in sorted(net.edges):
        if flags[p]:
            continue
        sig = classify_pair(net, p, flags)
        cands = enumerate_candidates(sig)
        _emit({"edge": p, "pair_type": sig.pair_type, "signature": list(sig.shape),
               "candidates": [c.describe() for c in cands]})


@main.command("verify")
@click.option("--out", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--tol", type=float, default=1e-10, show_default=True)
def cmd_verify(out, tol):
    """Recompute every summary number from the persisted networks."""
    problems = ex.verify_run(out, tol)
    for msg in problems:
        click.echo(msg, err=True)
    _emit({"ok": not problems, "mismatches": len(problems)})
    if problems:
        sys.exit(EXIT_NUMERIC)


if __name__ == "__main__":
    main()
