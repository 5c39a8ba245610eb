"""Command line: ``nelson-gibbs <subcommand> --config run.toml [--seed N] [--out DIR] [--threads N]``.

Subcommands write into ``--out`` (default from the config):

check       conditions and constants            -> check.json
tabulate-w  pair-potential table                -> w_table.csv
sample      path archive and chain diagnostics  -> paths.npz, diagnostics.json
estimate    observable reports and CSV tables   -> reports/<name>.json, reports/<name>_<table>.csv
verify      bound ledger; exit status 0 iff every bound holds -> ledger.json
oracle      closed-form predictions             -> oracle.json
"""

from __future__ import annotations

import functools
import io
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dumps_config, parse_config
from .io import ArchiveError, jsonable, load_samples, read_json, save_samples, write_json
from .model import check_conditions, compute_constants
from .observables import FingerprintMismatch, ObservableReport, verify_bounds
from .oracles import OutOfFamily, analytic_w, pinned_predictions, zero_coupling_predictions
from .pair_potential import write_table_csv
from .pipeline import default_k_edges, estimate_all, make_probe, prepare, sample
from .sampler import diagnostics
from .diagnostics import TooFewSamples


def _common(f):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="TOML run configuration (defaults apply when omitted).")
    @click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Global seed override.")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory override.")
    @click.option("--threads", type=click.IntRange(1), default=None, help="Worker threads for the chains.")
    @functools.wraps(f)
    def wrapper(config_path, seed, out, threads, **kw):
        try:
            cfg = parse_config(config_path) if config_path else _default_config()
            cfg = cfg.with_overrides(seed=seed, threads=threads, out=out)
        except ConfigError as exc:
            raise click.ClickException(str(exc)) from exc
        cfg.out.mkdir(parents=True, exist_ok=True)
        try:
            return f(cfg, **kw)
        except (ArchiveError, FingerprintMismatch, OutOfFamily, TooFewSamples) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _default_config() -> RunConfig:
    from .config import loads_config

    return loads_config("")


def _stamp(cfg: RunConfig, payload: dict) -> dict:
    return {"config_fingerprint": cfg.fingerprint(), "tool_version": __version__, **payload}


@click.group()
@click.version_option(__version__, prog_name="nelson-gibbs")
def main():
    """Path-integral Monte Carlo for the Nelson model ground state."""


@main.command()
@_common
def check(cfg: RunConfig):
    """Constants and applicability conditions of the configured model."""
    report = check_conditions(cfg.model, cfg.tolerances["quad_tol"])
    payload = _stamp(cfg, report.to_dict())
    write_json(cfg.out / "check.json", payload)
    click.echo(json.dumps(jsonable(payload), sort_keys=True, indent=2))


@main.command("tabulate-w")
@_common
def tabulate_w(cfg: RunConfig):
    """Build and certify the pair-potential table."""
    prep = prepare(cfg)
    dest = cfg.out / "w_table.csv"
    buf = io.StringIO()
    write_table_csv(prep.table, buf)
    with open(dest, "w", newline="\n") as fh:
        fh.write(f"# config_fingerprint={cfg.fingerprint()}\n# tool_version={__version__}\n")
        fh.write(buf.getvalue())
    click.echo(f"wrote {dest} ({prep.table.values.shape[1]} x {prep.table.values.shape[0]} nodes, "
               f"interpolation error {prep.table.interp_error:.2e})")


def _run_sampler(cfg: RunConfig, prep=None):
    prep = prep if prep is not None else prepare(cfg)
    samples = sample(prep)
    save_samples(cfg.out / "paths.npz", samples, {"tool_version": __version__})
    try:
        diag = diagnostics(samples, min_samples=2)
    except TooFewSamples:
        diag = {"n_samples": samples.n}
    write_json(cfg.out / "diagnostics.json", _stamp(cfg, diag))
    (cfg.out / "config.toml").write_text(dumps_config(cfg))
    return prep, samples


@main.command("sample")
@_common
def sample_cmd(cfg: RunConfig):
    """Run the chains and write the path archive."""
    _, samples = _run_sampler(cfg)
    click.echo(f"wrote {cfg.out / 'paths.npz'} ({samples.n} paths)")


def _write_reports(cfg: RunConfig, reports) -> list:
    rdir = cfg.out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    for old in rdir.glob("*"):
        old.unlink()
    written = []
    for r in reports:
        d = r.to_dict()
        d["config_fingerprint"] = cfg.fingerprint()
        d["tool_version"] = __version__
        write_json(rdir / f"{r.name}.json", d)
        written.append(r.name)
        for tname in r.tables:
            with open(rdir / f"{r.name}_{tname}.csv", "w", newline="\n") as fh:
                fh.write(f"# config_fingerprint={cfg.fingerprint()}\n")
                fh.write(r.table_csv(tname))
    return written


def _estimate(cfg: RunConfig, archive: str | None):
    prep = prepare(cfg)
    path = Path(archive) if archive else cfg.out / "paths.npz"
    if path.exists():
        samples = load_samples(path, cfg.fingerprint())
    elif archive:
        raise ArchiveError(f"path archive not found: {path}")
    else:
        prep, samples = _run_sampler(cfg, prep)
    reports = estimate_all(prep, samples)
    return _write_reports(cfg, reports)


@main.command()
@click.option("--archive", type=click.Path(dir_okay=False), default=None,
              help="Path archive (default OUT/paths.npz; sampled when absent).")
@_common
def estimate(cfg: RunConfig, archive):
    """Observable reports from a path archive."""
    names = _estimate(cfg, archive)
    click.echo(f"wrote {len(names)} reports to {cfg.out / 'reports'}: {', '.join(names)}")


@main.command()
@click.option("--reports", "reports_dir", type=click.Path(file_okay=False), default=None,
              help="Directory of report JSONs (default OUT/reports; estimated when absent).")
@_common
def verify(cfg: RunConfig, reports_dir):
    """Re-check every attached bound; exit status 1 when any is violated."""
    rdir = Path(reports_dir) if reports_dir else cfg.out / "reports"
    files = sorted(rdir.glob("*.json")) if rdir.exists() else []
    if not files:
        if reports_dir:
            raise click.ClickException(f"no report JSONs in {rdir}")
        _estimate(cfg, None)
        files = sorted(rdir.glob("*.json"))
    reports = []
    for f in files:
        data = read_json(f)
        if data.get("config_fingerprint", cfg.fingerprint()) != cfg.fingerprint():
            raise FingerprintMismatch(f"{f.name} was produced by config {data['config_fingerprint']}, "
                                      f"not {cfg.fingerprint()}")
        reports.append(ObservableReport.from_dict(data))
    ledger = _stamp(cfg, verify_bounds(reports, cfg.tolerances["z_threshold"]))
    write_json(cfg.out / "ledger.json", ledger)
    for c in ledger["checks"]:
        if not c["passed"]:
            click.echo(f"FAIL {c['report']}: {c['name']} (observed {c['observed']}, limit {c['limit']})")
    click.echo(f"{ledger['n_checks'] - ledger['n_failed']}/{ledger['n_checks']} bounds hold")
    sys.exit(0 if ledger["passed"] else 1)


@main.command()
@_common
def oracle(cfg: RunConfig):
    """Closed-form predictions for the degenerate limits of the configured model."""
    model = cfg.model
    ghat = make_probe(cfg)
    probe_k = cfg.observables.get("probe_k")
    if probe_k is None:
        probe_k = 0.5 * (default_k_edges(cfg)[:-1] + default_k_edges(cfg)[1:])
    preds = {}
    constants = compute_constants(model, cfg.tolerances["quad_tol"])
    if model.form_factor.amplitude == 0.0:
        preds["zero_coupling"] = [p.to_dict() for p in
                                  zero_coupling_predictions(model, cfg.observables["n_max"], probe_k, ghat)]
    if not constants.ir_divergent:
        preds["pinned"] = [p.to_dict() for p in
                           pinned_predictions(model, cfg.observables["n_max"], probe_k, ghat, constants)]
    try:
        r = np.array([0.0, 0.5, 1.0])
        preds["closed_form_w"] = {"r": r, "tau": 1.0, "W": analytic_w(model, r, 1.0)}
    except OutOfFamily:
        pass
    payload = _stamp(cfg, {"predictions": preds, "constants": constants.to_dict()})
    write_json(cfg.out / "oracle.json", payload)
    click.echo(json.dumps(jsonable(payload), sort_keys=True, indent=2))


if __name__ == "__main__":  # pragma: no cover
    main()
