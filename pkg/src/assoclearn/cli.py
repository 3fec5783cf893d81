"""Command-line surface: fit, predict, interpret, simulate, study.

Exit codes: 0 on success, 1 for analysis-level warnings (non-convergence,
hierarchy violations, per-cell study failures), 2 for input errors.
"""
from __future__ import annotations

import datetime
import json
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .basis import build_basis
from .interpret import SupportPattern, build_report
from .layout import build_layout, joint_codes
from .likelihood import Dataset, Family, predict_prob_matrix
from .model_io import (CsvFormatError, ModelFile, dumps_canonical, read_x_csv,
                       read_y_csv, write_csv_matrix)
from .penalty import GroupStructure, PenaltyMode
from .simulate import gen_design, gen_scheme_beta, sample_responses
from .solver import FitResult, PathSpec, SolverConfig, fit, fit_path
from .study import run_study, study_config_from_toml


@click.group()
def main():
    """Penalized association-structure learning for multivariate categorical responses."""


def _fail(msg: str):
    raise click.UsageError(msg)


def _parse_J(spec: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in spec.split(","))
    except ValueError:
        _fail(f"cannot parse --J {spec!r}: expected comma-separated integers")


def _parse_path_spec(spec: str) -> PathSpec:
    kwargs = {}
    try:
        for tok in spec.split(","):
            key, val = tok.split("=")
            if key.strip() == "n":
                kwargs["n_lambdas"] = int(val)
            elif key.strip() == "ratio":
                kwargs["ratio"] = float(val)
            else:
                _fail(f"unknown path key {key!r} (use n=..., ratio=...)")
    except ValueError:
        _fail(f"cannot parse --path {spec!r}: expected n=50,ratio=1e-4")
    return PathSpec(**kwargs)


def _parse_grouping(spec: str, p: int) -> tuple[int, ...]:
    if spec == "global":
        if p < 2:
            _fail("global grouping needs at least 2 predictors (intercept + rest)")
        return (1, p - 1)
    if spec == "local":
        return (1,) * p
    if spec.startswith("blocks="):
        try:
            sizes = tuple(int(tok) for tok in spec[len("blocks="):].split(","))
        except ValueError:
            _fail(f"cannot parse {spec!r}: expected blocks=<comma-separated sizes>")
        if sum(sizes) != p or any(s <= 0 for s in sizes):
            _fail(f"block sizes {sizes} must be positive and sum to p={p}")
        return sizes
    _fail(f"unknown grouping {spec!r} (use global, local, or blocks=<sizes>)")


def _solver_config_from_toml(path) -> dict:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    solver = doc.get("solver", doc)
    allowed = {"tol", "max_iter", "eta", "acceleration", "restart_on_increase",
               "backtracking", "prox_tol", "prox_max_passes"}
    unknown = set(solver) - allowed
    if unknown:
        _fail(f"unknown solver config keys: {sorted(unknown)}")
    return dict(solver)


@main.command("fit")
@click.option("--x", "x_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--y", "y_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--J", "j_spec", required=True, help="category counts, e.g. 2,2,2,3")
@click.option("--d", type=int, default=None, help="max effect order (default: q)")
@click.option("--family", type=click.Choice(["mult", "pois"]), default="mult")
@click.option("--penalty", type=click.Choice(["group", "overlap"]), default="group")
@click.option("--grouping", default="local", help="global | local | blocks=<sizes>")
@click.option("--lambda", "lam", type=float, default=None, help="single penalty level")
@click.option("--path", "path_spec", default=None, help="grid spec, e.g. n=50,ratio=1e-4")
@click.option("--valid-x", "vx_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--valid-y", "vy_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--weights", "weights_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--deterministic", is_flag=True, default=False)
@click.pass_context
def cli_fit(ctx, x_path, y_path, j_spec, d, family, penalty, grouping, lam, path_spec,
            vx_path, vy_path, weights_path, config_path, out_path, seed, deterministic):
    """Fit a penalized model and write it as JSON."""
    J = _parse_J(j_spec)
    try:
        layout = build_layout(J, len(J) if d is None else d)
    except ValueError as exc:
        _fail(str(exc))
    try:
        X = read_x_csv(x_path)
        Y = read_y_csv(y_path, layout)
        data = Dataset(X, Y, layout)
    except (CsvFormatError, ValueError) as exc:
        _fail(str(exc))
    fam = Family(family)
    if fam is Family.MULTINOMIAL and np.any(data.trials < 1):
        bad = np.flatnonzero(data.trials < 1)[:5] + 2  # csv line numbers
        _fail(f"multinomial fitting needs >= 1 trial per row; "
              f"zero-count rows near lines {bad.tolist()} of {y_path}")
    basis = build_basis(layout)
    partition = _parse_grouping(grouping, data.p)
    overrides = None
    if weights_path:
        overrides = json.loads(Path(weights_path).read_text())
        if isinstance(overrides, dict):
            overrides = [overrides]
    try:
        gs = GroupStructure.build(layout, partition, PenaltyMode(penalty), overrides=overrides)
    except (KeyError, ValueError) as exc:
        _fail(f"bad weights override: {exc}")

    kwargs = _solver_config_from_toml(config_path) if config_path else {}
    if lam is None and path_spec is None:
        path_spec = "n=50,ratio=1e-4"
    if lam is not None and path_spec is not None:
        _fail("give either --lambda or --path, not both")
    valid = None
    if (vx_path is None) != (vy_path is None):
        _fail("--valid-x and --valid-y must be given together")
    if vx_path:
        try:
            valid = Dataset(read_x_csv(vx_path), read_y_csv(vy_path, layout), layout)
        except (CsvFormatError, ValueError) as exc:
            _fail(str(exc))

    selected: FitResult
    if lam is not None:
        config = SolverConfig(family=fam, lam=lam, deterministic=deterministic,
                              seed=seed, **kwargs)
        selected = fit(data, basis, gs, config)
    else:
        if valid is None:
            _fail("--path fitting needs --valid-x/--valid-y to select a penalty level")
        config = SolverConfig(family=fam, path=_parse_path_spec(path_spec),
                              deterministic=deterministic, seed=seed, **kwargs)
        selected = fit_path(data, basis, gs, config, valid_data=valid).best

    model = ModelFile(
        layout=layout, family=fam, penalty_mode=PenaltyMode(penalty),
        partition=partition, weights=gs.weights, lam=selected.lam, beta=selected.beta,
        support=selected.support,
        metadata={
            "n": data.n, "p": data.p, "seed": seed,
            "timestamp": datetime.datetime.now().isoformat(timespec="seconds"),
            "objective": selected.objective, "iterations": selected.iterations,
            "converged": selected.converged, "diverged": selected.diverged,
            "validation_loss": selected.validation_loss,
            "objective_trace": [float(v) for v in selected.objective_trace],
        })
    model.save(out_path)

    click.echo(f"wrote {out_path}")
    click.echo(f"lambda: {selected.lam:.6g}  objective: {selected.objective:.8g}  "
               f"iterations: {selected.iterations}  converged: {selected.converged}")
    effects = ", ".join("{0}" if not k else "{" + ",".join(str(v + 1) for v in k) + "}"
                        for k in selected.effects_present) or "(empty)"
    click.echo(f"effects present: {effects}")
    if selected.diverged:
        click.echo("warning: Poisson fit diverged; result is the last finite iterate", err=True)
        ctx.exit(1)
    if not selected.converged:
        click.echo("warning: solver did not converge within max_iter", err=True)
        ctx.exit(1)


@main.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--x", "x_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cli_predict(model_path, x_path, out_path):
    """Write per-row category probabilities and the modal joint category."""
    try:
        model = ModelFile.load(model_path)
        X = read_x_csv(x_path)
    except (CsvFormatError, ValueError) as exc:
        _fail(str(exc))
    if X.shape[1] != model.beta.p:
        _fail(f"model expects p={model.beta.p} predictors, {x_path} has {X.shape[1]}")
    basis = build_basis(model.layout)
    P = predict_prob_matrix(model.beta, basis, X)
    labels = ["p(" + "|".join(str(c + 1) for c in joint_codes(i, model.layout)) + ")"
              for i in range(model.layout.card)]
    argmax = P.argmax(axis=1)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        import csv as _csv
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(labels + ["argmax"])
        for i, row in enumerate(P):
            tup = "|".join(str(c + 1) for c in joint_codes(int(argmax[i]), model.layout))
            writer.writerow([repr(float(v)) for v in row] + [tup])
    click.echo(f"wrote {out_path}")


@main.command("interpret")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json-out", "json_path", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def cli_interpret(ctx, model_path, json_path):
    """Render the independence structure implied by a model's support."""
    try:
        model = ModelFile.load(model_path)
    except ValueError as exc:
        _fail(str(exc))
    effects = frozenset(k for k, _ in model.support)
    support = SupportPattern(q=model.layout.q, effects_present=effects)
    report = build_report(support)
    click.echo(report.to_text())
    if json_path:
        Path(json_path).write_bytes(dumps_canonical(report.to_json_dict()))
        click.echo(f"wrote {json_path}")
    if not report.hierarchy_ok:
        ctx.exit(1)


@main.command("simulate")
@click.option("--scheme", type=int, required=True)
@click.option("--n", type=int, required=True)
@click.option("--p", type=int, default=10)
@click.option("--J", "j_spec", default="2,2,2,3")
@click.option("--d", type=int, default=None)
@click.option("--family", type=click.Choice(["mult", "pois"]), default="mult")
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", "out_dir", required=True, type=click.Path(file_okay=False))
def cli_simulate(scheme, n, p, j_spec, d, family, seed, out_dir):
    """Generate one scheme dataset: x.csv, y.csv, truth.json."""
    J = _parse_J(j_spec)
    try:
        layout = build_layout(J, len(J) if d is None else d)
        basis = build_basis(layout)
        rng = np.random.default_rng(np.random.SeedSequence([seed, scheme, n, p]))
        beta_star = gen_scheme_beta(scheme, layout, p, rng)
        X = gen_design(n, p, rng)
        Y = sample_responses(X, beta_star, basis, Family(family), rng)
    except ValueError as exc:
        _fail(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_matrix(out / "x.csv", [f"x{j}" for j in range(1, p + 1)], X)
    labels = ["c(" + "|".join(str(c + 1) for c in joint_codes(i, layout)) + ")"
              for i in range(layout.card)]
    write_csv_matrix(out / "y.csv", labels, Y)
    support = [(k, j) for k in layout.effects for j in range(p)
               if np.any(beta_star.values[layout.rows_of(k), j] != 0)]
    truth = ModelFile(layout=layout, family=Family(family),
                      penalty_mode=PenaltyMode.GROUP_LASSO, partition=(p,),
                      weights=np.zeros((layout.n_effects, 1)), lam=None,
                      beta=beta_star, support=support,
                      metadata={"scheme": scheme, "seed": seed, "n": n, "p": p})
    truth.save(out / "truth.json")
    click.echo(f"wrote {out / 'x.csv'}, {out / 'y.csv'}, {out / 'truth.json'}")


@main.command("study")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--plot-data", is_flag=True, default=False)
@click.option("--quiet", is_flag=True, default=False)
@click.pass_context
def cli_study(ctx, config_path, out_dir, plot_data, quiet):
    """Run the replicated simulation study from a TOML config."""
    with open(config_path, "rb") as fh:
        doc = tomllib.load(fh)
    try:
        cfg = study_config_from_toml(doc)
    except (TypeError, ValueError) as exc:
        _fail(str(exc))
    progress = None
    if not quiet:
        progress = lambda done, total: click.echo(f"replicate {done}/{total}", err=True)
    result = run_study(cfg, progress=progress)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(result.summary_csv())
    (out / "rows.csv").write_text(result.rows_csv())
    (out / "results.json").write_bytes(dumps_canonical(result.to_json_dict()))
    if plot_data:
        (out / "plot_hellinger.csv").write_text(result.plot_csv("hellinger"))
        (out / "plot_misclass.csv").write_text(result.plot_csv("misclass"))
    failures = sum(s.failures for s in result.summaries)
    click.echo(f"wrote study outputs to {out} ({len(result.rows)} rows, {failures} failures)")
    if failures:
        ctx.exit(1)


if __name__ == "__main__":
    main()
