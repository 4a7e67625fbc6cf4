"""Command-line drivers.

Every run writes ``manifest.json`` into the output directory with the
parameters, output paths, wall-clock time and a pass/fail summary.
Exit codes: 0 ok, 1 assertion failure, 2 usage or domain error,
3 numeric failure (small divisor, non-convergence).
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import NumericError, ResonantWaveError

EXIT_OK, EXIT_ASSERT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "RESONANT_WAVE_OUT"


class AssertionFailed(Exception):
    pass


def _parse_config(path):
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"config line {raw!r} is not key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def _float_list(text):
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from exc


class _Run:
    def __init__(self, ctx, name, params):
        self.root = ctx.obj
        self.name = name
        self.params = params
        self.outputs = []
        self.checks = {}
        self.start = time.time()
        self.out_dir = Path(self.root["out_dir"])
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, filename, text):
        path = self.out_dir / filename
        path.write_text(text)
        self.outputs.append(str(path))
        return path

    def check(self, name, ok, detail=None):
        self.checks[name] = {"passed": bool(ok), "detail": detail}

    def finish(self, status):
        manifest = {
            "command": self.name,
            "version": __version__,
            "parameters": self.params,
            "threads": self.root["threads"],
            "outputs": self.outputs,
            "wall_clock_s": round(time.time() - self.start, 3),
            "checks": self.checks,
            "status": status,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


def _execute(ctx, name, params, body):
    run = _Run(ctx, name, params)
    try:
        body(run)
        failed = [k for k, v in run.checks.items() if not v["passed"]]
        if failed:
            run.finish("assertion_failed")
            click.echo(f"FAILED checks: {', '.join(failed)}", err=True)
            ctx.exit(EXIT_ASSERT)
        run.finish("ok")
    except NumericError as exc:
        run.finish("numeric_error")
        click.echo(f"numeric error: {exc}", err=True)
        ctx.exit(EXIT_NUMERIC)
    except ResonantWaveError as exc:
        run.finish("usage_error")
        click.echo(f"error: {exc}", err=True)
        ctx.exit(EXIT_USAGE)


@click.group()
@click.option("--out-dir", type=click.Path(file_okay=False), default=None, help=f"Output directory (default ${OUT_ENV} or ./out).")
@click.option("--threads", type=int, default=None, help="Worker cap; results do not depend on it.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="key=value defaults file.")
@click.version_option(__version__)
@click.pass_context
def main(ctx, out_dir, threads, config_path):
    """Periodic solutions of the completely resonant wave equation by Lindstedt series."""
    ctx.ensure_object(dict)
    ctx.obj["out_dir"] = out_dir or os.environ.get(OUT_ENV, "out")
    ctx.obj["threads"] = threads or os.cpu_count()
    if config_path:
        values = _parse_config(config_path)
        ctx.default_map = {name: values for name in main.commands}


@main.command("ground-state")
@click.option("--cutoff", type=int, default=64, show_default=True)
@click.pass_context
def cmd_ground_state(ctx, cutoff):
    """Elliptic parameters, ground-state coefficients and r0."""
    from .qsolver import build_ground_state

    def body(run):
        gs = build_ground_state(cutoff)
        p = gs.params
        run.write("ground_state.json", json.dumps({"params": p.to_dict(), "c0": gs.c0, "r0": gs.r0, "cutoff": cutoff}, indent=2))
        rows = ["n,re,im"] + [f"{n},{c.real!r},{c.imag!r}" for n, c in zip(range(-cutoff, cutoff + 1), gs.a0.resized(cutoff).coeffs)]
        run.write("a0.csv", "\n".join(rows) + "\n")
        click.echo(f"m = {p.m:.10f}")
        click.echo(f"Omega = {p.Omega:.10f}")
        click.echo(f"V = {p.V:.10f}")
        click.echo(f"r0 = {gs.r0:.10f}")
        run.check("modulus", abs(p.m + 0.2554) < 5e-4, p.m)

    _execute(ctx, "ground-state", {"cutoff": cutoff}, body)


def _expansion_options(f):
    f = click.option("--order", "-K", type=int, default=3, show_default=True)(f)
    f = click.option("--cutoff", "-N", type=int, default=16, show_default=True)(f)
    f = click.option("--eps", type=float, default=1e-3, show_default=True)(f)
    f = click.option("--j", "j", type=int, default=1, show_default=True)(f)
    f = click.option("--phi", default="1.0", show_default=True, help="Comma-separated Phi_k coefficients.")(f)
    return f


@main.command("expand")
@_expansion_options
@click.option("--check-trees", is_flag=True, help="Gate on the tree-sum versus recursion check (orders <= 3).")
@click.pass_context
def cmd_expand(ctx, order, cutoff, eps, j, phi, check_trees):
    """Lindstedt recursion to the given order."""
    from .lindstedt import ExpansionConfig, evaluate_and_residual, expand

    params = {"order": order, "cutoff": cutoff, "eps": eps, "j": j, "phi": phi, "check_trees": check_trees}

    def body(run):
        state = expand(ExpansionConfig(K=order, N=cutoff, epsilon=eps, j=j, phi=_float_list(phi)))
        run.write("expansion.json", state.to_json())
        run.write("magnitudes.csv", state.magnitudes_csv())
        _, res = evaluate_and_residual(state, 1.0)
        click.echo(f"residual at mu=1, K={order}: {res:.3e}")
        if check_trees:
            from .trees import lemma2_relative_error

            for k in range(1, min(order, 3) + 1):
                err = lemma2_relative_error(state, k)
                click.echo(f"order {k}: tree sum vs recursion relative error {err:.3e}")
                run.check(f"trees_order_{k}", err <= 1e-11, err)

    _execute(ctx, "expand", params, body)


@main.command("trees")
@click.option("--order", "-k", type=int, default=1, show_default=True)
@click.option("--self-energy", is_flag=True, help="Work with self-energy shapes instead of trees.")
@click.option("--count", "--count-only", "count_only", is_flag=True, help="Only print counts.")
@click.option("--n", "n", type=int, default=None)
@click.option("--m", "m", type=int, default=None)
@click.option("--mode-cutoff", type=int, default=2, show_default=True)
@click.option("--dot-out", type=click.Path(dir_okay=False), default=None)
@click.option("--check-lemma3", is_flag=True)
@click.pass_context
def cmd_trees(ctx, order, self_energy, count_only, n, m, mode_cutoff, dot_out, check_lemma3):
    """Shape and labelled-tree enumeration."""
    from . import trees as T

    params = {"order": order, "self_energy": self_energy, "count_only": count_only, "n": n, "m": m, "mode_cutoff": mode_cutoff}

    def body(run):
        if self_energy:
            shapes = T.self_energy_shapes(order)
            click.echo(len(shapes))
            if not count_only:
                run.write("self_energy_shapes.json", json.dumps([repr(s) for s in shapes], indent=1))
            return
        fam_w = T.shape_families(order, "w", include_counterterms=False)
        fam_v = T.shape_families(order, "v", include_counterterms=False)
        click.echo(f"off-diagonal root shape families: {len(fam_w)}")
        click.echo(f"diagonal root shape families: {len(fam_v)}")
        click.echo(f"shapes: {len(T.enumerate_shapes(order, 'w'))} off-diagonal, {len(T.enumerate_shapes(order, 'v'))} diagonal")
        if check_lemma3:
            bad = [sk for b in ("w", "v") for sk in T.enumerate_shapes(order, b) if not T.check_lemma3(sk)]
            run.check("lemma3", not bad, len(bad))
        if n is not None and m is not None:
            labelled = T.enumerate_trees(order, n, m, mode_cutoff)
            click.echo(f"labelled trees at ({n}, {m}), cutoff {mode_cutoff}: {len(labelled)}")
            if dot_out and labelled:
                Path(dot_out).write_text(labelled[0].to_dot())
                run.outputs.append(dot_out)
            if not count_only:
                run.write("trees.jsonl", "\n".join(t.to_json() for t in labelled[:1000]) + "\n")

    _execute(ctx, "trees", params, body)


@main.command("solve")
@click.option("--cutoff", "-N", type=int, default=16, show_default=True)
@click.option("--eps", type=float, default=1e-3, show_default=True)
@click.option("--j", "j", type=int, default=1, show_default=True)
@click.option("--phi", default="1.0", show_default=True)
@click.option("--eps-ladder", default=None, help="Comma-separated epsilons for the scaling table.")
@click.option("--r", "r", type=float, default=0.1, show_default=True, help="Weight of the distance norm.")
@click.pass_context
def cmd_solve(ctx, cutoff, eps, j, phi, eps_ladder, r):
    """Newton solve of the truncated equations."""
    from .solver import NewtonConfig, scaling_csv, scaling_study, solution_json, solve_full

    params = {"cutoff": cutoff, "eps": eps, "j": j, "phi": phi, "eps_ladder": eps_ladder, "r": r}

    def body(run):
        cfg = NewtonConfig(N=cutoff, epsilon=eps, j=j, phi=_float_list(phi))
        sol = solve_full(cfg)
        run.write("solution.json", solution_json(sol, cfg))
        click.echo(f"iterations {sol['iterations']}, residual {sol['residual']:.3e}")
        run.check("residual", sol["residual"] <= cfg.residual_tol, sol["residual"])
        if eps_ladder:
            study = scaling_study(_float_list(eps_ladder), cfg, r)
            run.write("scaling.csv", scaling_csv(study))
            click.echo(f"fitted exponent {study['slope']:.4f}")

    _execute(ctx, "solve", params, body)


@main.command("scan")
@click.option("--eps0", type=float, default=0.01, show_default=True)
@click.option("--grid-size", type=int, default=2000, show_default=True)
@click.option("--C0", "C0", type=float, default=0.01, show_default=True)
@click.option("--tau", type=float, default=2.5, show_default=True)
@click.option("--tau0", type=float, default=1.2, show_default=True)
@click.option("--first-melnikov-only", is_flag=True)
@click.option("--ladder", is_flag=True, help="Also scan eps0/2 and eps0/4 and report the trend.")
@click.pass_context
def cmd_scan(ctx, eps0, grid_size, C0, tau, tau0, first_melnikov_only, ladder):
    """Excluded-measure scan over (0, eps0]."""
    from .diophantine import DiophantineParams, intervals_json, scan_csv, scan_measure

    params = {"eps0": eps0, "grid_size": grid_size, "C0": C0, "tau": tau, "tau0": tau0,
              "first_melnikov_only": first_melnikov_only, "ladder": ladder}

    def body(run):
        p = DiophantineParams(C0=C0, tau=tau, tau0=tau0, first_melnikov_only=first_melnikov_only)
        rep = scan_measure(eps0, grid_size, p)
        run.write("scan.csv", scan_csv(rep))
        run.write("intervals.json", intervals_json(rep))
        click.echo(f"eps0 {eps0}: excluded fraction {rep['fraction_excluded']:.4f} (grid n <= {rep['n_max']})")
        if ladder:
            fractions = [rep["fraction_excluded"]]
            for e in (eps0 / 2, eps0 / 4):
                fractions.append(scan_measure(e, grid_size, p)["fraction_excluded"])
                click.echo(f"eps0 {e}: excluded fraction {fractions[-1]:.4f}")
            trend = all(a > b for a, b in zip(fractions, fractions[1:]))
            click.echo(f"decreasing trend: {trend}")
            run.check("decreasing", trend, fractions)

    _execute(ctx, "scan", params, body)


@main.command("renorm")
@click.option("--eps", type=float, default=1e-3, show_default=True)
@click.option("--cutoff", "-N", type=int, default=16, show_default=True)
@click.option("--h-max", type=int, default=12, show_default=True)
@click.option("--K-se", "K_se", type=int, default=2, show_default=True)
@click.option("--C0", "C0", type=float, default=0.01, show_default=True)
@click.option("--gamma/--no-gamma", default=False, help="Also solve the gamma self-consistency.")
@click.option("--frequencies", is_flag=True, help="Also iterate the renormalized frequencies.")
@click.pass_context
def cmd_renorm(ctx, eps, cutoff, h_max, K_se, C0, gamma, frequencies):
    """Counterterm fixed point, gamma and frequency iteration."""
    from .renorm import RenormContext, gamma_fixed_point, nu_fixed_point

    params = {"eps": eps, "cutoff": cutoff, "h_max": h_max, "K_se": K_se, "C0": C0, "gamma": gamma, "frequencies": frequencies}

    def body(run):
        rctx = RenormContext.default(N=cutoff, epsilon=eps, K_se=K_se, C0=C0, h_max=h_max)
        g = 0.0
        if gamma:
            g, table, diffs = gamma_fixed_point(rctx)
            click.echo(f"gamma = {g:.6e} (differences {', '.join(f'{d:.2e}' for d in diffs)})")
        else:
            table = nu_fixed_point(rctx)
        run.write("counterterms.json", table.to_json())
        click.echo(f"sup |nu| / eps = {table.sup() / eps if eps else 0.0:.4f}")
        run.check("nu_bound", table.sup() <= 10 * eps, table.sup())
        if frequencies:
            from .frequencies import generation_csv, iterate_frequencies

            fr = iterate_frequencies(eps, rctx, gamma=g)
            run.write("frequencies.csv", generation_csv(fr))
            click.echo(f"frequency changes: {', '.join(f'{c:.2e}' for c in fr.changes)}")

    _execute(ctx, "renorm", params, body)


@main.command("replay")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def cmd_replay(ctx, manifest):
    """Re-run the command recorded in a manifest with the same parameters."""
    data = json.loads(Path(manifest).read_text())
    name = data.get("command")
    if name not in main.commands or name == "replay":
        raise click.UsageError(f"manifest names no replayable command: {name!r}")
    ctx.invoke(main.commands[name], **data["parameters"])


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
