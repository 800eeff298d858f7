"""Configuration-driven experiment runner.

Every subcommand seeds explicitly, writes a self-describing CSV or JSON
payload, and (unless --no-figures) renders a companion figure next to it.
Exit codes: 0 success; 1 invalid configuration (diagnostic on stderr);
2 when a check subcommand (evi, hwi, decay, validate) reports a violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .acceptance import validate_suite
from .dynamics import (
    contraction_check,
    entropy_decay_curve,
    evi_check_box_k,
    evi_check_stationary,
    evolve_free,
    evolve_reflected,
    laplace_gap_curve,
    product_density,
)
from .entropy import fisher_box, fisher_closed_form_grid, specific_entropy_profile
from .geodesics import constant_speed_profile
from .geometry import BoxSpec
from .modification import modification_ensemble
from .processes import (
    CosineBump,
    Grid,
    Poisson,
    TruncatedGaussian,
    UniformCell,
    model_from_json,
    sample,
)
from .reports import render_curves, render_points, standard_meta, write_csv, write_json
from .streams import RngStream
from .transport import (
    CostParams,
    SharedGridPairs,
    TargetsTooSparse,
    estimate_cost_per_volume,
    make_pair_sampler,
)

CHECK_COMMANDS = {"evi", "hwi", "decay", "validate"}


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # invalid config must exit 1, not argparse's 2
        raise CliError(message)


def parse_model(text: str):
    """Model from inline JSON or a shorthand like poisson:2 / grid:cosine:st."""
    text = text.strip()
    if text.startswith("{"):
        return model_from_json(json.loads(text))
    parts = text.split(":")
    head = parts[0].lower()
    if head.startswith("poisson"):
        if len(head) > len("poisson"):
            return Poisson(float(head[len("poisson"):]))
        return Poisson(float(parts[1]) if len(parts) > 1 else 1.0)
    stationarized = parts[-1] in ("st", "stationarized")
    if stationarized:
        parts = parts[:-1]
    if head == "lattice":
        return Grid(UniformCell(0.0), stationarized)
    if head == "grid":
        density = parse_density(":".join(parts[1:]) or "uniform:1.0")
        return Grid(density, stationarized)
    raise CliError(f"cannot parse model spec {text!r}")


def parse_density(text: str):
    parts = text.strip().split(":")
    kind = parts[0].lower()
    if kind in ("uniform", "uniform_cell"):
        return UniformCell(float(parts[1]) if len(parts) > 1 else 1.0)
    if kind in ("cosine", "cosine_bump"):
        return CosineBump()
    if kind in ("gauss", "truncated_gaussian"):
        return TruncatedGaussian(float(parts[1]) if len(parts) > 1 else 0.1)
    raise CliError(f"cannot parse density spec {text!r}")


def _density_callable(text: str):
    if text.strip().lower() == "flat":
        return lambda x: np.ones_like(x)
    family = parse_density(text)
    return lambda x: family.pdf1(x)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> Parser:
    parser = Parser(prog="ppot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, required=True, help="base RNG seed (mandatory)")
        p.add_argument("--out", type=str, default=None, help="output path prefix")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--workers", type=int, default=None,
                       help="worker count (results are worker-invariant)")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
        p.add_argument("--trials", type=int, default=200)
        p.add_argument("--dim", type=int, default=1)
        p.add_argument("--p", type=float, default=2.0, help="cost exponent")
        return p

    p = common(sub.add_parser("sample", help="draw realisations of a model"))
    p.add_argument("--model", required=True)
    p.add_argument("--side", type=float, default=4.0)

    p = common(sub.add_parser("cost", help="transport cost per volume over boxes"))
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--coupling", default="independent",
                   choices=("independent", "shared_grid", "comonotone"))
    p.add_argument("--boxes", default="4,6,8")

    p = common(sub.add_parser("geodesic", help="constant-speed interpolation profile"))
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--coupling", default="shared_grid")
    p.add_argument("--times", default="0,0.25,0.5,0.75,1")
    p.add_argument("--side", type=float, default=8.0)

    p = common(sub.add_parser("modify", help="boundary modification ensemble"))
    p.add_argument("--a", default="lattice:st")
    p.add_argument("--b", default="grid:uniform:0.3:st")
    p.add_argument("--boxes", default="4,6,8")

    p = common(sub.add_parser("entropy", help="specific entropy profile"))
    p.add_argument("--model", required=True)
    p.add_argument("--boxes", default="2,4,8")

    p = common(sub.add_parser("fisher", help="specific Fisher information"))
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=float, default=4.0)

    p = common(sub.add_parser("evolve", help="free or reflected Brownian evolution"))
    p.add_argument("--model", required=True)
    p.add_argument("--side", type=float, default=4.0)
    p.add_argument("--t", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--reflected", action="store_true")

    p = common(sub.add_parser("evi", help="EVI checks (fixed-k or stationary)"))
    p.add_argument("--mode", choices=("fixed-k", "stationary"), default="fixed-k")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--p-density", default="cosine")
    p.add_argument("--r-density", default="flat")
    p.add_argument("--side", type=float, default=1.0)
    p.add_argument("--times", default="0.01,0.05,0.1")
    p.add_argument("--a", default="grid:uniform:0.5:st")
    p.add_argument("--boxes", default="4")
    p.add_argument("--batches", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=96)

    p = common(sub.add_parser("contraction", help="synchronous-coupling contraction"))
    p.add_argument("--a", default="lattice:st")
    p.add_argument("--b", default="grid:uniform:0.5:st")
    p.add_argument("--coupling", default="shared_grid")
    p.add_argument("--side", type=float, default=6.0)
    p.add_argument("--t", type=float, default=0.1)

    p = common(sub.add_parser("hwi", help="entropy vs distance * sqrt(Fisher)"))
    p.add_argument("--model", default="grid:cosine")
    p.add_argument("--boxes", default="4,6")

    p = common(sub.add_parser("decay", help="entropy decay along the heat flow"))
    p.add_argument("--density", default="cosine")
    p.add_argument("--side", type=float, default=1.0)
    p.add_argument("--times", default="0,0.02,0.05,0.1,0.2,0.5")

    p = common(sub.add_parser("validate", help="run the acceptance battery"))

    return parser


def _out_prefix(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path("ppot-out") / args.command


def _emit(args, rows_or_payload, meta, figure_fn=None):
    prefix = _out_prefix(args)
    if args.format == "csv" and isinstance(rows_or_payload, list):
        path = write_csv(prefix.with_suffix(".csv"), rows_or_payload, meta)
    else:
        path = write_json(prefix.with_suffix(".json"), rows_or_payload, meta)
    print(f"wrote {path}")
    if figure_fn is not None and not args.no_figures:
        fig_path = figure_fn(prefix.with_suffix(".png"))
        if fig_path is not None:
            print(f"wrote {fig_path}")
    return 0


def _meta(args, extra: dict) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("out",)}
    config.update(extra)
    return standard_meta(config, args.seed, command=" ".join(sys.argv[1:]))


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    model = parse_model(args.model)
    box = BoxSpec.centered(args.side, args.dim)
    stream = RngStream(args.seed)
    rows = []
    first_points = None
    for trial in range(args.trials):
        cfg = sample(model, box, stream.child(trial).generator())
        if first_points is None:
            first_points = cfg.points
        for j, pt in enumerate(cfg.points):
            row = {"trial_id": trial, "point_index": j}
            row.update({f"x_{i + 1}": float(v) for i, v in enumerate(pt)})
            rows.append(row)
    meta = _meta(args, {"model": model.to_json()})

    def fig(path):
        if first_points is None or first_points.shape[1] > 2:
            return None
        return render_points(path, first_points, box_side=args.side, title=args.model)

    return _emit(args, rows, meta, fig)


def cmd_cost(args) -> int:
    from .transport import cost_sequence_diagnostics

    model_a, model_b = parse_model(args.a), parse_model(args.b)
    sides = _floats(args.boxes)
    estimates = estimate_cost_per_volume(
        model_a, model_b, args.coupling, sides, args.dim, CostParams(args.p),
        trials=args.trials, stream=RngStream(args.seed), workers=args.workers,
    )
    rows = [
        {
            "box_side": e.box_side,
            "trials": e.trials,
            "p": e.p,
            "coupling": e.coupling,
            "cost_per_volume": e.per_volume_mean,
            "std_error": e.std_error,
        }
        for e in estimates
    ]
    meta = _meta(args, {
        "a": model_a.to_json(),
        "b": model_b.to_json(),
        "sequence_diagnostics": cost_sequence_diagnostics(estimates),
    })

    def fig(path):
        return render_curves(
            path, sides,
            {"cost/volume": ([r["cost_per_volume"] for r in rows],
                             [r["std_error"] for r in rows])},
            xlabel="box side", ylabel=f"cost per volume (p={args.p:g})",
            title=f"{args.a} vs {args.b} ({args.coupling})",
        )

    return _emit(args, rows, meta, fig)


def cmd_geodesic(args) -> int:
    model_a, model_b = parse_model(args.a), parse_model(args.b)
    sampler = make_pair_sampler(model_a, model_b, args.coupling, CostParams(args.p))
    rows_raw = constant_speed_profile(
        sampler, _floats(args.times), BoxSpec.centered(args.side, args.dim),
        CostParams(args.p), trials=args.trials, stream=RngStream(args.seed),
        workers=args.workers,
    )
    rows = [
        {k: r[k] for k in ("s", "t", "w_hat", "expected", "abs_gap", "std_error")}
        for r in rows_raw
    ]
    meta = _meta(args, {"a": model_a.to_json(), "b": model_b.to_json()})

    def fig(path):
        gaps = [r["t"] - r["s"] for r in rows]
        return render_curves(
            path, gaps,
            {"estimated": ([r["w_hat"] for r in rows], [r["std_error"] for r in rows]),
             "constant speed": ([r["expected"] for r in rows], None)},
            xlabel="t - s", ylabel="interpolation distance",
            title="constant-speed profile",
        )

    return _emit(args, rows, meta, fig)


def cmd_modify(args) -> int:
    model_a, model_b = parse_model(args.a), parse_model(args.b)
    if not isinstance(model_a, Grid) or not isinstance(model_b, Grid):
        raise CliError("the modification ensemble runs on a shared-grid pair")
    pair = SharedGridPairs(model_a, model_b)
    payload = []
    for idx, n in enumerate(_floats(args.boxes)):
        rep = modification_ensemble(
            pair, int(n), args.dim, CostParams(args.p), trials=args.trials,
            stream=RngStream(args.seed, (idx,)),
        )
        payload.append(
            {
                "n": rep["n"],
                "N": rep["cell_count"],
                "l_histogram": rep["l_histogram"],
                "k_totals": rep["k_totals"],
                "cost_before": rep["cost_before"],
                "cost_after": rep["cost_after"],
                "inflation": rep["inflation"],
                "intensity": rep["intensity"],
                "intensity_se": rep["intensity_se"],
            }
        )
    meta = _meta(args, {"a": model_a.to_json(), "b": model_b.to_json()})
    args.format = "json"

    def fig(path):
        ns = [r["n"] for r in payload]
        return render_curves(
            path, ns,
            {"before": ([r["cost_before"] for r in payload], None),
             "after": ([r["cost_after"] for r in payload], None)},
            xlabel="box side", ylabel="cost per volume", title="boundary modification",
        )

    return _emit(args, payload, meta, fig)


def cmd_entropy(args) -> int:
    model = parse_model(args.model)
    sides = _floats(args.boxes)
    profile = specific_entropy_profile(
        model, sides, args.dim, trials=args.trials, stream=RngStream(args.seed),
        workers=args.workers,
    )
    from .reports import config_hash

    model_hash = config_hash(model.to_json())
    rows = [
        {
            "model_hash": model_hash,
            "n": e.box_side,
            "ent_per_volume": e.ent_per_volume,
            "se": e.std_error,
        }
        for e in profile["estimates"]
    ]
    meta = _meta(args, {"model": model.to_json(), "sup_form": profile["sup_form"]})

    def fig(path):
        return render_curves(
            path, sides,
            {"entropy/volume": ([r["ent_per_volume"] for r in rows],
                                [r["se"] for r in rows]),
             "sup form": (profile["sup_form"], None)},
            xlabel="box side", ylabel="specific entropy", title=args.model,
        )

    return _emit(args, rows, meta, fig)


def cmd_fisher(args) -> int:
    model = parse_model(args.model)
    est = fisher_box(model, args.n, args.dim)
    rows = [{
        "n": est.box_side,
        "fisher_per_volume": est.fisher_per_volume,
        "method": est.method,
    }]
    if isinstance(model, Grid) and model.has_fisher:
        closed = fisher_closed_form_grid(model.density, args.dim)
        rows.append({"n": est.box_side, "fisher_per_volume": closed, "method": "quadrature"})
    meta = _meta(args, {"model": model.to_json()})
    return _emit(args, rows, meta, None)


def cmd_evolve(args) -> int:
    model = parse_model(args.model)
    box = BoxSpec.centered(args.side, args.dim)
    stream = RngStream(args.seed)
    rows = []
    last = None
    for trial in range(args.trials):
        rng = stream.child(trial).generator()
        cfg = sample(model, box, rng)
        if args.reflected:
            out = evolve_reflected(cfg, box, args.t, rng, steps=args.steps)
        else:
            out = evolve_free(cfg, args.t, rng)
        last = out.points
        for j, pt in enumerate(out.points):
            row = {"trial_id": trial, "point_index": j}
            row.update({f"x_{i + 1}": float(v) for i, v in enumerate(pt)})
            rows.append(row)
    meta = _meta(args, {"model": model.to_json()})

    def fig(path):
        if last is None or last.shape[1] > 2:
            return None
        return render_points(path, last, box_side=args.side,
                             title=f"t={args.t:g} ({'reflected' if args.reflected else 'free'})")

    return _emit(args, rows, meta, fig)


def cmd_evi(args) -> int:
    times = _floats(args.times)
    if args.mode == "fixed-k":
        axes_p = [_density_callable(s) for s in args.p_density.split("*")]
        axes_r = [_density_callable(s) for s in args.r_density.split("*")]
        dim = max(len(axes_p), 1)
        if len(axes_r) != dim:
            raise CliError("p and r densities must have the same number of factors")
        p_density = product_density(axes_p, args.side)
        r_density = product_density(axes_r, args.side)
        reports = evi_check_box_k(
            p_density, r_density, args.k, times, batches=args.batches,
            batch_size=args.batch_size, stream=RngStream(args.seed),
            params=CostParams(args.p),
        )
        payload = [r.to_json() for r in reports]
        violated = any(r.verdict == "violated" for r in reports)
        meta = _meta(args, {"mode": "fixed-k"})
    else:
        model = parse_model(args.a)
        res = evi_check_stationary(
            model, Poisson(1.0), times, _floats(args.boxes), args.dim,
            trials=args.trials, stream=RngStream(args.seed), params=CostParams(args.p),
            workers=args.workers,
        )
        payload = {
            "t_list": res["t_list"],
            "entropy_after_unavailable": res["entropy_after_unavailable"],
            "boxes": [
                {
                    "side": b["side"],
                    "w2_sq_sequence": b["w2_sq_sequence"],
                    "se_sequence": b["se_sequence"],
                    "nonincreasing_within_ci": b["nonincreasing_within_ci"],
                    "reports": [r.to_json() for r in b["reports"]],
                }
                for b in res["boxes"]
            ],
        }
        violated = any(
            (not b["nonincreasing_within_ci"])
            or any(r["verdict"] == "violated" for r in b["reports"])
            for b in payload["boxes"]
        )
        meta = _meta(args, {"mode": "stationary"})
    args.format = "json"

    def fig(path):
        if args.mode == "fixed-k":
            return render_curves(
                path, [r["t"] for r in payload],
                {"slack": ([r["slack"] for r in payload],
                           [r["combined_se"] for r in payload])},
                xlabel="t", ylabel="EVI slack", title=f"fixed-k EVI (k={args.k})",
            )
        series = {
            f"n={b['side']:g}": (b["w2_sq_sequence"], b["se_sequence"])
            for b in payload["boxes"]
        }
        return render_curves(path, payload["t_list"], series, xlabel="t",
                             ylabel="squared distance per volume",
                             title="distance to Poisson under heating")

    code = _emit(args, payload, meta, fig)
    return 2 if violated else code


def cmd_contraction(args) -> int:
    model_a, model_b = parse_model(args.a), parse_model(args.b)
    sampler = make_pair_sampler(model_a, model_b, args.coupling, CostParams(args.p))
    report = contraction_check(
        sampler, BoxSpec.centered(args.side, args.dim), args.t,
        trials=args.trials, stream=RngStream(args.seed), params=CostParams(args.p),
    )
    args.format = "json"
    meta = _meta(args, {"a": model_a.to_json(), "b": model_b.to_json()})
    return _emit(args, report, meta, None)


def cmd_hwi(args) -> int:
    from .dynamics import hwi_check

    model = parse_model(args.model)
    rows = hwi_check(
        model, _floats(args.boxes), args.dim, trials=args.trials,
        stream=RngStream(args.seed), params=CostParams(args.p), workers=args.workers,
    )
    meta = _meta(args, {"model": model.to_json()})
    violated = not all(r["holds_within_ci"] for r in rows)

    def fig(path):
        ns = [r["n"] for r in rows]
        return render_curves(
            path, ns,
            {"entropy": ([r["entropy"] for r in rows], None),
             "W2 * sqrt(Fisher)": ([r["rhs"] for r in rows], [r["rhs_se"] for r in rows])},
            xlabel="box side", ylabel="value", title="HWI comparison",
        )

    code = _emit(args, rows, meta, fig)
    return 2 if violated else code


def cmd_decay(args) -> int:
    density = product_density([_density_callable(args.density)] , args.side)
    curve = entropy_decay_curve(density, _floats(args.times))
    rows = [{"t": t, "value": v, "se": 0.0} for t, v in zip(curve["t"], curve["entropy"])]
    meta = _meta(args, {"expected_rate": curve["expected_rate"], "tail_rate": curve["tail_rate"]})

    def fig(path):
        positive = [max(v, 1e-16) for v in curve["entropy"]]
        return render_curves(path, curve["t"], {"entropy": (positive, None)},
                             xlabel="t", ylabel="entropy per particle",
                             title="heat-flow entropy decay", logy=True)

    code = _emit(args, rows, meta, fig)
    return 2 if not curve["nonincreasing"] else code


def cmd_validate(args) -> int:
    import time

    started = time.time()
    results = validate_suite(args.seed)
    rows = []
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] criterion {res.number:2d} {res.name} ({res.seconds:.1f}s)")
        for label, ok, msg in res.subchecks:
            print(f"         {'ok  ' if ok else 'FAIL'} {label}: {msg}")
        rows.append(
            {
                "criterion": res.number,
                "name": res.name,
                "passed": res.passed,
                "seconds": round(res.seconds, 2),
                "subchecks": [
                    {"label": label, "ok": ok, "detail": msg} for label, ok, msg in res.subchecks
                ],
            }
        )
    total = time.time() - started
    print(f"total runtime: {total:.1f}s")
    args.format = "json"
    meta = _meta(args, {"total_seconds": round(total, 2)})
    _emit(args, rows, meta, None)
    return 0 if all(r.passed for r in results) else 2


COMMANDS = {
    "sample": cmd_sample,
    "cost": cmd_cost,
    "geodesic": cmd_geodesic,
    "modify": cmd_modify,
    "entropy": cmd_entropy,
    "fisher": cmd_fisher,
    "evolve": cmd_evolve,
    "evi": cmd_evi,
    "contraction": cmd_contraction,
    "hwi": cmd_hwi,
    "decay": cmd_decay,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, json.JSONDecodeError, TargetsTooSparse) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
