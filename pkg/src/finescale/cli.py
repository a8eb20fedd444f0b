"""Command-line pipeline: ingest -> fit -> refine/baseline/eval -> export."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

import finescale
from finescale import evaluate, render
from finescale.baselines import gpr_baseline, lr_baseline, sd2_baseline
from finescale.downscale import (
    DownscaleParams,
    build_design,
    fit_downscale,
    predict_fine,
)
from finescale.geo import (
    GeoParseError,
    GeoValidationError,
    build_aggregation,
    load_aggregation_csv,
    load_dataset,
    load_partition,
    partition_to_geojson,
    save_dataset,
)
from finescale.gp_aux import AuxFitError, AuxGPModel, fit_all_aux, predict_aux
from finescale.numerics import FactorizationError, OptimizationError

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _split_pair(arg: str, flag: str) -> tuple[Path, Path]:
    parts = arg.split(",")
    if len(parts) != 2:
        raise ConfigError(f"{flag} expects GEOJSON,CSV (comma-separated pair), got {arg!r}")
    return Path(parts[0]), Path(parts[1])


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _load_manifest(path: Path) -> list[dict]:
    entries = json.loads(_require(path, "aux manifest").read_text())
    if not isinstance(entries, list):
        raise ConfigError(f"{path}: manifest must be a JSON array of {{id, geojson, csv}}")
    base = path.parent
    out = []
    for e in entries:
        for key in ("id", "geojson", "csv"):
            if key not in e:
                raise ConfigError(f"{path}: manifest entry missing {key!r}: {e}")
        out.append(
            {
                "id": str(e["id"]),
                "geojson": _require(base / e["geojson"], f"aux {e['id']} geometry"),
                "csv": _require(base / e["csv"], f"aux {e['id']} data"),
            }
        )
    return out


def _load_inputs(args):
    tgt_geo, tgt_csv = _split_pair(args.target, "--target")
    coarse = load_partition(_require(tgt_geo, "target geometry"))
    a = load_dataset(coarse, _require(tgt_csv, "target data"))
    fine = load_partition(_require(Path(args.fine), "fine partition"))
    if getattr(args, "hmatrix", None):
        amap = load_aggregation_csv(coarse, fine, _require(Path(args.hmatrix), "H matrix"))
    else:
        amap = build_aggregation(coarse, fine)
    aux_entries = _load_manifest(Path(args.aux_manifest)) if args.aux_manifest else []
    aux_datasets, aux_ids = [], []
    for e in aux_entries:
        part = load_partition(e["geojson"], name=e["id"])
        aux_datasets.append(load_dataset(part, e["csv"]))
        aux_ids.append(e["id"])
    return coarse, fine, amap, a, aux_datasets, aux_ids, aux_entries


def _write_manifest(args, out: Path, input_paths: list[Path]) -> None:
    manifest = {
        "version": finescale.__version__,
        "seed": args.seed,
        "restarts": args.restarts,
        "ridge": args.ridge,
        "gtol": args.gtol,
        "inputs": {str(p): _sha256(Path(p)) for p in input_paths},
        "command": sys.argv[1:],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_fit(args) -> int:
    coarse, fine, amap, a, aux_datasets, aux_ids, aux_entries = _load_inputs(args)
    fitted = fit_all_aux(
        aux_datasets, fine, restarts=args.restarts, seed=args.seed, dataset_ids=aux_ids
    )
    posteriors = [post for _, post in fitted]
    params = fit_downscale(
        a, posteriors, fine, amap,
        restarts=args.restarts, seed=args.seed, ridge=args.ridge, gtol=args.gtol,
    )
    design = build_design(posteriors, n_fine=len(fine))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = {
        "aux_models": [m.to_dict() for m, _ in fitted],
        "downscale": params.to_dict(column_ids=design.column_ids),
        "coord_transform": {"kind": "identity"},
    }
    (out / "models.json").write_text(json.dumps(models, indent=2, sort_keys=True) + "\n")
    inputs = [Path(p) for p in args.target.split(",")] + [Path(args.fine)]
    for e in aux_entries:
        inputs += [e["geojson"], e["csv"]]
    _write_manifest(args, out, inputs)
    print(f"wrote {out / 'models.json'}")
    return EXIT_OK


def _write_prediction_csv(path: Path, ids, mean, variance=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if variance is not None:
            writer.writerow(["region_id", "mean", "variance"])
            for rid, m, v in zip(ids, mean, variance):
                writer.writerow([rid, repr(float(m)), repr(float(v))])
        else:
            writer.writerow(["region_id", "mean"])
            for rid, m in zip(ids, mean):
                writer.writerow([rid, repr(float(m))])


def cmd_refine(args) -> int:
    coarse, fine, amap, a, aux_datasets, aux_ids, _ = _load_inputs(args)
    models_path = _require(Path(args.models or (Path(args.out) / "models.json")), "models file")
    models = json.loads(models_path.read_text())
    aux_models = []
    by_id = {d["dataset_id"]: d for d in models["aux_models"]}
    if set(by_id) != set(aux_ids):
        raise ConfigError(
            f"model/manifest mismatch: models for {sorted(by_id)}, manifest has {sorted(aux_ids)}"
        )
    for ds, aid in zip(aux_datasets, aux_ids):
        aux_models.append(AuxGPModel.from_dict(by_id[aid], ds.partition.centroids, ds.values))
    posteriors = [predict_aux(m, fine.centroids) for m in aux_models]
    params = DownscaleParams.from_dict(models["downscale"])
    design = build_design(posteriors, n_fine=len(fine))
    refinement = predict_fine(params, a, design, posteriors, amap, fine=fine)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_prediction_csv(
        out / "refinement.csv", fine.ids, refinement.mean, np.diag(refinement.cov)
    )
    if args.covariance:
        with open(out / "refinement_cov.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + fine.ids)
            for rid, row in zip(fine.ids, refinement.cov):
                writer.writerow([rid] + [repr(float(v)) for v in row])
    (out / "refinement.svg").write_text(render.choropleth_svg(fine, refinement.mean))
    print(f"wrote {out / 'refinement.csv'} and {out / 'refinement.svg'}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    coarse, fine, amap, a, aux_datasets, aux_ids, _ = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.method in ("lr", "sd2", "proposed"):
        fitted = fit_all_aux(
            aux_datasets, fine, restarts=args.restarts, seed=args.seed, dataset_ids=aux_ids
        )
        posteriors = [post for _, post in fitted]
    if args.method == "gpr":
        res = gpr_baseline(a, fine, restarts=args.restarts, seed=args.seed)
        _write_prediction_csv(out / "gpr.csv", fine.ids, res.prediction, res.variance)
    elif args.method == "lr":
        res = lr_baseline(a, posteriors, amap)
        _write_prediction_csv(out / "lr.csv", fine.ids, res.prediction)
    elif args.method == "sd2":
        res = sd2_baseline(a, posteriors, amap, restarts=args.restarts, seed=args.seed)
        _write_prediction_csv(out / "sd2.csv", fine.ids, res.prediction)
    else:
        raise ConfigError(f"unknown method {args.method!r}; valid: gpr, lr, sd2")
    print(f"wrote {out / (args.method + '.csv')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    coarse, fine, amap, a, aux_datasets, aux_ids, _ = _load_inputs(args)
    truth = load_dataset(fine, _require(Path(args.truth), "truth data")).values
    methods = tuple(args.method.split(",")) if args.method else evaluate.METHODS
    unknown = [m for m in methods if m not in evaluate.METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; valid: {list(evaluate.METHODS)}")
    table = evaluate.run_comparison(
        (a, aux_datasets, amap), truth=truth, methods=methods,
        seed=args.seed, restarts=args.restarts, ridge=args.ridge,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text(table.to_csv())
    print(table.to_text())
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = evaluate.SyntheticSpec(
        fine_shape=tuple(args.fine_grid),
        coarse_shape=tuple(args.coarse_grid),
        aux_shapes=tuple(tuple(s) for s in args.aux_grid) or ((4, 3), (8, 5), (12, 10)),
        w=tuple(args.weights) if args.weights else (0.3, -0.8, 2.0),
    )
    inst = evaluate.generate_synthetic(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "coarse.geojson").write_text(json.dumps(partition_to_geojson(inst.coarse)))
    (out / "fine.geojson").write_text(json.dumps(partition_to_geojson(inst.fine)))
    save_dataset(inst.a, out / "target.csv")
    save_dataset(
        finescale.ArealDataset(inst.fine, inst.z_true), out / "truth.csv"
    )
    manifest = []
    for ds, aid in zip(inst.aux_datasets, inst.aux_ids):
        (out / f"{aid}.geojson").write_text(json.dumps(partition_to_geojson(ds.partition)))
        save_dataset(ds, out / f"{aid}.csv")
        manifest.append({"id": aid, "geojson": f"{aid}.geojson", "csv": f"{aid}.csv"})
    (out / "aux_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "generating_params.json").write_text(
        json.dumps(
            {
                "seed": args.seed,
                "true_w": inst.true_w.tolist(),
                "spec": {
                    "fine_shape": list(spec.fine_shape),
                    "coarse_shape": list(spec.coarse_shape),
                    "aux_shapes": [list(s) for s in spec.aux_shapes],
                    "w": list(spec.w),
                    "bias": spec.bias,
                    "alpha": spec.alpha,
                    "gamma": spec.gamma,
                    "sigma": spec.sigma,
                    "aux_alpha": spec.aux_alpha,
                    "aux_gamma": spec.aux_gamma,
                    "aux_noise": spec.aux_noise,
                },
            },
            indent=2,
        )
        + "\n"
    )
    print(f"wrote synthetic bundle to {out}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, need_target=True) -> None:
    if need_target:
        p.add_argument("--target", required=True, help="coarse target as GEOJSON,CSV pair")
        p.add_argument("--fine", required=True, help="fine partition GeoJSON")
        p.add_argument("--aux-manifest", default=None, help="JSON array of {id, geojson, csv}")
        p.add_argument("--hmatrix", default=None, help="optional user-supplied H matrix CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=None, help="reserved tolerance override")
    p.add_argument("--gtol", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finescale", description="Downscale coarse areal data onto a finer partition."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit auxiliary GPs and the downscaling model")
    _add_common(p_fit)

    p_ref = sub.add_parser("refine", help="predict the fine field from fitted models")
    _add_common(p_ref)
    p_ref.add_argument("--models", default=None, help="models.json (default: OUT/models.json)")
    p_ref.add_argument("--covariance", action="store_true", help="also write full covariance CSV")

    p_base = sub.add_parser("baseline", help="run one comparison method")
    _add_common(p_base)
    p_base.add_argument("--method", required=True, help="gpr, lr, or sd2")

    p_eval = sub.add_parser("eval", help="full method comparison against a truth file")
    _add_common(p_eval)
    p_eval.add_argument("--truth", required=True, help="fine-partition truth CSV")
    p_eval.add_argument("--method", default=None, help="comma-separated subset of methods")

    p_synth = sub.add_parser("synth", help="write a synthetic instance directory")
    _add_common(p_synth, need_target=False)
    p_synth.add_argument("--fine-grid", type=int, nargs=2, default=[12, 10])
    p_synth.add_argument("--coarse-grid", type=int, nargs=2, default=[6, 5])
    p_synth.add_argument(
        "--aux-grid", type=int, nargs=2, action="append", default=[],
        help="repeatable: one aux grid shape per use",
    )
    p_synth.add_argument("--weights", type=float, nargs="+", default=None)
    return parser


COMMANDS = {
    "fit": cmd_fit,
    "refine": cmd_refine,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GeoParseError, GeoValidationError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FactorizationError, OptimizationError, AuxFitError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
