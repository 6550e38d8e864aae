"""``relu-unwrap`` command-line front end.

Every command reads its inputs, writes its outputs atomically into
``--out-dir`` and finishes by writing ``manifest.json``. Failures print a
single ``error: <module>: <message>`` line and exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import data as datamod
from . import diagnose, glm, interpret, simplify, svg
from .metrics import performance
from .network import Dataset, dumps_network, load_network, predict_batch, toy_network
from .trainer import TrainConfig, train
from .unwrapper import enumerate_regions_grid, unwrap

BUILTIN_DATA = {"chirpwave": datamod.gen_chirpwave, "cocircles": datamod.gen_cocircles}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


# -- output handling ------------------------------------------------------------

class Outputs:
    def __init__(self, out_dir: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str):
        path = self.dir / name
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.chmod(tmp, 0o644)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def json(self, name: str, obj):
        self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Outputs, args, inputs: dict, started: float):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")}
    out.json("manifest.json", {
        "command": args.command,
        "config": config,
        "seeds": {"seed": args.seed},
        "inputs": inputs,
        "outputs": dict(sorted(out.files.items())),
        "tool_version": __version__,
        "wall_time": round(time.perf_counter() - started, 3),
    })


# -- shared loaders --------------------------------------------------------------

def _load_data(args) -> tuple[Dataset, Dataset, datamod.Scaler, dict]:
    """Train/test split (scaled) for ``--data``, which is a CSV path or a builtin name."""
    name = args.data
    if name is None:
        raise CliError("--data is required for this command")
    if name in BUILTIN_DATA:
        raw = BUILTIN_DATA[name](n=args.n, noise_sd=args.noise, seed=args.seed)
        info = {"data": {"builtin": name, "n": args.n, "noise": args.noise}}
    else:
        if not Path(name).is_file():
            raise CliError(f"--data: no such file or builtin dataset: {name}")
        raw = datamod.load_csv(name, args.response_col, args.task or "regression")
        info = {"data": {"path": str(name), "sha256": _file_digest(name)}}
    if args.task and raw.task != args.task:
        raise CliError(f"--task {args.task} does not match dataset task {raw.task}")
    tr, te, scaler = datamod.split_and_scale(raw, datamod.SplitSpec(seed=args.seed))
    info["train_fingerprint"] = tr.fingerprint()
    return tr, te, scaler, info


def _load_model(args, inputs: dict):
    if args.model is None:
        raise CliError("--model is required for this command")
    if args.model in ("toy", "toy-logit"):
        inputs["model"] = {"builtin": args.model}
        return toy_network("logit" if args.model == "toy-logit" else "identity")
    if not Path(args.model).is_file():
        raise CliError(f"--model: no such file: {args.model}")
    inputs["model"] = {"path": args.model, "sha256": _file_digest(args.model)}
    return load_network(args.model)


def _load_merged(args, inputs: dict) -> simplify.MergedModel:
    if args.merged is None:
        raise CliError("--merged is required for this command")
    if not Path(args.merged).is_file():
        raise CliError(f"--merged: no such file: {args.merged}")
    inputs["merged"] = {"path": args.merged, "sha256": _file_digest(args.merged)}
    return simplify.MergedModel.from_json(Path(args.merged).read_text())


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bounds(text: str):
    try:
        v = [float(t) for t in text.split(",")]
    except ValueError:
        v = []
    if len(v) != 4:
        raise argparse.ArgumentTypeError("bounds must be x0,x1,y0,y1")
    return (v[0], v[1]), (v[2], v[3])


def _train_config(args, **overrides) -> TrainConfig:
    base = TrainConfig.from_file(args.config).to_dict() if getattr(args, "config", None) else {}
    for key, attr in (("max_epochs", "epochs"), ("patience", "patience"), ("learning_rate", "lr")):
        val = getattr(args, attr, None)
        if val is not None:
            base[key] = val
    if getattr(args, "hidden", None):
        base["hidden_sizes"] = args.hidden
    base["seed"] = args.seed
    base.update(overrides)
    if "patience" not in base and base.get("max_epochs") is not None:
        base["patience"] = min(100, base["max_epochs"])
    return TrainConfig(**base)


# -- commands ---------------------------------------------------------------------

def cmd_train(args, out: Outputs, inputs: dict):
    tr, te, scaler, info = _load_data(args)
    inputs.update(info)
    cfg = _train_config(args)
    net = train(tr, cfg)
    out.write("model.json", dumps_network(net))
    out.write("scaler.json", scaler.to_json())
    out.json("train_report.json", {
        "config": cfg.to_dict(),
        "metric": "MSE" if tr.task == "regression" else "AUC",
        "train": performance(tr.task, tr.response, predict_batch(net, tr.features)),
        "test": performance(te.task, te.response, predict_batch(net, te.features)),
    })


def cmd_unwrap(args, out: Outputs, inputs: dict):
    net = _load_model(args, inputs)
    tr, _, _, info = _load_data(args)
    inputs.update(info)
    res = unwrap(net, tr)
    out.write("regions.csv", res.region_table_csv())
    out.write("llms.csv", res.llm_table_csv())


def cmd_interpret(args, out: Outputs, inputs: dict):
    net = _load_model(args, inputs)
    tr, _, _, info = _load_data(args)
    inputs.update(info)
    res = unwrap(net, tr)
    segs = interpret.local_profile(res, tr, args.feature, args.top_k)
    fname = res.feature_names[args.feature]
    out.write("profile.csv", interpret.profile_csv(segs))
    out.write("profile.svg", svg.profile_chart(segs, fname))
    ji = interpret.joint_importance(res)
    out.write("importance.csv", ji.to_csv())
    out.write("importance.svg", svg.importance_chart(ji))
    pc = interpret.parallel_coordinates(res, exclude_single=not args.include_single)
    out.write("parallel.csv", pc.to_csv())
    out.write("parallel.svg", svg.parallel_chart(pc))


def cmd_diagnose(args, out: Outputs, inputs: dict):
    net = _load_model(args, inputs)
    tr, _, _, info = _load_data(args)
    inputs.update(info)
    res = unwrap(net, tr)
    out.write("diagnose.csv", diagnose.region_table_csv(res))
    pts = diagnose.polar_projection(res, sqrt_radius=args.sqrt_radius)
    out.write("polar.csv", diagnose.polar_csv(pts))
    out.write("polar.svg", svg.polar_chart(pts))
    th = diagnose.Thresholds(auc=args.auc_threshold, mse_ratio=args.mse_ratio)
    rows = diagnose.extrapolation_report(res, args.top_k, th)
    out.write("extrapolation.csv", diagnose.extrapolation_csv(rows, res.task, th, res.network_perf))
    out.write("extrapolation.svg", svg.extrapolation_chart(rows, res.perf_name))
    census = diagnose.single_census(res).to_dict()
    census["thresholds"] = {"auc": th.auc, "mse_ratio": th.mse_ratio}
    out.json("census.json", census)


def _merge_config(args) -> simplify.MergeConfig:
    refit = {"glm": "glm", "l1": "l1_glm", "l2": "l2_glm"}[args.refit]
    return simplify.MergeConfig(
        k_grid=args.k_grid or list(simplify.DEFAULT_K_GRID), neighbors=args.neighbors, tau=args.tau,
        refit=refit, strength=args.strength, seed=args.seed)


def cmd_merge(args, out: Outputs, inputs: dict):
    net = _load_model(args, inputs)
    tr, te, _, info = _load_data(args)
    inputs.update(info)
    res = unwrap(net, tr)
    model = simplify.merge(res, tr, _merge_config(args))
    out.write("merged.json", model.to_json())
    out.write("inference.csv", simplify.merged_inference_csv(model))
    out.write("compare.csv", simplify.compare_csv([simplify.compare_models(net, model, None, None, te)]))


def cmd_flatten(args, out: Outputs, inputs: dict):
    net = _load_model(args, inputs)
    model = _load_merged(args, inputs)
    tr, te, _, info = _load_data(args)
    inputs.update(info)
    cfg = _train_config(args, **({} if args.epochs is not None else
                                 {"max_epochs": simplify.FLATTEN_EPOCHS,
                                  "patience": min(100, simplify.FLATTEN_EPOCHS)}))
    flat = simplify.flatten(model, tr, cfg)
    slfn = simplify.train_slfn(model.n_clusters, tr, cfg)
    out.write("flat_model.json", dumps_network(flat))
    out.write("slfn_model.json", dumps_network(slfn))
    out.write("compare.csv", simplify.compare_csv([simplify.compare_models(net, model, flat, slfn, te)]))


def cmd_infer(args, out: Outputs, inputs: dict):
    net = _load_model(args, inputs)
    tr, _, _, info = _load_data(args)
    inputs.update(info)
    fam = "gaussian" if tr.task == "regression" else "binomial"
    names = list(tr.feature_names)
    groups: list[tuple[int, np.ndarray]] = []
    if args.merged:
        model = _load_merged(args, inputs)
        cl = simplify.assign_clusters(model, net, tr.features)
        ids = [args.region] if args.region is not None else range(model.n_clusters)
        for c in ids:
            if not 0 <= c < model.n_clusters:
                raise CliError(f"--region {c} out of range (0..{model.n_clusters - 1})")
            groups.append((c, np.flatnonzero(cl == c)))
    else:
        if args.region is None:
            raise CliError("--region is required without --merged")
        res = unwrap(net, tr)
        if not 0 <= args.region < len(res):
            raise CliError(f"--region {args.region} out of range (0..{len(res) - 1})")
        groups.append((args.region, res.regions[args.region].instance_indices))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if args.bootstrap:
        penalty = {"glm": "l1", "l1": "l1", "l2": "l2"}[args.refit]
        strength = args.strength if args.strength is not None else (0.01 if fam == "gaussian" else 1.0)
        w.writerow(["region", "term", "mean", "sd", "zero_probability", "replicates", "failed"])
        for gid, rows in groups:
            rep = glm.bootstrap_inference(tr.features[rows], tr.response[rows], fam, penalty, strength,
                                          args.bootstrap, args.seed, names)
            for j, name in enumerate(rep.names):
                w.writerow([gid, name, repr(float(rep.mean[j])), repr(float(rep.sd[j])),
                            repr(float(rep.zero_probability[j])), rep.n_replicates, rep.n_failed])
    else:
        header = False
        for gid, rows in groups:
            fit = glm.fit_glm(fam, tr.features[rows], tr.response[rows], "none")
            rep = glm.wald_inference(fit, 0.95, names)
            if not header:
                w.writerow(["region", "term", *rep.columns])
                header = True
            w.writerows(rep.table_rows(prefix=(gid,)))
    out.write("inference.csv", buf.getvalue())


def cmd_regionmap(args, out: Outputs, inputs: dict):
    net = _load_model(args, inputs)
    grid = enumerate_regions_grid(net, args.bounds, args.resolution, args.layers)
    out.write("regionmap.svg", svg.regionmap_chart(grid))
    out.json("regionmap.json", {"n_regions": grid.n_regions, "patterns": [str(p) for p in grid.patterns],
                                "cell_counts": np.bincount(grid.cell_map.ravel()).tolist()})


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relu-unwrap", description="Unwrap ReLU networks into exact local linear models and report on them.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, data=True, model=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out-dir", default=".")
        if model:
            sp.add_argument("--model", help="model.json, or 'toy' / 'toy-logit' for the built-in toy network")
        if data:
            sp.add_argument("--data", help="CSV path or builtin: chirpwave, cocircles")
            sp.add_argument("--response-col", default="y")
            sp.add_argument("--task", choices=["regression", "classification"])
            sp.add_argument("--n", type=int, default=2000, help="size of a builtin dataset")
            sp.add_argument("--noise", type=float, default=0.1, help="noise sd of a builtin dataset")

    def training(sp):
        sp.add_argument("--hidden", type=_int_list)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--patience", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--config", help="TOML or JSON training config")

    sp = sub.add_parser("train", help="train a ReLU network")
    common(sp, model=False)
    training(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("unwrap", help="regions.csv and llms.csv")
    common(sp)
    sp.set_defaults(func=cmd_unwrap)

    sp = sub.add_parser("interpret", help="profile, joint importance, parallel coordinates")
    common(sp)
    sp.add_argument("--feature", type=int, default=0)
    sp.add_argument("--top-k", type=int, default=30)
    sp.add_argument("--include-single", action="store_true", help="keep single-response regions in parallel.csv")
    sp.set_defaults(func=cmd_interpret)

    sp = sub.add_parser("diagnose", help="region table, polar view, extrapolation, census")
    common(sp)
    sp.add_argument("--top-k", type=int, default=10)
    sp.add_argument("--auc-threshold", type=float, default=0.75)
    sp.add_argument("--mse-ratio", type=float, default=2.0)
    sp.add_argument("--sqrt-radius", action="store_true")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("merge", help="merge LLMs and refit per cluster")
    common(sp)
    sp.add_argument("--k-grid", type=_int_list)
    sp.add_argument("--neighbors", type=int)
    sp.add_argument("--tau", type=int, default=30)
    sp.add_argument("--refit", choices=["glm", "l1", "l2"], default="glm")
    sp.add_argument("--strength", type=float)
    sp.set_defaults(func=cmd_merge)

    sp = sub.add_parser("flatten", help="flatten a merged model into one hidden layer")
    common(sp)
    training(sp)
    sp.add_argument("--merged", help="merged.json")
    sp.set_defaults(func=cmd_flatten)

    sp = sub.add_parser("infer", help="Wald or bootstrap inference for a region or merged cluster")
    common(sp)
    sp.add_argument("--merged", help="merged.json; --region then names a cluster")
    sp.add_argument("--region", type=int)
    sp.add_argument("--bootstrap", type=int, default=0, help="replicates; 0 means Wald inference")
    sp.add_argument("--refit", choices=["glm", "l1", "l2"], default="l1")
    sp.add_argument("--strength", type=float)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("regionmap", help="SVG map of activation regions on a 2-d box")
    common(sp, data=False)
    sp.add_argument("--bounds", type=_bounds, default=((-1.0, 1.0), (-1.0, 1.0)))
    sp.add_argument("--resolution", type=int, default=2000)
    sp.add_argument("--layers", type=int, help="only the first LAYERS hidden layers")
    sp.set_defaults(func=cmd_regionmap)
    return p


def _module_of(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return "cli"
    mod = type(exc).__module__ or ""
    if mod.startswith("relu_unwrap."):
        return mod.split(".", 1)[1].lstrip("_")
    return "cli"


def main(argv=None) -> int:
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        out = Outputs(args.out_dir)
        inputs: dict = {}
        args.func(args, out, inputs)
        _write_manifest(out, args, inputs, started)
    except SystemExit:
        raise
    except BaseException as exc:  # one machine-readable line, no traceback
        if isinstance(exc, KeyboardInterrupt):
            raise
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {_module_of(exc)}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
