"""Command-line entry point: ``annimpute <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import pipeline, plotting, synth
from .analysis import delta_rows, read_ndjson, write_ndjson, write_pca_csv
from .core import DataError, Dataset, LabelSchema, load_dataset, read_complete_grid, save_dataset, write_grid
from .imputation import NumericError
from .manifest import resolve_run_dir, write_manifest
from .prompts import (
    CONDITIONS,
    CacheMiss,
    CompletionError,
    EndpointConfig,
    PromptError,
    assemble_shots,
    build_prompt,
    complete,
    load_catalog,
    load_skeletons,
    score_conditions,
    score_table,
    select_low_response_annotators,
)
from .report import render_report_html

log = logging.getLogger("annimpute")

DEFAULT_COMBOS = (
    ("original_only", "original_1", "v1.-1.0.-1.1"),
    ("imputed_only", "imputed_2", "v-1.0.0.-1.-1"),
    ("combined", "combined", "v1.0.0.-1.-1"),
)
# keys of --config that are not plain flag defaults
NESTED_KEYS = ("kernel_grid", "ncf_grid", "ncf", "multitask", "encoder", "endpoint", "combos", "dataset_description", "validation_fraction")
# path-valued options are recorded in the manifest by content hash, not by value
PATH_KEYS = ("config", "out", "data", "texts", "annotations", "schema", "imputed", "prompts", "cache", "truth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- argument parsing -----------------------------------------------------------

def _add_data_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--data", help="directory holding texts.txt, annotations.csv and schema.json")
    g.add_argument("--texts", help="one text per line, optionally 'id<TAB>text'")
    g.add_argument("--annotations", help="CSV grid, empty cell = missing")
    g.add_argument("--schema", help="label schema JSON")
    g.add_argument("--name", help="dataset name used in tables and file names")


def _add_common(p, seed=True):
    p.add_argument("--config", help="JSON file of option defaults; flags override it")
    p.add_argument("--out", required=False, help="run directory (a numeric suffix is added if it holds a finished run)")
    if seed:
        p.add_argument("--seed", type=int, default=42)


def _add_synth_args(p):
    p.add_argument("--n-items", type=int, default=50)
    p.add_argument("--n-annotators", type=int, default=20)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--observed", type=float, default=0.4, help="fraction of cells observed")
    p.add_argument("--noise", type=float, default=0.0, help="std of Gaussian label noise")
    p.add_argument("--min-label", type=int, default=0)
    p.add_argument("--max-label", type=int, default=4)
    p.add_argument("--synth-seed", type=int, default=0)


def build_parser() -> _Parser:
    parser = _Parser(prog="annimpute", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", help="generate a low-rank synthetic annotator population")
    _add_common(p, seed=False)
    _add_synth_args(p)

    p = sub.add_parser("impute", help="grid-search, train and impute with one method")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--method", choices=pipeline.METHODS, default="ncf")
    p.add_argument("--full-grid", action="store_true", help="use the full 2916-combination kernel grid")

    p = sub.add_parser("evaluate", help="heldout RMSE table across methods")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--methods", default=",".join(pipeline.METHODS))
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--median-of-3", action="store_true", help="report the median over seeds s, s+1, s+2")
    p.add_argument("--full-grid", action="store_true")

    p = sub.add_parser("train-downstream", help="k-fold multitask training on original vs imputed data")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--method", choices=pipeline.METHODS, default="ncf", help="imputer for the imputed training set")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--full-grid", action="store_true")

    p = sub.add_parser("analyze", help="PCA, distribution deltas, soft-label KL and HTML report")
    _add_common(p, seed=False)
    _add_data_args(p)
    p.add_argument("--imputed", action="append", default=[], metavar="NAME=CSV", help="complete imputed matrix (repeatable)")
    p.add_argument("--alpha", type=float, default=1e-6, help="KL smoothing")
    p.add_argument("--sentinel", type=float, default=10.0, help="PCA fill value for missing cells")
    p.add_argument("--direction", choices=("original_imputed", "imputed_original"), default="original_imputed")

    p = sub.add_parser("promptgen", help="individualized few-shot prompts for low-response annotators")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--imputed", action="append", default=[], metavar="CSV", help="complete imputed matrix")
    p.add_argument("--n-annotators", type=int, default=30)
    p.add_argument("--min-annotations", type=int, default=2)
    p.add_argument("--max-shots", type=int, default=30)

    p = sub.add_parser("score", help="complete prompts (replay or live) and score each condition")
    _add_common(p, seed=False)
    p.add_argument("--prompts", required=False, help="promptgen output directory")
    p.add_argument("--schema", help="label schema JSON (default: PROMPTS/schema.json)")
    p.add_argument("--mode", choices=("replay", "live"), default="replay")
    p.add_argument("--cache", help="NDJSON completion cache")
    p.add_argument("--model", default="gpt-3.5-turbo")
    p.add_argument("--base-url", default="https://api.openai.com/v1")
    p.add_argument("--token-env", default="OPENAI_API_KEY", help="environment variable holding the API token")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--min-interval", type=float, default=0.0, help="seconds between live requests")

    p = sub.add_parser("pipeline", help="synth, impute with every method, analyze, report")
    _add_common(p)
    _add_synth_args(p)
    p.add_argument("--methods", default=",".join(pipeline.METHODS))
    p.add_argument("--full-grid", action="store_true")
    p.add_argument("--n-prompt-annotators", type=int, default=10)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise DataError(f"config {args.config} must hold a JSON object")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        flat = {k.replace("-", "_"): v for k, v in cfg.items() if k not in NESTED_KEYS}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        subparser.set_defaults(**flat)
        args = parser.parse_args(argv)
    args.nested = {k: cfg[k] for k in NESTED_KEYS if k in cfg}
    if getattr(args, "out", None) is None:
        raise UsageError("--out is required (flag or config)")
    return args


# -- helpers --------------------------------------------------------------------------

def _dataset_paths(args) -> dict[str, Path]:
    if args.data:
        d = Path(args.data)
        paths = {"texts": d / "texts.txt", "annotations": d / "annotations.csv", "schema": d / "schema.json"}
    else:
        paths = {}
    for key in ("texts", "annotations", "schema"):
        if getattr(args, key):
            paths[key] = Path(getattr(args, key))
    missing = [k for k in ("texts", "annotations", "schema") if k not in paths]
    if missing:
        raise UsageError(f"missing dataset input(s): {', '.join(missing)} (use --data or the individual flags)")
    return paths


def _load(args) -> tuple[Dataset, dict[str, Path]]:
    paths = _dataset_paths(args)
    schema = LabelSchema.load(paths["schema"])
    name = args.name or (Path(args.data).name if args.data else paths["texts"].stem)
    return load_dataset(paths["texts"], paths["annotations"], schema, name), paths


def _config_record(args) -> dict:
    rec = {k: v for k, v in vars(args).items() if k not in PATH_KEYS and k not in ("nested", "verbose")}
    rec.update(args.nested)
    return rec


def _settings(args) -> pipeline.ImputerSettings:
    return pipeline.ImputerSettings.from_config(args.nested, seed=args.seed, full_grid=getattr(args, "full_grid", False))


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_tsv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _write_raw(path, raw: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in raw:
            w.writerow([repr(float(v)) for v in row])


def _save_imputation(run: Path, res: pipeline.ImputeResult, schema: LabelSchema) -> dict:
    (run / "models").mkdir(exist_ok=True)
    (run / "imputed").mkdir(exist_ok=True)
    res.model.save(run / "models" / f"{res.method}.json")
    write_grid(run / "imputed" / f"{res.method}.csv", res.full_int, schema)
    _write_raw(run / "imputed" / f"{res.method}_raw.csv", res.full_raw)
    return {"method": res.method, "hyper": asdict(res.hyper), "selection_rmse": res.selection_rmse}


def _parse_named(specs) -> dict[str, Path]:
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        out[name] = Path(path)
    return out


# -- subcommands --------------------------------------------------------------------

def cmd_synth(args, run: Path) -> dict:
    data = _synth(args, run / "data")
    return {"seeds": {"synth": args.synth_seed}, "inputs": {}, "summary": f"{data.dataset.matrix.n_cells} observed cells"}


def _synth(args, out: Path) -> synth.SynthData:
    schema = LabelSchema(args.min_label, args.max_label)
    data = synth.generate(args.n_items, args.n_annotators, args.rank, args.observed, args.noise, schema, args.synth_seed)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data.dataset, out / "texts.txt", out / "annotations.csv", out / "schema.json")
    write_grid(out / "truth.csv", data.truth, schema)
    return data


def cmd_impute(args, run: Path) -> dict:
    ds, paths = _load(args)
    res = pipeline.impute_dataset(ds, args.method, _settings(args))
    _write_json(run / "selection.json", _save_imputation(run, res, ds.matrix.schema))
    return {"seeds": {"seed": args.seed}, "inputs": paths, "summary": f"{args.method}: imputed {ds.matrix.n_items * ds.matrix.n_annotators - ds.matrix.n_cells} cells"}


def cmd_evaluate(args, run: Path) -> dict:
    ds, paths = _load(args)
    methods = [m for m in args.methods.split(",") if m]
    bad = [m for m in methods if m not in pipeline.METHODS]
    if bad:
        raise UsageError(f"unknown method(s): {', '.join(bad)}")
    seeds = [args.seed, args.seed + 1, args.seed + 2] if args.median_of_3 else [args.seed]
    result = pipeline.holdout_rmse(ds, methods, _settings(args), seeds, args.fraction)
    write_ndjson(run / "runs.ndjson", result["runs"])
    table = result["median"]
    _write_tsv(run / "rmse.tsv", ["method", ds.name], [[m, _fmt(v)] for m, v in table.items()])
    plotting.rmse_figure(table, run / "rmse.png", ds.name)
    return {"seeds": {"holdout": seeds}, "inputs": paths, "summary": " ".join(f"{m}={v:.4f}" for m, v in table.items())}


def cmd_train_downstream(args, run: Path) -> dict:
    ds, paths = _load(args)
    result = pipeline.train_downstream(ds, args.method, _settings(args), args.folds, args.seed)
    write_ndjson(run / "folds.ndjson", result["folds"])
    write_ndjson(run / "levels.ndjson", result["levels"])
    rows = [
        [name, _fmt(s["individual_f1"]["mean"]), _fmt(s["individual_f1"]["std"]), _fmt(s["aggregate_f1"]["mean"]), _fmt(s["aggregate_f1"]["std"])]
        for name, s in result["summary"].items()
    ]
    _write_tsv(run / "summary.tsv", ["training_data", "individual_f1_mean", "individual_f1_std", "aggregate_f1_mean", "aggregate_f1_std"], rows)
    _write_tsv(
        run / "levels.tsv",
        ["training_data", "level", "n_items", "individual_f1_mean", "individual_f1_std"],
        [[r["training_data"], r["level"], r["n_items"], _fmt(r["individual_f1_mean"]), _fmt(r["individual_f1_std"])] for r in result["levels_summary"]],
    )
    return {"seeds": {"folds": args.seed, "imputer": args.seed}, "inputs": paths, "summary": f"{args.folds} folds"}


def _write_analysis(run: Path, ds: Dataset, imputed: dict[str, np.ndarray], alpha, sentinel, direction) -> None:
    rep = pipeline.analyze(ds, imputed, alpha, sentinel, direction)
    a = run / "analysis"
    a.mkdir(parents=True, exist_ok=True)
    write_ndjson(a / "softlabels.ndjson", [r.to_json() for r in rep.records])
    write_ndjson(a / "deltas.ndjson", [row for name, d in rep.deltas.items() for row in delta_rows(name, d)])
    _write_json(a / "summary.json", {
        "kl": rep.aggregate,
        "avg_variance_change": {n: d.avg_variance_change for n, d in rep.deltas.items()},
        "avg_disagreement_change": {n: d.avg_disagreement_change for n, d in rep.deltas.items()},
        "pca_explained_variance": {n: [float(v) for v in p.explained_variance] for n, p in rep.pca.items()},
    })
    for name, proj in rep.pca.items():
        write_pca_csv(a / f"pca_{name}.csv", proj)
    plotting.write_figures(a / "figures", ds.matrix.schema, rep.records, rep.deltas, rep.pca)
    html = render_report_html(rep.records, rep.deltas, rep.pca, ds.matrix.schema, title=f"{ds.name}: imputation report", aggregate=rep.aggregate)
    (run / "report.html").write_text(html, encoding="utf-8")


def cmd_analyze(args, run: Path) -> dict:
    ds, paths = _load(args)
    named = _parse_named(args.imputed)
    if not named:
        raise UsageError("analyze needs at least one --imputed NAME=CSV")
    imputed = {}
    for name, p in named.items():
        full = read_complete_grid(p, ds.matrix.schema)
        if full.shape != ds.matrix.shape:
            raise DataError(f"dimension mismatch: {p} is {full.shape[0]}x{full.shape[1]}, dataset is {ds.matrix.n_items}x{ds.matrix.n_annotators}")
        imputed[name] = full
        paths[f"imputed_{name}"] = p
    _write_analysis(run, ds, imputed, args.alpha, args.sentinel, args.direction)
    return {"seeds": {}, "inputs": paths, "summary": f"{len(imputed)} imputed matrices analyzed"}


def _combos(nested) -> list[tuple[str, str, str]]:
    combos = [tuple(c) for c in nested.get("combos", DEFAULT_COMBOS)]
    skeletons = load_skeletons()
    for cond, skel, ver in combos:
        if cond not in CONDITIONS:
            raise UsageError(f"unknown condition {cond!r}")
        if skel not in skeletons:
            raise UsageError(f"unknown skeleton {skel!r}")
        if skeletons[skel].condition not in (None, cond):
            raise UsageError(f"skeleton {skel!r} belongs to condition {skeletons[skel].condition!r}, not {cond!r}")
    return combos


def _description(ds: Dataset, nested) -> str:
    if "dataset_description" in nested:
        return nested["dataset_description"]
    s = ds.matrix.schema
    return (f"Each text in this dataset was labeled by individual annotators with an integer "
            f"from {s.display_value(s.min_label)} to {s.display_value(s.max_label)}.")


def _promptgen(run: Path, ds: Dataset, imputed: np.ndarray | None, nested, n_annotators, min_annotations, max_shots, seed) -> int:
    combos = _combos(nested)
    if imputed is None and any(c != "original_only" for c, _, _ in combos):
        raise UsageError("conditions using imputed shots need --imputed")
    skeletons, catalog = load_skeletons(), load_catalog()
    n = min(n_annotators, ds.matrix.n_annotators)
    annotators = select_low_response_annotators(ds.matrix, n, max(min_annotations, 1))
    desc = _description(ds, nested)
    out = run / "prompts"
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for cond, skel, ver in combos:
        for j in annotators:
            shots = assemble_shots(j, ds, imputed, cond, seed, max_shots)
            text = build_prompt(skeletons[skel], catalog, ver, shots, desc, ds.matrix.schema)
            fname = f"{ds.name}_{cond}_{skel}_{ver}_{j}.txt"
            (out / fname).write_text(text, encoding="utf-8")
            index.append({"file": fname, "condition": cond, "skeleton": skel, "version": ver,
                          "annotator": j, "item": shots.held_out.item, "label": shots.held_out.label,
                          "n_original": len(shots.original), "n_imputed": len(shots.imputed)})
    write_ndjson(out / "index.ndjson", index)
    _write_json(out / "schema.json", ds.matrix.schema.to_json())
    return len(index)


def cmd_promptgen(args, run: Path) -> dict:
    ds, paths = _load(args)
    imputed = None
    if args.imputed:
        if len(args.imputed) > 1:
            raise UsageError("promptgen takes a single --imputed matrix")
        p = Path(args.imputed[0])
        imputed = read_complete_grid(p, ds.matrix.schema)
        if imputed.shape != ds.matrix.shape:
            raise DataError(f"dimension mismatch: {p} does not match the dataset")
        paths["imputed"] = p
    n = _promptgen(run, ds, imputed, args.nested, args.n_annotators, args.min_annotations, args.max_shots, args.seed)
    return {"seeds": {"shots": args.seed}, "inputs": paths, "summary": f"{n} prompts"}


def cmd_score(args, run: Path) -> dict:
    if not args.prompts:
        raise UsageError("--prompts is required")
    pdir = Path(args.prompts)
    index_path = pdir / "index.ndjson"
    if not index_path.exists():
        raise DataError(f"{index_path} not found; run promptgen first")
    index = read_ndjson(index_path)
    ep = dict(args.nested.get("endpoint", {}))
    for key in ("mode", "model", "base_url", "token_env", "temperature", "min_interval"):
        ep.setdefault(key, getattr(args, key))
    if args.cache:
        ep["cache_path"] = args.cache
    config = EndpointConfig.from_json(ep)
    schema = _score_schema(args, pdir)

    results: dict[tuple[str, str, str], list] = {}
    rows = []
    for rec in index:
        prompt = (pdir / rec["file"]).read_text(encoding="utf-8")
        comp = complete(prompt, config, schema)
        key = (rec["condition"], rec["skeleton"], rec["version"])
        results.setdefault(key, []).append((comp.parsed, rec["label"]))
        rows.append({"file": rec["file"], "prompt_hash": comp.prompt_hash, "raw_response": comp.raw_response,
                     "parsed": comp.parsed, "label": rec["label"]})
    write_ndjson(run / "completions.ndjson", rows)
    table = score_table(results, schema)
    _write_tsv(run / "scores.tsv", ["condition", "skeleton", "version", "n", "weighted_f1"],
               [[c, s, v, len(results[(c, s, v)]), _fmt(f)] for (c, s, v), f in sorted(table.items())])
    best = score_conditions(results, schema)
    _write_tsv(run / "conditions.tsv", ["condition", "weighted_f1", "skeleton", "version"],
               [[c, _fmt(b["best_f1"]), b["best_skeleton"], b["best_version"]] for c, b in sorted(best.items())])
    inputs = {"prompt_index": index_path}
    if config.cache_path:
        inputs["cache"] = Path(config.cache_path)
    invalid = sum(1 for r in rows if r["parsed"] is None)
    return {"seeds": {}, "inputs": inputs, "summary": f"{len(rows)} completions, {invalid} invalid"}


def _score_schema(args, pdir: Path) -> LabelSchema:
    path = Path(args.schema) if args.schema else pdir / "schema.json"
    if not path.exists():
        raise DataError(f"{path} not found; pass --schema")
    return LabelSchema.load(path)


def cmd_pipeline(args, run: Path) -> dict:
    data = _synth(args, run / "data")
    ds = data.dataset
    methods = [m for m in args.methods.split(",") if m]
    settings = _settings(args)
    selections, imputed = [], {}
    for method in methods:
        if method not in pipeline.METHODS:
            raise UsageError(f"unknown method {method!r}")
        res = pipeline.impute_dataset(ds, method, settings)
        selections.append(_save_imputation(run, res, ds.matrix.schema))
        imputed[method] = res.full_int
    _write_json(run / "models" / "selection.json", selections)
    _write_analysis(run, ds, imputed, 1e-6, 10.0, "original_imputed")
    prompt_source = imputed.get("ncf", next(iter(imputed.values())) if imputed else None)
    _promptgen(run, ds, prompt_source, args.nested, args.n_prompt_annotators, 2, 30, args.seed)
    return {"seeds": {"synth": args.synth_seed, "imputers": args.seed, "shots": args.seed}, "inputs": {}, "summary": f"methods {','.join(methods)}"}


COMMANDS = {
    "synth": cmd_synth,
    "impute": cmd_impute,
    "evaluate": cmd_evaluate,
    "train-downstream": cmd_train_downstream,
    "analyze": cmd_analyze,
    "promptgen": cmd_promptgen,
    "score": cmd_score,
    "pipeline": cmd_pipeline,
}


def run(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        run_dir = resolve_run_dir(args.out)
        info = COMMANDS[args.command](args, run_dir)
        digest = write_manifest(run_dir, args.command, _config_record(args), info["seeds"], info["inputs"])
    except UsageError as exc:
        print(f"annimpute: usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except NumericError as exc:
        print(f"annimpute: numeric failure: {exc}", file=sys.stderr)
        return 3
    except CacheMiss as exc:
        print(f"annimpute: data error: {exc}", file=sys.stderr)
        return 2
    except (DataError, PromptError, CompletionError, ValueError, LookupError, OSError) as exc:
        print(f"annimpute: data error: {exc}", file=sys.stderr)
        return 2
    print(f"{run_dir}\t{info['summary']}\tmanifest sha256 {digest}")
    return 0


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
