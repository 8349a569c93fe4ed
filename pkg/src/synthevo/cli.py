"""Command-line entry point: ``synthevo <group> <action> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy
import tomli

from . import blockfilter as bf
from .catalog import DATA_DIR, CompatibilityIndex, load_blocks
from .chem import load_templates, morgan_count_fp, parse_smiles
from .genetic import GaConfig, RunHistory, history_records, run_synga
from .neural import NamConfig, fp_features, save_model, train_nam
from .oracles import analog_fitness, diversity, make_oracle, top_k_auc
from .surrogate import GboConfig, run_syngbo
from .synthesis import Context, from_sexpr, sample_route, to_sexpr

log = logging.getLogger("synthevo")

DATA_ENV = "SYNTHEVO_DATA"
EXIT_RUNTIME = 1
EXIT_INPUT = 2

SECTIONS: dict[str, set[str] | None] = {
    "seed": None, "workers": None, "blocks": None, "templates": None,
    "oracle": {"name", "query", "target", "dim", "seed"},
    "ga": None, "gbo": None, "nam": None, "classifier": None,
    "filter": {"kind", "epsilon", "threshold", "mu", "model"},
    "dataset": {"n_products", "heldout_fraction"},
    "routes": {"n", "max_steps"},
    "analog": {"query", "top"},
}
SECTION_PARSERS: dict[str, Callable[[dict], Any]] = {
    "ga": GaConfig.from_dict, "gbo": GboConfig.from_dict,
    "nam": NamConfig.from_dict, "classifier": bf.ClassifierConfig.from_dict,
}


class InputError(Exception):
    """Bad user input: exit code 2."""

    def __init__(self, kind: str, detail: str, path: str | None = None):
        super().__init__(detail)
        self.kind, self.detail, self.path = kind, detail, path


# -- configuration --------------------------------------------------------------------------

def data_dir() -> Path:
    env = os.environ.get(DATA_ENV)
    return Path(env) if env else DATA_DIR


def default_paths() -> tuple[Path, Path]:
    d = data_dir()
    if d == DATA_DIR:
        return d / "toy_blocks.smi", d / "templates.tsv"
    return d / "blocks.smi", d / "templates.tsv"


def read_config(path: str | None) -> dict:
    """TOML, or a JSON manifest whose ``config`` entry is replayed."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError("missing_file", f"config file not found: {p}", str(p))
    try:
        if p.suffix == ".json":
            data = json.loads(p.read_text(encoding="utf-8"))
            return data.get("config", data)
        with open(p, "rb") as fh:
            return tomli.load(fh)
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise InputError("bad_config", f"{p}: {exc}", str(p)) from None


def validate_config(cfg: dict) -> dict:
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise InputError("bad_config", f"unknown config keys: {sorted(unknown)}")
    for name, allowed in SECTIONS.items():
        if name not in cfg:
            continue
        value = cfg[name]
        try:
            if name in SECTION_PARSERS:
                if not isinstance(value, dict):
                    raise ValueError(f"[{name}] must be a table")
                SECTION_PARSERS[name](value)
            elif allowed is not None:
                if not isinstance(value, dict):
                    raise ValueError(f"[{name}] must be a table")
                extra = set(value) - allowed
                if extra:
                    raise ValueError(f"unknown keys in [{name}]: {sorted(extra)}")
        except (TypeError, ValueError) as exc:
            raise InputError("bad_config", str(exc)) from None
    return cfg


def effective_config(args: argparse.Namespace) -> dict:
    cfg = validate_config(read_config(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    if args.workers is not None:
        cfg["workers"] = args.workers
    cfg.setdefault("workers", 1)
    blocks, templates = default_paths()
    if getattr(args, "blocks", None):
        cfg["blocks"] = args.blocks
    if getattr(args, "templates", None):
        cfg["templates"] = args.templates
    cfg.setdefault("blocks", str(blocks))
    cfg.setdefault("templates", str(templates))
    return cfg


def require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError("missing_file", f"{what} not found: {p}", str(p))
    return p


def build_context(cfg: dict) -> Context:
    blocks = require_file(cfg["blocks"], "blocks file")
    templates = require_file(cfg["templates"], "templates file")
    return Context(CompatibilityIndex(load_blocks(blocks, load_templates(templates)), load_templates(templates)))


# -- output -----------------------------------------------------------------------------------

class Output:
    """Output directory that refuses to overwrite unless forced; writes are atomic."""

    def __init__(self, path: str, force: bool):
        self.dir = Path(path)
        self.force = force
        self.written: list[str] = []

    def claim(self, names: list[str]) -> None:
        clash = [n for n in names + ["manifest.json"] if (self.dir / n).exists()]
        if clash and not self.force:
            raise InputError("exists", f"refusing to overwrite {self.dir / clash[0]} (use --force)",
                             str(self.dir / clash[0]))
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.dir / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.dir / name
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(p)
        self.written.append(name)
        return p

    def write_json(self, name: str, data: Any) -> Path:
        return self.write_text(name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def write_jsonl(self, name: str, rows: list[dict]) -> Path:
        return self.write_text(name, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def versions() -> dict:
    from importlib.metadata import PackageNotFoundError, version
    try:
        own = version("artifact")
    except PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "synthevo": own}


def history_summary(history: RunHistory, budget: int) -> dict:
    scores = history.scores()
    top = history.top(10)
    return {
        "evaluations": len(history), "budget": budget,
        "best": float(scores.max()) if len(scores) else None,
        "best_key": top[0].key if top else None,
        "top10_mean": float(np.mean([e.fitness for e in top])) if top else None,
        "top1_auc": top_k_auc(scores, 1, 100, budget) if len(scores) else None,
        "top10_auc": top_k_auc(scores, 10, 100, budget) if len(scores) else None,
        "top10_diversity": diversity([morgan_count_fp(parse_smiles(e.key)) for e in top]),
    }


# -- commands -------------------------------------------------------------------------------

def cmd_blocks_prepare(args, cfg, out: Output) -> dict:
    out.claim(["blocks.smi", "index.bin", "report.json"])
    ctx = build_context(cfg)
    blocks = ctx.index.blocks
    out.write_text("blocks.smi", "".join(f"{b.key}\tB{b.id}\n" for b in blocks))
    ctx.index.save(out.path("index.bin"))
    out.written.append("index.bin")
    report = {"n_blocks": len(blocks), "digest": blocks.digest(), "load": blocks.report.summary(),
              "failures": [list(f) for f in blocks.report.failures],
              "slots": {f"{n}:{s}": len(m) for (n, s), m in sorted(ctx.index.slot_blocks.items())}}
    out.write_json("report.json", report)
    return {"n_blocks": len(blocks)}


def cmd_routes_sample(args, cfg, out: Output) -> dict:
    out.claim(["routes.jsonl"])
    ctx = build_context(cfg)
    section = cfg.get("routes", {})
    n = args.n if args.n is not None else int(section.get("n", 100))
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for i in range(n):
        t = sample_route(rng, ctx, section.get("max_steps"))
        rows.append({"i": i, "key": t.key, "steps": t.n_internal, "tree": to_sexpr(t)})
    out.write_jsonl("routes.jsonl", rows)
    return {"n_routes": n, "distinct": len({r["key"] for r in rows})}


def cmd_dataset_gen(args, cfg, out: Output) -> dict:
    out.claim(["dataset.jsonl"])
    ctx = build_context(cfg)
    section = cfg.get("dataset", {})
    n = args.n if args.n is not None else int(section.get("n_products", 1000))

    def progress(done: int, attempts: int) -> None:
        if done % 500 == 0 or done == n:
            log.info("dataset: %d/%d products from %d routes", done, n, attempts)

    ds = bf.generate_route_dataset(n, np.random.default_rng(cfg["seed"]), ctx,
                                   heldout_fraction=float(section.get("heldout_fraction", 0.1)),
                                   progress=progress)
    ds.save(out.path("dataset.jsonl"))
    out.written.append("dataset.jsonl")
    return {"n_products": len(ds), "heldout": len(ds.heldout)}


def cmd_filter_train(args, cfg, out: Output) -> dict:
    out.claim(["classifier.npz", "classifier.json"])
    ds = bf.RouteDataset.load(require_file(args.dataset, "dataset"))
    ctx = build_context(cfg)
    ccfg = bf.ClassifierConfig.from_dict({"seed": cfg["seed"], **cfg.get("classifier", {})})
    model, report = bf.train_block_classifier(ds, ctx.index.blocks, ccfg)
    model.save(out.path("classifier.npz"))
    out.written.append("classifier.npz")
    out.write_json("classifier.json", {**report.to_dict(), "losses": report.losses[::50]})
    return report.to_dict()


def cmd_filter_eval(args, cfg, out: Output) -> dict:
    out.claim(["eval.json"])
    ds = bf.RouteDataset.load(require_file(args.dataset, "dataset"))
    model = bf.BlockClassifier.load(require_file(args.model, "model"))
    ctx = build_context(cfg)
    examples = ds.heldout or list(range(len(ds)))
    roc, prc, n = bf.evaluate_classifier(model, ds, ctx.index.blocks, examples)
    result = {"auroc": roc, "auprc": prc, "n_eval": n}
    out.write_json("eval.json", result)
    return result


def read_history(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                if "summary" not in row:
                    rows.append(row)
    return rows


def cmd_nam_train(args, cfg, out: Output) -> dict:
    out.claim(["nam.npz", "nam_log.tsv"])
    rows = read_history(require_file(args.history, "history"))
    ctx = build_context(cfg)
    sets = [from_sexpr(r["tree"]).leaves() for r in rows]
    ncfg = NamConfig.from_dict({"seed": cfg["seed"], **cfg.get("nam", {})})
    feats = fp_features(ctx.index.blocks.fp_matrix())
    nam, logbook = train_nam(feats, sets, [r["fitness"] for r in rows], ncfg)
    save_model(out.path("nam.npz"), nam.net, "nam", {"alpha_logit": float(nam.a[0]),
                                                      "config": {**ncfg.__dict__, "hidden": list(ncfg.hidden)}})
    out.written.append("nam.npz")
    out.write_text("nam_log.tsv", logbook.text())
    return {"examples": len(rows), "best_epoch": logbook.best_epoch,
            "val_spearman": logbook.best_val, "alpha": nam.alpha}


def make_run_oracle(cfg: dict, ctx: Context):
    params = cfg.get("oracle")
    if not params:
        raise InputError("bad_config", "an [oracle] table is required")
    try:
        return make_oracle(params, len(ctx.index.blocks))
    except (KeyError, ValueError) as exc:
        raise InputError("bad_config", f"oracle: {exc}") from None


def cmd_ga_run(args, cfg, out: Output) -> dict:
    out.claim(["history.jsonl", "summary.json"])
    ctx = build_context(cfg)
    oracle = make_run_oracle(cfg, ctx)
    gcfg = GaConfig.from_dict({**cfg.get("ga", {}), "seed": cfg["seed"]})
    _, history = run_synga(gcfg, oracle, ctx, workers=cfg["workers"])
    out.write_jsonl("history.jsonl", history_records(history))
    summary = {"oracle": oracle.name, "oracle_calls": oracle.calls, **history_summary(history, gcfg.budget)}
    out.write_json("summary.json", summary)
    return summary


def cmd_gbo_run(args, cfg, out: Output) -> dict:
    out.claim(["history.jsonl", "telemetry.jsonl", "summary.json"])
    ctx = build_context(cfg)
    oracle = make_run_oracle(cfg, ctx)
    gcfg = GboConfig.from_dict({**cfg.get("gbo", {}), "seed": cfg["seed"]})
    history, logs = run_syngbo(gcfg, oracle, ctx, workers=cfg["workers"])
    out.write_jsonl("history.jsonl", history_records(history))
    out.write_jsonl("telemetry.jsonl", [r.to_dict() for r in logs])
    summary = {"oracle": oracle.name, "oracle_calls": oracle.calls, "iterations": len(logs),
               **history_summary(history, gcfg.budget)}
    out.write_json("summary.json", summary)
    return summary


def analog_filter(kind: str, section: dict, query, ctx: Context) -> bf.BlockFilter | None:
    eps = float(section.get("epsilon", 0.1))
    blocks = ctx.index.blocks
    if kind == "none":
        return None
    if kind == "sim":
        fp = morgan_count_fp(query, 2, blocks.fp_dim)
        return bf.BlockFilter(bf.sim_filter(fp, blocks, float(section.get("threshold", 0.5))), eps, "sim")
    if kind == "classifier":
        if "model" not in section:
            raise InputError("bad_config", "the classifier filter needs [filter] model = <path>")
        model = bf.BlockClassifier.load(require_file(section["model"], "classifier model"))
        fp = morgan_count_fp(query, 2, model.fp_dim)
        return bf.BlockFilter(bf.classifier_filter(model, fp, blocks, float(section.get("mu", 0.5))),
                              eps, "classifier")
    raise InputError("bad_config", f"unknown filter kind {kind!r}")


def cmd_analog_search(args, cfg, out: Output) -> dict:
    out.claim(["analogs.jsonl", "history.jsonl", "summary.json"])
    section = cfg.get("analog", {})
    query_text = args.query or section.get("query")
    if not query_text:
        raise InputError("bad_config", "a query is required (--query or [analog] query)")
    cfg.setdefault("analog", {})["query"] = query_text
    try:
        query = parse_smiles(query_text)
    except ValueError as exc:
        raise InputError("bad_query", f"cannot parse query: {exc}") from None
    ctx = build_context(cfg)
    fsec = dict(cfg.get("filter", {}))
    if args.filter:
        fsec["kind"] = args.filter
    filt = analog_filter(fsec.get("kind", "none"), fsec, query, ctx)
    if filt is not None:
        ctx.sampler = filt
    oracle = analog_fitness(query)
    gcfg = GaConfig.from_dict({**cfg.get("ga", {}), "seed": cfg["seed"]})
    _, history = run_synga(gcfg, oracle, ctx, workers=cfg["workers"])
    top = history.top(int(section.get("top", 100)))
    out.write_jsonl("analogs.jsonl", [
        {"rank": r, "key": e.key, "fitness": e.fitness, "call": e.call, "tree": to_sexpr(e.tree)}
        for r, e in enumerate(top, 1)])
    out.write_jsonl("history.jsonl", history_records(history))
    summary = {"query": query.key, "filter": filt.tag if filt else "none",
               "filter_size": len(filt) if filt else len(ctx.index.blocks),
               **history_summary(history, gcfg.budget)}
    out.write_json("summary.json", summary)
    return summary


def cmd_report(args, cfg, out: Output) -> dict:
    out.claim(["report.json"] + (["report.csv"] if args.csv else []))
    rows = []
    for path in args.histories:
        hist = read_history(require_file(path, "history"))
        scores = np.array([r["fitness"] for r in hist])
        budget = args.budget or len(scores)
        ranked = sorted(hist, key=lambda r: (-r["fitness"], r["call"]))[:10]
        rows.append({
            "run": str(path), "evaluations": len(scores),
            "best": float(scores.max()),
            "top1_auc": top_k_auc(scores, 1, 100, budget),
            "top10_auc": top_k_auc(scores, 10, 100, budget),
            "top100_auc": top_k_auc(scores, 100, 100, budget),
            "top10_diversity": diversity([morgan_count_fp(parse_smiles(r["key"])) for r in ranked]),
        })
    out.write_json("report.json", rows)
    if args.csv:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        out.write_text("report.csv", buf.getvalue())
    return {"runs": len(rows)}


# -- parser -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config, or a manifest.json to replay")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--blocks", help="building-block SMILES file")
    common.add_argument("--templates", help="reaction template TSV")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="synthevo", description="Synthesis-route evolution toolkit.")
    groups = parser.add_subparsers(dest="group", required=True)

    def action(group, name, fn, help_text):
        p = group.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=fn)
        return p

    g = groups.add_parser("blocks").add_subparsers(dest="action", required=True)
    action(g, "prepare", cmd_blocks_prepare, "clean a catalog and build its compatibility index")
    g = groups.add_parser("routes").add_subparsers(dest="action", required=True)
    action(g, "sample", cmd_routes_sample, "sample random routes").add_argument("--n", type=int)
    g = groups.add_parser("dataset").add_subparsers(dest="action", required=True)
    action(g, "gen", cmd_dataset_gen, "build a product/block dataset").add_argument("--n", type=int)
    g = groups.add_parser("filter").add_subparsers(dest="action", required=True)
    action(g, "train", cmd_filter_train, "train the block classifier").add_argument("--dataset", required=True)
    p = action(g, "eval", cmd_filter_eval, "score a classifier on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    g = groups.add_parser("nam").add_subparsers(dest="action", required=True)
    action(g, "train", cmd_nam_train, "fit the additive block scorer").add_argument("--history", required=True)
    g = groups.add_parser("ga").add_subparsers(dest="action", required=True)
    action(g, "run", cmd_ga_run, "run the genetic algorithm")
    g = groups.add_parser("gbo").add_subparsers(dest="action", required=True)
    action(g, "run", cmd_gbo_run, "run surrogate-guided search")
    g = groups.add_parser("analog").add_subparsers(dest="action", required=True)
    p = action(g, "search", cmd_analog_search, "find synthesizable analogs of a query")
    p.add_argument("--query")
    p.add_argument("--filter", choices=["none", "sim", "classifier"])
    p = groups.add_parser("report", parents=[common], help="metrics over history files")
    p.set_defaults(func=cmd_report)
    p.add_argument("histories", nargs="+")
    p.add_argument("--budget", type=int)
    p.add_argument("--csv", action="store_true")
    return parser


def fail(code: int, kind: str, detail: str, path: str | None = None) -> int:
    fields = {"error": kind}
    if path:
        fields["path"] = path
    print(json.dumps(fields, sort_keys=True), file=sys.stderr)
    print(detail, file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        cfg = effective_config(args)
        out = Output(args.out, args.force)
        result = args.func(args, cfg, out)
        command = args.group + (f" {args.action}" if getattr(args, "action", None) else "")
        out.write_json("manifest.json", {
            "command": command, "config": cfg, "seed": cfg["seed"], "workers": cfg["workers"],
            "versions": versions(), "outputs": out.written, "result": result,
        })
        # timing stays out of the manifest so reruns are byte-identical
        log.info("%s finished in %.2f s", command, time.perf_counter() - start)
    except InputError as exc:
        return fail(EXIT_INPUT, exc.kind, exc.detail, exc.path)
    except FileNotFoundError as exc:
        return fail(EXIT_INPUT, "missing_file", str(exc), exc.filename or str(exc))
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        return fail(EXIT_RUNTIME, type(exc).__name__, str(exc))
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
