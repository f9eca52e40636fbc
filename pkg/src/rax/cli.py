"""``rax`` command line: ingest, split, train, evaluate, shap, explain, align, ablate, synth, score.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backend/transport error.
Failures also print one JSON object {"error", "message", "exit_code"} on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as C
from .explain import ShapError, ensemble_phi, global_importance
from .imbalance import ImbalanceError, ImbalanceStrategy, apply_strategy, class_counts, compute_class_weights
from .ingest import ColumnMapping, IngestError, TableKind, join_tables, parse_table
from .metrics import MetricsError, evaluate
from .models import (
    BoostingConfig,
    ForestConfig,
    fit_gradient_boosting,
    fit_logistic,
    fit_random_forest,
    load_model,
    predict_proba,
    save_model,
    score_batch,
)
from .models.io import ModelFormatError
from .models.predict import SchemaMismatchError as ModelSchemaError
from .narrative import (
    BackendError,
    GatingConfig,
    HttpBackend,
    HttpConfig,
    Lexicon,
    NarrativeRequest,
    PromptError,
    TemplateBackend,
    augment_with_probs,
    build_prompt,
    build_report,
    gate,
    generate_all,
)
from .schema import ValidationError, canonical_schema
from .store import FeatureStore, SplitSpec, StoreError
from .synth import ABLATION_STRATEGIES, CalibrationError, SynthConfig, ablation_csv, generate, objective_for, run_ablation
from .table import EventTable

log = logging.getLogger("rax")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


DATA_ERRORS = (
    DataError,
    StoreError,
    IngestError,
    ValidationError,
    ModelSchemaError,
    ModelFormatError,
    ImbalanceError,
    MetricsError,
    ShapError,
    CalibrationError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- context


class Context:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.cfg = C.load_config(args.config)
        paths = self.cfg.paths
        for flag, key in (("store", "store"), ("reports", "reports"), ("model_file", "model")):
            v = getattr(args, flag, None)
            if v is not None:
                setattr(paths, key, str(Path(v).resolve()))
        if args.seed is not None:
            self.cfg.seed = args.seed
        if args.schema_hash is not None:
            self.cfg.schema_hash = args.schema_hash
        self.reports = self.cfg.resolve(paths.reports)
        self.outputs: list[str] = []

    @property
    def model_path(self) -> Path:
        return self.cfg.resolve(self.cfg.paths.model)

    def report_path(self, name: str) -> Path:
        self.reports.mkdir(parents=True, exist_ok=True)
        p = self.reports / name
        self.outputs.append(str(p))
        return p

    def check_schema(self, hash_value: int) -> None:
        """Refuse stores/models whose schema differs from the configured ``schema_hash``."""
        want = self.cfg.schema_hash
        if want is None or want.lower() == f"{hash_value:016x}":
            return
        if not _is_hex(want):
            raise C.ConfigError(f"schema_hash {want!r} is not a 16-digit hex value")
        raise ModelSchemaError(int(want, 16), hash_value)

    def store(self, must_exist: bool = True) -> FeatureStore:
        root = self.cfg.resolve(self.cfg.paths.store)
        if must_exist and not (root / "manifest.json").exists():
            raise DataError(f"no feature store at {root}; run `rax ingest` or `rax synth` first")
        st = FeatureStore(root)
        self.check_schema(st.manifest.schema_hash)
        return st

    def split(self) -> tuple[EventTable, EventTable]:
        st = self.store()
        path = self.reports / "split.json"
        if path.exists():
            doc = json.loads(path.read_text())
            rows = st.read_all()
            pos = {int(c): i for i, c in enumerate(rows.collision_id)}
            try:
                train = rows.take(np.array([pos[int(c)] for c in doc["train"]], np.int64))
                test = rows.take(np.array([pos[int(c)] for c in doc["test"]], np.int64))
            except KeyError as exc:
                raise DataError(f"split.json references collision_id {exc} absent from the store") from exc
            return train, test
        s = self.cfg.split
        return st.temporal_split(SplitSpec(s.n_test, s.n_train))

    def model(self):
        path = self.model_path
        if not path.exists():
            raise DataError(f"model file {path} not found; run `rax train` first")
        m = load_model(path)
        self.check_schema(m.schema_hash)
        if m.schema_hash != canonical_schema().schema_hash:
            raise ModelSchemaError(m.schema_hash, canonical_schema().schema_hash)
        return m

    def strategy(self) -> ImbalanceStrategy:
        ic = self.cfg.imbalance
        name = getattr(self.args, "strategy", None) or ic.strategy
        base = ImbalanceStrategy.parse(name)
        return replace(base, target_fatal_share=ic.target_fatal_share, k_neighbors=ic.k_neighbors, gamma=ic.gamma)


def _is_hex(s: str) -> bool:
    try:
        int(s, 16)
        return len(s) == 16
    except ValueError:
        return False


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_ingest(ctx: Context) -> None:
    a, cfg = ctx.args, ctx.cfg
    srcs = {}
    for kind, key in ((TableKind.Crash, "crashes"), (TableKind.Person, "persons"), (TableKind.Vehicle, "vehicles")):
        flag = getattr(a, key)
        path = Path(flag).resolve() if flag else cfg.resolve(getattr(cfg.paths, key))
        if path is None:
            raise C.ConfigError(f"no input path for {key}: pass --{key} or set paths.{key}")
        if not path.is_file():
            raise C.ConfigError(f"input file for {key} not found: {path}")
        headers = getattr(cfg.columns, key)
        mapping = ColumnMapping(kind, headers) if headers else None
        srcs[key] = parse_table(path, kind, mapping)
    rows, join = join_tables(srcs["crashes"][0], srcs["persons"][0], srcs["vehicles"][0])
    table = EventTable.from_rows(rows)
    st = ctx.store(must_exist=False)
    st.write_table(table)
    _write_json(ctx.report_path("ingest.json"), {
        "tables": {k: v[1].to_dict() for k, v in srcs.items()},
        "join": join.to_dict(),
        "events_written": len(table),
        "partitions": [str(k) for k in st.keys()],
    })


def cmd_synth(ctx: Context) -> None:
    s = ctx.cfg.synth
    n = ctx.args.n_events or s.n_events
    sc = SynthConfig(n_events=n, rng_seed=ctx.cfg.seed, class_prior=tuple(s.class_prior),
                     beta_ejected=s.beta_ejected, beta_pedestrian=s.beta_pedestrian,
                     beta_night=s.beta_night, beta_safety=s.beta_safety,
                     beta_interaction=s.beta_interaction, start_year=s.start_year,
                     start_month=s.start_month, n_months=s.n_months)
    table = generate(sc)
    st = ctx.store(must_exist=False)
    st.write_table(table)
    _write_json(ctx.report_path("synth.json"), {
        "config": asdict(sc),
        "rows": len(table),
        "class_counts": class_counts(table.label).tolist(),
        "partitions": [str(k) for k in st.keys()],
    })


def cmd_split(ctx: Context) -> None:
    a, s = ctx.args, ctx.cfg.split
    spec = SplitSpec(a.n_test or s.n_test, a.n_train or s.n_train)
    train, test = ctx.store().temporal_split(spec)
    _write_json(ctx.report_path("split.json"), {
        "n_train": len(train),
        "n_test": len(test),
        "train_end": int(train.timestamp.max()),
        "test_start": int(test.timestamp.min()),
        "train": train.collision_id.tolist(),
        "test": test.collision_id.tolist(),
    })


def _boosting_config(ctx: Context) -> BoostingConfig:
    m, a = ctx.cfg.model, ctx.args
    return BoostingConfig(
        n_rounds=getattr(a, "n_rounds", None) or m.n_rounds,
        max_depth=m.max_depth,
        learning_rate=m.learning_rate,
        row_subsample=m.row_subsample,
        col_subsample=m.col_subsample,
        reg_lambda=m.reg_lambda,
        min_leaf_weight=m.min_leaf_weight,
        rng_seed=ctx.cfg.seed,
    )


def cmd_train(ctx: Context) -> None:
    kind = ctx.args.kind or ctx.cfg.model.kind
    strategy = ctx.strategy()
    train, _ = ctx.split()
    aug, report = apply_strategy(train, strategy, ctx.cfg.seed)
    X, y = aug.model_matrix(), aug.label
    weighted = strategy.kind in ("Weighted", "Focal")
    cw = compute_class_weights(class_counts(train.label)) if weighted else None
    m = ctx.cfg.model
    if kind == "boosted":
        model = fit_gradient_boosting(X, y, objective_for(strategy, train.label), _boosting_config(ctx),
                                      schema_hash=train.schema_hash)
    elif strategy.kind == "Focal":
        raise C.ConfigError("the Focal strategy needs model.kind = boosted")
    elif kind == "forest":
        fc = ForestConfig(n_trees=m.n_trees, max_depth=m.forest_max_depth, min_leaf=m.min_leaf,
                          class_weights=None if cw is None else tuple(cw), rng_seed=ctx.cfg.seed)
        model = fit_random_forest(X, y, fc, train.schema_hash)
    else:
        sw = None if cw is None else cw[y]
        model = fit_logistic(X, y, l2=m.l2, sample_weight=sw, schema_hash=train.schema_hash)
    path = ctx.model_path
    save_model(model, path)
    ctx.outputs.append(str(path))
    _write_json(ctx.report_path("train.json"), {
        "model": kind,
        "strategy": strategy.label,
        "augmentation": report.to_dict(),
        "rows": len(aug),
        "model_file": str(path),
    })


def cmd_evaluate(ctx: Context) -> None:
    model = ctx.model()
    _, test = ctx.split()
    pred = np.argmax(predict_proba(model, test), axis=1)
    metrics = evaluate(test.label, pred)
    _write_json(ctx.report_path("metrics.json"), metrics.to_dict(model.kind, ctx.strategy().label))


def _sample_rows(table: EventTable, max_rows: int) -> EventTable:
    if len(table) <= max_rows:
        return table
    return table.take(np.linspace(0, len(table) - 1, max_rows).round().astype(np.int64))


def cmd_shap(ctx: Context) -> None:
    model = ctx.model()
    _, test = ctx.split()
    rows = _sample_rows(test, ctx.args.max_rows or ctx.cfg.shap.max_rows)
    phi = ensemble_phi(model, rows.model_matrix())
    imp = global_importance(phi)
    ctx.report_path("shap_ranking.csv").write_text(imp.to_csv(), encoding="utf-8")
    if ctx.args.per_event:
        from .explain import ShapAttribution, ensemble_base, write_jsonl as shap_jsonl

        base = ensemble_base(model)
        scale = "logit" if model.kind == "boosted" else "probability"
        with ctx.report_path("shap_events.jsonl").open("w", encoding="utf-8") as fh:
            shap_jsonl((ShapAttribution(int(c), phi[i], base, scale) for i, c in enumerate(rows.collision_id)), fh)


def _backend(ctx: Context):
    n = ctx.cfg.narrative
    which = ctx.args.backend or n.backend
    if which == "template":
        return TemplateBackend(_lexicon(ctx))
    hc = HttpConfig(base_url=ctx.args.url or n.base_url, model=n.model, timeout=n.timeout,
                    max_retries=n.max_retries, backoff=n.backoff)
    try:
        return HttpBackend(hc)
    except BackendError as exc:
        raise C.ConfigError(str(exc)) from exc


def _lexicon(ctx: Context) -> Lexicon | None:
    p = ctx.cfg.resolve(ctx.cfg.narrative.lexicon)
    if p is None:
        return None
    if not p.is_file():
        raise C.ConfigError(f"lexicon file {p} not found")
    return Lexicon.from_json(p.read_text(encoding="utf-8"))


def cmd_explain(ctx: Context) -> None:
    model = ctx.model()
    if model.kind == "linear":
        raise C.ConfigError("explain needs a tree model for SHAP attributions")
    _, test = ctx.split()
    g = ctx.cfg.gating
    gcfg = GatingConfig(ctx.args.threshold if ctx.args.threshold is not None else g.threshold, g.gated_mass)
    proba = predict_proba(model, test)
    gated = np.array([i for i in range(len(test)) if gate(proba[i] / proba[i].sum(), gcfg)], np.int64)
    gated = gated[: ctx.args.max_events or ctx.cfg.narrative.max_events]
    rows = test.take(gated)
    k = ctx.cfg.shap.top_k
    phi = ensemble_phi(model, rows.model_matrix()) if len(rows) else np.zeros((0, len(test.schema), 3))
    names = test.schema.names
    requests = []
    for j, i in enumerate(gated):
        p = proba[i] / proba[i].sum()
        mag = np.abs(phi[j]).mean(axis=1)
        top = [names[t] for t in sorted(range(len(names)), key=lambda t: (-mag[t], names[t]))[:k]]
        prompt = augment_with_probs(build_prompt(rows.row(j)), p)
        requests.append(NarrativeRequest(int(test.collision_id[i]), prompt, p, top))
    backend = _backend(ctx)
    results = generate_all(backend, requests, ctx.cfg.narrative.max_in_flight)
    with ctx.report_path("narratives.jsonl").open("w", encoding="utf-8") as fh:
        for req, res in zip(requests, results):
            d = res.to_dict()
            d["shap_top"] = list(req.shap_top)
            d["proba"] = [float(x) for x in req.proba]
            d["prompt"] = req.prompt.render()
            d["true_label"] = int(test.label[test.collision_id == req.collision_id][0])
            fh.write(json.dumps(d) + "\n")
    _write_json(ctx.report_path("explain.json"), {
        "backend": backend.backend_id,
        "gating": {"threshold": gcfg.threshold, "gated_mass": gcfg.gated_mass.value},
        "test_rows": len(test),
        "gated_events": int(len(gated)),
        "parsed": sum(r.predicted_class is not None for r in results),
        "mean_latency": float(np.mean([r.latency for r in results])) if results else 0.0,
    })


def cmd_align(ctx: Context) -> None:
    src = ctx.reports / "narratives.jsonl"
    if not src.exists():
        raise DataError(f"{src} not found; run `rax explain` first")
    items = []
    with src.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                items.append((d["collision_id"], d["shap_top"], d["explanation"]))
    report = build_report(items, _lexicon(ctx), ctx.cfg.shap.top_k)
    ctx.report_path("alignment.json").write_text(report.to_json() + "\n", encoding="utf-8")


def cmd_ablate(ctx: Context) -> None:
    s = ctx.cfg.synth
    seeds = ctx.args.seeds or [ctx.cfg.seed]
    per_seed = []
    for seed in seeds:
        sc = SynthConfig(n_events=ctx.args.n_events or s.n_events, rng_seed=seed,
                         class_prior=tuple(s.class_prior), beta_ejected=s.beta_ejected,
                         beta_pedestrian=s.beta_pedestrian, beta_night=s.beta_night,
                         beta_safety=s.beta_safety, beta_interaction=s.beta_interaction,
                         start_year=s.start_year, start_month=s.start_month, n_months=s.n_months)
        bc = replace(_boosting_config(ctx), rng_seed=seed)
        sp = SplitSpec(ctx.cfg.split.n_test, ctx.cfg.split.n_train)
        per_seed.append((seed, run_ablation(ABLATION_STRATEGIES, sc, bc, sp)))
    with ctx.report_path("ablation_runs.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "strategy", "accuracy", "macro_f1", "recall_fatal"])
        for seed, rows in per_seed:
            for r in rows:
                w.writerow([seed, r.strategy, repr(r.accuracy), repr(r.macro_f1), repr(r.recall_fatal)])
    # one row per strategy: mean over seeds
    mean_rows = []
    for j, first in enumerate(per_seed[0][1]):
        vals = np.array([[rows[j].accuracy, rows[j].macro_f1, rows[j].recall_fatal] for _, rows in per_seed])
        m = vals.mean(axis=0)
        mean_rows.append(replace(first, accuracy=float(m[0]), macro_f1=float(m[1]), recall_fatal=float(m[2])))
    ctx.report_path("ablation.csv").write_text(ablation_csv(mean_rows), encoding="utf-8")


def cmd_score(ctx: Context) -> None:
    model = ctx.model()
    rows = ctx.store().read_all() if ctx.args.all else ctx.split()[1]
    labels, stats = score_batch(model, rows)
    proba = predict_proba(model, rows)
    with ctx.report_path("predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["collision_id", "predicted", "p_no_injury", "p_injury", "p_fatal"])
        for cid, lab, p in zip(rows.collision_id, labels, proba):
            w.writerow([int(cid), int(lab), repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])
    _write_json(ctx.report_path("throughput.json"), stats.to_dict())


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "shap": cmd_shap,
    "explain": cmd_explain,
    "align": cmd_align,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
    "score": cmd_score,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", metavar="PATH", help=f"JSON config file (default: ${C.ENV_CONFIG}, else built-in defaults)")
    g.add_argument("--threads", type=int, metavar="N", help="worker threads for numeric kernels (default: all available cores)")
    g.add_argument("--seed", type=int, help="global RNG seed (overrides config 'seed')")
    g.add_argument("--store", metavar="DIR", help="feature store directory (overrides paths.store)")
    g.add_argument("--reports", metavar="DIR", help="report output directory (overrides paths.reports)")
    g.add_argument("--model-file", metavar="PATH", help="model file (overrides paths.model)")
    g.add_argument("--schema-hash", metavar="HEX", help="expected 16-hex-digit schema hash (overrides config 'schema_hash')")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="rax", description="Crash-severity pipeline: store, models, explanations, narratives.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("ingest", parents=[common], help="build the feature store from crash/person/vehicle CSVs")
    s.add_argument("--crashes", metavar="CSV", help="crash table (overrides paths.crashes)")
    s.add_argument("--persons", metavar="CSV", help="person table (overrides paths.persons)")
    s.add_argument("--vehicles", metavar="CSV", help="vehicle table (overrides paths.vehicles)")

    s = sub.add_parser("split", parents=[common], help="materialise the temporal train/test split")
    s.add_argument("--n-test", type=int, help="most recent events used for testing (overrides split.n_test)")
    s.add_argument("--n-train", type=int, help="preceding events used for training (overrides split.n_train)")

    s = sub.add_parser("train", parents=[common], help="fit the configured model and write the model file")
    s.add_argument("--kind", choices=["boosted", "forest", "linear"], help="model family (overrides model.kind)")
    s.add_argument("--strategy", help="Baseline, Weighted, Oversample, Smote or Focal (overrides imbalance.strategy)")
    s.add_argument("--n-rounds", type=int, help="boosting rounds (overrides model.n_rounds)")

    s = sub.add_parser("evaluate", parents=[common], help="score the test split and write metrics.json")
    s.add_argument("--strategy", help="strategy label recorded in the report (overrides imbalance.strategy)")

    s = sub.add_parser("shap", parents=[common], help="TreeSHAP ranking over test events (shap_ranking.csv)")
    s.add_argument("--max-rows", type=int, help="test events to attribute, evenly spaced (overrides shap.max_rows)")
    s.add_argument("--per-event", action="store_true", help="also write per-event attributions as JSON lines")

    s = sub.add_parser("explain", parents=[common], help="gate test events and write narratives.jsonl")
    s.add_argument("--backend", choices=["template", "http"], help="narrative backend (overrides narrative.backend)")
    s.add_argument("--url", help="HTTP backend base URL (overrides narrative.base_url and $RAX_NARRATIVE_URL)")
    s.add_argument("--threshold", type=float, help="gating threshold in [0, 1] (overrides gating.threshold)")
    s.add_argument("--max-events", type=int, help="cap on narrated events (overrides narrative.max_events)")

    sub.add_parser("align", parents=[common], help="SHAP/narrative alignment report (alignment.json)")

    s = sub.add_parser("ablate", parents=[common], help="imbalance ablation on synthetic data (ablation.csv)")
    s.add_argument("--seeds", type=int, nargs="+", help="synthetic data / training seeds (default: config seed)")
    s.add_argument("--n-events", type=int, help="synthetic events per seed (overrides synth.n_events)")
    s.add_argument("--n-rounds", type=int, help="boosting rounds (overrides model.n_rounds)")

    s = sub.add_parser("synth", parents=[common], help="write synthetic events into the feature store")
    s.add_argument("--n-events", type=int, help="number of events (overrides synth.n_events)")

    s = sub.add_parser("score", parents=[common], help="batch predictions and throughput")
    s.add_argument("--all", action="store_true", help="score every stored event instead of the test split")
    return p


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("rax", "numpy", "scipy", "numba", "httpx"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _set_threads(n: int | None) -> None:
    import numba

    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat()
    ctx = None
    code = EXIT_OK
    try:
        _set_threads(args.threads)
        ctx = Context(args)
        COMMANDS[args.command](ctx)
    except (UsageError, C.ConfigError) as exc:
        code = _fail(EXIT_USAGE, exc)
    except DATA_ERRORS as exc:
        code = _fail(EXIT_DATA, exc)
    except BackendError as exc:
        code = _fail(EXIT_BACKEND, exc)
    except (PromptError, ValueError) as exc:
        # remaining value errors come from invalid settings (thresholds, priors, ...)
        code = _fail(EXIT_USAGE, exc)
    if ctx is not None:
        outputs = list(ctx.outputs)
        try:
            _write_json(ctx.report_path(f"run_{args.command}.json"), {
                "command": args.command,
                "argv": argv,
                "exit_code": code,
                "config_sha256": ctx.cfg.digest(),
                "seed": ctx.cfg.seed,
                "schema_hash": canonical_schema().hash_hex,
                "versions": _versions(),
                "outputs": outputs,
                "started_at": started,
                "finished_at": datetime.now(timezone.utc).isoformat(),
            })
        except OSError as exc:
            log.warning("could not write run manifest: %s", exc)
    return code


if __name__ == "__main__":
    sys.exit(main())
