"""Command-line entry point: ``qoe-eeg {synth,extract,train,gridsearch,ablate,report}``.

Settings come from an optional JSON run config (``--config``); command-line
flags override it and built-in defaults fill the rest. Relative paths in a
config file are resolved against the file's directory. Exit codes: 0 on
success, 1 on a data or runtime failure, 2 on a configuration failure.

Run config keys (all optional)::

    {
      "manifest": "recordings or dataset manifest", "out": "output dir",
      "seed": 0, "jobs": 1, "factor": "VQ", "kind": "band", "count": 30,
      "synth": {cohort spec}, "filter": {"low": 1, "high": 47, "order": 4},
      "plan": {"window_len": 750, "hop": 375, ...},
      "model": {"architecture": "bilstm", "units1": 16, ..., "preset": "reference"},
      "train": {"epochs": 100, "lr": 0.001, "batch_size": 32, "folds": 10},
      "grid": {"units1": [...], "units2": [...], "dropout": [...], "l2": [...]}
    }

``model.preset = "reference"`` takes units/dropout/L2 from the reference
per-factor optima for the chosen factor.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import cohort, dsp, fileio, ingest, report, seeding
from .dataset import (
    LabeledDataset,
    QoEFactor,
    assemble,
    featurize,
    fit_normalizer,
    load_dataset,
    stratified_split,
    write_feature_tensor,
)
from .errors import (
    EmptyAxis,
    InvalidBand,
    InvalidConfig,
    InvalidKind,
    InvalidSpec,
    QoEError,
    SegmentTooShort,
)
from .nn import checkpoint
from .nn.model import ModelConfig
from .train import (
    DEFAULT_GRID,
    REFERENCE_HYPERPARAMETERS,
    TrainConfig,
    ablate,
    evaluate,
    grid_search,
    train_model,
)

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
CONFIG_ERRORS = (InvalidSpec, InvalidConfig, InvalidKind, EmptyAxis, InvalidBand, SegmentTooShort)

log = logging.getLogger("qoe_eeg")


class ConfigError(Exception):
    """Bad run configuration; exit code 2."""


@dataclass
class RunConfig:
    manifest: Path | None = None
    out: Path | None = None
    seed: int = 0
    jobs: int = 1
    force: bool = False
    factor: str = "VQ"
    kind: str = "band"
    count: int = 30
    synth: dict = field(default_factory=dict)
    filter: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    grid: dict | None = None
    seed_given: bool = field(default=False, repr=False)

    PATH_KEYS = ("manifest", "out")

    @classmethod
    def resolve(cls, args) -> "RunConfig":
        """Defaults, then the config file, then explicit flags."""
        values = {}
        if getattr(args, "config", None):
            path = Path(args.config)
            try:
                raw = json.loads(path.read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file {path} not found") from None
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
            if not isinstance(raw, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
            unknown = set(raw) - set(cls.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
            for key, value in raw.items():
                if key in cls.PATH_KEYS and value is not None:
                    value = path.parent / value
                values[key] = value
        for key in cls.__dataclass_fields__:
            if key == "seed_given":
                continue
            flag = getattr(args, key, None)
            if flag is not None and flag is not False:
                values[key] = flag
        for key in cls.PATH_KEYS:
            if values.get(key) is not None:
                values[key] = Path(values[key])
        cfg = cls(**values, seed_given="seed" in values)
        cfg.check()
        return cfg

    def check(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise ConfigError(f"jobs must be a positive integer, got {self.jobs!r}")
        try:
            QoEFactor(self.factor)
        except ValueError:
            raise ConfigError(f"unknown factor {self.factor!r}") from None

    def require(self, *keys) -> None:
        for key in keys:
            if getattr(self, key) is None:
                raise ConfigError(f"{key} is required (flag --{key} or config key {key!r})")
        if "manifest" in keys and not self.manifest.exists():
            raise ConfigError(f"manifest {self.manifest} does not exist")

    def model_config(self, input_dim: int) -> ModelConfig:
        opts = dict(self.model)
        if opts.pop("preset", None) == "reference":
            opts = {**REFERENCE_HYPERPARAMETERS[self.factor], **opts}
        try:
            mc = ModelConfig.from_dict({**opts, "input_dim": input_dim})
        except TypeError as e:
            raise ConfigError(f"bad model config: {e}") from None
        mc.validate()
        return mc

    def train_config(self, architecture: str) -> TrainConfig:
        try:
            return TrainConfig.for_architecture(architecture, **{**self.train, "seed": self.seed})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad train config: {e}") from None


# -- plumbing --------------------------------------------------------------------

def _setup_logging(out: Path | None) -> None:
    name = os.environ.get("QOE_EEG_LOG", "info").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"QOE_EEG_LOG must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    log.setLevel(LOG_LEVELS[name])
    log.propagate = False
    if out is not None:
        handler = logging.FileHandler(out / "run.log")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)
    else:
        log.addHandler(logging.NullHandler())


def _prepare_out(cfg: RunConfig, produced) -> Path:
    if cfg.out is None:
        raise ConfigError("out is required (flag --out or config key 'out')")
    cfg.out.mkdir(parents=True, exist_ok=True)
    if not os.access(cfg.out, os.W_OK):
        raise ConfigError(f"output dir {cfg.out} is not writable")
    existing = [p for p in produced if (cfg.out / p).exists()]
    if existing and not cfg.force:
        raise FileExistsError(f"{cfg.out / existing[0]} exists; refusing to overwrite "
                              f"without --force")
    _setup_logging(cfg.out)
    return cfg.out


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _echo(text: str = "") -> None:
    print(text, flush=True)


def _metrics_line(prefix: str, rep) -> str:
    return (f"{prefix}: accuracy {rep.accuracy:.4f}  macro-F1 {rep.macro_f1:.4f}  "
            f"precision {rep.macro_precision:.4f}  recall {rep.macro_recall:.4f}")


def _entries_kind(path: Path) -> str:
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: manifest is not valid JSON: {e}") from None
    entries = raw.get("entries") or []
    if entries and "features" in entries[0]:
        return "features"
    return "recordings"


def _filter_for(cfg: RunConfig, rate: float) -> dsp.IirFilter:
    opts = {"low": dsp.FILTER_LOW, "high": dsp.FILTER_HIGH, "order": dsp.FILTER_ORDER}
    opts.update(cfg.filter)
    return dsp.design_bandpass(opts["low"], opts["high"], int(opts["order"]), rate)


def _plan_for(cfg: RunConfig, rate: float) -> dsp.WindowPlan:
    plan = dsp.WindowPlan.for_rate(rate)
    if cfg.plan:
        try:
            plan = replace(plan, **cfg.plan)
        except TypeError as e:
            raise ConfigError(f"bad plan: {e}") from None
    plan.validate()
    return plan


def load_labeled(cfg: RunConfig) -> LabeledDataset:
    """Dataset manifest as written by ``extract``, or a raw recordings manifest."""
    cfg.require("manifest")
    if _entries_kind(cfg.manifest) == "features":
        return load_dataset(cfg.manifest, cfg.factor)
    pairs = []
    for rec, rating in ingest.load_manifest(cfg.manifest):
        ft = featurize(rec, _filter_for(cfg, rec.sample_rate), _plan_for(cfg, rec.sample_rate))
        pairs.append((ft, rating))
    return assemble(pairs, cfg.factor)


def _subset(ds: LabeledDataset, indices) -> LabeledDataset:
    return LabeledDataset(ds.factor, [ds.examples[i] for i in indices])


def _confusion_csv(rep) -> str:
    rows = [["counts"] + list(r) for r in rep.confusion]
    rows += [["row_normalized"] + [f"{v:.6f}" for v in r] for r in rep.row_normalized()]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "pred_low", "pred_middle", "pred_high"])
    w.writerows(rows)
    return buf.getvalue()


def _history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "cross_entropy"])
    for h in history:
        w.writerow([h["epoch"], repr(h["loss"]), repr(h["cross_entropy"])])
    return buf.getvalue()


def _fit_and_report(cfg, ds, mc, tc, train_idx, test_idx, out: Path, extra: dict) -> None:
    """Normalize on the train split, train, score the test split, write artifacts."""
    norm = fit_normalizer(ds, train_idx)
    nds = ds.with_normalization(norm)
    log.info("training %s on %d examples, testing on %d", mc.architecture, len(train_idx),
             len(test_idx))
    model, history = train_model(nds, mc, tc, train_idx)
    rep = evaluate(model, nds, test_idx)
    body = {"factor": cfg.factor, "architecture": mc.architecture, "seed": cfg.seed,
            "model": model.config.to_dict(), "train": asdict(tc),
            "n_train": len(train_idx), "n_test": len(test_idx), "report": rep.to_dict()}
    body.update(extra)
    checkpoint.save(out / "checkpoint.bin", model.params, model.config.to_dict(), tc.seed,
                    {"factor": cfg.factor, "normalization": norm.to_dict(),
                     "columns": list(ds.columns)})
    fileio.write_text(out / "eval.json", _json(body))
    fileio.write_text(out / "history.csv", _history_csv(history))
    fileio.write_text(out / "confusion.csv", _confusion_csv(rep))
    _echo(_metrics_line(f"{cfg.factor} test", rep))
    log.info("test report %s", rep.to_dict())


def _split(cfg: RunConfig, ds: LabeledDataset, tc: TrainConfig):
    return stratified_split(ds.labels, tc.train_fraction, seeding.derive(cfg.seed, "split"))


# -- commands ----------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    spec = dict(cfg.synth)
    if cfg.seed_given or "seed" not in spec:
        spec["seed"] = cfg.seed
    spec = cohort.normalize_spec(spec)
    if cfg.count < 1:
        raise ConfigError(f"count must be >= 1, got {cfg.count}")
    out = _prepare_out(cfg, ["manifest.json"])
    tmp = Path(tempfile.mkdtemp(dir=out, prefix=".synth."))
    try:
        cohort.write_cohort(spec, cfg.count, tmp)
        # manifest last, so a partial directory never looks complete
        names = sorted(p.name for p in tmp.iterdir() if p.name != "manifest.json")
        for name in names + ["manifest.json"]:
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    log.info("wrote %d recordings to %s", cfg.count, out)
    _echo(f"synth: {cfg.count} recordings, {cfg.count} ratings, 1 manifest -> {out}")
    return EXIT_OK


def _extract_one(job):
    i, entry, stem, out, filt_opts, plan_opts = job
    try:
        rec, rating = ingest.load_pair(entry)
        cfg = RunConfig(filter=filt_opts, plan=plan_opts)
        ft = featurize(rec, _filter_for(cfg, rec.sample_rate), _plan_for(cfg, rec.sample_rate))
        write_feature_tensor(ft, out / f"{stem}.features.csv")
        ingest.write_ratings(rating, out / f"{stem}.ratings.json")
        return i, ft.values.shape, None
    except (QoEError, OSError, KeyError, ConfigError) as e:
        return i, None, str(e)


def cmd_extract(cfg: RunConfig) -> int:
    cfg.require("manifest")
    entries = ingest.read_entries(cfg.manifest)
    if not entries:
        _echo(f"extract: {cfg.manifest} has no entries")
        return EXIT_DATA
    stems = [Path(e.get("recording", f"entry{i}")).stem for i, e in enumerate(entries)]
    if len(set(stems)) != len(stems):
        stems = [f"{i:04d}_{s}" for i, s in enumerate(stems)]
    produced = ["dataset.json"] + [f"{s}.features.csv" for s in stems]
    out = _prepare_out(cfg, produced)
    jobs = [(i, e, s, out, cfg.filter, cfg.plan) for i, (e, s) in enumerate(zip(entries, stems))]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]
    ok, failed = [], []
    for i, shape, err in results:
        if err is None:
            ok.append(i)
            _echo(f"{stems[i]}: T={shape[0]} columns={shape[1]}")
        else:
            failed.append(i)
            _echo(f"{stems[i]}: FAILED entry {i}: {err}")
            log.error("entry %d (%s) failed: %s", i, entries[i].get("recording"), err)
    manifest = {"factor": cfg.factor, "seed": cfg.seed,
                "entries": [{"features": f"{stems[i]}.features.csv",
                             "ratings": f"{stems[i]}.ratings.json"} for i in ok]}
    if ok:
        fileio.write_text(out / "dataset.json", _json(manifest))
    _echo(f"extract: {len(ok)} of {len(entries)} entries written, {len(failed)} failed")
    if failed:
        _echo("failed entries: " + ", ".join(str(i) for i in failed))
        return EXIT_DATA
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    produced = ["checkpoint.bin", "eval.json", "history.csv"]
    cfg.require("manifest")
    out = _prepare_out(cfg, produced)
    ds = load_labeled(cfg)
    mc = cfg.model_config(len(ds.columns))
    tc = cfg.train_config(mc.architecture)
    train_idx, test_idx = _split(cfg, ds, tc)
    _fit_and_report(cfg, ds, mc, tc, train_idx, test_idx, out, {})
    return EXIT_OK


def cmd_gridsearch(cfg: RunConfig) -> int:
    cfg.require("manifest")
    out = _prepare_out(cfg, ["grid.json", "eval.json", "checkpoint.bin"])
    ds = load_labeled(cfg)
    base = cfg.model_config(len(ds.columns))
    tc = cfg.train_config(base.architecture)
    axes = cfg.grid if cfg.grid is not None else DEFAULT_GRID
    train_idx, test_idx = _split(cfg, ds, tc)
    result = grid_search(_subset(ds, train_idx), axes, tc, base, cfg.jobs)
    fileio.write_text(out / "grid.json", _json({"factor": cfg.factor, **result.to_dict()}))
    top = result.ranked()[0]
    _echo(f"grid: {len(result.cells)} cells; best units {top.config.units1}/{top.config.units2} "
          f"dropout {top.config.dropout} l2 {top.config.l2}: CV macro-F1 "
          f"{top.mean_f1:.4f} +- {top.std_f1:.4f}")
    _fit_and_report(cfg, ds, result.best, tc, train_idx, test_idx, out,
                    {"selected_by": "grid", "cv_macro_f1": top.mean_f1})
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    cfg.require("manifest")
    out = _prepare_out(cfg, ["ablation.json", "ablation.csv"])
    ds = load_labeled(cfg)
    mc = cfg.model_config(len(ds.columns))
    tc = cfg.train_config(mc.architecture)
    rep = ablate(ds, cfg.kind, mc, tc, cfg.jobs)
    body = {"factor": cfg.factor, "architecture": mc.architecture, "seed": cfg.seed,
            **rep.to_dict()}
    fileio.write_text(out / "ablation.json", _json(body))
    fileio.write_text(out / "ablation.csv", report.csv_text(
        ("removed", "f1", "delta"), [[e.removed, e.f1, e.delta] for e in rep.entries]))
    _echo(f"ablation ({cfg.kind}), baseline macro-F1 {rep.baseline_f1:.4f}")
    for e in rep.entries:
        _echo(f"  without {e.removed}: macro-F1 {e.f1:.4f} (delta {e.delta:+.4f})")
    return EXIT_OK


def cmd_report(cfg: RunConfig, results: Path | None) -> int:
    results = results or cfg.manifest
    if results is None:
        raise ConfigError("report needs a results directory")
    results = Path(results)
    if not results.is_dir():
        raise ConfigError(f"results directory {results} does not exist")
    out = cfg.out or results
    evals = report.find_results(results, "eval.json")
    ablations = report.find_results(results, "ablation.json")
    if not evals and not ablations:
        _echo(f"report: no eval.json or ablation.json under {results}")
        return EXIT_DATA
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(out)
    files = {}
    if evals:
        files.update(report.metrics_outputs(evals))
    if ablations:
        files.update(report.ablation_outputs(ablations))
    for name, text in sorted(files.items()):
        fileio.write_text(out / name, text)
        _echo(f"report: wrote {out / name}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="base seed for every random stream")
    common.add_argument("--jobs", type=int, help="maximum concurrent worker processes")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", type=Path, help="recordings or dataset manifest")
    data.add_argument("--factor", choices=[f.value for f in QoEFactor])

    p = argparse.ArgumentParser(prog="qoe-eeg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic cohort")
    s.add_argument("--spec", type=Path, help="cohort spec JSON")
    s.add_argument("--count", type=int)
    sub.add_parser("extract", parents=[common, data], help="featurize recordings")
    sub.add_parser("train", parents=[common, data], help="train and test one model")
    sub.add_parser("gridsearch", parents=[common, data], help="grid search, retrain, test")
    a = sub.add_parser("ablate", parents=[common, data], help="band or electrode ablation")
    a.add_argument("--kind", choices=["band", "electrode"])
    r = sub.add_parser("report", parents=[common], help="render SVG charts and CSV tables")
    r.add_argument("results", nargs="?", type=Path, help="directory with result files")
    return p


def _run(args) -> int:
    cfg = RunConfig.resolve(args)
    if args.command == "synth":
        if args.spec is not None:
            try:
                cfg.synth = json.loads(Path(args.spec).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read spec {args.spec}: {e}") from None
        return cmd_synth(cfg)
    if args.command == "report":
        return cmd_report(cfg, args.results)
    return {"extract": cmd_extract, "train": cmd_train, "gridsearch": cmd_gridsearch,
            "ablate": cmd_ablate}[args.command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CONFIG_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (QoEError, FileExistsError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        if log.handlers:
            log.error("%s", e)
        return EXIT_DATA
    finally:
        for h in list(log.handlers):
            log.removeHandler(h)
            h.close()


if __name__ == "__main__":
    sys.exit(main())
