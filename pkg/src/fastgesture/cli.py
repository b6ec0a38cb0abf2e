"""Command line entry point: ``python -m fastgesture <verb> ...``.

Every verb resolves its settings from built-in defaults, then an optional
``--config`` manifest, then flags (``--set section.key=value`` reaches any
field), and writes the resolved manifest to ``<out>/config.ini``. Running
the same verb again with ``--config <out>/config.ini`` reproduces the
outputs.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import sys
from io import StringIO
from pathlib import Path
from typing import Any

import numpy as np

from . import metrics, oracle, sampling, synthdata
from .models import GestureModel, ModelConfig, Normalizer, init_generator
from .numerics import NumericalError
from .training import TrainConfig, fit

log = logging.getLogger("fastgesture")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------
# configuration


@dataclasses.dataclass(frozen=True)
class DataConfig:
    count: int = 1000
    split: str = "0.8,0.1,0.1"
    styles: int = 4
    frames: int = 80
    fps: float = 20.0
    seed_frames: int = 8
    seed: int = 0

    def ratios(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.split.split(","))


@dataclasses.dataclass(frozen=True)
class EvalConfig:
    div_k: int = 5
    div_tracks: int = 20
    bench_tracks: int = 8
    reps: int = 5
    extractor_epochs: int = 60
    extractor_dim: int = 32
    extractor_seed: int = 0


@dataclasses.dataclass(frozen=True)
class OracleConfig:
    mean: float = 1.0
    std: float = 0.1
    abar_prev: float = 0.99
    abar_t: float = 0.01
    fine_ratio: float = 0.98
    xt_min: float = -1.0
    xt_max: float = 1.0
    xt_count: int = 21
    grid: int = 2001


SECTIONS = {
    "data": DataConfig,
    "train": TrainConfig,
    "model": ModelConfig,
    "sampler": sampling.SamplerSpec,
    "eval": EvalConfig,
    "oracle": OracleConfig,
}


def _fields(cls) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name == "model":
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        out[f.name] = default
    return out


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, default):
    text = text.strip()
    if text.lower() == "none":
        return None
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {text!r}")
    try:
        if isinstance(default, int) or default is None:
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return text


class RunConfig:
    """Sectioned key=value settings for one command."""

    def __init__(self):
        self.values = {name: _fields(cls) for name, cls in SECTIONS.items()}
        self.run = {"command": "", "out": ""}

    def set(self, section: str, key: str, text: str) -> None:
        if section not in self.values or key not in self.values[section]:
            raise UsageError(f"unknown setting {section}.{key}")
        self.values[section][key] = _parse(text, self.values[section][key])

    def set_value(self, section: str, key: str, value) -> None:
        if value is not None:
            self.set(section, key, _format(value))

    def update_from_file(self, path) -> None:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(path):
            raise OSError(f"cannot read config {path}")
        for section in cp.sections():
            for key, text in cp[section].items():
                if section == "run":
                    continue
                self.set(section, key, text)

    def to_text(self, sections=None) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = dict(self.run)
        for name in sections or SECTIONS:
            cp[name] = {k: _format(v) for k, v in self.values[name].items()}
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, out: Path, sections=None) -> Path:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "config.ini"
        path.write_text(self.to_text(sections))
        return path

    # typed views
    def data(self) -> DataConfig:
        return DataConfig(**self.values["data"])

    def model(self) -> ModelConfig:
        return ModelConfig(**self.values["model"])

    def train(self) -> TrainConfig:
        return TrainConfig(**self.values["train"], model=self.model())

    def sampler(self) -> sampling.SamplerSpec:
        return sampling.SamplerSpec(**self.values["sampler"])

    def eval(self) -> EvalConfig:
        return EvalConfig(**self.values["eval"])

    def oracle(self) -> OracleConfig:
        return OracleConfig(**self.values["oracle"])


# ----------------------------------------------------------------------
# helpers


def _out_dir(args, force_check: bool = False) -> Path:
    out = Path(args.out)
    if force_check and out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _make_data(dc: DataConfig) -> dict[str, synthdata.GestureDataset]:
    return synthdata.make_dataset(dc.count, dc.ratios(), n_styles=dc.styles, N=dc.frames, fps=dc.fps, seed=dc.seed, seed_frames=dc.seed_frames)


def load_split(cfg: RunConfig, data_dir, split: str) -> synthdata.GestureDataset:
    dc = cfg.data()
    if data_dir is None:
        return _make_data(dc)[split]
    path = Path(data_dir) / f"{split}.csv"
    return synthdata.read_csv(path, fps=dc.fps, seed_frames=dc.seed_frames, n_styles=dc.styles)


def _extractor(cfg: RunConfig, data_dir, path: Path | None) -> metrics.FeatureExtractor:
    if path is not None and path.exists():
        return metrics.FeatureExtractor.load(path)
    ec = cfg.eval()
    fe = metrics.train_feature_extractor(
        load_split(cfg, data_dir, "train"), load_split(cfg, data_dir, "val"), d_f=ec.extractor_dim, epochs=ec.extractor_epochs, seed=ec.extractor_seed
    )
    if path is not None:
        fe.save(path)
    return fe


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _evaluate(cfg: RunConfig, model: GestureModel, spec, test, fe) -> metrics.MetricsReport:
    ec = cfg.eval()
    return metrics.evaluate(model, spec, test, fe, div_k=ec.div_k, div_tracks=ec.div_tracks, bench_tracks=ec.bench_tracks, bench_reps=ec.reps)


# ----------------------------------------------------------------------
# verbs


def cmd_data(cfg: RunConfig, args) -> int:
    out = _out_dir(args, force_check=True)
    splits = _make_data(cfg.data())
    for name, ds in splits.items():
        synthdata.write_csv(out / f"{name}.csv", ds)
    cfg.write(out, ["data"])
    print("  ".join(f"{k}={len(v)}" for k, v in splits.items()))
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    train = load_split(cfg, args.data, "train")
    cfg.write(out, ["data", "train", "model"])
    res = fit(cfg.train(), train, out_dir=out, checkpoint_every=args.checkpoint_every, resume_from=args.resume, stop_at=args.stop_at)
    for w in res.warnings:
        log.warning(w)
    last = res.history[-1] if res.history else None
    if last is not None:
        print(f"step={last.step + 1} d_loss={last.d_loss:.4f} g_adv={last.g_adv:.4f} g_recon={last.g_recon:.4f}")
    return EXIT_OK


def cmd_sample(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    model = GestureModel.load(args.model)
    ds = load_split(cfg, args.data, args.split)
    if args.count is not None:
        ds = ds.subset(np.arange(min(args.count, len(ds))))
    spec = cfg.sampler()
    pos = sampling.sample_batch(spec, model, ds.tracks())
    gen = dataclasses.replace(ds, positions=pos)
    synthdata.write_csv(out / "samples.csv", gen)
    cfg.write(out, ["data", "sampler"])
    print(f"wrote {len(gen)} clips to {out / 'samples.csv'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    model = GestureModel.load(args.model)
    fe_path = Path(args.extractor) if args.extractor else Path(args.model).with_name("extractor.npz")
    fe = _extractor(cfg, args.data, fe_path)
    report = _evaluate(cfg, model, cfg.sampler(), load_split(cfg, args.data, "test"), fe)
    metrics.write_metrics_csv(out / "metrics.csv", [report])
    cfg.write(out, ["data", "sampler", "eval"])
    print(report.table())
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    ds = load_split(cfg, None, "test")
    tracks = ds.tracks()[: cfg.eval().bench_tracks]
    spec = cfg.sampler()
    rows = []
    step_list = [int(s) for s in args.steps.split(",")] if args.steps else [None]
    for steps in step_list:
        if args.model:
            model = GestureModel.load(args.model)
            s = dataclasses.replace(spec, steps=steps)
        else:
            # latency only depends on the architecture, so untrained weights suffice
            T = steps or cfg.train().T
            tc = dataclasses.replace(cfg.train(), T=T)
            params = init_generator(tc.model, np.random.default_rng(tc.seed))
            model = GestureModel(tc.model, params, Normalizer(np.zeros(tc.model.n_feat), 1.0), tc.make_schedule())
            s = dataclasses.replace(spec, steps=None if spec.kind != "ddim" else T)
        rep = sampling.benchmark(s, model, tracks, repetitions=cfg.eval().reps)
        rows.append(rep.row())
        print(f"{rep.sampler:<12} steps={rep.steps:<4} ms/frame={rep.ms_per_frame:.4f}")
    _write_rows(out / "latency.csv", sampling.LatencyReport.HEADER, rows)
    cfg.write(out, ["data", "train", "model", "sampler", "eval"])
    return EXIT_OK


def oracle_tables(oc: OracleConfig):
    data = oracle.GaussianMixture1D([0.5, 0.5], [-oc.mean, oc.mean], [oc.std, oc.std])
    gaps = {
        "large": (oc.abar_t, oc.abar_prev),
        "small": (oc.abar_t, oc.abar_t / oc.fine_ratio),
    }
    xts = np.linspace(oc.xt_min, oc.xt_max, oc.xt_count)
    densities, summary = {}, []
    for name, (at, ap) in gaps.items():
        rows = []
        for xt in xts:
            post = oracle.exact_posterior(data, at, ap, float(xt))
            xs, quad = oracle.quadrature_posterior(data, at, ap, float(xt), grid=oc.grid)
            exact = post.mixture.pdf(xs)
            dev = float(np.max(np.abs(exact - quad)))
            rows += [[repr(float(xt)), repr(float(x)), repr(float(e)), repr(float(q)), repr(float(abs(e - q)))] for x, e, q in zip(xs, exact, quad)]
            modes = ";".join(f"{m:.6f}" for m in post.mode_locations)
            summary.append([name, repr(at), repr(ap), repr(float(xt)), len(post.mode_locations), modes, repr(dev)])
        densities[name] = rows
    return densities, summary


def cmd_oracle(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    densities, summary = oracle_tables(cfg.oracle())
    for name, rows in densities.items():
        _write_rows(out / f"density_{name}_gap.csv", ("x_t", "x_prev", "exact", "quadrature", "abs_diff"), rows)
    _write_rows(out / "modes.csv", ("gap", "abar_t", "abar_prev", "x_t", "mode_count", "modes", "max_quadrature_dev"), summary)
    cfg.write(out, ["oracle"])
    for row in summary:
        if float(row[3]) == 0.0:
            print(f"{row[0]} gap: x_t=0 -> {row[4]} mode(s) at {row[5]}")
    print(f"max |exact - quadrature| = {max(float(r[6]) for r in summary):.3e}")
    return EXIT_OK


def _ablate(cfg: RunConfig, args, key: str, values, out_name: str, header_key: str) -> int:
    out = _out_dir(args)
    train = load_split(cfg, args.data, "train")
    test = load_split(cfg, args.data, "test")
    fe = _extractor(cfg, args.data, out / "extractor.npz")
    cfg.write(out, ["data", "train", "model", "sampler", "eval"])
    rows = []
    for v in values:
        tc = dataclasses.replace(cfg.train(), **{key: v})
        res = fit(tc, train, out_dir=out / f"{key}_{_format(v)}")
        rep = _evaluate(cfg, res.model, cfg.sampler(), test, fe)
        rows.append([_format(v)] + rep.row())
        print(f"{header_key}={_format(v):<6} FGD={rep.fgd:.4f} BA={rep.ba:.4f} DIV={rep.div:.4f} ms/frame={rep.ms_per_frame:.4f}")
    _write_rows(out / out_name, (header_key,) + metrics.MetricsReport.HEADER, rows)
    return EXIT_OK


def cmd_ablate_steps(cfg: RunConfig, args) -> int:
    steps = [int(s) for s in args.steps.split(",")]
    return _ablate(cfg, args, "T", steps, "ablate_steps.csv", "steps")


def cmd_ablate_geo(cfg: RunConfig, args) -> int:
    weights = [float(w) for w in args.weights.split(",")]
    return _ablate(cfg, args, "lambda_geo", weights, "ablate_geo.csv", "lambda_geo")


# ----------------------------------------------------------------------
# argument parsing

# friendly flag -> (section, key)
FLAGS = {
    "data": {"count": ("data", "count"), "split": ("data", "split"), "styles": ("data", "styles"), "frames": ("data", "frames")},
    "train": {
        "T": ("train", "T"),
        "lambda_geo": ("train", "lambda_geo"),
        "epochs": ("train", "epochs"),
        "max_steps": ("train", "max_steps"),
        "lr_g": ("train", "lr_g"),
        "lr_d": ("train", "lr_d"),
        "batch": ("train", "batch"),
    },
    "sampler": {"kind": ("sampler", "kind"), "eta": ("sampler", "eta")},
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fastgesture", description="Few-step adversarial diffusion for synthetic gesture sequences.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="manifest to start from")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, help="global seed (data, training and sampling)")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")

    def flags(sp, *groups):
        for g in groups:
            for name in FLAGS[g]:
                sp.add_argument("--" + name.replace("_", "-"), dest=f"flag_{name}")

    sp = sub.add_parser("data", help="generate the synthetic dataset as CSV")
    common(sp, "runs/data")
    flags(sp, "data")
    sp.add_argument("--force", action="store_true", help="write into a non-empty directory")
    sp.set_defaults(func=cmd_data)

    sp = sub.add_parser("train", help="adversarial training")
    common(sp, "runs/train")
    flags(sp, "train")
    sp.add_argument("--data", help="dataset directory from 'data' (default: regenerate in memory)")
    sp.add_argument("--checkpoint-every", type=int, default=None, metavar="EPOCHS")
    sp.add_argument("--resume", help="trainer checkpoint to resume from")
    sp.add_argument("--stop-at", type=int, default=None, help="stop at this global step")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="generate clips for the tracks of a split")
    common(sp, "runs/sample")
    flags(sp, "sampler")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--count", type=int)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="FGD / BA / DIV / ms-per-frame for a model")
    common(sp, "runs/eval")
    flags(sp, "sampler")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data")
    sp.add_argument("--extractor", help="feature extractor checkpoint (trained and saved if missing)")
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="sampling latency")
    common(sp, "runs/bench")
    flags(sp, "train", "sampler")
    sp.add_argument("--model", help="trained model (default: untrained weights of the configured architecture)")
    sp.add_argument("--steps", help="comma-separated step counts")
    sp.add_argument("--reps", type=int)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("oracle", help="exact posterior densities of a diffused two-mode mixture")
    common(sp, "runs/oracle")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("ablate-steps", help="train and evaluate at several step counts")
    common(sp, "runs/ablate_steps")
    flags(sp, "train", "sampler")
    sp.add_argument("--data")
    sp.add_argument("--list", dest="steps", default="1,5,10,20", help="comma-separated T values")
    sp.set_defaults(func=cmd_ablate_steps)

    sp = sub.add_parser("ablate-geo", help="train and evaluate at several geometric weights")
    common(sp, "runs/ablate_geo")
    flags(sp, "train", "sampler")
    sp.add_argument("--data")
    sp.add_argument("--list", dest="weights", default="0,1,10", help="comma-separated lambda_geo values")
    sp.set_defaults(func=cmd_ablate_geo)
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.update_from_file(args.config)
    if args.seed is not None:
        for section in ("data", "train", "sampler"):
            cfg.set_value(section, "seed", args.seed)
    for group in FLAGS.values():
        for name, (section, key) in group.items():
            value = getattr(args, f"flag_{name}", None)
            if value is not None:
                cfg.set(section, key, value)
    if getattr(args, "steps", None) is not None and args.command in ("sample", "eval"):
        cfg.set_value("sampler", "steps", args.steps)
    if getattr(args, "reps", None) is not None:
        cfg.set_value("eval", "reps", args.reps)
    for item in args.set:
        name, sep, value = item.partition("=")
        section, dot, key = name.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(section.strip(), key.strip(), value)
    cfg.run = {"command": args.command, "out": args.out}
    # validate the typed views early so bad values are usage errors
    for view in (cfg.data, cfg.train, cfg.sampler, cfg.eval, cfg.oracle):
        try:
            view()
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"fastgesture: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"fastgesture: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"fastgesture: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"fastgesture: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
