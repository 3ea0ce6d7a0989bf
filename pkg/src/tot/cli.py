"""Command-line entry point: `tot <subcommand> ...`.

Every subcommand writes its primary output to --out and a run manifest next
to it (<out>.manifest.json).  Exit codes: 0 success, 2 configuration or
validation error, 3 numerical failure (assumption violation, divergence),
4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .binio import FormatError
from .chains import DiscreteLatentChain, NonErgodicError
from .diffnum import DimensionError, NonFiniteError
from .evaluation import BaselineConfig, MissingLatentsError, baseline_suite, forecast_metrics, latent_mcc, risk_lab
from .evaluation.baselines import split_windows
from .evaluation.risk_lab import CHANNELS
from .model import ModelConfig, TotModel
from .objective import SIGN_MODES, LossWeights
from .operator_lab import InjectivityError, UniquenessError, check_assumptions, identify
from .synthgen import PRESETS, DatasetMismatchError, GenConfig, GenerationError, generate_dataset, load_dataset, preset, save_dataset
from .train import (ONLINE_COLUMNS, CheckpointMismatchError, TrainConfig, TrainingError, TrainState, load_checkpoint,
                    make_windows, online_run, predict, save_checkpoint, train_offline, write_rows_csv)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


# ---------------------------------------------------------------- seeds and config

def sub_seed(seed: int, stream: str) -> int:
    """Independent named seed stream derived from the run seed."""
    return int(np.random.SeedSequence([seed, zlib.crc32(stream.encode())]).generate_state(1)[0])


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: not valid JSON ({e})") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be an object")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config.{name}: must be an object")
    return dict(sec)


def _build(cls, values: dict, path: str):
    """Instantiate a config dataclass, reporting problems with their field path."""
    names = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown field (allowed: {', '.join(sorted(names))})")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _model_config(cfg: dict, n: int, seed: int) -> ModelConfig:
    sec = _section(cfg, "model")
    sec.setdefault("seed", sub_seed(seed, "init"))
    if sec.setdefault("n", n) != n:
        raise ConfigError(f"config.model.n: {sec['n']} does not match the dataset (n={n})")
    return _build(ModelConfig, sec, "config.model")


def _train_config(cfg: dict, args, seed: int) -> TrainConfig:
    sec = _section(cfg, "train")
    weights = sec.pop("weights", {})
    if not isinstance(weights, dict):
        raise ConfigError("config.train.weights: must be an object")
    if getattr(args, "sign_mode", None):
        weights["sign_mode"] = args.sign_mode.replace("-", "_")
    sec["weights"] = _build(LossWeights, weights, "config.train.weights")
    sec.setdefault("seed", sub_seed(seed, "training"))
    if getattr(args, "epochs", None) is not None:
        sec["epochs"] = args.epochs
    if getattr(args, "k_steps", None) is not None:
        sec["online_steps_per_arrival"] = args.k_steps
    return _build(TrainConfig, sec, "config.train")


# ---------------------------------------------------------------- output helpers

def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects what a subcommand read and wrote, then emits the manifest."""

    def __init__(self, subcommand: str, seed: int):
        self.subcommand = subcommand
        self.seed = seed
        self.config: dict = {}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()

    def read(self, path) -> Path:
        p = Path(path)
        self.inputs[str(p)] = _file_hash(p)
        return p

    def wrote(self, path) -> None:
        self.outputs.append(str(path))

    def manifest(self) -> dict:
        key = {"subcommand": self.subcommand, "config": _clean(self.config), "seed": self.seed,
               "inputs": self.inputs, "version": __version__}
        content = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()
        return {**key, "content_hash": content,
                "artifacts": {p: _file_hash(p) for p in self.outputs},
                "wall_clock_s": time.perf_counter() - self.t0}

    def finish(self, out) -> dict:
        m = self.manifest()
        _write_json(f"{out}.manifest.json", m)
        return m


# ---------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    run = Run("gen", args.seed)
    cfg = _load_config(args.config)
    sec = _section(cfg, "gen")
    name = args.preset or sec.pop("preset", "A")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    base = dataclasses.asdict(preset(name))
    base["seed"] = sub_seed(args.seed, "generation")
    base.update(sec)
    gcfg = _build(GenConfig, base, "config.gen")
    run.config = {"preset": name, "gen": dataclasses.asdict(gcfg)}
    ds = generate_dataset(gcfg)
    save_dataset(ds, args.out)
    run.wrote(args.out)
    run.finish(args.out)
    return EXIT_OK


def _history_rows(state: TrainState) -> list[dict]:
    return [{"epoch": i, **h} for i, h in enumerate(state.history)]


def cmd_train(args) -> int:
    run = Run("train", args.seed)
    cfg = _load_config(args.config)
    ds = load_dataset(run.read(args.data))
    if args.resume:
        state, tcfg = load_checkpoint(run.read(args.resume))
        if tcfg is None:
            raise ConfigError("resume checkpoint carries no training config")
        if state.model.config.n != ds.n:
            raise ConfigError(f"checkpoint n={state.model.config.n} does not match dataset n={ds.n}")
        if args.epochs is not None:
            tcfg = dataclasses.replace(tcfg, epochs=args.epochs)
        mcfg = state.model.config
    else:
        mcfg = _model_config(cfg, ds.n, args.seed)
        tcfg = _train_config(cfg, args, args.seed)
        state = TrainState.fresh(TotModel.init(mcfg), tcfg)
    run.config = {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "max_steps": args.max_steps}
    state = train_offline(ds, None, tcfg, state=state, max_steps=args.max_steps)
    save_checkpoint(args.out, state, tcfg)
    run.wrote(args.out)
    loss_csv = f"{args.out}.losses.csv"
    cols = ["epoch", "l_y", "l_r", "l_kl_z", "l_kl_o", "l_s", "total"]
    write_rows_csv(_history_rows(state), loss_csv, cols)
    run.wrote(loss_csv)
    run.finish(args.out)
    return EXIT_OK


def _load_pair(run: Run, ckpt, data):
    state, tcfg = load_checkpoint(run.read(ckpt))
    ds = load_dataset(run.read(data), expected_n=state.model.config.n)
    return state, tcfg, ds


def cmd_eval(args) -> int:
    run = Run("eval", args.seed)
    state, _, ds = _load_pair(run, args.ckpt, args.data)
    model = state.model
    c = model.config
    try:
        _, va = split_windows(ds, c.t_in, c.horizon)
    except ValueError:
        va = np.arange(ds.T - c.T + 1)
    w = make_windows(ds.x, c.T)[va]
    mse, mae = forecast_metrics(predict(model, np.ascontiguousarray(w[:, :c.t_in])), w[:, c.t_in:])
    report = {"mse": mse, "mae": mae, "n_windows": int(len(va)), "mcc": None, "mcc_assignment": None}
    if ds.has_latents:
        rep = latent_mcc(model, ds.x, ds.z)
        report["mcc"], report["mcc_assignment"] = rep.score, rep.assignment
    run.config = {"model": c.to_dict()}
    _write_json(args.out, report)
    run.wrote(args.out)
    run.finish(args.out)
    return EXIT_OK


def cmd_online(args) -> int:
    run = Run("online", args.seed)
    state, tcfg, ds = _load_pair(run, args.ckpt, args.data)
    tcfg = tcfg or TrainConfig(seed=sub_seed(args.seed, "training"))
    tcfg = dataclasses.replace(tcfg, online_steps_per_arrival=args.k_steps)
    run.config = {"model": state.model.config.to_dict(), "train": tcfg.to_dict()}
    res = online_run(ds, state.model, tcfg, state=state)
    write_rows_csv(res.rows, args.out, ONLINE_COLUMNS)
    run.wrote(args.out)
    if args.out_ckpt:
        save_checkpoint(args.out_ckpt, res.state, tcfg)
        run.wrote(args.out_ckpt)
    run.finish(args.out)
    return EXIT_OK


def _chain(run: Run, args) -> DiscreteLatentChain:
    if args.chain:
        text = run.read(args.chain).read_text()
        try:
            return DiscreteLatentChain.from_json(text)
        except (KeyError, json.JSONDecodeError) as e:
            raise ConfigError(f"chain: malformed document ({e})") from None
    rng = np.random.default_rng(sub_seed(args.seed, "generation"))
    m = args.m
    if m is None:
        # square regime by default; a single latent state still needs >= 2 observed states
        m = args.k if args.k > 1 else 3
    return DiscreteLatentChain.random(args.k, m, rng, floor=args.floor)


def cmd_risk_lab(args) -> int:
    run = Run("risk-lab", args.seed)
    chain = _chain(run, args)
    rng = np.random.default_rng(sub_seed(args.seed, "eval"))
    run.config = {"channel": args.channel, "p_flip": args.p_flip, "chain": chain.to_dict()}
    rep = risk_lab(chain, args.channel, args.p_flip, rng=rng)
    _write_json(args.out, {"report": rep.to_dict(), "chain": chain.to_dict()})
    run.wrote(args.out)
    run.finish(args.out)
    return EXIT_OK


def cmd_operator_lab(args) -> int:
    run = Run("operator-lab", args.seed)
    chain = _chain(run, args)
    run.config = {"chain": chain.to_dict()}
    diag = check_assumptions(chain)
    out = {"assumptions": diag.to_dict(), "chain": chain.to_dict()}
    if chain.k == 1:
        out["result"] = identify(chain).to_dict()
        out["trivial"] = True
    else:
        try:
            out["result"] = identify(chain).to_dict()
        except (UniquenessError, InjectivityError) as e:
            out["error"] = f"{type(e).__name__}: {e}"
            _write_json(args.out, out)
            run.wrote(args.out)
            run.finish(args.out)
            raise
        out["trivial"] = False
    _write_json(args.out, out)
    run.wrote(args.out)
    run.finish(args.out)
    return EXIT_OK


def cmd_baselines(args) -> int:
    run = Run("baselines", args.seed)
    cfg = _load_config(args.config)
    ds = load_dataset(run.read(args.data))
    if not ds.has_latents:
        raise MissingLatentsError("dataset carries no ground-truth latents; the oracle forecaster needs them")
    if args.ckpt:
        state, _ = load_checkpoint(run.read(args.ckpt))
        model = state.model
        if model.config.n != ds.n:
            raise ConfigError(f"checkpoint n={model.config.n} does not match dataset n={ds.n}")
        tcfg_d = None
    else:
        mcfg = _model_config(cfg, ds.n, args.seed)
        tcfg = _train_config(cfg, args, args.seed)
        model = train_offline(ds, TotModel.init(mcfg), tcfg).model
        tcfg_d = tcfg.to_dict()
    sec = _section(cfg, "baselines")
    sec.setdefault("seed", sub_seed(args.seed, "eval"))
    bcfg = _build(BaselineConfig, sec, "config.baselines")
    run.config = {"model": model.config.to_dict(), "train": tcfg_d, "baselines": bcfg.to_dict()}
    rep = baseline_suite(ds, model, bcfg)
    _write_json(args.out, rep.to_dict())
    run.wrote(args.out)
    csv_path = f"{args.out}.csv"
    write_rows_csv([{"regime": k, "mse": rep.mse[k], "mae": rep.mae[k]} for k in rep.mse], csv_path,
                   ["regime", "mse", "mae"])
    run.wrote(csv_path)
    run.finish(args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tot", description="Latent-variable forecasting toolkit and theory labs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=0, help="run seed (split into named sub-streams)")
        sp.add_argument("--out", required=True, help="primary output path")
        if config:
            sp.add_argument("--config", help="JSON config; flags override its values")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    common(g)
    g.add_argument("--preset", help=f"one of {', '.join(PRESETS)} (default A)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="offline training to a checkpoint")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--sign-mode", choices=[m.replace("_", "-") for m in SIGN_MODES] + list(SIGN_MODES))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="MCC and forecast metrics of a checkpoint")
    common(e, config=False)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("online", help="forecast-then-adapt over a stream")
    common(o, config=False)
    o.add_argument("--ckpt", required=True)
    o.add_argument("--data", required=True)
    o.add_argument("--k-steps", type=int, default=1, help="gradient steps per arrival")
    o.add_argument("--out-ckpt", help="write the adapted state here")
    o.set_defaults(func=cmd_online)

    for name, func, square in (("risk-lab", cmd_risk_lab, False), ("operator-lab", cmd_operator_lab, True)):
        s = sub.add_parser(name)
        common(s, config=False)
        s.add_argument("--chain", help="chain JSON document; a random chain is drawn when omitted")
        s.add_argument("--k", type=int, default=3, help="latent states of a random chain")
        s.add_argument("--m", type=int, default=None if square else 3,
                       help="observed states of a random chain" + (" (default: k)" if square else ""))
        if not square:
            s.add_argument("--channel", choices=CHANNELS, default="noisy")
            s.add_argument("--p-flip", type=float, default=0.2)
        s.add_argument("--floor", type=float, default=0.05, help="uniform mixing weight of a random chain")
        s.set_defaults(func=func)

    b = sub.add_parser("baselines", help="baseline / oracle / TOT-latent forecaster comparison")
    common(b)
    b.add_argument("--data", required=True)
    b.add_argument("--ckpt", help="trained model; trained from the config when omitted")
    b.add_argument("--epochs", type=int)
    b.set_defaults(func=cmd_baselines)
    return p


CONFIG_ERRORS = (ConfigError, ValueError, KeyError, DimensionError, DatasetMismatchError,
                 CheckpointMismatchError, MissingLatentsError)
NUMERIC_ERRORS = (UniquenessError, InjectivityError, NonErgodicError, TrainingError, NonFiniteError,
                  GenerationError, FloatingPointError)
IO_ERRORS = (OSError, FormatError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NUMERIC_ERRORS as e:
        print(f"tot {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except IO_ERRORS as e:
        print(f"tot {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except CONFIG_ERRORS as e:
        print(f"tot {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
