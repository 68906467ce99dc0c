"""Command-line entry point: ``depro <command> [--config run.json] [--key value ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .data import generate, load_csv, reindex, write_csv
from .harness import SWEEP_AXES, RunConfig, decorr_study, evaluate, sweep, sweep_means, train

log = logging.getLogger("depro")

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    default = getattr(RunConfig, key, None)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"--{key} expects a boolean, got {raw!r}")
    if isinstance(default, tuple):
        raw = raw.strip()
        if raw.startswith("["):
            return tuple(json.loads(raw))
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_overrides(extra: list[str]) -> dict:
    """Turn ``--key value`` pairs into config overrides; dashes map to underscores."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise SystemExit(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise SystemExit(f"missing value for --{key}")
            raw = extra[i + 1]
            i += 2
        if key not in _FIELD_TYPES:
            raise SystemExit(f"unknown config key --{key}")
        try:
            out[key] = _coerce(key, raw)
        except ValueError as exc:
            raise SystemExit(str(exc)) from None
    return out


def load_config(path, overrides: dict) -> RunConfig:
    base = {} if path is None else json.loads(Path(path).read_text())
    base.update(overrides)
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"invalid config: {exc}") from None


def _load_splits(data_dir, cfg: RunConfig):
    d = Path(data_dir)
    splits, first = {}, 0
    for name in ("train", "dev", "ood"):
        ds = load_csv(d / f"{name}.csv", n_classes=cfg.n_classes, vocab=cfg.vocab, first_id=first, name=name)
        first += len(ds)
        splits[name] = ds
    splits["train"] = reindex(splits["train"])
    return splits


def cmd_generate(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = generate(cfg.task())
    for name, ds in splits.items():
        write_csv(ds, out / f"{name}.csv")
    (out / "task.json").write_text(json.dumps(cfg.task().to_dict(), indent=2) + "\n")
    print(json.dumps({k: len(v) for k, v in splits.items()}))
    return 0


def cmd_train(args, cfg):
    splits = _load_splits(args.data_dir, cfg) if args.data_dir else None
    m = train(cfg, args.out, splits)
    print(json.dumps(m.summary()))
    for s in m.failed:
        log.error("seed %d failed: %s", s.seed, s.failed)
    return 1 if m.failed else 0


def cmd_eval(args, cfg):
    ds = load_csv(args.data, n_classes=cfg.n_classes, vocab=cfg.vocab)
    acc = evaluate(args.checkpoint, ds)
    print(json.dumps({"accuracy": acc, "n": len(ds)}))
    return 0


def cmd_sweep(args, cfg):
    values = [json.loads(v) for v in args.values.split(",") if v.strip()]
    rows = sweep(cfg, args.axis, values, args.out)
    print(json.dumps({str(k): v for k, v in sweep_means(rows, args.axis).items()}))
    return 1 if any(r["status"] != "ok" for r in rows) else 0


def cmd_decorr(args, cfg):
    res = decorr_study(cfg.with_overrides(pairs_every=cfg.pairs_every or 10), args.out)
    print(json.dumps({k: v["ratio"] for k, v in res.items()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depro", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", default=None, help="flat JSON run config")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("generate-data", cmd_generate, "write train/dev/ood CSV splits")
    sp.add_argument("--out", required=True)
    sp = add("train", cmd_train, "train every seed in the config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--data-dir", default=None, help="directory with train/dev/ood CSVs")
    sp = add("eval", cmd_eval, "accuracy of a checkpoint on a CSV dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp = add("sweep", cmd_sweep, "grid sweep over one axis")
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--out", required=True)
    sp = add("decorr-study", cmd_decorr, "full run vs frozen-weight control")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config, parse_overrides(extra))
    return args.fn(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
