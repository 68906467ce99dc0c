"""Training loop, evaluation, sweeps and the decorrelation study."""
from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import rff
from .data import Dataset, SyntheticTask, generate
from .independence import decorr_objective, pair_rows
from .model import DeproLossConfig, DeproModel, ModelDims, forward, objective, predict
from .netcore import NonFiniteError, ParamSet, Tape, sgd_step
from .purify import selection_frequency
from .reweight import WeightTable, realize, weight_histogram, weight_step

log = logging.getLogger(__name__)

TASK_KEYS = {f.name for f in fields(SyntheticTask)} - {"seed"}


@dataclass
class RunConfig:
    # task
    n_classes: int = 2
    kslots: int = 8
    signal_slots: tuple = (0, 1, 2)
    bias_slot: int = 3
    vocab: int = 64
    tokens_per_class: int = 10
    align_train: float = 0.9
    align_ood: float = 0.5
    noise_flip: float = 0.1
    n_train: int = 2000
    n_dev: int = 200
    n_ood: int = 1000
    data_seed: int = 0
    # model
    d_emb: int = 16
    d_hidden: int = 16
    m_z: int = 16
    # decorrelation
    rff_multiplier: int = 4
    weight_lr: float = 1e-2
    weight_decay: float = 1e-3
    weight_steps: int = 5
    weighting: str = "literal"
    use_decorrelation: bool = True
    # purification
    alpha: float = 1e-4
    purify_ratio: float = 0.7
    use_purification: bool = True
    # optimisation
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    seeds: tuple = (0, 1, 2, 3, 4)
    # logging
    pairs_every: int = 0
    weight_bins: int = 20

    def __post_init__(self):
        self.signal_slots = tuple(int(s) for s in self.signal_slots)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        if self.batch_size < 2 or self.epochs < 1 or self.lr < 0:
            raise ValueError("batch_size >= 2, epochs >= 1 and lr >= 0 required")
        if self.weight_steps < 0:
            raise ValueError("weight_steps must be >= 0")
        self.task()
        self.loss_config()

    def task(self) -> SyntheticTask:
        kw = {k: getattr(self, k) for k in TASK_KEYS}
        return SyntheticTask(seed=self.data_seed, **kw)

    def dims(self) -> ModelDims:
        return ModelDims(self.vocab, self.kslots, self.d_emb, self.d_hidden, self.m_z, self.n_classes)

    def loss_config(self) -> DeproLossConfig:
        return DeproLossConfig(self.alpha, self.purify_ratio, self.use_decorrelation, self.use_purification)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["signal_slots"] = list(self.signal_slots)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


@dataclass
class SeedResult:
    seed: int
    iterations: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    dev_acc: float = float("nan")
    ood_acc: float = float("nan")
    failed: str | None = None
    model: DeproModel | None = None
    table: WeightTable | None = None
    bank: rff.RffBank | None = None
    pairs: list = field(default_factory=list)
    selection: list = field(default_factory=list)
    weight_hist: list = field(default_factory=list)


@dataclass
class RunMetrics:
    config: RunConfig
    seeds: list

    def ok(self) -> list:
        return [s for s in self.seeds if s.failed is None]

    @property
    def failed(self) -> list:
        return [s for s in self.seeds if s.failed is not None]

    def _agg(self, attr):
        vals = [getattr(s, attr) for s in self.ok()]
        if not vals:
            return float("nan"), float("nan")
        return statistics.fmean(vals), (statistics.stdev(vals) if len(vals) > 1 else 0.0)

    @property
    def dev_mean(self) -> float:
        return self._agg("dev_acc")[0]

    @property
    def ood_mean(self) -> float:
        return self._agg("ood_acc")[0]

    def summary(self) -> dict:
        dm, ds = self._agg("dev_acc")
        om, os_ = self._agg("ood_acc")
        return {"dev_mean": dm, "dev_std": ds, "ood_mean": om, "ood_std": os_,
                "n_ok": len(self.ok()), "n_failed": len(self.failed)}

    def epoch_decorr(self) -> np.ndarray:
        """(n_seeds, epochs) array of per-epoch mean decorrelation objective."""
        return np.array([[e["decorr"] for e in s.epochs] for s in self.ok()])


def _subseeds(seed: int) -> tuple[int, int, int]:
    a, b, c = np.random.SeedSequence(seed).generate_state(3)
    return int(a), int(b), int(c)


def accuracy(model: DeproModel, ds: Dataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(model, ds.token_ids) == ds.labels))


def train_seed(cfg: RunConfig, seed: int, splits: dict, bank: rff.RffBank | None = None) -> SeedResult:
    """One seed of alternating weight / network optimisation."""
    init_seed, bank_seed, order_seed = _subseeds(seed)
    train, dev, ood = splits["train"], splits["dev"], splits["ood"]
    if train.sample_ids.min() != 0 or train.sample_ids.max() != len(train) - 1:
        raise ValueError("train sample ids must be 0..n-1 to index the weight table")
    model = DeproModel.init(cfg.dims(), init_seed)
    bank = bank or rff.sample_bank(cfg.m_z, cfg.rff_multiplier, bank_seed)
    table = WeightTable.uniform(len(train), cfg.weight_lr, cfg.weight_decay)
    losscfg = cfg.loss_config()
    k = cfg.rff_multiplier
    rng = np.random.default_rng(order_seed)
    res = SeedResult(seed=seed, model=model, table=table, bank=bank)

    it = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            reports, decorrs = [], []
            for batch in train.batches(cfg.batch_size, rng):
                tape = Tape()
                leaves = model.params.leaves(tape)
                t, z = forward(tape, leaves, model, batch.token_ids)
                u = rff.apply(bank, rff.standardize(z.value))
                idx = batch.sample_ids
                if cfg.use_decorrelation and cfg.weight_steps:
                    for _ in range(cfg.weight_steps):
                        table, obj = weight_step(table, u, idx, k, cfg.weighting)
                    w = realize(table, idx)
                else:
                    w = np.ones(len(batch)) if not cfg.use_decorrelation else realize(table, idx)
                    obj = decorr_objective(u, w, k, cfg.weighting)
                out = objective(tape, leaves, t, z, batch.labels, w, losscfg)
                grads = tape.backward()
                sgd_step(model.params, grads, cfg.lr)
                if out.report is not None:
                    reports.append(out.report)
                decorrs.append(obj.mean)
                res.iterations.append({
                    "iter": it, "epoch": epoch, "loss": out.total, "ce": out.ce,
                    "mi": out.mi, "decorr": obj.mean, "decorr_total": obj.total,
                })
                if cfg.pairs_every and it % cfg.pairs_every == 0:
                    res.pairs.extend(pair_rows(obj, it))
                it += 1
            ep = {"epoch": epoch, "decorr": float(np.mean(decorrs)),
                  "dev_acc": accuracy(model, dev), "ood_acc": accuracy(model, ood)}
            res.epochs.append(ep)
            if reports:
                res.selection.append((epoch, selection_frequency(reports)))
            counts, edges = weight_histogram(table, cfg.weight_bins)
            res.weight_hist.append((epoch, counts, edges))
            log.debug("seed %d epoch %d %s", seed, epoch, ep)
    except (NonFiniteError, FloatingPointError) as exc:
        res.failed = f"epoch {epoch} iter {it}: {exc}"
        log.warning("seed %d failed: %s", seed, res.failed)
        return res

    res.dev_acc = res.epochs[-1]["dev_acc"]
    res.ood_acc = res.epochs[-1]["ood_acc"]
    return res


def train(cfg: RunConfig, out_dir=None, splits=None) -> RunMetrics:
    """Train every seed in ``cfg.seeds``; writes artifacts when ``out_dir`` is given."""
    splits = splits or generate(cfg.task())
    results = []
    for seed in cfg.seeds:
        results.append(train_seed(cfg, seed, splits))
    metrics = RunMetrics(cfg, results)
    if out_dir is not None:
        write_run(metrics, out_dir)
    return metrics


def evaluate(checkpoint, dataset: Dataset) -> float:
    """Argmax accuracy of a model or a saved checkpoint path on ``dataset``."""
    if isinstance(checkpoint, DeproModel):
        model = checkpoint
    else:
        params, _ = ParamSet.load(checkpoint)
        model = DeproModel.from_params(params, dataset.kslots)
    if dataset.kslots != model.dims.kslots:
        raise ValueError("dataset slot count does not match the model")
    return accuracy(model, dataset)


# -- artifacts -------------------------------------------------------------

def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_run(metrics: RunMetrics, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics.config.save(out / "config.json")
    for s in metrics.seeds:
        sd = out / f"seed_{s.seed}"
        sd.mkdir(exist_ok=True)
        (sd / "metrics.jsonl").write_text(_jsonl(s.iterations))
        (sd / "epochs.jsonl").write_text(_jsonl(s.epochs))
        if s.model is not None:
            s.model.params.save(sd / "model.ckpt", {"kslots": s.model.dims.kslots, "seed": s.seed})
        if s.table is not None:
            np.savetxt(sd / "weights_theta.txt", s.table.theta)
        if s.bank is not None:
            s.bank.save(sd / "bank.json")
        with open(sd / "weights_hist.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "bin_lo", "bin_hi", "count"])
            for epoch, counts, edges in s.weight_hist:
                for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                    w.writerow([epoch, lo, hi, int(c)])
        if s.selection:
            with open(sd / "selection.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "slot", "fraction"])
                for epoch, freq in s.selection:
                    for j, f in enumerate(freq):
                        w.writerow([epoch, j, f])
        if s.pairs:
            with open(sd / "pairs.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "i", "j", "frob_sq"])
                w.writerows(s.pairs)
    # merged stream; iteration indices are per seed
    (out / "metrics.jsonl").write_text(
        "".join(_jsonl([{"seed": s.seed, **r} for r in s.iterations]) for s in metrics.seeds))
    write_results(metrics, out / "results.csv")
    return out


def write_results(metrics: RunMetrics, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "dev_acc", "ood_acc", "status"])
        for s in metrics.seeds:
            w.writerow([s.seed, s.dev_acc, s.ood_acc, s.failed or "ok"])
        summ = metrics.summary()
        w.writerow(["mean", summ["dev_mean"], summ["ood_mean"], f"{summ['n_ok']} ok"])
        w.writerow(["stdev", summ["dev_std"], summ["ood_std"], ""])


# -- experiments -----------------------------------------------------------

SWEEP_AXES = ("rff_multiplier", "purify_ratio")


def sweep(cfg: RunConfig, axis: str, values, out_dir=None) -> list[dict]:
    """One full multi-seed run per value of ``axis``; rows are (value, seed, dev, ood, status)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    splits = generate(cfg.task())
    rows = []
    for v in values:
        run_cfg = cfg.with_overrides(**{axis: v})
        sub = None if out_dir is None else Path(out_dir) / f"{axis}_{v}"
        m = train(run_cfg, sub, splits)
        for s in m.seeds:
            rows.append({axis: v, "seed": s.seed, "dev_acc": s.dev_acc, "ood_acc": s.ood_acc,
                         "status": s.failed or "ok"})
    if out_dir is not None:
        with open(Path(out_dir) / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=[axis, "seed", "dev_acc", "ood_acc", "status"])
            w.writeheader()
            w.writerows(rows)
    return rows


def sweep_means(rows: list[dict], axis: str) -> dict:
    """Mean OOD accuracy per swept value over successful seeds."""
    out = {}
    for v in dict.fromkeys(r[axis] for r in rows):
        vals = [r["ood_acc"] for r in rows if r[axis] == v and r["status"] == "ok"]
        out[v] = statistics.fmean(vals) if vals else float("nan")
    return out


def decorr_study(cfg: RunConfig, out_dir=None) -> dict:
    """Full run vs. a frozen-weight control on the same data, seeds and banks.

    The control keeps the weights at 1 but still measures the objective.
    Returns per-arm ``(n_seeds, epochs)`` curves and the final/first ratios.
    """
    splits = generate(cfg.task())
    full = train(cfg.with_overrides(use_decorrelation=True),
                 None if out_dir is None else Path(out_dir) / "depro", splits)
    ctrl = train(cfg.with_overrides(use_decorrelation=False),
                 None if out_dir is None else Path(out_dir) / "control", splits)
    result = {}
    for name, m in (("depro", full), ("control", ctrl)):
        curve = m.epoch_decorr()
        mean_curve = curve.mean(axis=0)
        result[name] = {"curve": mean_curve.tolist(), "ratio": float(mean_curve[-1] / mean_curve[0])}
    if out_dir is not None:
        with open(Path(out_dir) / "decorr_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "depro", "control"])
            for e, (a, b) in enumerate(zip(result["depro"]["curve"], result["control"]["curve"]), 1):
                w.writerow([e, a, b])
    return result
