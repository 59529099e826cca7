"""Corpus construction, splits, evaluation, and the three experiments.

A training corpus is a table of (dataset, sigma, q, mean accuracy) rows
measured by the selectivity module over a configured grid of synthetic
datasets.  The experiments reproduce, at desk scale:

* relationship: mean accuracy against sampling ratio per distribution and
  query size;
* distribution-count: held-out error of the dual-branch model and the linear
  baseline as the number of training families grows;
* histogram-resolution: held-out error and training time across histogram
  sizes.

Every artifact is a CSV with a leading ``# config-hash=`` comment and is
byte-identical across reruns with the same config and master seed.  The one
exception is the timing sidecar of the resolution experiment: wall-clock
measures the machine, not the config, so it lives in its own file.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datagen, rng, selectivity
from .histogram import build_histogram
from .ioutil import atomic_write_text
from .predictor import (
    LRParams,
    Mode,
    Model,
    TrainHyper,
    build_network,
    features_for,
    lr_fit,
    lr_predict,
    target_for,
    train,
)

_TAG_DATASET = 41
_TAG_CELL = 42
_TAG_SPLIT = 43
_TAG_MODEL = 44
_TAG_REL_DATA = 45
_TAG_REL_CELL = 46
_TAG_FAMILY_ORDER = 47


@dataclass(frozen=True)
class TrainingExample:
    dataset_id: str
    distribution: str
    n: int
    q: float
    sigma: float
    mean_accuracy: float


@dataclass
class TrainingTable:
    rows: list
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class CorpusConfig:
    n: int = 100_000
    seed: int = 7
    sigmas: tuple = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2)
    qs: tuple = (0.01, 0.02, 0.05, 0.1)
    queries: int = 50
    draws: int = 3
    h: int = 16


@dataclass
class SplitConfig:
    train_fraction: float = 0.75
    level: str = "row"  # or "dataset"


@dataclass
class RelationshipConfig:
    n: int = 100_000
    sigmas: tuple = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2)
    qs: tuple = (0.01, 0.02, 0.05, 0.1)
    queries: int = 50
    draws: int = 5
    datasets: tuple = ()  # ((id, spec string), ...)


@dataclass
class PipelineConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    datasets: tuple = ()  # ((id, spec string), ...)
    train: TrainHyper = field(default_factory=TrainHyper)
    split: SplitConfig = field(default_factory=SplitConfig)
    relationship: RelationshipConfig = field(default_factory=RelationshipConfig)
    families: tuple = ()  # distribution-count experiment order pool
    resolution_hs: tuple = (1, 4, 8, 16, 32, 64)

    def hash(self) -> str:
        """Hash of the parsed content, stable under formatting changes."""
        blob = repr(
            (
                self.corpus,
                self.datasets,
                self.train,
                self.split,
                self.relationship,
                self.families,
                self.resolution_hs,
            )
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the INI experiment configuration; see configs/desk.ini."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    parser.read_string(text)
    cfg = PipelineConfig()

    if parser.has_section("corpus"):
        s = parser["corpus"]
        cfg.corpus = CorpusConfig(
            n=s.getint("n", cfg.corpus.n),
            seed=s.getint("seed", cfg.corpus.seed),
            sigmas=_floats(s.get("sigmas", "")) or cfg.corpus.sigmas,
            qs=_floats(s.get("qs", "")) or cfg.corpus.qs,
            queries=s.getint("queries", cfg.corpus.queries),
            draws=s.getint("draws", cfg.corpus.draws),
            h=s.getint("h", cfg.corpus.h),
        )
    if parser.has_section("datasets"):
        cfg.datasets = tuple(parser["datasets"].items())
        for _, spec in cfg.datasets:
            datagen.parse_spec(spec)  # fail fast on bad specs
    if parser.has_section("train"):
        s = parser["train"]
        d = TrainHyper()
        cfg.train = TrainHyper(
            batch=s.getint("batch", d.batch),
            learning_rate=s.getfloat("learning_rate", d.learning_rate),
            beta1=s.getfloat("beta1", d.beta1),
            beta2=s.getfloat("beta2", d.beta2),
            epsilon=s.getfloat("epsilon", d.epsilon),
            patience=s.getint("patience", d.patience),
            max_epochs=s.getint("max_epochs", d.max_epochs),
            val_fraction=s.getfloat("val_fraction", d.val_fraction),
            min_delta=s.getfloat("min_delta", d.min_delta),
        )
    if parser.has_section("split"):
        s = parser["split"]
        cfg.split = SplitConfig(
            train_fraction=s.getfloat("train_fraction", 0.75),
            level=s.get("level", "row").strip(),
        )
        if cfg.split.level not in ("row", "dataset"):
            raise ValueError(f"split level must be 'row' or 'dataset', got {cfg.split.level!r}")
    if parser.has_section("relationship"):
        s = parser["relationship"]
        d = RelationshipConfig()
        cfg.relationship = RelationshipConfig(
            n=s.getint("n", d.n),
            sigmas=_floats(s.get("sigmas", "")) or d.sigmas,
            qs=_floats(s.get("qs", "")) or d.qs,
            queries=s.getint("queries", d.queries),
            draws=s.getint("draws", d.draws),
        )
    if parser.has_section("relationship.datasets"):
        cfg.relationship.datasets = tuple(parser["relationship.datasets"].items())
        for _, spec in cfg.relationship.datasets:
            datagen.parse_spec(spec)
    if parser.has_section("distribution_count"):
        cfg.families = _strs(parser["distribution_count"].get("families", ""))
    if parser.has_section("resolution"):
        cfg.resolution_hs = _ints(parser["resolution"].get("hs", "")) or cfg.resolution_hs

    if not cfg.datasets:
        raise ValueError("config has no [datasets] section")
    return cfg


# ---------------------------------------------------------------------------
# corpus construction
# ---------------------------------------------------------------------------


def generate_datasets(cfg: PipelineConfig, progress=None):
    """Materialize the configured corpus datasets: (id, family, PointSet)."""
    out = []
    for i, (ds_id, spec_text) in enumerate(cfg.datasets):
        spec = datagen.parse_spec(spec_text)
        seed = rng.derive(cfg.corpus.seed, _TAG_DATASET, i)
        if progress:
            progress(f"generating {ds_id} ({i + 1}/{len(cfg.datasets)})")
        out.append((ds_id, spec.family, datagen.generate(spec, cfg.corpus.n, seed)))
    return out


def build_training_table(datasets, sigmas, qs, m, r, seed, progress=None) -> TrainingTable:
    """One row per (dataset, sigma, q) cell with its measured mean accuracy.

    Cells whose workload comes back empty (or whose mean accuracy is not in
    (0, 1]) are skipped and counted in the provenance.  Each cell has its own
    derived seed, so the table does not depend on evaluation order.
    """
    datasets = list(datasets)
    sigmas = list(sigmas)
    qs = list(qs)
    if not datasets or not sigmas or not qs:
        raise ValueError("datasets, sigmas, and qs must all be nonempty")
    rows = []
    skipped = 0
    for di, (ds_id, family, points) in enumerate(datasets):
        if progress:
            progress(f"measuring {ds_id} ({di + 1}/{len(datasets)})")
        for si, sigma in enumerate(sigmas):
            for qi, q in enumerate(qs):
                cell_seed = rng.derive(seed, _TAG_CELL, di, si, qi)
                try:
                    acc = selectivity.measure_mean_accuracy(
                        points, sigma, q, m, r, cell_seed
                    )
                except selectivity.EmptyWorkloadError:
                    skipped += 1
                    continue
                if not 0.0 < acc <= 1.0:
                    skipped += 1
                    continue
                rows.append(
                    TrainingExample(ds_id, family, points.n, q, sigma, acc)
                )
    return TrainingTable(
        rows,
        provenance={
            "seed": seed,
            "m": m,
            "r": r,
            "skipped": skipped,
            "sigmas": tuple(sigmas),
            "qs": tuple(qs),
        },
    )


def split(table: TrainingTable, train_fraction: float, seed: int):
    """Seeded shuffle-then-split into round(fraction*N) + remainder rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    n = len(table.rows)
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    perm = rng.permutation(seed, n)
    n_train = round(train_fraction * n)
    tr = [table.rows[i] for i in perm[:n_train]]
    te = [table.rows[i] for i in perm[n_train:]]
    prov = dict(table.provenance)
    return (
        TrainingTable(tr, {**prov, "partition": "train"}),
        TrainingTable(te, {**prov, "partition": "test"}),
    )


def split_by_dataset(table: TrainingTable, train_fraction: float, seed: int):
    """Dataset-level split: held-out datasets never appear in training."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    ids = []
    for row in table.rows:
        if row.dataset_id not in ids:
            ids.append(row.dataset_id)
    if len(ids) < 2:
        raise ValueError("need at least 2 datasets for a dataset-level split")
    perm = rng.permutation(seed, len(ids))
    n_train = round(train_fraction * len(ids))
    train_ids = {ids[i] for i in perm[:n_train]}
    tr = [r for r in table.rows if r.dataset_id in train_ids]
    te = [r for r in table.rows if r.dataset_id not in train_ids]
    prov = dict(table.provenance)
    return (
        TrainingTable(tr, {**prov, "partition": "train"}),
        TrainingTable(te, {**prov, "partition": "test"}),
    )


def evaluate_mape(model, table: TrainingTable, hists=None) -> float:
    """Mean |actual - predicted| / actual over the table's target column."""
    rows = table.rows
    if not rows:
        raise ValueError("empty table")
    if isinstance(model, LRParams):
        preds = np.array(
            [
                lr_predict(model, features_for(model.mode, r.q, r.sigma, r.mean_accuracy))
                for r in rows
            ]
        )
        mode = model.mode
    elif isinstance(model, Model):
        if hists is None:
            raise ValueError("histograms are required to evaluate a network model")
        for r in rows:
            if r.dataset_id not in hists:
                raise KeyError(f"missing histogram for dataset {r.dataset_id!r}")
        mode = model.mode
        qs = np.array([r.q for r in rows])
        drivers = np.array(
            [features_for(mode, r.q, r.sigma, r.mean_accuracy).driver for r in rows]
        )
        preds = np.empty(len(rows))
        for a in range(0, len(rows), 256):
            chunk = rows[a : a + 256]
            hv = np.stack([hists[r.dataset_id].values for r in chunk])[:, None, :, :]
            preds[a : a + 256] = model.predict_batch(
                qs[a : a + 256], drivers[a : a + 256], hv
            )
    else:
        raise TypeError(f"cannot evaluate {type(model).__name__}")
    actual = np.array([target_for(mode, r.sigma, r.mean_accuracy) for r in rows])
    return float(np.mean(np.abs(actual - preds) / np.abs(actual)))


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows, config_hash, extra_comments=()) -> None:
    buf = io.StringIO()
    buf.write(f"# config-hash={config_hash}\n")
    for c in extra_comments:
        buf.write(f"# {c}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_cell(v) for v in row) + "\n")
    atomic_write_text(path, buf.getvalue())


def write_table_csv(path, table: TrainingTable, config_hash) -> None:
    prov = table.provenance
    write_csv(
        path,
        ("dataset_id", "distribution", "n", "q", "sigma", "mean_accuracy"),
        [
            (r.dataset_id, r.distribution, r.n, r.q, r.sigma, r.mean_accuracy)
            for r in table.rows
        ],
        config_hash,
        extra_comments=(
            f"seed={prov.get('seed', '')}",
            f"skipped={prov.get('skipped', 0)}",
        ),
    )


def read_table_csv(path) -> TrainingTable:
    rows = []
    prov = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line.lstrip("# ")
            k, eq, v = body.partition("=")
            if eq:
                prov[k.strip()] = v.strip()
            continue
        if line.startswith("dataset_id"):
            continue
        ds, fam, n, q, sigma, acc = line.split(",")
        rows.append(
            TrainingExample(ds, fam, int(n), float(q), float(sigma), float(acc))
        )
    return TrainingTable(rows, prov)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def experiment_relationship(cfg: PipelineConfig, out_dir, progress=None) -> Path:
    """Mean accuracy per (distribution, q, sigma); Fig.-2-style curves."""
    rel = cfg.relationship
    if not rel.datasets:
        raise ValueError("config has no [relationship.datasets] section")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = cfg.corpus.seed
    rows = []
    for di, (ds_id, spec_text) in enumerate(rel.datasets):
        spec = datagen.parse_spec(spec_text)
        points = datagen.generate(spec, rel.n, rng.derive(master, _TAG_REL_DATA, di))
        if progress:
            progress(f"relationship: {ds_id} ({di + 1}/{len(rel.datasets)})")
        for qi, q in enumerate(rel.qs):
            # one seed per (dataset, q): common random numbers across the
            # sigma grid, so each curve varies only through the sampling
            # ratio and not through workload noise
            cell_seed = rng.derive(master, _TAG_REL_CELL, di, qi)
            for sigma in rel.sigmas:
                acc = selectivity.measure_mean_accuracy(
                    points, sigma, q, rel.queries, rel.draws, cell_seed
                )
                rows.append((ds_id, q, sigma, acc))
    path = out_dir / "relationship.csv"
    write_csv(path, ("distribution", "q", "sigma", "mean_accuracy"), rows, cfg.hash())
    return path


def build_corpus(cfg: PipelineConfig, progress=None):
    """Datasets, histograms at the corpus h, and the measured table."""
    datasets = generate_datasets(cfg, progress)
    hists = {ds_id: build_histogram(points, cfg.corpus.h) for ds_id, _, points in datasets}
    table = build_training_table(
        datasets,
        cfg.corpus.sigmas,
        cfg.corpus.qs,
        cfg.corpus.queries,
        cfg.corpus.draws,
        cfg.corpus.seed,
        progress,
    )
    return datasets, hists, table


def _split_table(cfg: PipelineConfig, table: TrainingTable):
    seed = rng.derive(cfg.corpus.seed, _TAG_SPLIT)
    if cfg.split.level == "dataset":
        return split_by_dataset(table, cfg.split.train_fraction, seed)
    return split(table, cfg.split.train_fraction, seed)


def experiment_distribution_count(cfg: PipelineConfig, out_dir, corpus=None, progress=None) -> Path:
    """Held-out MAPE of the network and the linear baseline vs. the number of
    training families, for both problems."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if corpus is None:
        corpus = build_corpus(cfg, progress)
    datasets, hists, table = corpus

    families = list(cfg.families)
    present = []
    for row in table.rows:
        if row.distribution not in present:
            present.append(row.distribution)
    if not families:
        families = present
    missing = [f for f in families if f not in present]
    if missing:
        raise ValueError(f"families {missing} not present in the corpus")
    if len(families) < 2:
        raise ValueError("need at least 2 families for the distribution-count experiment")

    master = cfg.corpus.seed
    order = [families[i] for i in rng.permutation(rng.derive(master, _TAG_FAMILY_ORDER), len(families))]
    tr_table, te_table = _split_table(cfg, table)

    rows = []
    for k in range(1, len(order) + 1):
        chosen = set(order[:k])
        sub = TrainingTable([r for r in tr_table.rows if r.distribution in chosen])
        for mi, mode in enumerate((Mode.ACCURACY, Mode.RATIO)):
            if progress:
                progress(f"distribution-count: k={k} {mode.value}")
            model = build_network(mode, cfg.corpus.h, rng.derive(master, _TAG_MODEL, 2, k, mi))
            train(model, sub.rows, hists, cfg.train, seed=rng.derive(master, _TAG_MODEL, 3, k, mi))
            rows.append((k, "deepsampling", mode.value, evaluate_mape(model, te_table, hists)))
            baseline = lr_fit(sub.rows, mode)
            rows.append((k, "linear_regression", mode.value, evaluate_mape(baseline, te_table)))
    path = out_dir / "distribution_count.csv"
    write_csv(
        path,
        ("k", "model", "problem", "mape"),
        rows,
        cfg.hash(),
        extra_comments=(f"family-order={','.join(order)}",),
    )
    return path


def experiment_histogram_resolution(cfg: PipelineConfig, out_dir, corpus=None, progress=None):
    """Accuracy-prediction error and training time per histogram resolution.

    Writes resolution.csv (h, test_mape) and resolution_timing.csv
    (h, training_seconds); the latter is wall-clock and thus not
    byte-reproducible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if corpus is None:
        corpus = build_corpus(cfg, progress)
    datasets, _, table = corpus
    master = cfg.corpus.seed
    tr_table, te_table = _split_table(cfg, table)

    result_rows = []
    timing_rows = []
    for h in cfg.resolution_hs:
        if progress:
            progress(f"resolution: h={h}")
        hists_h = {ds_id: build_histogram(points, h) for ds_id, _, points in datasets}
        model = build_network(Mode.ACCURACY, h, rng.derive(master, _TAG_MODEL, 4, h))
        history = train(model, tr_table.rows, hists_h, cfg.train, seed=rng.derive(master, _TAG_MODEL, 5, h))
        result_rows.append((h, evaluate_mape(model, te_table, hists_h)))
        timing_rows.append((h, history[-1].seconds))
    path = out_dir / "resolution.csv"
    write_csv(path, ("h", "test_mape"), result_rows, cfg.hash())
    tpath = out_dir / "resolution_timing.csv"
    write_csv(tpath, ("h", "training_seconds"), timing_rows, cfg.hash())
    return path, tpath
