"""Training and evaluation harness.

Reproduces the benchmark protocol at configurable scale: Adam at learning
rate 0.001 with no weight decay, cross-entropy loss, batch 600 (400 for
96 px images), test accuracy reported every 50k training samples, training
data generated on demand (optionally through a fixed-cardinality seed
list), and a fixed test set generated once up front from a disjoint seed
namespace (test seeds have the top bit set; training seeds never do).

Training is replayable: with the same seeds, config and worker count the
metrics history is identical. Data generation can run on parallel worker
processes; batches are consumed in deterministic index order either way.
"""

from __future__ import annotations

import csv
import logging
import multiprocessing
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, packfile
from .neural import Adam, cross_entropy
from .rng import MASK64
from .scenes import SceneSpec, crop_batch, sample_batch
from .streams import SeedSchedule
from .typenet import TypeNetConfig, TypeNetModel, build

log = logging.getLogger("allpairs.training")

TEST_SEED_BIT = 1 << 63  # test-set seed namespace: top bit set


class TrainingDiverged(RuntimeError):
    pass


def derive_batch_size(image_size: int) -> int:
    return 400 if image_size >= 96 else 600


def test_seed(seed: int) -> int:
    return (seed | TEST_SEED_BIT) & MASK64


def train_seed(seed: int) -> int:
    return (seed & ~TEST_SEED_BIT) & MASK64


@dataclass
class TrainConfig:
    total_samples: int
    batch_size: int = 0  # 0 -> derived from the image size
    learning_rate: float = 1e-3
    eval_period: int = 50_000
    test_size: int = 20_000
    cardinality: int | None = None  # None -> effectively infinite data
    seed: int = 0
    workers: int = 1
    eval_batch: int = 512
    early_stop_acc: float | None = None
    precision: str = "single"

    def __post_init__(self):
        if self.total_samples < 0:
            raise ValueError(f"total_samples must be >= 0, got {self.total_samples}")
        if self.eval_period < 1:
            raise ValueError("eval_period must be >= 1")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be single or double, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    samples_seen: int = 0
    best_acc: float = 0.0
    best_samples: int = 0
    best_path: str | None = None
    final_path: str | None = None
    stopped_early: bool = False


# --------------------------------------------------------------------------
# Data plumbing
# --------------------------------------------------------------------------

def _gen_scene_chunk(args):
    from .scenes import generate_sample
    spec, pairs = args
    images = np.zeros((len(pairs), spec.image_size, spec.image_size), dtype=np.float32)
    labels = np.zeros(len(pairs), dtype=np.int64)
    for i, (seed, idx) in enumerate(pairs):
        s = generate_sample(spec, seed, idx)
        images[i] = s.image
        labels[i] = s.label
    return images, labels


def _gen_crop_chunk(args):
    glyph_config, pairs = args
    images = np.zeros((len(pairs), 24, 24), dtype=np.float32)
    labels = np.zeros(len(pairs), dtype=np.int64)
    from .scenes import crop_sample
    for i, (seed, idx) in enumerate(pairs):
        img, t = crop_sample(seed, idx, glyph_config)
        images[i] = img
        labels[i] = t - 1
    return images, labels


class SceneBatchSource:
    """Maps a global sample index range to generated scene batches.

    With a cardinality, indices route through the seed-list schedule;
    otherwise they stream from one training seed. `pairs(start, count)`
    returns the provenance of every sample, which the error listing uses.
    """

    worker_fn = staticmethod(_gen_scene_chunk)

    def __init__(self, spec: SceneSpec, seed: int, cardinality: int | None = None):
        self.spec = spec
        self.seed = train_seed(seed)
        self.schedule = SeedSchedule(cardinality, self.seed) if cardinality else None

    def pairs(self, start: int, count: int) -> list[tuple[int, int]]:
        if self.schedule is None:
            return [(self.seed, start + i) for i in range(count)]
        return [self.schedule.lookup(start + i) for i in range(count)]

    def job(self, start: int, count: int):
        return (self.spec, self.pairs(start, count))

    def batch(self, start: int, count: int):
        return _gen_scene_chunk(self.job(start, count))


class CropBatchSource:
    """Single-symbol crop batches for the separability probe (18-way)."""

    worker_fn = staticmethod(_gen_crop_chunk)

    def __init__(self, glyph_config, seed: int):
        self.glyph_config = glyph_config
        self.seed = train_seed(seed)

    def pairs(self, start: int, count: int):
        return [(self.seed, start + i) for i in range(count)]

    def job(self, start: int, count: int):
        return (self.glyph_config, self.pairs(start, count))

    def batch(self, start: int, count: int):
        return _gen_crop_chunk(self.job(start, count))


def build_scene_test_set(spec: SceneSpec, seed: int, size: int):
    """Fixed test set from the disjoint seed namespace; returns
    (images, labels, provenance pairs)."""
    ts = test_seed(seed)
    images, labels = sample_batch(spec, ts, 0, size)
    return images, labels, [(ts, i) for i in range(size)]


def build_crop_test_set(glyph_config, seed: int, size: int):
    ts = test_seed(seed)
    images, labels = crop_batch(ts, 0, size, glyph_config)
    return images, labels, [(ts, i) for i in range(size)]


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_model(path, model: TypeNetModel, optimizer: Adam | None = None,
               meta: dict | None = None) -> None:
    arrays = dict(model.state_arrays())
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    full_meta = {
        "format": "typenet-checkpoint",
        "config": model.cfg.to_dict(),
        "image_hw": list(model.image_hw),
        "init_seed": model.seed,
        "dtype": np.dtype(model.dtype).name,
    }
    full_meta.update(meta or {})
    checkpoint.save_checkpoint(path, arrays, full_meta)


def load_model(path) -> tuple[TypeNetModel, dict]:
    arrays, meta = checkpoint.load_checkpoint(path)
    if meta.get("format") != "typenet-checkpoint":
        raise checkpoint.CheckpointError(f"not a model checkpoint: {meta.get('format')!r}")
    cfg = TypeNetConfig.from_dict(meta["config"])
    model = build(cfg, tuple(meta["image_hw"]), seed=meta["init_seed"],
                  dtype=np.dtype(meta["dtype"]).type)
    model.load_state_arrays(arrays)
    return model, meta


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def predict(model: TypeNetModel, images: np.ndarray, batch: int = 512) -> np.ndarray:
    """Eval-mode class predictions for (N, H, W) images."""
    preds = np.zeros(len(images), dtype=np.int64)
    for i in range(0, len(images), batch):
        x = images[i:i + batch][:, None, :, :].astype(model.dtype)
        preds[i:i + batch] = model.forward(x, train=False).argmax(axis=1)
    return preds


def evaluate(model: TypeNetModel, images: np.ndarray, labels: np.ndarray,
             batch: int = 512):
    """Accuracy plus the misclassified positions: (acc, errors)."""
    if len(images) == 0:
        raise ValueError("empty test set")
    preds = predict(model, images, batch)
    labels = np.asarray(labels)
    errors = [(int(i), int(labels[i]), int(preds[i])) for i in np.flatnonzero(preds != labels)]
    return float((preds == labels).mean()), errors


def write_error_listing(path, errors, provenance=None) -> None:
    """CSV of misclassified samples: position, label, prediction, seed, index.

    With provenance (seed, index) pairs the failures are regenerable
    pixel-exactly; without it those columns are blank.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "label", "predicted", "seed", "index"])
        for pos, lab, pred in errors:
            seed, idx = provenance[pos] if provenance else ("", "")
            w.writerow([pos, lab, pred, seed, idx])


def evaluate_pack(model: TypeNetModel, pack: packfile.PackData, batch: int = 512):
    images = packfile.dequantize(pack.images)
    return evaluate(model, images, pack.labels.astype(np.int64), batch)


# --------------------------------------------------------------------------
# The training loop
# --------------------------------------------------------------------------

def train_model(model: TypeNetModel, cfg: TrainConfig, source,
                test_images: np.ndarray, test_labels: np.ndarray,
                out_dir=None, run_name: str = "run") -> TrainResult:
    """Train `model` on batches from `source` with periodic evaluation.

    source must provide batch(start, count) -> (images, labels) as a pure
    function of the index range. Writes metrics.csv and best/final
    checkpoints under out_dir when given. Aborts with a diagnostic
    checkpoint if the loss goes non-finite.
    """
    batch_size = cfg.batch_size or derive_batch_size(test_images.shape[-1])
    optimizer = Adam(model.params(), lr=cfg.learning_rate)
    result = TrainResult()
    out = Path(out_dir) if out_dir else None
    csv_fh = writer = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        csv_fh = open(out / f"{run_name}-metrics.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(csv_fh)
        writer.writerow(["samples", "train_loss", "train_acc", "test_acc", "seconds"])

    pool = None
    if cfg.workers > 1:
        pool = multiprocessing.get_context("fork").Pool(cfg.workers)

    t0 = time.time()
    window_loss: list[float] = []
    window_acc: list[float] = []
    next_eval = cfg.eval_period
    seen = 0

    def run_eval():
        nonlocal result
        acc, _ = evaluate(model, test_images, test_labels, cfg.eval_batch)
        row = {
            "samples": seen,
            "train_loss": float(np.mean(window_loss)) if window_loss else float("nan"),
            "train_acc": float(np.mean(window_acc)) if window_acc else float("nan"),
            "test_acc": acc,
            "seconds": time.time() - t0,
        }
        result.history.append(row)
        window_loss.clear()
        window_acc.clear()
        if writer:
            writer.writerow([row["samples"], f"{row['train_loss']:.6f}",
                             f"{row['train_acc']:.6f}", f"{row['test_acc']:.6f}",
                             f"{row['seconds']:.3f}"])
            csv_fh.flush()
        if acc > result.best_acc:
            result.best_acc = acc
            result.best_samples = seen
            if out:
                result.best_path = str(out / f"{run_name}-best.ckpt")
                save_model(result.best_path, model, optimizer,
                           {"samples": seen, "test_acc": acc})
        log.info("%s: %dk samples, test acc %.4f", run_name, seen // 1000, acc)
        return acc

    try:
        n_batches = cfg.total_samples // batch_size
        batch_iter = range(n_batches)
        if pool is not None:
            jobs = (source.job(b * batch_size, batch_size) for b in batch_iter)
            batches = pool.imap(source.worker_fn, jobs, chunksize=1)
        else:
            batches = (source.batch(b * batch_size, batch_size) for b in batch_iter)

        for images, labels in batches:
            x = images[:, None, :, :].astype(cfg.dtype, copy=False)
            logits = model.forward_logits(x, train=True)
            loss, dlogits = cross_entropy(logits, labels)
            if not np.isfinite(loss):
                if out:
                    save_model(out / f"{run_name}-diverged.ckpt", model, optimizer,
                               {"samples": seen, "loss": loss})
                raise TrainingDiverged(f"non-finite loss at {seen} samples")
            optimizer.zero_grad()
            model.backward(dlogits.astype(cfg.dtype))
            optimizer.step()
            seen += len(labels)
            window_loss.append(loss)
            window_acc.append(float((logits.argmax(axis=1) == labels).mean()))
            if seen >= next_eval:
                acc = run_eval()
                next_eval += cfg.eval_period
                if cfg.early_stop_acc is not None and acc >= cfg.early_stop_acc:
                    result.stopped_early = True
                    break
    finally:
        if pool is not None:
            pool.terminate()
            pool.join()

    result.samples_seen = seen
    if seen and (not result.history or result.history[-1]["samples"] != seen):
        run_eval()
    if out:
        result.final_path = str(out / f"{run_name}-final.ckpt")
        save_model(result.final_path, model, optimizer,
                   {"samples": seen,
                    "test_acc": result.history[-1]["test_acc"] if result.history else None})
        if result.best_path is None and result.final_path:
            result.best_path = result.final_path
    if csv_fh:
        csv_fh.close()
    return result
