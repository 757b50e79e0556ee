#
# toy.py
#
"""
Toy future-to-past distillation experiment.

Synthetic "videos" are small grids of ``L`` locations with ``D``-dimensional
inputs. The future window of a class-``y`` pair shows a strong motif
``m_y`` at every location; the past window shows a different precursor
``p_y`` at a few locations, buried in noise. A teacher trained to
recognize future windows supplies feature targets for the student, which
must anticipate ``y`` from the past window alone. Only a handful of pairs
are labeled.

Encoder: ``tanh`` hidden layer and ``softplus`` feature layer applied per
location, then a linear head over the mean-pooled features. All gradients
are written out by hand.
"""
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .distill import FEATURE_LOSSES, LossWeights, average_checkpoints
from .exceptions import ContractError, SetupError

logger = logging.getLogger(__name__)

TRAIN_MODES = ("plain", "distilled")


@dataclass(frozen=True)
class ToyTaskConfig:
    n_classes: int = 5
    input_dim: int = 16
    frames: int = 1
    height: int = 2
    width: int = 2
    hidden: int = 16
    channels: int = 8
    precursor_locations: int = 2
    signal: float = 3.0
    past_noise: float = 1.0
    future_noise: float = 0.5
    labeled_per_class: int = 1
    n_unlabeled: int = 400
    n_validation: int = 100
    n_test: int = 200
    n_recognition: int = 500
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.05
    teacher_epochs: int = 30
    teacher_learning_rate: float = 0.1
    teacher_floor: float = 0.9
    average_best: int = 0
    loss: str = "similarity"

    def __post_init__(self):
        if self.loss not in FEATURE_LOSSES:
            raise ContractError(f"unknown feature loss {self.loss!r}")
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "loss":
                continue
            if f.name in ("past_noise", "future_noise", "average_best", "n_unlabeled"):
                if value < 0:
                    raise ContractError(f"{f.name} must be >= 0")
            elif f.name == "teacher_floor":
                if not 0 <= value <= 1:
                    raise ContractError("teacher_floor must be in [0, 1]")
            elif value <= 0:
                raise ContractError(f"{f.name} must be > 0")
        if self.precursor_locations > self.n_locations:
            raise ContractError("more precursor locations than grid locations")

    @property
    def n_locations(self) -> int:
        return self.frames * self.height * self.width

    @property
    def grid(self) -> Tuple[int, int, int]:
        return self.frames, self.height, self.width

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "ToyTaskConfig":
        """build from string values (a ``[toy]`` config section); unknown keys are rejected"""
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ContractError(f"unknown toy setting {key!r}")
            if kinds[key] in (str, "str"):
                kw[key] = raw.strip()
            else:
                kw[key] = float(raw) if kinds[key] in (float, "float") else int(raw)
        return cls(**kw)


@dataclass
class ToyTask:
    """arrays for one synthetic experiment; ``-1`` marks an unlabeled pair"""

    config: ToyTaskConfig
    recognition_x: np.ndarray
    recognition_y: np.ndarray
    past: np.ndarray
    future: np.ndarray
    labels: np.ndarray
    validation_x: np.ndarray
    validation_y: np.ndarray
    test_past: np.ndarray
    test_future: np.ndarray
    test_y: np.ndarray

    @property
    def n_labeled(self) -> int:
        return int(np.count_nonzero(self.labels >= 0))


def make_toy_task(config: ToyTaskConfig = ToyTaskConfig(), seed: int = 0) -> ToyTask:
    """
    Draw motifs and windows for one experiment. The training stream holds
    ``labeled_per_class`` labeled pairs per class and ``n_unlabeled``
    unlabeled ones, shuffled together.
    """
    rng = np.random.default_rng(seed)
    cfg = config
    k, d, n_loc = cfg.n_classes, cfg.input_dim, cfg.n_locations

    def unit_rows(n):
        v = rng.normal(size=(n, d))
        return cfg.signal * v / np.linalg.norm(v, axis=1, keepdims=True)

    motifs = unit_rows(k)
    precursors = unit_rows(k)

    def future_windows(y):
        return motifs[y][:, None, :] + cfg.future_noise * rng.normal(size=(len(y), n_loc, d))

    def past_windows(y):
        x = cfg.past_noise * rng.normal(size=(len(y), n_loc, d))
        for i, cls in enumerate(y):
            where = rng.choice(n_loc, cfg.precursor_locations, replace=False)
            x[i, where] += precursors[cls]
        return x

    rec_y = rng.integers(k, size=cfg.n_recognition)
    labeled_y = np.repeat(np.arange(k), cfg.labeled_per_class)
    unlabeled_y = rng.integers(k, size=cfg.n_unlabeled)
    stream_y = np.concatenate([labeled_y, unlabeled_y])
    visible = np.concatenate([labeled_y, np.full(cfg.n_unlabeled, -1)])
    order = rng.permutation(stream_y.size)
    stream_y, visible = stream_y[order], visible[order]
    val_y = rng.integers(k, size=cfg.n_validation)
    test_y = rng.integers(k, size=cfg.n_test)
    return ToyTask(
        cfg,
        future_windows(rec_y),
        rec_y,
        past_windows(stream_y),
        future_windows(stream_y),
        visible,
        past_windows(val_y),
        val_y,
        past_windows(test_y),
        future_windows(test_y),
        test_y,
    )


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class ToyEncoder:
    """
    Two-layer per-location feature extractor with a linear classifier head.
    Parameters live in one flat vector (``params``) so that they can be
    checkpointed and averaged; ``unpack`` gives named views into it.
    """

    def __init__(self, config: ToyTaskConfig, params: np.ndarray):
        self.config = config
        self.params = np.array(params, dtype=np.float64)
        if self.params.size != self.n_params(config):
            raise ContractError(
                f"expected {self.n_params(config)} parameters, got {self.params.size}"
            )

    @staticmethod
    def _shapes(cfg: ToyTaskConfig) -> List[Tuple[str, Tuple[int, ...]]]:
        d, h, c, k = cfg.input_dim, cfg.hidden, cfg.channels, cfg.n_classes
        return [("W1", (d, h)), ("b1", (h,)), ("W2", (h, c)), ("b2", (c,)), ("V", (c, k)), ("c", (k,))]

    @classmethod
    def n_params(cls, cfg: ToyTaskConfig) -> int:
        return sum(int(np.prod(shape)) for _, shape in cls._shapes(cfg))

    @classmethod
    def initialize(cls, cfg: ToyTaskConfig, rng: np.random.Generator) -> "ToyEncoder":
        parts = []
        for name, shape in cls._shapes(cfg):
            if len(shape) == 2:
                parts.append(rng.normal(scale=1.0 / np.sqrt(shape[0]), size=shape).ravel())
            else:
                parts.append(np.zeros(shape))
        return cls(cfg, np.concatenate(parts))

    def copy(self) -> "ToyEncoder":
        return ToyEncoder(self.config, self.params.copy())

    def unpack(self, params: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        flat = self.params if params is None else params
        ret = {}
        i = 0
        for name, shape in self._shapes(self.config):
            n = int(np.prod(shape))
            ret[name] = flat[i : i + n].reshape(shape)
            i += n
        return ret

    def pack(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[name].ravel() for name, _ in self._shapes(self.config)])

    def forward(self, x: np.ndarray, params: Optional[np.ndarray] = None):
        """``x`` is ``B x L x D``; returns ``(features B x L x C, logits B x K, cache)``"""
        p = self.unpack(params)
        a1 = np.tanh(x @ p["W1"] + p["b1"])
        z2 = a1 @ p["W2"] + p["b2"]
        feats = _softplus(z2)
        pooled = feats.mean(axis=1)
        logits = pooled @ p["V"] + p["c"]
        return feats, logits, (x, a1, z2, pooled, p)

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[1].argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == y))

    def backward(self, cache, d_feats: np.ndarray, d_logits: np.ndarray) -> np.ndarray:
        x, a1, z2, pooled, p = cache
        n_loc = x.shape[1]
        grads = {
            "V": pooled.T @ d_logits,
            "c": d_logits.sum(axis=0),
        }
        d_pooled = d_logits @ p["V"].T
        d_z2 = (d_feats + d_pooled[:, None, :] / n_loc) * _sigmoid(z2)
        grads["W2"] = a1.reshape(-1, a1.shape[-1]).T @ d_z2.reshape(-1, d_z2.shape[-1])
        grads["b2"] = d_z2.sum(axis=(0, 1))
        d_z1 = (d_z2 @ p["W2"].T) * (1.0 - a1**2)
        grads["W1"] = x.reshape(-1, x.shape[-1]).T @ d_z1.reshape(-1, d_z1.shape[-1])
        grads["b1"] = d_z1.sum(axis=(0, 1))
        return self.pack(grads)

    def objective(
        self,
        params: np.ndarray,
        x: np.ndarray,
        teacher_features: Optional[np.ndarray],
        labels: np.ndarray,
        weights: LossWeights = LossWeights(),
        loss: str = "similarity",
    ) -> Tuple[float, np.ndarray]:
        """
        Batch training objective and its gradient w.r.t. ``params``:
        ``weights.distill`` times the batch mean of the feature loss named
        ``loss`` (see ``FEATURE_LOSSES``; skipped when the weight is 0 or
        there are no teacher features),
        plus ``weights.classification`` times the mean cross-entropy over
        the labeled members (``labels >= 0``).
        """
        if loss not in FEATURE_LOSSES:
            raise ContractError(f"unknown feature loss {loss!r}")
        feats, logits, cache = self.forward(x, params)
        value = 0.0
        d_feats = np.zeros_like(feats)
        d_logits = np.zeros_like(logits)
        labeled = np.flatnonzero(labels >= 0)
        if labeled.size:
            z = logits[labeled]
            z = z - z.max(axis=1, keepdims=True)
            log_norm = np.log(np.exp(z).sum(axis=1))
            y = labels[labeled]
            value += weights.classification * float(np.mean(log_norm - z[np.arange(y.size), y]))
            probs = np.exp(z - log_norm[:, None])
            probs[np.arange(y.size), y] -= 1.0
            d_logits[labeled] = weights.classification * probs / labeled.size
        if weights.distill > 0 and teacher_features is not None:
            losses, grad = FEATURE_LOSSES[loss](feats, teacher_features)
            value += weights.distill * float(losses.mean())
            d_feats = weights.distill * grad / len(x)
        return value, self.backward(cache, d_feats, d_logits)


def _sgd_epochs(
    enc, x, y, teacher_features, weights, *, epochs, batch_size, lr, rng, on_epoch=None, loss="similarity"
):
    curve = []
    n = len(x)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            labels = y[idx]
            use_distill = weights.distill > 0 and teacher_features is not None
            if not use_distill and not np.any(labels >= 0):
                continue
            tf = teacher_features[idx] if use_distill else None
            value, grad = enc.objective(enc.params, x[idx], tf, labels, weights, loss)
            enc.params -= lr * grad
            total += value
            batches += 1
        curve.append(total / batches if batches else float("nan"))
        if on_epoch is not None:
            on_epoch(epoch, enc)
    return curve


def train_teacher(task: ToyTask, seed: int = 0) -> ToyEncoder:
    """
    Train the recognition teacher on labeled future windows. Raises
    :class:`SetupError` if it stays below ``teacher_floor`` on the held-out
    future windows.
    """
    cfg = task.config
    rng = np.random.default_rng([seed, 1])
    teacher = ToyEncoder.initialize(cfg, rng)
    _sgd_epochs(
        teacher,
        task.recognition_x,
        task.recognition_y,
        None,
        LossWeights(0.0, 1.0),
        epochs=cfg.teacher_epochs,
        batch_size=cfg.batch_size,
        lr=cfg.teacher_learning_rate,
        rng=rng,
    )
    acc = teacher.accuracy(task.test_future, task.test_y)
    logger.debug("teacher recognition accuracy %.3f", acc)
    if acc < cfg.teacher_floor:
        raise SetupError(
            f"teacher recognition accuracy {acc:.3f} is below the floor {cfg.teacher_floor:.2f}"
        )
    return teacher


@dataclass
class ToyRun:
    mode: str
    seed: int
    accuracy: float
    encoder: ToyEncoder
    loss_curve: List[float] = field(default_factory=list)
    loss: str = "similarity"

    @property
    def checkpoint_name(self) -> str:
        return f"{self.mode}_seed{self.seed}.sant"


def train_toy(
    task: ToyTask,
    mode: str,
    seed: int = 0,
    *,
    teacher: Optional[ToyEncoder] = None,
    weights: LossWeights = LossWeights(),
    loss: Optional[str] = None,
) -> ToyRun:
    """
    Train a student initialized from the teacher on the task's pair stream
    and report its top-1 anticipation accuracy on held-out past windows.

    ``plain`` uses cross-entropy on the labeled pairs only (batches without
    a labeled pair are skipped); ``distilled`` adds the weighted
    feature loss against the teacher's future-window features on every
    pair. The feature loss is ``loss``, or the task config's ``loss`` when
    omitted. Both modes see the same shuffled stream for a given seed.
    """
    if mode not in TRAIN_MODES:
        raise ContractError(f"unknown training mode {mode!r}")
    cfg = task.config
    loss = cfg.loss if loss is None else loss
    if loss not in FEATURE_LOSSES:
        raise ContractError(f"unknown feature loss {loss!r}")
    if teacher is None:
        teacher = train_teacher(task, seed)
    student = teacher.copy()
    if mode == "plain":
        weights = replace(weights, distill=0.0)
    teacher_features = teacher.features(task.future)

    snapshots: List[Tuple[float, int, np.ndarray]] = []

    def keep_snapshot(epoch, enc):
        if cfg.average_best:
            acc = enc.accuracy(task.validation_x, task.validation_y)
            snapshots.append((acc, epoch, enc.params.copy()))

    curve = _sgd_epochs(
        student,
        task.past,
        task.labels,
        teacher_features,
        weights,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.learning_rate,
        rng=np.random.default_rng([seed, 2]),
        on_epoch=keep_snapshot,
        loss=loss,
    )
    if snapshots:
        best = sorted(snapshots, key=lambda s: (-s[0], s[1]))[: cfg.average_best]
        student = ToyEncoder(cfg, average_checkpoints([s[2] for s in best]))
    acc = student.accuracy(task.test_past, task.test_y)
    logger.debug("%s student (%s), seed %d: accuracy %.3f", mode, loss, seed, acc)
    return ToyRun(mode, seed, acc, student, curve, loss)


@dataclass
class DemoResult:
    seeds: List[int]
    runs: Dict[str, List[ToyRun]]
    loss: str = "similarity"

    def accuracies(self, mode: str) -> List[float]:
        return [run.accuracy for run in self.runs[mode]]

    @property
    def wins(self) -> int:
        """seeds on which distillation is at least as accurate as plain training"""
        return sum(d >= p for d, p in zip(self.accuracies("distilled"), self.accuracies("plain")))

    @property
    def mean_improvement(self) -> float:
        """mean accuracy gain of distillation, in percentage points"""
        diffs = np.subtract(self.accuracies("distilled"), self.accuracies("plain"))
        return 100.0 * float(diffs.mean())


def run_demo(
    seeds: Sequence[int] = range(10),
    config: ToyTaskConfig = ToyTaskConfig(),
    weights: LossWeights = LossWeights(),
    loss: Optional[str] = None,
) -> DemoResult:
    """
    train both modes on every seed; each seed draws its own task and teacher.
    ``loss`` overrides ``config.loss``.
    """
    loss = config.loss if loss is None else loss
    runs: Dict[str, List[ToyRun]] = {mode: [] for mode in TRAIN_MODES}
    for seed in seeds:
        task = make_toy_task(config, seed)
        teacher = train_teacher(task, seed)
        for mode in TRAIN_MODES:
            runs[mode].append(train_toy(task, mode, seed, teacher=teacher, weights=weights, loss=loss))
    result = DemoResult(list(seeds), runs, loss)
    logger.info(
        "toy distillation (%s): distilled >= plain on %d/%d seeds, mean gain %.2f points",
        loss,
        result.wins,
        len(result.seeds),
        result.mean_improvement,
    )
    return result
