#
# distill.py
#
"""
Future-to-past distillation losses.

A student sees a past window and is trained so that its feature map
resembles a frozen recognition teacher's feature map of the paired future
window. Every location of the student map is compared with every location
of the teacher map (the maps are treated as unpaired sets of vectors), and
the loss is the reciprocal of the mean cosine similarity.

All losses return ``(value, gradient)`` where the gradient is taken with
respect to the student side only; the teacher never receives a gradient.
"""
import logging
import struct
import typing
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .core import ActionSegment, Tick, TimingConfig, __diag__
from .exceptions import AcceptanceFailure, ContractError, DataFormatError

logger = logging.getLogger(__name__)

EPS_CLAMP = 1e-4
GRADIENT_TOLERANCE = 1e-4

CHECKPOINT_MAGIC = b"SANT"
CHECKPOINT_VERSION = 1
_CHECKPOINT_HEADER = struct.Struct("<4sHI")


class FeatureMap:
    """
    A ``C x F x H x W`` feature tensor; each of the ``L = F*H*W``
    spatiotemporal locations carries a ``C``-vector.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise ContractError(f"feature map must be C x F x H x W with all dims >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ContractError("feature map entries must be finite")
        self.data = arr

    @classmethod
    def from_locations(cls, locations, grid: Tuple[int, int, int]) -> "FeatureMap":
        """inverse of :meth:`locations`: an ``L x C`` array laid out on an ``F x H x W`` grid"""
        loc = np.asarray(locations, dtype=np.float64)
        return cls(loc.T.reshape((loc.shape[1],) + tuple(grid)))

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_locations(self) -> int:
        return int(np.prod(self.data.shape[1:]))

    def locations(self) -> np.ndarray:
        """the ``L x C`` matrix of per-location vectors"""
        return self.data.reshape(self.channels, -1).T

    def __repr__(self):
        return f"FeatureMap(shape={self.shape})"


def _check_pair(r_p: FeatureMap, r_f: FeatureMap) -> None:
    if r_p.channels != r_f.channels or r_p.n_locations != r_f.n_locations:
        raise ContractError(
            f"feature maps disagree: {r_p.channels}x{r_p.n_locations} vs {r_f.channels}x{r_f.n_locations}"
        )


def _check_same_shape(r_p: FeatureMap, r_f: FeatureMap) -> None:
    if r_p.shape != r_f.shape:
        raise ContractError(f"feature maps must have identical shapes, got {r_p.shape} and {r_f.shape}")


def _unit_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # zero rows stay zero, so they have cosine 0 with everything
    norms = np.linalg.norm(x, axis=-1)
    units = np.zeros_like(x)
    nz = norms > 0
    units[nz] = x[nz] / norms[nz][..., None]
    return units, norms


def similarity_matrix(r_p: FeatureMap, r_f: FeatureMap) -> np.ndarray:
    """
    ``L x L`` matrix of cosine similarities between every past location
    ``i`` and every future location ``j``.

    Example::

        r_p = FeatureMap.from_locations([[1, 0], [0, 1]], (2, 1, 1))
        r_f = FeatureMap.from_locations([[1, 0], [1, 0]], (2, 1, 1))
        similarity_matrix(r_p, r_f)  # -> [[1, 1], [0, 0]]
    """
    _check_pair(r_p, r_f)
    u, _ = _unit_rows(r_p.locations())
    w, _ = _unit_rows(r_f.locations())
    return np.clip(u @ w.T, -1.0, 1.0)


def batch_distill_loss(
    past: np.ndarray, future: np.ndarray, eps: float = EPS_CLAMP
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distillation loss for a batch of location matrices ``past`` and
    ``future`` of shape ``B x L x C``; returns per-example losses ``(B,)``
    and the gradient with respect to ``past`` ``(B, L, C)``.
    """
    past = np.asarray(past, dtype=np.float64)
    future = np.asarray(future, dtype=np.float64)
    if past.shape != future.shape or past.ndim != 3:
        raise ContractError(f"expected matching B x L x C arrays, got {past.shape} and {future.shape}")
    n_loc = past.shape[1]
    u, norms = _unit_rows(past)
    w, _ = _unit_rows(future)
    s = w.sum(axis=1)  # (B, C)
    proj = np.einsum("blc,bc->bl", u, s)
    m = np.clip(proj.sum(axis=1) / n_loc**2, -1.0, 1.0)

    clamped = m <= eps
    loss = np.where(clamped, 1.0 / eps, 1.0 / np.where(clamped, 1.0, m))
    dl_dm = np.where(clamped, 0.0, -1.0 / np.where(clamped, 1.0, m) ** 2)
    if clamped.any() and __diag__.warn_on_clamped_similarity:
        warnings.warn(
            f"mean similarity clamped to {eps} for {int(clamped.sum())} example(s)", stacklevel=3
        )

    # d m / d p_i = (S - (u_i . S) u_i) / (L^2 |p_i|), zero for zero-norm rows
    safe = np.where(norms > 0, norms, 1.0)
    dm = (s[:, None, :] - proj[..., None] * u) / (n_loc**2 * safe[..., None])
    dm[norms == 0] = 0.0
    return loss, dl_dm[:, None, None] * dm


def distill_loss(r_p: FeatureMap, r_f: FeatureMap, eps: float = EPS_CLAMP) -> Tuple[float, np.ndarray]:
    """
    Reciprocal mean similarity ``1 / max(mean(M), eps)`` and its gradient
    with respect to ``r_p`` (same shape as ``r_p.data``). Below the clamp the
    loss is constant and the gradient is zero.
    """
    _check_pair(r_p, r_f)
    loss, grad = batch_distill_loss(r_p.locations()[None], r_f.locations()[None], eps)
    return float(loss[0]), grad[0].T.reshape(r_p.shape)


def mse_loss(r_p: FeatureMap, r_f: FeatureMap) -> Tuple[float, np.ndarray]:
    """mean squared elementwise difference of two aligned maps"""
    _check_same_shape(r_p, r_f)
    diff = r_p.data - r_f.data
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def gap_mse_loss(r_p: FeatureMap, r_f: FeatureMap) -> Tuple[float, np.ndarray]:
    """mean squared difference of the location-averaged (globally pooled) vectors"""
    _check_same_shape(r_p, r_f)
    gp = r_p.locations().mean(axis=0)
    gf = r_f.locations().mean(axis=0)
    diff = gp - gf
    g_loc = np.broadcast_to(2.0 * diff / diff.size / r_p.n_locations, r_p.locations().shape)
    return float(np.mean(diff**2)), np.ascontiguousarray(g_loc.T).reshape(r_p.shape)


def _check_batch(past: np.ndarray, future: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    past = np.asarray(past, dtype=np.float64)
    future = np.asarray(future, dtype=np.float64)
    if past.shape != future.shape or past.ndim != 3:
        raise ContractError(f"expected matching B x L x C arrays, got {past.shape} and {future.shape}")
    return past, future


def batch_mse_loss(past: np.ndarray, future: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """per-example :func:`mse_loss` over ``B x L x C`` batches, with the gradient w.r.t. ``past``"""
    past, future = _check_batch(past, future)
    diff = past - future
    per_example = diff[0].size
    return (diff**2).mean(axis=(1, 2)), 2.0 * diff / per_example


def batch_gap_mse_loss(past: np.ndarray, future: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """per-example :func:`gap_mse_loss` over ``B x L x C`` batches, with the gradient w.r.t. ``past``"""
    past, future = _check_batch(past, future)
    n_loc, n_chan = past.shape[1], past.shape[2]
    diff = past.mean(axis=1) - future.mean(axis=1)
    grad = np.broadcast_to((2.0 * diff / n_chan / n_loc)[:, None, :], past.shape)
    return (diff**2).mean(axis=1), np.ascontiguousarray(grad)


FEATURE_LOSSES = {
    "similarity": batch_distill_loss,
    "mse": batch_mse_loss,
    "gap_mse": batch_gap_mse_loss,
}
"""batch feature losses a student can be distilled with, by name"""


def cross_entropy(logits, label: int) -> Tuple[float, np.ndarray]:
    """cross-entropy of ``softmax(logits)`` against ``label``, with gradient w.r.t. the logits"""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ContractError("logits must be a vector")
    if not 0 <= label < z.size:
        raise ContractError(f"label {label} out of range for {z.size} classes")
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - log_norm)
    grad = probs.copy()
    grad[label] -= 1.0
    return float(log_norm - shifted[label]), grad


@dataclass(frozen=True)
class LossWeights:
    distill: float = 20.0
    classification: float = 1.0

    def __post_init__(self):
        if self.distill < 0 or self.classification < 0:
            raise ContractError("loss weights must be >= 0")


def combined_loss_and_grad(
    r_p: FeatureMap,
    r_f: FeatureMap,
    logits,
    label: Optional[int],
    weights: LossWeights = LossWeights(),
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    ``weights.distill * L_d + [label is not None] * weights.classification * CE``,
    with gradients w.r.t. ``r_p`` and the logits. The logit gradient is zero
    for unlabeled examples.
    """
    logits = np.asarray(logits, dtype=np.float64)
    l_d, g_p = distill_loss(r_p, r_f)
    value = weights.distill * l_d
    g_logits = np.zeros_like(logits)
    if label is not None:
        ce, g_ce = cross_entropy(logits, label)
        value += weights.classification * ce
        g_logits = weights.classification * g_ce
    elif logits.ndim != 1:
        raise ContractError("logits must be a vector")
    return value, weights.distill * g_p, g_logits


def combined_loss(
    r_p: FeatureMap,
    r_f: FeatureMap,
    logits,
    label: Optional[int],
    weights: LossWeights = LossWeights(),
) -> float:
    return combined_loss_and_grad(r_p, r_f, logits, label, weights)[0]


@dataclass(frozen=True)
class PairExample:
    """
    A past/future window pair at anchor time ``t``: the student observes
    ``past_window = [t - tau_a - tau_o, t - tau_a)``, the teacher observes
    ``future_window = [t, t + tau_o)``. ``label`` is ``None`` for unlabeled
    pairs.
    """

    video_id: str
    t: Tick
    past_window: Tuple[Tick, Tick]
    future_window: Tuple[Tick, Tick]
    label: Optional[int]

    @property
    def is_labeled(self) -> bool:
        return self.label is not None


PAIR_REGIMES = ("supervised", "augmented", "all")


def _merged_length(intervals: List[Tuple[Tick, Tick]]) -> Tick:
    total = 0
    cur_start = cur_end = None
    for start, end in sorted(intervals):
        if cur_end is None or start > cur_end:
            if cur_end is not None:
                total += cur_end - cur_start
            cur_start, cur_end = start, end
        else:
            cur_end = max(cur_end, end)
    if cur_end is not None:
        total += cur_end - cur_start
    return total


def action_coverage(segments: Sequence[ActionSegment], window: Tuple[Tick, Tick]) -> Dict[int, Tick]:
    """ticks of ``window`` covered by each action (overlapping segments of one action count once)"""
    lo, hi = window
    spans: Dict[int, List[Tuple[Tick, Tick]]] = {}
    for seg in segments:
        start, end = max(seg.start, lo), min(seg.end, hi)
        if start < end:
            spans.setdefault(seg.action_id, []).append((start, end))
    return {action: _merged_length(iv) for action, iv in spans.items()}


def window_label(segments: Sequence[ActionSegment], window: Tuple[Tick, Tick]) -> Optional[int]:
    """
    The action covering at least half of ``window``; when several do, the
    one with the largest coverage, ties to the lowest action id.
    """
    length = window[1] - window[0]
    coverage = action_coverage(segments, window)
    eligible = [(-cov, action) for action, cov in coverage.items() if 2 * cov >= length]
    return min(eligible)[1] if eligible else None


def sample_pairs(
    segments: Sequence[ActionSegment],
    video_length: Tick,
    cfg: TimingConfig,
    stride: Tick,
    regime: str = "all",
) -> Iterator[PairExample]:
    """
    Generate training pairs from one video's annotations.

    Anchor times ``t`` run over multiples of ``stride`` such that the past
    window starts at or after 0 and the future window ends by
    ``video_length``. A pair is labeled with the action covering at least
    half of the future window; it is left unlabeled when no action does, or
    when the past window carries the same action (nothing to anticipate).

    Regimes: ``supervised`` yields one pair per annotated segment anchored
    at its start and labeled with its action, ``augmented`` adds the
    labeled grid pairs to those, and ``all`` yields every grid pair. When a
    supervised anchor falls on the grid, the supervised pair is kept.
    """
    if stride <= 0:
        raise ContractError("stride must be > 0")
    if regime not in PAIR_REGIMES:
        raise ContractError(f"unknown pair regime {regime!r}")
    segs = sorted(segments, key=lambda s: (s.start, s.end, s.action_id))
    video_ids = {s.video_id for s in segs}
    if len(video_ids) > 1:
        raise ContractError("sample_pairs works on one video at a time")
    video_id = video_ids.pop() if video_ids else ""
    lead = cfg.anticipation + cfg.observation

    def make_pair(t, label):
        return PairExample(
            video_id,
            t,
            (t - lead, t - cfg.anticipation),
            (t, t + cfg.observation),
            label,
        )

    supervised: Dict[Tick, PairExample] = {}
    if regime != "all":
        for seg in segs:
            if seg.start - lead >= 0 and seg.start + cfg.observation <= video_length:
                supervised.setdefault(seg.start, make_pair(seg.start, seg.action_id))
    if regime == "supervised":
        yield from supervised.values()
        return

    pairs: Dict[Tick, PairExample] = {}
    first = -(-lead // stride)
    last = (video_length - cfg.observation) // stride
    for k in range(first, last + 1):
        t = k * stride
        pair = make_pair(t, None)
        label = window_label(segs, pair.future_window)
        if label is not None and window_label(segs, pair.past_window) == label:
            label = None
        if label is None and regime == "augmented":
            continue
        pairs[t] = make_pair(t, label)
    pairs.update(supervised)
    for t in sorted(pairs):
        yield pairs[t]


def average_checkpoints(checkpoints: Sequence) -> np.ndarray:
    """elementwise mean of equal-length parameter vectors"""
    if not checkpoints:
        raise ContractError("no checkpoints to average")
    arrays = [np.asarray(c, dtype=np.float64).ravel() for c in checkpoints]
    if len({a.size for a in arrays}) != 1:
        raise ContractError("checkpoints have different lengths")
    return np.mean(arrays, axis=0)


def save_checkpoint(path: typing.Union[str, Path], params) -> None:
    """
    Write a flat parameter vector: magic ``SANT``, uint16 version, uint32
    length, then little-endian float32 values.
    """
    values = np.asarray(params, dtype="<f4").ravel()
    with open(path, "wb") as out:
        out.write(_CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, values.size))
        out.write(values.tobytes())


def load_checkpoint(path: typing.Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _CHECKPOINT_HEADER.size:
        raise DataFormatError("checkpoint too short", source=str(path))
    magic, version, length = _CHECKPOINT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"bad checkpoint magic {magic!r}", source=str(path))
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}", source=str(path))
    payload = raw[_CHECKPOINT_HEADER.size:]
    if len(payload) != 4 * length:
        raise DataFormatError(
            f"checkpoint declares {length} values but holds {len(payload) // 4}", source=str(path)
        )
    return np.frombuffer(payload, dtype="<f4").astype(np.float64)


def numeric_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """central finite differences of scalar ``f`` at ``x``"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """largest elementwise difference, relative to the largest gradient magnitude"""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def gradient_check(
    f: Callable[[np.ndarray], Tuple[float, np.ndarray]], x, h: float = 1e-5
) -> float:
    """relative error between the analytic gradient returned by ``f`` and central differences"""
    x = np.array(x, dtype=np.float64)
    _, analytic = f(x)
    numeric = numeric_gradient(lambda v: f(v)[0], x, h)
    return relative_error(analytic, numeric)


def _random_maps(rng: np.random.Generator, positive: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    shape = (int(rng.integers(2, 5)),) + tuple(int(d) for d in rng.integers(1, 3, size=3))
    loc = 0.5 if positive else 0.0
    return rng.normal(loc, 1.0, size=shape), rng.normal(loc, 1.0, size=shape)


def grad_check_suite(cases: int = 100, seed: int = 0, h: float = 1e-5) -> Dict[str, float]:
    """
    Worst relative gradient error per loss over ``cases`` random small
    tensors: distillation, MSE, GAP+MSE, cross-entropy and the toy encoder.
    Distillation cases are drawn away from the similarity clamp.
    """
    from .toy import ToyEncoder, ToyTaskConfig

    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(("distill", "mse", "gap_mse", "cross_entropy", "toy_encoder"), 0.0)

    def track(name, err):
        worst[name] = max(worst[name], err)

    for _ in range(cases):
        p, f = _random_maps(rng, positive=True)
        r_f = FeatureMap(f)
        while float(similarity_matrix(FeatureMap(p), r_f).mean()) < 0.05:
            p, f = _random_maps(rng, positive=True)
            r_f = FeatureMap(f)
        track("distill", gradient_check(lambda x: distill_loss(FeatureMap(x), r_f), p, h))

        p, f = _random_maps(rng)
        r_f = FeatureMap(f)
        track("mse", gradient_check(lambda x: mse_loss(FeatureMap(x), r_f), p, h))
        track("gap_mse", gradient_check(lambda x: gap_mse_loss(FeatureMap(x), r_f), p, h))

        logits = rng.normal(size=int(rng.integers(2, 8)))
        label = int(rng.integers(logits.size))
        track("cross_entropy", gradient_check(lambda z: cross_entropy(z, label), logits, h))

    toy_cases = max(1, cases // 10)
    cfg = ToyTaskConfig(input_dim=4, hidden=5, channels=3, n_classes=3)
    for _ in range(toy_cases):
        enc = ToyEncoder.initialize(cfg, rng)
        x = rng.normal(size=(2, cfg.n_locations, cfg.input_dim))
        target = rng.random((2, cfg.n_locations, cfg.channels)) + 0.1
        labels = np.array([int(rng.integers(cfg.n_classes)), -1])
        for name in FEATURE_LOSSES:
            track(
                "toy_encoder",
                gradient_check(lambda v: enc.objective(v, x, target, labels, loss=name), enc.params, h),
            )
    logger.info("gradient check: %s", ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))
    return worst


def assert_gradients(worst: Dict[str, float], tolerance: float = GRADIENT_TOLERANCE) -> None:
    failed = {k: v for k, v in worst.items() if not v < tolerance}
    if failed:
        raise AcceptanceFailure(
            "gradient check failed: "
            + ", ".join(f"{k} relative error {v:.3e} >= {tolerance:g}" for k, v in failed.items())
        )
