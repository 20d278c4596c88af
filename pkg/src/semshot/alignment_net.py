"""Two-layer network mapping (visual, semantic) inputs onto class centers.

The network is y = leaky_relu(x @ W1 + b1) @ W2 + b2 where x is the
concatenation of a visual feature and its class-level semantic embedding
(or a single modality in the ablation variants). Training minimizes the
per-sample L1 distance between the output and the sample's class center.

Gradients are derived by hand and verified against central finite
differences; the optimizer is a from-scratch bias-corrected Adam. Kink
conventions are fixed for determinism: the L1 subgradient at zero residual
is 0, and the activation derivative at exactly zero pre-activation is the
leaky slope.

All arithmetic runs in float64. Checkpoints store parameters as float32.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    ArgumentError,
    DimensionError,
    FormatError,
    MissingSemanticsError,
    NumericsError,
)
from .feature_store import FeatureCache
from .semantic_evolution import SemanticEmbeddingSet, SemanticSource

CHECKPOINT_MAGIC = b"SFCK"
_PARAM_ORDER = ("W1", "b1", "W2", "b2")


class AlignmentSource(enum.Enum):
    """Which modalities feed the network input."""

    VS = "vs"
    V = "v"
    S = "s"


@dataclass
class AlignmentNetwork:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    visual_dim: int
    text_dim: int
    source: AlignmentSource = AlignmentSource.VS
    leaky_slope: float = 0.01
    use_bias: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.leaky_slope < 1.0:
            raise ArgumentError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        expected_in = self.input_dim
        if self.W1.shape != (expected_in, self.hidden_dim):
            raise DimensionError(
                f"W1 has shape {self.W1.shape}, expected ({expected_in}, hidden)"
            )
        if self.W2.shape != (self.hidden_dim, self.visual_dim):
            raise DimensionError(
                f"W2 has shape {self.W2.shape}, expected "
                f"({self.hidden_dim}, {self.visual_dim})"
            )
        if self.b1.shape != (self.hidden_dim,) or self.b2.shape != (self.visual_dim,):
            raise DimensionError("bias shapes do not match layer widths")
        for name, arr in self.params().items():
            if not np.isfinite(arr).all():
                raise NumericsError(f"parameter {name} contains non-finite entries")

    @property
    def input_dim(self) -> int:
        if self.source is AlignmentSource.VS:
            return self.visual_dim + self.text_dim
        if self.source is AlignmentSource.V:
            return self.visual_dim
        return self.text_dim

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def init_network(
    visual_dim: int,
    text_dim: int,
    hidden_dim: int,
    seed: int,
    source: AlignmentSource = AlignmentSource.VS,
    *,
    leaky_slope: float = 0.01,
    use_bias: bool = True,
) -> AlignmentNetwork:
    """Fan-in-scaled uniform init: W ~ U(-a, a) with a = sqrt(6 / fan_in).

    Biases start at zero. The same seed always yields bit-identical
    parameters (W1 is drawn before W2).
    """
    if visual_dim <= 0 or hidden_dim <= 0:
        raise ArgumentError("visual_dim and hidden_dim must be positive")
    if source is not AlignmentSource.V and text_dim <= 0:
        raise ArgumentError(f"text_dim must be positive for source {source.value!r}")
    if source is AlignmentSource.VS:
        input_dim = visual_dim + text_dim
    elif source is AlignmentSource.V:
        input_dim = visual_dim
    else:
        input_dim = text_dim
    rng = np.random.default_rng(seed)
    a1 = np.sqrt(6.0 / input_dim)
    a2 = np.sqrt(6.0 / hidden_dim)
    return AlignmentNetwork(
        W1=rng.uniform(-a1, a1, size=(input_dim, hidden_dim)),
        b1=np.zeros(hidden_dim),
        W2=rng.uniform(-a2, a2, size=(hidden_dim, visual_dim)),
        b2=np.zeros(visual_dim),
        visual_dim=visual_dim,
        text_dim=text_dim if source is not AlignmentSource.V else text_dim,
        source=source,
        leaky_slope=leaky_slope,
        use_bias=use_bias,
    )


def assemble_input(
    net: AlignmentNetwork,
    visual: np.ndarray | None,
    semantic: np.ndarray | None,
) -> np.ndarray:
    """Stack the modalities the network consumes into a (batch, input_dim) block.

    Absent modalities are omitted, never zero-padded; 1-D inputs are treated
    as a single row.
    """

    def as_rows(arr: np.ndarray | None, dim: int, what: str) -> np.ndarray | None:
        if arr is None:
            return None
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise DimensionError(
                f"{what} block has shape {arr.shape}, expected (*, {dim})"
            )
        return arr

    if net.source is AlignmentSource.VS:
        v = as_rows(visual, net.visual_dim, "visual")
        s = as_rows(semantic, net.text_dim, "semantic")
        if v is None or s is None:
            raise DimensionError("source 'vs' needs both visual and semantic inputs")
        if v.shape[0] != s.shape[0]:
            raise DimensionError("visual and semantic row counts differ")
        return np.concatenate([v, s], axis=1)
    if net.source is AlignmentSource.V:
        v = as_rows(visual, net.visual_dim, "visual")
        if v is None:
            raise DimensionError("source 'v' needs a visual input")
        return v
    s = as_rows(semantic, net.text_dim, "semantic")
    if s is None:
        raise DimensionError("source 's' needs a semantic input")
    return s


def _forward_assembled(net: AlignmentNetwork, x: np.ndarray):
    z1 = x @ net.W1 + net.b1
    a1 = np.where(z1 > 0.0, z1, net.leaky_slope * z1)
    y = a1 @ net.W2 + net.b2
    return z1, a1, y


def forward(
    net: AlignmentNetwork,
    visual: np.ndarray | None = None,
    semantic: np.ndarray | None = None,
) -> np.ndarray:
    """Network output for one sample (or a batch, row-wise)."""
    single = (visual is not None and np.asarray(visual).ndim == 1) or (
        visual is None and semantic is not None and np.asarray(semantic).ndim == 1
    )
    x = assemble_input(net, visual, semantic)
    _, _, y = _forward_assembled(net, x)
    return y[0] if single else y


def l1_loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """Sum of absolute errors over dimensions, averaged over batch rows."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise DimensionError(
            f"prediction shape {predicted.shape} != target shape {target.shape}"
        )
    if predicted.ndim == 1:
        predicted = predicted[None, :]
        target = target[None, :]
    return float(np.abs(predicted - target).sum(axis=1).mean())


@dataclass
class TrainingBatch:
    """One mini-batch of (visual, class semantic, class center) rows."""

    target: np.ndarray
    visual: np.ndarray | None = None
    semantic: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.target.ndim != 2:
            raise DimensionError("target must be a (batch, visual_dim) matrix")
        rows = self.target.shape[0]
        for name in ("visual", "semantic"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != rows:
                raise DimensionError(f"{name} rows do not match target rows")
            setattr(self, name, arr)


def _loss_and_grads(
    net: AlignmentNetwork, batch: TrainingBatch
) -> tuple[float, dict[str, np.ndarray]]:
    x = assemble_input(net, batch.visual, batch.semantic)
    if batch.target.shape[1] != net.visual_dim:
        raise DimensionError(
            f"target width {batch.target.shape[1]} != visual_dim {net.visual_dim}"
        )
    rows = x.shape[0]
    z1, a1, y = _forward_assembled(net, x)
    residual = y - batch.target
    loss = float(np.abs(residual).sum(axis=1).mean())
    g2 = np.sign(residual) / rows
    g_w2 = a1.T @ g2
    g_b2 = g2.sum(axis=0)
    g_a1 = g2 @ net.W2.T
    g_z1 = g_a1 * np.where(z1 > 0.0, 1.0, net.leaky_slope)
    g_w1 = x.T @ g_z1
    g_b1 = g_z1.sum(axis=0)
    if not net.use_bias:
        g_b1 = np.zeros_like(g_b1)
        g_b2 = np.zeros_like(g_b2)
    grads = {"W1": g_w1, "b1": g_b1, "W2": g_w2, "b2": g_b2}
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericsError(f"gradient {name} contains non-finite entries")
    if not np.isfinite(loss):
        raise NumericsError("loss is non-finite")
    return loss, grads


def backward(net: AlignmentNetwork, batch: TrainingBatch) -> dict[str, np.ndarray]:
    """Exact (sub)gradients of ``l1_loss(forward(...), target)`` per parameter."""
    _, grads = _loss_and_grads(net, batch)
    return grads


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-4
    hidden_dim: int = 4096
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alignment_source: AlignmentSource = AlignmentSource.VS
    leaky_slope: float = 0.01
    use_bias: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ArgumentError("epochs, batch_size and hidden_dim must be >= 1")
        if self.learning_rate <= 0:
            raise ArgumentError("learning_rate must be positive")
        for beta in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < beta < 1.0:
                raise ArgumentError("Adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_network(cls, net: AlignmentNetwork) -> "AdamState":
        return cls(
            step_count=0,
            first_moment={k: np.zeros_like(v) for k, v in net.params().items()},
            second_moment={k: np.zeros_like(v) for k, v in net.params().items()},
        )


def adam_step(
    net: AlignmentNetwork,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[AlignmentNetwork, AdamState]:
    """One bias-corrected Adam update, in place on ``net`` and ``state``."""
    t = state.step_count + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    params = net.params()
    for name, param in params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise DimensionError(f"gradient {name} has shape {g.shape}, "
                                 f"expected {param.shape}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        param -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    state.step_count = t
    return net, state


def _iter_batches(
    order: np.ndarray,
    class_ids: np.ndarray,
    allowed_classes: frozenset[int],
    batch_size: int,
):
    for start in range(0, order.size, batch_size):
        rows = order[start : start + batch_size]
        # Training must never touch records outside the training split.
        assert all(int(c) in allowed_classes for c in class_ids[rows]), (
            "batch iterator selected a record from outside the training split"
        )
        yield rows


def train(
    cache: FeatureCache,
    embeddings: SemanticEmbeddingSet | None,
    semantic_source: SemanticSource | None,
    centers: Mapping[int, np.ndarray],
    config: TrainConfig,
    split: str = "base",
) -> tuple[AlignmentNetwork, list[float]]:
    """Fit the network on one split and return it with the per-epoch mean loss.

    Every sample pairs its own feature vector with its class-level semantic
    embedding and its class center; the shuffle order is drawn from
    ``config.seed``, so identical inputs give identical loss curves and
    final parameters.
    """
    split_class_ids = cache.split_classes(split)
    allowed = frozenset(int(c) for c in split_class_ids)
    rows = np.concatenate([cache.class_indices(c) for c in split_class_ids])
    rows = np.sort(rows)  # on-disk record order
    visual = cache.vectors[rows].astype(np.float64)
    sample_classes = cache.class_ids[rows]

    needs_semantics = config.alignment_source is not AlignmentSource.V
    sem_by_class: dict[int, np.ndarray] = {}
    if needs_semantics:
        if embeddings is None or semantic_source is None:
            raise MissingSemanticsError(
                f"alignment source {config.alignment_source.value!r} requires "
                "semantic embeddings"
            )
        for cid in split_class_ids:
            sem_by_class[int(cid)] = embeddings.vector(cid, semantic_source).astype(
                np.float64
            )
        semantic_all = np.stack([sem_by_class[int(c)] for c in sample_classes])
        text_dim = embeddings.text_dim
    else:
        semantic_all = None
        text_dim = embeddings.text_dim if embeddings is not None else 0

    try:
        target_all = np.stack(
            [np.asarray(centers[int(c)], dtype=np.float64) for c in sample_classes]
        )
    except KeyError as exc:
        raise ArgumentError(f"no center for class {exc.args[0]}") from exc

    net = init_network(
        cache.visual_dim,
        text_dim,
        config.hidden_dim,
        config.seed,
        config.alignment_source,
        leaky_slope=config.leaky_slope,
        use_bias=config.use_bias,
    )
    state = AdamState.for_network(net)
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    n = rows.size
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch_rows in _iter_batches(order, sample_classes, allowed, config.batch_size):
            batch = TrainingBatch(
                target=target_all[batch_rows],
                visual=visual[batch_rows] if config.alignment_source
                is not AlignmentSource.S else None,
                semantic=semantic_all[batch_rows] if semantic_all is not None else None,
            )
            loss, grads = _loss_and_grads(net, batch)
            adam_step(net, grads, state, config)
            epoch_loss += loss * batch_rows.size
        losses.append(epoch_loss / n)
    return net, losses


def sample_coordinates(
    net: AlignmentNetwork, count: int, seed: int
) -> list[tuple[str, tuple[int, ...]]]:
    """Deterministic sample of ``count`` parameter coordinates (without replacement
    when possible)."""
    flat: list[tuple[str, tuple[int, ...]]] = []
    for name in _PARAM_ORDER:
        arr = net.params()[name]
        for idx in np.ndindex(arr.shape):
            flat.append((name, idx))
    rng = np.random.default_rng(seed)
    if count >= len(flat):
        return flat
    chosen = rng.choice(len(flat), size=count, replace=False)
    return [flat[i] for i in chosen]


def grad_check(
    net: AlignmentNetwork,
    batch: TrainingBatch,
    step: float,
    *,
    coords: int = 200,
    seed: int = 0,
    grads: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Skips coordinates whose +/- step evaluations straddle an activation or
    residual kink (finite differences are meaningless across them) and
    coordinates where both gradients sit below the difference-quotient noise
    floor. Relative error denominators are guarded at 1e-12.
    """
    if step <= 0:
        raise ArgumentError("step must be positive")
    if grads is None:
        grads = backward(net, batch)

    def eval_state(x_block: np.ndarray, target: np.ndarray):
        z1, _, y = _forward_assembled(net, x_block)
        residual = y - target
        loss = float(np.abs(residual).sum(axis=1).mean())
        return loss, z1, residual

    x = assemble_input(net, batch.visual, batch.semantic)
    worst = 0.0
    for name, idx in sample_coordinates(net, coords, seed):
        param = net.params()[name]
        original = param[idx]
        param[idx] = original + step
        loss_plus, z1_plus, res_plus = eval_state(x, batch.target)
        param[idx] = original - step
        loss_minus, z1_minus, res_minus = eval_state(x, batch.target)
        param[idx] = original
        if _crosses_kink(z1_plus, z1_minus) or _crosses_kink(res_plus, res_minus):
            continue
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        analytic = float(grads[name][idx])
        if max(abs(numeric), abs(analytic)) < 1e-8:
            continue
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, rel)
    return worst


_KINK_TOL = 1e-7


def _crosses_kink(plus: np.ndarray, minus: np.ndarray) -> bool:
    near_zero = np.minimum(np.abs(plus), np.abs(minus)) < _KINK_TOL
    sign_flip = plus * minus < 0.0
    return bool(np.any(near_zero | sign_flip))


def save_checkpoint(
    net: AlignmentNetwork, path: str | Path, extra: Mapping[str, object] | None = None
) -> None:
    """Write header JSON plus a little-endian float32 parameter blob."""
    header = {
        "visual_dim": net.visual_dim,
        "text_dim": net.text_dim,
        "hidden_dim": net.hidden_dim,
        "source": net.source.value,
        "leaky_slope": net.leaky_slope,
        "use_bias": net.use_bias,
        "extra": dict(extra) if extra else {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for name in _PARAM_ORDER:
            fh.write(net.params()[name].astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> AlignmentNetwork:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    header_len = int.from_bytes(raw[4:8], "little")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
        visual_dim = int(header["visual_dim"])
        text_dim = int(header["text_dim"])
        hidden_dim = int(header["hidden_dim"])
        source = AlignmentSource(header["source"])
        leaky_slope = float(header["leaky_slope"])
        use_bias = bool(header["use_bias"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header: {exc}") from exc
    if source is AlignmentSource.VS:
        input_dim = visual_dim + text_dim
    elif source is AlignmentSource.V:
        input_dim = visual_dim
    else:
        input_dim = text_dim
    shapes = {
        "W1": (input_dim, hidden_dim),
        "b1": (hidden_dim,),
        "W2": (hidden_dim, visual_dim),
        "b2": (visual_dim,),
    }
    offset = 8 + header_len
    arrays: dict[str, np.ndarray] = {}
    for name in _PARAM_ORDER:
        shape = shapes[name]
        size = int(np.prod(shape)) * 4
        chunk = raw[offset : offset + size]
        if len(chunk) != size:
            raise FormatError(f"{path}: truncated parameter blob at {name}")
        arrays[name] = (
            np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        )
        offset += size
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes after parameter blob")
    return AlignmentNetwork(
        W1=arrays["W1"],
        b1=arrays["b1"],
        W2=arrays["W2"],
        b2=arrays["b2"],
        visual_dim=visual_dim,
        text_dim=text_dim,
        source=source,
        leaky_slope=leaky_slope,
        use_bias=use_bias,
    )
