"""Unrolled leaky integrate-and-fire layers with smooth or hard spike rules.

The model is a stack of ``L`` recurrent-in-time layers followed by a linear
readout of the time-averaged top-layer activity.  With layer index ``l`` and
time step ``t`` (states at ``t = 0`` are zero):

    u[l, t] = alpha * u[l, t-1] + W[l] z[l-1, t] + b[l] - theta[l] * z[l, t-1]
    z[l, t] = sigma(u[l, t] - theta[l])        (smooth training rule)
    s[l, t] = step(u[l, t] - theta[l])         (hard deployment rule)

``z[0, t]`` is the input frame at step ``t``.  The same reset-by-subtraction
recursion is used in both modes; only the spike nonlinearity changes.  The
hard step uses the convention ``step(0) = 1`` so that a membrane potential
exactly at threshold fires.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Sequence

import numpy as np

from .linalg import SpectralNormResult, spectral_norm

ARCTAN = "arctan"
FAST_SIGMOID = "fast_sigmoid"
HARD = "hard"
_FAMILIES = (ARCTAN, FAST_SIGMOID, HARD)
_FAMILY_CODES = {ARCTAN: 1, FAST_SIGMOID: 2, HARD: 3}
_CODE_FAMILIES = {v: k for k, v in _FAMILY_CODES.items()}

SURROGATE_MODE = "surrogate"
HARD_MODE = "hard"


class InstabilityError(RuntimeError):
    """Raised when a forward or backward pass produces non-finite values."""


@dataclass(frozen=True)
class SurrogateSpec:
    """Spike nonlinearity: a smooth family with slope ``k``, or the hard step.

    ``derivative_bound`` is the global bound ``B1`` on ``|sigma'|`` and
    ``curvature_bound`` the global bound ``B2`` on ``|sigma''|``.  For the
    arctan family these are ``k / pi`` and ``3 sqrt(3) k^2 / (8 pi)``.  The
    fast-sigmoid family is continuous but not twice differentiable at the
    origin; its ``B2 = k^2`` is the supremum away from zero, so smoothness
    guarantees quoted for it are practical rather than exact.
    """

    family: str = ARCTAN
    slope: float = math.pi

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {_FAMILIES}")
        if self.family != HARD and not (np.isfinite(self.slope) and self.slope > 0.0):
            raise ValueError(f"slope must be positive and finite, got {self.slope}")

    @property
    def is_smooth(self) -> bool:
        return self.family != HARD

    @property
    def is_twice_differentiable(self) -> bool:
        return self.family == ARCTAN

    @property
    def derivative_bound(self) -> float:
        if self.family == ARCTAN:
            return self.slope / math.pi
        if self.family == FAST_SIGMOID:
            return self.slope / 2.0
        raise ValueError("the hard step has no derivative bound")

    @property
    def curvature_bound(self) -> float:
        if self.family == ARCTAN:
            return 3.0 * math.sqrt(3.0) / (8.0 * math.pi) * self.slope**2
        if self.family == FAST_SIGMOID:
            return self.slope**2
        raise ValueError("the hard step has no curvature bound")


def surrogate_value(spec: SurrogateSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate the smooth spike function elementwise."""
    x = np.asarray(x, dtype=np.float64)
    k = spec.slope
    if spec.family == ARCTAN:
        return 0.5 + np.arctan(k * x) / math.pi
    if spec.family == FAST_SIGMOID:
        return 0.5 * (1.0 + k * x / (1.0 + np.abs(k * x)))
    raise ValueError("hard step is not a surrogate; use hard_step")


def surrogate_derivative(spec: SurrogateSpec, x: np.ndarray) -> np.ndarray:
    """First derivative of the smooth spike function elementwise."""
    x = np.asarray(x, dtype=np.float64)
    k = spec.slope
    if spec.family == ARCTAN:
        return (k / math.pi) / (1.0 + (k * x) ** 2)
    if spec.family == FAST_SIGMOID:
        return 0.5 * k / (1.0 + np.abs(k * x)) ** 2
    raise ValueError("hard step has no derivative; use the surrogate families")


def surrogate_second_derivative(spec: SurrogateSpec, x: np.ndarray) -> np.ndarray:
    """Second derivative of the smooth spike function elementwise.

    For the fast-sigmoid family the value at the kink ``x = 0`` is reported
    as 0 (the symmetric choice); the family is not twice differentiable there.
    """
    x = np.asarray(x, dtype=np.float64)
    k = spec.slope
    if spec.family == ARCTAN:
        return -2.0 * k**3 * x / (math.pi * (1.0 + (k * x) ** 2) ** 2)
    if spec.family == FAST_SIGMOID:
        return -(k**2) * np.sign(x) / (1.0 + np.abs(k * x)) ** 3
    raise ValueError("hard step has no second derivative")


def hard_step(x: np.ndarray) -> np.ndarray:
    """Heaviside step with the tie rule step(0) = 1."""
    return (np.asarray(x, dtype=np.float64) >= 0.0).astype(np.float64)


def mode_spec(spec: SurrogateSpec, mode: str) -> SurrogateSpec:
    """Spec to run a forward pass in the given evaluation mode."""
    if mode == SURROGATE_MODE:
        if spec.family == HARD:
            raise ValueError("surrogate mode requires a smooth spike family")
        return spec
    if mode == HARD_MODE:
        return SurrogateSpec(HARD, spec.slope)
    raise ValueError(f"unknown mode {mode!r}; expected 'surrogate' or 'hard'")


@dataclass
class LayerParams:
    """One layer: input weights, bias, and per-unit firing threshold."""

    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)
    threshold: np.ndarray  # (d_out,), strictly positive

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1 or self.threshold.ndim != 1:
            raise ValueError("weight must be 2-d; bias and threshold 1-d")
        d_out = self.weight.shape[0]
        if self.bias.shape != (d_out,) or self.threshold.shape != (d_out,):
            raise ValueError(
                f"bias/threshold shapes {self.bias.shape}/{self.threshold.shape} "
                f"do not match weight rows {d_out}"
            )
        for name, arr in (("weight", self.weight), ("bias", self.bias), ("threshold", self.threshold)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        if not np.all(self.threshold > 0.0):
            raise ValueError("thresholds must be strictly positive")

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "LayerParams":
        return LayerParams(self.weight.copy(), self.bias.copy(), self.threshold.copy())


@dataclass
class NetworkParams:
    """Full parameter set: spiking layers, shared leak, linear readout."""

    layers: list[LayerParams]
    alpha: float
    w_out: np.ndarray  # (n_classes, d_L)
    b_out: np.ndarray  # (n_classes,)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("need at least one spiking layer")
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.b_out = np.asarray(self.b_out, dtype=np.float64)
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"leak alpha must lie in (0, 1), got {self.alpha}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.d_in != prev.d_out:
                raise ValueError(f"layer widths disagree: {prev.d_out} feeds {nxt.d_in}")
        if self.w_out.ndim != 2 or self.w_out.shape[1] != self.layers[-1].d_out:
            raise ValueError("readout weight must be (n_classes, top layer width)")
        if self.b_out.shape != (self.w_out.shape[0],):
            raise ValueError("readout bias length must equal n_classes")
        if not (np.all(np.isfinite(self.w_out)) and np.all(np.isfinite(self.b_out))):
            raise ValueError("readout has non-finite entries")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_classes(self) -> int:
        return self.w_out.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        """Widths (d_0, d_1, ..., d_L) from input to top spiking layer."""
        return (self.layers[0].d_in, *(layer.d_out for layer in self.layers))

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [layer.copy() for layer in self.layers], self.alpha, self.w_out.copy(), self.b_out.copy()
        )


def init_network(
    dims: Sequence[int],
    n_classes: int,
    alpha: float = 0.5,
    theta: float = 0.5,
    weight_scale: float = 1.0,
    bias_scale: float = 0.0,
    seed: int | np.random.Generator = 0,
) -> NetworkParams:
    """Random network with widths ``dims = (d_0, ..., d_L)``.

    Weights are drawn N(0, (weight_scale / sqrt(d_in))^2); thresholds start
    at the constant ``theta``.  Deterministic given the seed.
    """
    if len(dims) < 2:
        raise ValueError("dims must list the input width and at least one layer width")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weight = rng.standard_normal((d_out, d_in)) * (weight_scale / math.sqrt(d_in))
        bias = rng.standard_normal(d_out) * bias_scale if bias_scale else np.zeros(d_out)
        layers.append(LayerParams(weight, bias, np.full(d_out, float(theta))))
    d_top = dims[-1]
    w_out = rng.standard_normal((n_classes, d_top)) * (weight_scale / math.sqrt(d_top))
    return NetworkParams(layers, alpha, w_out, np.zeros(n_classes))


@dataclass
class StateTrace:
    """Everything a forward pass produced, kept for the reverse sweep.

    ``u[l]`` and ``z[l]`` have shape (n, T, d_l) for layer ``l`` (0-based
    list index for layer ``l + 1`` of the recursion); ``zbar`` is the
    time-averaged top-layer activity and ``logits`` the readout output.
    """

    inputs: np.ndarray  # (n, T, d_0)
    u: list[np.ndarray]
    z: list[np.ndarray]
    zbar: np.ndarray  # (n, d_L)
    logits: np.ndarray  # (n, n_classes)
    spec: SurrogateSpec

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[1]


def forward(params: NetworkParams, spec: SurrogateSpec, frames: np.ndarray) -> StateTrace:
    """Run the unrolled dynamics on a batch of frame sequences.

    ``frames`` is (n, T, d_0) or a single (T, d_0) sequence.  Smooth specs
    produce graded activations; the hard spec produces binary spikes via the
    step rule.  Raises :class:`InstabilityError` if any membrane state goes
    non-finite.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3:
        raise ValueError(f"frames must be (n, T, d0) or (T, d0), got shape {frames.shape}")
    d0 = params.layers[0].d_in
    if x.shape[2] != d0:
        raise ValueError(f"frame width {x.shape[2]} does not match input width {d0}")
    n, n_steps, _ = x.shape
    smooth = spec.family != HARD

    z_prev = x
    us: list[np.ndarray] = []
    zs: list[np.ndarray] = []
    for idx, layer in enumerate(params.layers):
        drive = np.einsum("ntj,dj->ntd", z_prev, layer.weight) + layer.bias
        u = np.empty((n, n_steps, layer.d_out))
        z = np.empty_like(u)
        u_t = np.zeros((n, layer.d_out))
        z_t = np.zeros((n, layer.d_out))
        for t in range(n_steps):
            u_t = params.alpha * u_t + drive[:, t, :] - layer.threshold * z_t
            a_t = u_t - layer.threshold
            z_t = surrogate_value(spec, a_t) if smooth else hard_step(a_t)
            u[:, t, :] = u_t
            z[:, t, :] = z_t
        if not np.all(np.isfinite(u)):
            bad = np.argwhere(~np.isfinite(u))[0]
            raise InstabilityError(f"non-finite membrane state at layer {idx + 1}, step {bad[1] + 1}")
        us.append(u)
        zs.append(z)
        z_prev = z

    zbar = zs[-1].mean(axis=1)
    logits = zbar @ params.w_out.T + params.b_out
    return StateTrace(inputs=x, u=us, z=zs, zbar=zbar, logits=logits, spec=spec)


# ---------------------------------------------------------------------------
# Canonical parameter vector
#
# Order: per layer (weight row-major, bias, threshold), then readout weight
# row-major, readout bias, and finally alpha if requested.  Gradient packing
# must match this order exactly.
# ---------------------------------------------------------------------------


def parameter_count(params: NetworkParams, include_alpha: bool = False) -> int:
    n = sum(l.weight.size + l.bias.size + l.threshold.size for l in params.layers)
    n += params.w_out.size + params.b_out.size
    return n + (1 if include_alpha else 0)


def parameter_vector(params: NetworkParams, include_alpha: bool = False) -> np.ndarray:
    pieces = []
    for layer in params.layers:
        pieces.extend((layer.weight.ravel(), layer.bias, layer.threshold))
    pieces.extend((params.w_out.ravel(), params.b_out))
    if include_alpha:
        pieces.append(np.array([params.alpha]))
    return np.concatenate(pieces)


def replace_parameters(
    params: NetworkParams, vector: np.ndarray, include_alpha: bool = False
) -> NetworkParams:
    """New NetworkParams with values taken from a canonical vector."""
    vector = np.asarray(vector, dtype=np.float64)
    expected = parameter_count(params, include_alpha)
    if vector.shape != (expected,):
        raise ValueError(f"expected vector of length {expected}, got shape {vector.shape}")
    pos = 0

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal pos
        size = int(np.prod(shape))
        out = vector[pos : pos + size].reshape(shape).copy()
        pos += size
        return out

    layers = []
    for layer in params.layers:
        layers.append(
            LayerParams(take(layer.weight.shape), take(layer.bias.shape), take(layer.threshold.shape))
        )
    w_out = take(params.w_out.shape)
    b_out = take(params.b_out.shape)
    alpha = float(vector[pos]) if include_alpha else params.alpha
    return NetworkParams(layers, alpha, w_out, b_out)


def threshold_slices(params: NetworkParams, include_alpha: bool = False) -> list[slice]:
    """Canonical-vector slices holding each layer's thresholds."""
    del include_alpha  # slices are the same either way; kept for signature symmetry
    out = []
    pos = 0
    for layer in params.layers:
        pos += layer.weight.size + layer.bias.size
        out.append(slice(pos, pos + layer.threshold.size))
        pos += layer.threshold.size
    return out


# ---------------------------------------------------------------------------
# Norm extraction for the closed-form constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamBounds:
    """Measured parameter norms entering the closed-form constants.

    ``m_a`` is the max layer spectral norm, ``m_b`` the max bias 2-norm,
    ``m_theta`` the max threshold entry, ``m_out`` the readout spectral
    norm.  ``spectral_converged``/``spectral_residual`` report the worst
    power-iteration certificate among the norms computed.
    """

    m_a: float
    m_b: float
    m_theta: float
    m_out: float
    m_b_out: float
    spectral_converged: bool
    spectral_residual: float


def constant_bounds_extract(params: NetworkParams) -> ParamBounds:
    """Measure the norm caps realized by a concrete parameter set."""
    results: list[SpectralNormResult] = [spectral_norm(l.weight) for l in params.layers]
    out_res = spectral_norm(params.w_out)
    results.append(out_res)
    return ParamBounds(
        m_a=max(r.value for r in results[:-1]),
        m_b=max(float(np.linalg.norm(l.bias)) for l in params.layers),
        m_theta=max(float(np.max(l.threshold)) for l in params.layers),
        m_out=out_res.value,
        m_b_out=float(np.linalg.norm(params.b_out)),
        spectral_converged=all(r.converged for r in results),
        spectral_residual=max(r.residual for r in results),
    )


# ---------------------------------------------------------------------------
# Checkpoint container
#
# Custom little-endian binary layout (bit-identical across runs and
# platforms, unlike zip-based containers that embed timestamps):
#
#   magic   4s   b"SNNW"
#   version u32  (currently 1)
#   family  u32  (1 arctan, 2 fast sigmoid, 3 hard)
#   slope   f64
#   alpha   f64
#   L       u32  number of spiking layers
#   C       u32  number of classes
#   dims    (L+1) * u32   widths d_0 .. d_L
#   per layer l = 1..L: weight (d_l * d_{l-1}) f64 row-major, bias d_l f64,
#                       threshold d_l f64
#   readout: w_out (C * d_L) f64 row-major, b_out C f64
# ---------------------------------------------------------------------------

_CHECKPOINT_MAGIC = b"SNNW"
_CHECKPOINT_VERSION = 1


def _write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("checkpoint truncated")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_checkpoint(path: str, params: NetworkParams, spec: SurrogateSpec) -> None:
    """Write parameters and the spike rule to a deterministic binary file."""
    dims = params.dims
    buf = io.BytesIO()
    buf.write(_CHECKPOINT_MAGIC)
    buf.write(
        struct.pack(
            "<IIddII",
            _CHECKPOINT_VERSION,
            _FAMILY_CODES[spec.family],
            spec.slope,
            params.alpha,
            params.n_layers,
            params.n_classes,
        )
    )
    buf.write(struct.pack(f"<{len(dims)}I", *dims))
    for layer in params.layers:
        _write_array(buf, layer.weight)
        _write_array(buf, layer.bias)
        _write_array(buf, layer.threshold)
    _write_array(buf, params.w_out)
    _write_array(buf, params.b_out)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str) -> tuple[NetworkParams, SurrogateSpec]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        header = fh.read(struct.calcsize("<IIddII"))
        version, family_code, slope, alpha, n_layers, n_classes = struct.unpack("<IIddII", header)
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if family_code not in _CODE_FAMILIES:
            raise ValueError(f"unknown spike family code {family_code}")
        dims = struct.unpack(f"<{n_layers + 1}I", fh.read(4 * (n_layers + 1)))
        layers = []
        for l in range(1, n_layers + 1):
            weight = _read_array(fh, (dims[l], dims[l - 1]))
            bias = _read_array(fh, (dims[l],))
            threshold = _read_array(fh, (dims[l],))
            layers.append(LayerParams(weight, bias, threshold))
        w_out = _read_array(fh, (n_classes, dims[-1]))
        b_out = _read_array(fh, (n_classes,))
        if fh.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    spec = SurrogateSpec(_CODE_FAMILIES[family_code], slope)
    return NetworkParams(layers, alpha, w_out, b_out), spec
