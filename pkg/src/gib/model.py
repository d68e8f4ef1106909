"""Feature extractor, gated bottleneck and classifier head, plus checkpoints."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .gating import AND, INDICATOR, SIGMOID, THRESHOLD, GateState, default_floor
from .records import RecordFormatError, decode_records, encode_records, write_records

CHECKPOINT_MAGIC = b"GIBC"


class CheckpointError(RecordFormatError):
    pass


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths from input to class count.

    The last hidden layer is the bottleneck. A two-entry spec ``[d, C]`` has an
    identity extractor: the gate acts directly on the inputs.
    """

    layer_sizes: tuple[int, ...]
    dropout: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def bottleneck_index(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def bottleneck_width(self) -> int:
        return self.layer_sizes[-2]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))


class GIBModel:
    """``w(m' * Phi(x))``: ReLU extractor, soft-masked bottleneck, linear head."""

    def __init__(self, spec: MLPSpec, gate: GateState, params: dict[str, ad.Tensor],
                 gate_enabled: bool = True):
        if gate.p != spec.bottleneck_width:
            raise ValueError(f"gate width {gate.p} != bottleneck width {spec.bottleneck_width}")
        self.spec = spec
        self.gate = gate
        self.params = params
        self.gate_enabled = gate_enabled

    @classmethod
    def init(cls, spec: MLPSpec, rng: np.random.Generator, gate_init: float = 1.0,
             **gate_kw) -> "GIBModel":
        params: dict[str, ad.Tensor] = {}
        sizes = spec.layer_sizes
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            prefix = "w" if i == len(sizes) - 2 else f"phi.{i}"
            params[f"{prefix}.weight"] = ad.Tensor(
                rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
            params[f"{prefix}.bias"] = ad.Tensor(
                rng.uniform(-bound, bound, size=(1, fan_out)), requires_grad=True)
        gate = GateState.open(spec.bottleneck_width, init=gate_init, **gate_kw)
        return cls(spec, gate, params)

    @property
    def phi_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("phi.")]

    @property
    def w_names(self) -> list[str]:
        return ["w.weight", "w.bias"]

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def copy(self) -> "GIBModel":
        params = {k: ad.Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return GIBModel(self.spec, self.gate.snapshot(), params, self.gate_enabled)


def _input(model: GIBModel, x) -> ad.Tensor:
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    if x.shape[1] != model.spec.layer_sizes[0]:
        raise ValueError(f"input has {x.shape[1]} columns, model expects {model.spec.layer_sizes[0]}")
    return x


def features(model: GIBModel, x, rng: np.random.Generator | None = None) -> ad.Tensor:
    """Raw bottleneck activations before masking.

    Passing ``rng`` switches dropout on for the hidden layers below the bottleneck.
    """
    h = _input(model, x)
    n_hidden = len(model.spec.layer_sizes) - 2
    for i in range(n_hidden):
        if i > 0 and rng is not None and model.spec.dropout > 0:
            keep = 1.0 - model.spec.dropout
            h = ad.mul(h, (rng.random(h.shape) < keep) / keep)
        h = ad.relu(ad.add(ad.matmul(h, model.params[f"phi.{i}.weight"]),
                           model.params[f"phi.{i}.bias"]))
    return h


def mask_features(model: GIBModel, z: ad.Tensor) -> ad.Tensor:
    if not model.gate_enabled:
        return z
    return ad.mul(z, model.gate.soft_mask_node())


def head(model: GIBModel, z_masked: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(z_masked, model.params["w.weight"]), model.params["w.bias"])


def forward(model: GIBModel, x, rng: np.random.Generator | None = None):
    """Return ``(z, z_masked, logits)``."""
    z = features(model, x, rng)
    zm = mask_features(model, z)
    return z, zm, head(model, zm)


def logits(model: GIBModel, x) -> ad.Tensor:
    return forward(model, x)[2]


def predict_proba(model: GIBModel, x, batch: int = 2048) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [ad.softmax_array(logits(model, x[i:i + batch]).data) for i in range(0, len(x), batch)]
    return np.concatenate(out, axis=0)


def predict(model: GIBModel, x, batch: int = 2048) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [logits(model, x[i:i + batch]).data for i in range(0, len(x), batch)]
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_RULES = {THRESHOLD: 0, AND: 1}
_KINDS = {SIGMOID: 0, INDICATOR: 1}


def checkpoint_records(model: GIBModel) -> dict[str, np.ndarray]:
    g = model.gate
    records = {name: t.data for name, t in model.params.items()}
    records["gate.g"] = g.g
    records["gate.m"] = g.m
    records["gate.meta"] = np.array([g.tau, g.period, g.m_floor, _RULES[g.rule],
                                     _KINDS[g.kind], g.step_counter], dtype=np.float64)
    records["model.meta"] = np.array([model.spec.dropout, float(model.gate_enabled),
                                      len(model.spec.layer_sizes)], dtype=np.float64)
    records["model.layers"] = np.array(model.spec.layer_sizes, dtype=np.float64)
    return records


def checkpoint_bytes(model: GIBModel) -> bytes:
    return encode_records(CHECKPOINT_MAGIC, checkpoint_records(model))


def save_checkpoint(model: GIBModel, path: str | os.PathLike) -> None:
    write_records(path, CHECKPOINT_MAGIC, checkpoint_records(model))


def model_from_bytes(data: bytes) -> GIBModel:
    try:
        rec = decode_records(data, CHECKPOINT_MAGIC)
    except RecordFormatError as exc:
        raise CheckpointError(exc.defect, str(exc)) from None
    for key in ("gate.g", "gate.m", "gate.meta", "model.meta", "model.layers"):
        if key not in rec:
            raise CheckpointError("missing record", key)
    try:
        layers = tuple(int(v) for v in rec["model.layers"])
        meta = rec["model.meta"]
        spec = MLPSpec(layers, dropout=float(meta[0]))
        gm = rec["gate.meta"]
        rule = {v: k for k, v in _RULES.items()}[int(gm[3])]
        kind = {v: k for k, v in _KINDS.items()}[int(gm[4])]
        gate = GateState(rec["gate.g"].reshape(-1).copy(), rec["gate.m"].reshape(-1).copy(),
                         tau=float(gm[0]), period=int(gm[1]), m_floor=int(gm[2]),
                         rule=rule, kind=kind, step_counter=int(gm[5]))
    except (ValueError, KeyError, IndexError) as exc:
        raise CheckpointError("inconsistent metadata", str(exc)) from None
    params = {}
    for i, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
        prefix = "w" if i == len(layers) - 2 else f"phi.{i}"
        for suffix, shape in (("weight", (a, b)), ("bias", (1, b))):
            name = f"{prefix}.{suffix}"
            arr = rec.get(name)
            if arr is None:
                raise CheckpointError("missing record", name)
            if arr.shape != shape:
                raise CheckpointError("shape mismatch", f"{name} has {arr.shape}, expected {shape}")
            params[name] = ad.Tensor(arr.copy(), requires_grad=True)
    try:
        return GIBModel(spec, gate, params, gate_enabled=bool(meta[1]))
    except ValueError as exc:
        raise CheckpointError("inconsistent metadata", str(exc)) from None


def load_checkpoint(path: str | os.PathLike) -> GIBModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def make_model(spec: MLPSpec, seed: int, gate_init: float = 1.0, tau: float = 0.5,
               period: int = 100, m_floor: int | None = None, rule: str = AND,
               kind: str = SIGMOID) -> GIBModel:
    rng = np.random.default_rng(seed)
    p = spec.bottleneck_width
    return GIBModel.init(spec, rng, gate_init=gate_init, tau=tau, period=period,
                         m_floor=default_floor(p) if m_floor is None else m_floor,
                         rule=rule, kind=kind)
