"""Dense networks on top of the tape: MLPs and stacked expert MLPs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ace.autodiff import tape as T
from ace.errors import DimensionError, NumericalError

ACTIVATIONS = {
    "leaky_relu": T.leaky_relu,
    "silu": T.silu,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
    "linear": lambda x: x,
}


def _check_activation(name):
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}")


@dataclass(frozen=True)
class LayerSpec:
    """Widths and activations of a fully connected network.

    ``experts`` > 1 stacks that many independent copies of the network along a
    leading axis (weights ``(K, fan_in, fan_out)``); their outputs come back as
    ``(K, batch, out_dim)``.
    """

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    activation: str = "leaky_relu"
    out_activation: str = "linear"
    experts: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        _check_activation(self.activation)
        _check_activation(self.out_activation)
        if self.in_dim <= 0 or self.out_dim <= 0 or any(h <= 0 for h in self.hidden):
            raise ValueError("layer widths must be positive")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.in_dim, *self.hidden, self.out_dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "hidden": list(self.hidden),
            "out_dim": self.out_dim,
            "activation": self.activation,
            "out_activation": self.out_activation,
            "experts": self.experts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            in_dim=int(d["in_dim"]),
            hidden=tuple(d["hidden"]),
            out_dim=int(d["out_dim"]),
            activation=d.get("activation", "leaky_relu"),
            out_activation=d.get("out_activation", "linear"),
            experts=int(d.get("experts", 1)),
        )


@dataclass
class NetworkParams:
    spec: LayerSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        out = []
        for i in range(self.spec.n_layers):
            out += [f"W{i}", f"b{i}"]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, {k: v.copy() for k, v in self.params.items()})

    def validate(self):
        s = self.spec
        lead = (s.experts,) if s.experts > 1 else ()
        for i, (fi, fo) in enumerate(zip(s.widths[:-1], s.widths[1:])):
            w, b = self.params[f"W{i}"], self.params[f"b{i}"]
            b_shape = lead + (1, fo) if lead else (fo,)
            if w.shape != lead + (fi, fo) or b.shape != b_shape:
                raise DimensionError(f"layer {i} has shapes {w.shape}/{b.shape}, spec says {fi}->{fo}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalError(f"layer {i} has non-finite parameters")


def init_params(spec: LayerSpec, rng: np.random.Generator, out_scale: float = 1.0) -> NetworkParams:
    """He-style uniform fan-in initialization, zero biases.

    ``out_scale`` shrinks the last layer (used to start a decoder near zero).
    """
    params = {}
    lead = (spec.experts,) if spec.experts > 1 else ()
    n = spec.n_layers
    for i, (fi, fo) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = np.sqrt(6.0 / fi)
        if i == n - 1:
            bound *= out_scale
        params[f"W{i}"] = rng.uniform(-bound, bound, size=lead + (fi, fo))
        params[f"b{i}"] = np.zeros(lead + (1, fo)) if lead else np.zeros(fo)
    return NetworkParams(spec, params)


def watch(tape: T.Tape, net: NetworkParams) -> dict[str, T.Var]:
    """Put every parameter of ``net`` on the tape as a differentiable leaf."""
    return {k: tape.leaf(v) for k, v in net.params.items()}


def constants(tape: T.Tape, net: NetworkParams) -> dict[str, T.Var]:
    """Put parameters on the tape as frozen constants."""
    return {k: tape.constant(v) for k, v in net.params.items()}


def apply(spec: LayerSpec, pvars: dict[str, T.Var], x: T.Var) -> T.Var:
    """Run the network on tape variables; ``x`` is ``(batch, in_dim)``."""
    if x.shape[-1] != spec.in_dim:
        raise DimensionError(f"network expects input width {spec.in_dim}, got {x.shape[-1]}")
    act = ACTIVATIONS[spec.activation]
    h = x
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        h = h @ pvars[f"W{i}"] + pvars[f"b{i}"]
        h = ACTIVATIONS[spec.out_activation](h) if i == last else act(h)
    return h


def forward(net: NetworkParams, x, tape: T.Tape | None = None) -> T.Var:
    """Evaluate ``net`` on ``x`` with parameters recorded as leaves.

    A fresh tape is created when none is given. Non-finite input is rejected.
    """
    tape = tape if tape is not None else T.Tape()
    if not isinstance(x, T.Var):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if not np.all(np.isfinite(x)):
            raise NumericalError("network input contains non-finite values")
        x = tape.leaf(x)
    elif not np.all(np.isfinite(x.value)):
        raise NumericalError("network input contains non-finite values")
    return apply(net.spec, watch(tape, net), x)


def evaluate(net: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Plain numpy evaluation (no recording)."""
    tape = T.Tape()
    with tape.paused():
        xv = tape.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return apply(net.spec, constants(tape, net), xv).value
