"""Dense float64 reverse-mode autodiff with gradient-of-gradient support."""

from ace.autodiff import tape as ops
from ace.autodiff.nn import LayerSpec, NetworkParams, apply, evaluate, forward, init_params, watch
from ace.autodiff.optim import AdamState, adam_step
from ace.autodiff.tape import Tape, Var
from ace.errors import TapeError


def backward(tape: Tape, output: Var, wrt, seed=None) -> list:
    """Gradients of ``output`` (seeded by ``seed`` if non-scalar) for each node in ``wrt``."""
    return tape.gradient(output, list(wrt), seed=seed)


def input_gradient(tape: Tape, output: Var, x: Var, seed=None) -> Var:
    """Recorded gradient of ``output`` w.r.t. ``x``, itself differentiable."""
    if not tape.higher_order:
        raise TapeError("input gradients for double backprop need a tape with higher_order=True")
    return tape.gradient(output, [x], seed=seed, create_graph=True)[0]


def grad_of_grad(tape: Tape, scalar: Var, params) -> list:
    """Parameter gradients of a scalar built from recorded input gradients."""
    if not tape.higher_order:
        raise TapeError("tape was recorded without double-recording mode")
    return tape.gradient(scalar, list(params))


__all__ = [
    "AdamState",
    "LayerSpec",
    "NetworkParams",
    "Tape",
    "Var",
    "adam_step",
    "apply",
    "backward",
    "evaluate",
    "forward",
    "grad_of_grad",
    "init_params",
    "input_gradient",
    "ops",
    "watch",
]
