"""Generator and discriminator networks and their training losses.

The generator maps ``(x^h_t, x^r_{t-1})`` to a latent code that the frozen
prior decodes into ``x^r_t``. The discriminator scores normalized character
transitions ``(x_{t-1}, x_t)`` with a sigmoid head. Its gradient penalty is
taken at real samples, with respect to the normalized transition, and is
differentiated through a double-recorded backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ace.autodiff import input_gradient
from ace.autodiff import tape as T
from ace.autodiff.checkpoint import atomic_write, dumps, loads
from ace.autodiff.nn import LayerSpec, NetworkParams, apply, constants, evaluate, init_params, watch
from ace.errors import DimensionError, ValidationError
from ace.kinematics.state import HUMAN_LAYOUT
from ace.prior import PriorModel, decoder_apply, prior_step
from ace.retarget.features import FeatureSpec

EPS_LOG = 1e-7


@dataclass
class GeneratorModel:
    """``net`` plus the human normalization statistics and the default seed state ``x0``."""

    net: NetworkParams
    human_mean: np.ndarray
    human_std: np.ndarray
    x0: np.ndarray

    @classmethod
    def create(cls, prior: PriorModel, human_mean, human_std, x0, hidden=(128, 128, 128), seed=0):
        spec = LayerSpec(HUMAN_LAYOUT.size + prior.state_size, hidden, prior.latent_dim)
        net = init_params(spec, np.random.default_rng(seed))
        return cls(net, np.asarray(human_mean, float), np.asarray(human_std, float), np.asarray(x0, float))

    def inputs(self, prior: PriorModel, xh, xr_prev) -> np.ndarray:
        xh, xr_prev = np.atleast_2d(xh), np.atleast_2d(xr_prev)
        if xh.shape[-1] != HUMAN_LAYOUT.size:
            raise DimensionError(f"human state has width {xh.shape[-1]}, expected {HUMAN_LAYOUT.size}")
        if xr_prev.shape[-1] != prior.state_size:
            raise DimensionError(f"character state has width {xr_prev.shape[-1]}, expected {prior.state_size}")
        return np.concatenate([(xh - self.human_mean) / self.human_std, prior.normalize(xr_prev)], axis=-1)

    def to_bytes(self, meta: dict | None = None) -> bytes:
        tensors = {f"net.{k}": v for k, v in self.net.params.items()}
        tensors.update({"human.mean": self.human_mean, "human.std": self.human_std, "x0": self.x0})
        return dumps(tensors, {"kind": "generator", "spec": self.net.spec.to_dict(), **(meta or {})})

    @classmethod
    def from_bytes(cls, data: bytes) -> "GeneratorModel":
        tensors, meta = loads(data)
        if meta.get("kind") != "generator":
            raise ValidationError("checkpoint is not a generator", field="kind")
        net = NetworkParams(
            LayerSpec.from_dict(meta["spec"]), {k[4:]: v for k, v in tensors.items() if k.startswith("net.")}
        )
        net.validate()
        return cls(net, tensors["human.mean"], tensors["human.std"], tensors["x0"])


@dataclass
class DiscriminatorModel:
    net: NetworkParams

    @classmethod
    def create(cls, prior: PriorModel, hidden=(128, 128, 128), seed=0):
        spec = LayerSpec(2 * prior.state_size, hidden, 1, activation="silu", out_activation="sigmoid")
        return cls(init_params(spec, np.random.default_rng(seed)))

    def to_bytes(self, meta: dict | None = None) -> bytes:
        tensors = {f"net.{k}": v for k, v in self.net.params.items()}
        return dumps(tensors, {"kind": "discriminator", "spec": self.net.spec.to_dict(), **(meta or {})})

    @classmethod
    def from_bytes(cls, data: bytes) -> "DiscriminatorModel":
        tensors, meta = loads(data)
        if meta.get("kind") != "discriminator":
            raise ValidationError("checkpoint is not a discriminator", field="kind")
        net = NetworkParams(LayerSpec.from_dict(meta["spec"]), {k[4:]: v for k, v in tensors.items()})
        net.validate()
        return cls(net)


def save_model(path, model, meta: dict | None = None):
    atomic_write(path, model.to_bytes(meta))


# ------------------------------------------------------------ inference helpers


def generator_forward(g: GeneratorModel, prior: PriorModel, xh, xr_prev) -> np.ndarray:
    single = np.ndim(xh) == 1
    z = evaluate(g.net, g.inputs(prior, xh, xr_prev))
    return z[0] if single else z


def discriminate(d: DiscriminatorModel, prior: PriorModel, prev, cur) -> np.ndarray:
    """Realness scores, clamped like the losses so they stay strictly inside (0, 1)."""
    x = np.concatenate([prior.normalize(np.atleast_2d(prev)), prior.normalize(np.atleast_2d(cur))], axis=-1)
    return np.clip(evaluate(d.net, x)[:, 0], EPS_LOG, 1.0 - EPS_LOG)


def generate(g: GeneratorModel, prior: PriorModel, xh, xr_prev) -> np.ndarray:
    """``pi(G(x^h, x^r_prev), x^r_prev)`` in state units."""
    return prior_step(prior, generator_forward(g, prior, xh, xr_prev), xr_prev)


# ------------------------------------------------------------ losses


def _log_clamped(p: T.Var) -> T.Var:
    return T.log(T.clip(p, EPS_LOG, 1.0 - EPS_LOG))


@dataclass(frozen=True)
class LossParts:
    total: float
    terms: dict

    def __getitem__(self, k):
        return self.terms[k]


def discriminator_loss(
    d: DiscriminatorModel, real: np.ndarray, fake: np.ndarray, w_gp: float
) -> tuple[LossParts, dict[str, np.ndarray]]:
    """GAN discriminator loss with a gradient penalty at the real samples.

    ``real`` and ``fake`` are normalized transitions ``(B, 2S)``. Returns the
    loss parts and the parameter gradients.
    """
    if len(real) == 0 or len(fake) == 0:
        raise ValidationError("discriminator batches must be non-empty", field="batch")
    tape = T.Tape(higher_order=w_gp > 0)
    pv = watch(tape, d.net)
    x_real = tape.leaf(np.asarray(real, dtype=np.float64))
    d_real = apply(d.net.spec, pv, x_real)
    d_fake = apply(d.net.spec, pv, tape.constant(np.asarray(fake, dtype=np.float64)))
    base = -T.mean(_log_clamped(d_real)) - T.mean(_log_clamped(1.0 - d_fake))
    terms = {"base": float(base.value), "penalty": 0.0, "d_real": float(d_real.value.mean()),
             "d_fake": float(d_fake.value.mean())}
    loss = base
    if w_gp > 0:
        g = input_gradient(tape, T.sum_(d_real), x_real)
        penalty = T.mean(T.sum_(T.square(g), axis=-1))
        loss = base + penalty * (0.5 * w_gp)
        terms["penalty"] = float(penalty.value)
    keys = list(pv)
    grads = tape.gradient(loss, [pv[k] for k in keys])
    return LossParts(float(loss.value), terms), dict(zip(keys, grads))


def generator_loss(
    g: GeneratorModel,
    d: DiscriminatorModel | None,
    prior: PriorModel,
    xh: np.ndarray,
    xr_prev: np.ndarray,
    psi_h: np.ndarray,
    psi_r: FeatureSpec,
    w_adv: float,
    w_fea: float,
) -> tuple[LossParts, dict[str, np.ndarray]]:
    """Adversarial plus feature loss; gradients flow through the frozen prior into G only.

    ``psi_h`` holds the human features of ``xh``; ``psi_r`` is the character
    feature spec applied to the decoded state.
    """
    tape = T.Tape()
    pv = watch(tape, g.net)
    prev_n = tape.constant(prior.normalize(np.atleast_2d(xr_prev)))
    z = apply(g.net.spec, pv, tape.constant(g.inputs(prior, xh, xr_prev)))
    frozen = {n: constants(tape, net) for n, net in prior.nets().items()}
    pred_n, _ = decoder_apply(prior, frozen["gate"], frozen["experts"], z, prev_n)

    terms = {"adv": 0.0, "fea": 0.0}
    loss = None
    if w_adv > 0:
        if d is None:
            raise ValidationError("an adversarial weight needs a discriminator", field="w_adv")
        score = apply(d.net.spec, constants(tape, d.net), T.concat([prev_n, pred_n], axis=-1))
        adv = -T.mean(_log_clamped(score))
        terms["adv"] = float(adv.value)
        loss = adv * w_adv
    if w_fea > 0:
        idx = psi_r.index
        feat = (T.take(pred_n, idx) * tape.constant(prior.std[idx]) + tape.constant(prior.mean[idx])) * tape.constant(
            psi_r.scale
        )
        fea = T.mean(T.row_norm(feat - tape.constant(np.atleast_2d(psi_h))))
        terms["fea"] = float(fea.value)
        loss = fea * w_fea if loss is None else loss + fea * w_fea
    if loss is None:
        raise ValidationError("w_adv + w_fea must be positive", field="w_fea")
    keys = list(pv)
    grads = tape.gradient(loss, [pv[k] for k in keys])
    return LossParts(float(loss.value), terms), dict(zip(keys, grads))


def with_params(model, params: dict[str, np.ndarray]):
    return replace(model, net=NetworkParams(model.net.spec, params))
