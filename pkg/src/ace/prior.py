"""Character motion prior: transition encoder ``c`` and mixture-of-experts decoder ``pi``.

The encoder maps a normalized transition ``(x_{t-1}, x_t)`` to a latent code
``z``. The decoder predicts ``x_t`` from ``(z, x_{t-1})``: a gating network on
``x_{t-1}`` produces softmax weights that blend the outputs of several expert
MLPs. States are z-scored with dataset statistics at the network boundary and
quaternion blocks are renormalized inside the differentiable path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ace.autodiff import tape as T
from ace.autodiff.checkpoint import dumps, loads, atomic_write
from ace.autodiff.nn import LayerSpec, NetworkParams, apply, constants, init_params
from ace.autodiff.optim import AdamState, adam_step
from ace.dataset import MotionDataset
from ace.errors import DimensionError, NumericalError, ValidationError
from ace.kinematics import quat
from ace.kinematics.skeleton import Skeleton, Trajectory
from ace.kinematics.state import character_layout, states_to_trajectory

LATENT_DIM = 32
NETS = ("encoder", "gate", "experts")


@dataclass(frozen=True)
class PriorConfig:
    latent_dim: int = LATENT_DIM
    encoder_hidden: tuple[int, ...] = (128, 128, 128, 128)
    expert_hidden: tuple[int, ...] = (128, 128)
    gate_hidden: tuple[int, ...] = (32, 32)
    experts: int = 8
    steps: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    lr_min_ratio: float = 0.05  # cosine decay floor as a fraction of lr
    kl_weight: float = 0.0
    std_floor: float = 1e-2
    out_scale: float = 1e-3
    input_noise: float = 0.0  # std of training noise on the decoder's previous state (normalized units)
    state_clip: float = 8.0  # inference bound on |normalized state|; 0 disables
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        for name in ("encoder_hidden", "expert_hidden", "gate_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))
        if self.latent_dim <= 0 or self.experts <= 0:
            raise ValidationError("must be positive", field="latent_dim" if self.latent_dim <= 0 else "experts")
        if self.steps < 0 or self.batch_size <= 0:
            raise ValidationError("steps must be >= 0 and batch_size > 0", field="steps")
        if self.kl_weight < 0:
            raise ValidationError("must be nonnegative", field="kl_weight")
        if self.input_noise < 0:
            raise ValidationError("must be nonnegative", field="input_noise")

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValidationError(f"unknown keys {unknown}", field="prior")
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class PriorModel:
    encoder: NetworkParams
    gate: NetworkParams
    experts: NetworkParams
    mean: np.ndarray
    std: np.ndarray
    skeleton: Skeleton
    config: PriorConfig = field(default_factory=PriorConfig)

    @property
    def state_size(self) -> int:
        return int(self.mean.size)

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def quat_slices(self) -> list[slice]:
        lay = character_layout(self.skeleton)
        return [lay.slices[n] for n in lay.quaternion_blocks]

    def nets(self) -> dict[str, NetworkParams]:
        return {"encoder": self.encoder, "gate": self.gate, "experts": self.experts}

    def flat_params(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, net in self.nets().items() for k, v in net.params.items()}

    def with_params(self, flat: dict[str, np.ndarray]) -> "PriorModel":
        nets = {}
        for n, net in self.nets().items():
            nets[n] = NetworkParams(net.spec, {k: flat[f"{n}.{k}"] for k in net.params})
        return replace(self, **nets)

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, xn):
        return np.asarray(xn) * self.std + self.mean

    # ------------------------------------------------------------ checkpoint

    def to_bytes(self) -> bytes:
        tensors = self.flat_params()
        tensors["norm.mean"] = self.mean
        tensors["norm.std"] = self.std
        meta = {
            "kind": "prior",
            "skeleton_id": self.skeleton.name,
            "skeleton": self.skeleton.to_dict(),
            "config": self.config.to_dict(),
            "specs": {n: net.spec.to_dict() for n, net in self.nets().items()},
        }
        return dumps(tensors, meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PriorModel":
        tensors, meta = loads(data)
        if meta.get("kind") != "prior":
            raise ValidationError("checkpoint is not a motion prior", field="kind")
        nets = {}
        for n in NETS:
            spec = LayerSpec.from_dict(meta["specs"][n])
            params = {k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith(n + ".")}
            nets[n] = NetworkParams(spec, params)
            nets[n].validate()
        return cls(
            mean=tensors["norm.mean"],
            std=tensors["norm.std"],
            skeleton=Skeleton.from_dict(meta["skeleton"]),
            config=PriorConfig.from_dict(meta["config"]),
            **nets,
        )

    def save(self, path):
        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "PriorModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def init_prior(skeleton: Skeleton, mean, std, config: PriorConfig = PriorConfig()) -> PriorModel:
    s = int(np.size(mean))
    rng = np.random.default_rng(config.seed)
    enc_out = config.latent_dim * (2 if config.kl_weight > 0 else 1)
    enc = init_params(LayerSpec(2 * s, config.encoder_hidden, enc_out), rng)
    gate = init_params(LayerSpec(s, config.gate_hidden, config.experts), rng, out_scale=config.out_scale)
    experts = init_params(
        LayerSpec(config.latent_dim + s, config.expert_hidden, s, experts=config.experts),
        rng,
        out_scale=config.out_scale,
    )
    return PriorModel(enc, gate, experts, np.asarray(mean, float), np.asarray(std, float), skeleton, config)


# ------------------------------------------------------------ tape-level pieces


def _check_width(x, n, what):
    if np.shape(x)[-1] != n:
        raise DimensionError(f"{what} has width {np.shape(x)[-1]}, model expects {n}")


def encoder_apply(model: PriorModel, pv, prev_n: T.Var, cur_n: T.Var):
    """Latent mean (and log-variance when the KL term is on) for normalized inputs."""
    out = apply(model.encoder.spec, pv, T.concat([prev_n, cur_n], axis=-1))
    d = model.latent_dim
    if model.encoder.spec.out_dim == d:
        return out, None
    return T.take(out, np.arange(d)), T.take(out, np.arange(d, 2 * d))


def gate_apply(model: PriorModel, pv, prev_n: T.Var) -> T.Var:
    return T.softmax(apply(model.gate.spec, pv, prev_n), axis=-1)


def decoder_apply(model: PriorModel, gate_pv, expert_pv, z: T.Var, prev_n: T.Var):
    """Normalized next-state prediction and the gate weights, both as tape variables."""
    w = gate_apply(model, gate_pv, prev_n)  # (B, K)
    ys = apply(model.experts.spec, expert_pv, T.concat([z, prev_n], axis=-1))  # (K, B, S)
    if ys.ndim == 2:  # single expert
        blended = ys
    else:
        k, b = w.shape[1], w.shape[0]
        blended = T.sum_(ys * w.mT.reshape(k, b, 1), axis=0)
    return renormalize_quaternions(model, blended), w


def renormalize_quaternions(model: PriorModel, xn: T.Var) -> T.Var:
    """Project quaternion blocks of a normalized state back onto unit quaternions."""
    tape = xn.tape
    mean, std = model.mean, model.std
    pieces, start = [], 0
    for sl in model.quat_slices:
        if sl.start > start:
            pieces.append(T.take(xn, np.arange(start, sl.start)))
        idx = np.arange(sl.start, sl.stop)
        q = T.take(xn, idx) * tape.constant(std[idx]) + tape.constant(mean[idx])
        n = T.row_norm(q).reshape(-1, 1)
        q = q * T.safe_recip(n)
        pieces.append((q - tape.constant(mean[idx])) * tape.constant(1.0 / std[idx]))
        start = sl.stop
    if start < xn.shape[-1]:
        pieces.append(T.take(xn, np.arange(start, xn.shape[-1])))
    return T.concat(pieces, axis=-1)


# ------------------------------------------------------------ numpy-level API


def _frozen(model: PriorModel, tape: T.Tape):
    return {n: constants(tape, net) for n, net in model.nets().items()}


def encode(model: PriorModel, prev, cur) -> np.ndarray:
    """Deterministic latent code(s) for one transition or a batch."""
    prev, cur = np.asarray(prev, float), np.asarray(cur, float)
    _check_width(prev, model.state_size, "previous state")
    _check_width(cur, model.state_size, "current state")
    single = prev.ndim == 1
    tape = T.Tape()
    with tape.paused():
        pv = _frozen(model, tape)
        mu, _ = encoder_apply(
            model, pv["encoder"], tape.constant(np.atleast_2d(model.normalize(prev))),
            tape.constant(np.atleast_2d(model.normalize(cur))),
        )
    return mu.value[0] if single else mu.value


def gate_weights(model: PriorModel, prev) -> np.ndarray:
    prev = np.asarray(prev, float)
    _check_width(prev, model.state_size, "previous state")
    tape = T.Tape()
    with tape.paused():
        w = gate_apply(model, _frozen(model, tape)["gate"], tape.constant(np.atleast_2d(model.normalize(prev))))
    return w.value[0] if prev.ndim == 1 else w.value


def prior_step(model: PriorModel, z, prev) -> np.ndarray:
    """Predicted next character state(s) with canonical unit quaternions."""
    z, prev = np.asarray(z, float), np.asarray(prev, float)
    _check_width(z, model.latent_dim, "latent code")
    _check_width(prev, model.state_size, "previous state")
    single = prev.ndim == 1
    tape = T.Tape()
    with tape.paused():
        pv = _frozen(model, tape)
        pred, _ = decoder_apply(
            model, pv["gate"], pv["experts"], tape.constant(np.atleast_2d(z)),
            tape.constant(np.atleast_2d(model.normalize(prev))),
        )
    xn = pred.value
    c = model.config.state_clip
    if c > 0:
        # keep closed-loop rollouts inside a box around the training data
        xn = np.clip(xn, -c, c)
    x = canonicalize(model, model.denormalize(xn))
    return x[0] if single else x


def canonicalize(model: PriorModel, x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    for sl in model.quat_slices:
        x[..., sl] = quat.canonical(quat.normalize(x[..., sl]))
    return x


# ------------------------------------------------------------ training


@dataclass
class PriorHistory:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(lr: float, min_ratio: float, step: int, total: int) -> float:
    frac = step / max(total, 1)
    return lr * (min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + np.cos(np.pi * frac)))


def normalization_stats(states: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray]:
    mean = states.mean(axis=0)
    std = np.maximum(states.std(axis=0), floor)
    return mean, std


def prior_loss(model: PriorModel, tape: T.Tape, pv, prev_n, cur_n, rng=None):
    """Mean squared error norm of the reconstruction, plus the optional KL term."""
    mu, logvar = encoder_apply(model, pv["encoder"], prev_n, cur_n)
    z = mu
    kl = None
    if logvar is not None:
        eps = tape.constant(rng.standard_normal(mu.shape))
        z = mu + T.exp(logvar * 0.5) * eps
        kl = T.mean(T.sum_(T.square(mu) + T.exp(logvar) - logvar - 1.0, axis=-1) * 0.5)
    if model.config.input_noise > 0:
        # the encoder sees the clean pair; the decoder learns to correct a perturbed context
        prev_n = prev_n + tape.constant(rng.standard_normal(prev_n.shape) * model.config.input_noise)
    pred, w = decoder_apply(model, pv["gate"], pv["experts"], z, prev_n)
    err = T.mean(T.sum_(T.square(pred - cur_n), axis=-1))
    loss = err if kl is None else err + kl * model.config.kl_weight
    return loss, err


def train_prior(dataset: MotionDataset, config: PriorConfig = PriorConfig(), callback=None):
    """Jointly fit encoder and decoder on the dataset's transitions with Adam.

    Returns ``(model, history)``. The history records the loss and the
    per-dimension reconstruction MSE (normalized units) every ``log_every`` steps.
    """
    if dataset.species != "character":
        raise ValidationError("the motion prior is trained on character data", field="species")
    prev, cur = dataset.transitions()
    if len(prev) == 0:
        raise ValidationError("dataset has no transitions", field="dataset")
    mean, std = normalization_stats(dataset.all_states(), config.std_floor)
    model = init_prior(dataset.skeleton, mean, std, config)
    prev_n, cur_n = model.normalize(prev), model.normalize(cur)
    rng = np.random.default_rng(config.seed + 1)
    params = model.flat_params()
    opt = AdamState(lr=config.lr)
    hist = PriorHistory()
    n, s = len(prev_n), model.state_size
    for step in range(config.steps + 1):
        idx = np.arange(n) if n <= config.batch_size else rng.choice(n, config.batch_size, replace=False)
        tape = T.Tape()
        leaves = {k: tape.leaf(v) for k, v in params.items()}
        pv = {name: {k.split(".", 1)[1]: v for k, v in leaves.items() if k.startswith(name + ".")} for name in NETS}
        model_now = model.with_params(params)
        loss, err = prior_loss(model_now, tape, pv, tape.constant(prev_n[idx]), tape.constant(cur_n[idx]), rng)
        lv = float(loss.value)
        if not np.isfinite(lv):
            raise NumericalError(f"prior loss diverged at step {step} (value {lv})")
        if step % config.log_every == 0 or step == config.steps:
            hist.steps.append(step)
            hist.loss.append(lv)
            hist.mse.append(float(err.value) / s)
            if callback is not None:
                callback(step, lv)
        if step == config.steps:
            break
        keys = list(leaves)
        grads = tape.gradient(loss, [leaves[k] for k in keys])
        opt = replace(opt, lr=cosine_lr(config.lr, config.lr_min_ratio, step, config.steps))
        params, opt = adam_step(params, dict(zip(keys, grads)), opt)
    return model.with_params(params), hist


def reconstruction_mse(model: PriorModel, prev, cur) -> float:
    """Per-dimension MSE (normalized units) of ``pi(c(prev, cur), prev)`` against ``cur``."""
    pred = prior_step(model, encode(model, prev, cur), prev)
    return float(np.mean((model.normalize(pred) - model.normalize(cur)) ** 2))


# ------------------------------------------------------------ rollout


def rollout(model: PriorModel, z_sequence, x0, dt: float = 1.0 / 30.0, origin=(0.0, 0.0), heading=0.0):
    """Autoregressive decoding from ``x0``; the result has ``1 + len(z_sequence)`` frames.

    A non-finite prediction stops the rollout early and sets
    ``meta["truncated"]``. Returns ``(trajectory, states)``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _check_width(x0, model.state_size, "initial state")
    states = [canonicalize(model, x0)]
    truncated = False
    for z in z_sequence:
        x = prior_step(model, z, states[-1])
        if not np.all(np.isfinite(x)):
            truncated = True
            break
        states.append(x)
    states = np.stack(states)
    traj = states_to_trajectory(states, model.skeleton, dt, origin, heading)
    meta = dict(traj.meta, truncated=truncated)
    traj = Trajectory(traj.skeleton, traj.dt, traj.root_positions, traj.root_orientations, traj.joint_values, meta)
    return traj, states

