"""Acceptance checks, one per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines, or as a
script: ``python3 tests/test_acceptance.py``.
"""

import functools
import itertools
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ace.autodiff import backward, grad_of_grad, input_gradient
from ace.autodiff import tape as T
from ace.autodiff.nn import ACTIVATIONS, LayerSpec, NetworkParams, apply, constants, evaluate, init_params, watch
from ace.autodiff.optim import AdamState, adam_step
from ace.cli import main
from ace.dataset import MotionDataset
from ace.datagen import CommandProfile, gen_character_dataset, gen_human_dataset, human_motion, rollout_controller, save_motion
from ace.kinematics import EndEffector, Joint, Skeleton, Trajectory, character_states, get_rig, trajectory_fk
from ace.kinematics.state import character_layout
from ace.metrics import GaussianStats, diversity, evaluate as evaluate_motions, frechet_distance, unrealistic_frame_ratio
from ace.prior import PriorConfig, encode, gate_weights, prior_step, train_prior
from ace.retarget import (
    DiscriminatorModel,
    EEMapping,
    TrainConfig,
    character_features,
    discriminator_loss,
    kl_diag,
    map_from_samples,
    retarget,
    train_ace,
)
from ace.retarget.networks import EPS_LOG

sys.path.insert(0, str(Path(__file__).resolve().parent))
from helpers import rel_err  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
SPOT_MAP = EEMapping((0, 1, 0, 1, 3), "manual")


def report(n: int, ok: bool, detail: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}", flush=True)
    return ok


# ------------------------------------------------------------------ 1. autodiff


def _central_fd(loss, params, rng, h=1e-5, per_array=None):
    """Central differences for every entry of every parameter array, or ``per_array`` random ones."""
    out = {}
    for k, v in params.items():
        flat = np.arange(v.size) if per_array is None else rng.choice(v.size, min(per_array, v.size), replace=False)
        vals = []
        for j in flat:
            i = np.unravel_index(j, v.shape)
            p = {kk: vv.copy() for kk, vv in params.items()}
            p[k][i] = v[i] + h
            up = loss(p)
            p[k][i] = v[i] - h
            vals.append((up - loss(p)) / (2 * h))
        out[k] = (flat, np.array(vals))
    return out


def check_autodiff():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    acts = sorted(ACTIVATIONS)
    worst = 0.0
    for k in range(100):
        n_hidden = int(rng.integers(0, 3))  # up to three layers
        spec = LayerSpec(
            int(rng.integers(1, 33)), tuple(int(w) for w in rng.integers(1, 33, n_hidden)), int(rng.integers(1, 33)),
            activation=acts[k % len(acts)], out_activation=acts[(k // len(acts)) % len(acts)],
        )
        net = init_params(spec, rng)
        x = rng.normal(size=(3, spec.in_dim))
        w = rng.normal(size=(3, spec.out_dim))
        tape = T.Tape()
        pv = watch(tape, net)
        keys = list(pv)
        grads = dict(zip(keys, backward(tape, T.sum_(apply(spec, pv, tape.constant(x)) * tape.constant(w)),
                                        [pv[q] for q in keys])))
        num = _central_fd(lambda p: float(np.sum(evaluate(NetworkParams(spec, p), x) * w)), net.params, rng)
        for q, (idx, vals) in num.items():
            worst = max(worst, rel_err(grads[q].ravel()[idx], vals))
    el = time.perf_counter() - t0
    return report(1, worst < 1e-4 and el < 30, f"max rel err {worst:.2e} (< 1e-4) over 100 MLPs in {el:.1f} s (< 30 s)")


# ------------------------------------------------------------------ 2. double backprop


def check_double_backprop():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        spec = LayerSpec(int(rng.integers(2, 7)), (int(rng.integers(2, 9)),), 1, activation="silu",
                         out_activation="sigmoid")
        net = init_params(spec, rng)
        x0 = rng.normal(size=(4, spec.in_dim))

        def penalty(params, record=False):
            tape = T.Tape(higher_order=True)
            pv = {k: tape.leaf(v) for k, v in params.items()}
            x = tape.leaf(x0)
            g = input_gradient(tape, T.sum_(apply(spec, pv, x)), x)
            p = T.sum_(T.square(g))
            if not record:
                return float(p.value)
            keys = list(pv)
            return dict(zip(keys, grad_of_grad(tape, p, [pv[k] for k in keys])))

        got = penalty(net.params, record=True)
        for k, (idx, vals) in _central_fd(penalty, net.params, rng, h=1e-5).items():
            worst = max(worst, rel_err(got[k].ravel()[idx], vals))
    return report(2, worst < 1e-3, f"max rel err {worst:.2e} (< 1e-3) over 20 discriminators")


# ------------------------------------------------------------------ 3. prior memorization


def check_prior_memorization():
    t0 = time.perf_counter()
    rig = get_rig("spot")
    ds = MotionDataset(rig.skeleton, (rollout_controller(rig, np.full(100, 1.0), np.zeros(100), seed=0),))
    model, _ = train_prior(ds, PriorConfig(steps=600, batch_size=128))
    prev, cur = ds.transitions()
    pred = prior_step(model, encode(model, prev, cur), prev)
    per_frame = np.mean((model.normalize(pred) - model.normalize(cur)) ** 2, axis=1)
    el = time.perf_counter() - t0
    rng = np.random.default_rng(2)
    probes = np.concatenate([prev, prev + rng.normal(scale=3.0, size=prev.shape) * model.std])
    w = gate_weights(model, probes)
    simplex = max(float(np.abs(w.sum(axis=1) - 1).max()), float(max(0.0, -w.min())))
    ok = per_frame.max() < 1e-2 and el < 300 and simplex <= 1e-9
    return report(3, ok, f"max per-frame MSE {per_frame.max():.2e} (< 1e-2) in {el:.0f} s (< 300 s); "
                         f"simplex deviation {simplex:.1e} (<= 1e-9)")


# ------------------------------------------------------------------ 4. toy GAN


def check_toy_gan():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    centres = np.array([[-2.0, 0.0], [2.0, 0.0]])

    def target(n):
        return centres[rng.integers(0, 2, n)] + 0.3 * rng.standard_normal((n, 2))

    gen = init_params(LayerSpec(2, (32, 32), 2), rng)
    d = DiscriminatorModel(init_params(LayerSpec(2, (32, 32), 1, activation="silu", out_activation="sigmoid"), rng))
    g_opt, d_opt = AdamState(lr=1e-3, beta1=0.5), AdamState(lr=1e-3, beta1=0.5)
    steps, b = 4000, 128
    for step in range(steps):
        lr = 1e-3 * (1 - step / steps)
        g_opt, d_opt = replace(g_opt, lr=lr), replace(d_opt, lr=lr)
        _, grads = discriminator_loss(d, target(b), evaluate(gen, rng.standard_normal((b, 2))), w_gp=10.0)
        params, d_opt = adam_step(d.net.params, grads, d_opt)
        d = DiscriminatorModel(NetworkParams(d.net.spec, params))
        # non-saturating generator objective, the same clamped log as the retargeting losses
        tape = T.Tape()
        pv = watch(tape, gen)
        score = apply(d.net.spec, constants(tape, d.net), apply(gen.spec, pv, tape.constant(rng.standard_normal((b, 2)))))
        loss = -T.mean(T.log(T.clip(score, EPS_LOG, 1 - EPS_LOG)))
        keys = list(pv)
        params, g_opt = adam_step(gen.params, dict(zip(keys, tape.gradient(loss, [pv[k] for k in keys]))), g_opt)
        gen = NetworkParams(gen.spec, params)
    out = evaluate(gen, rng.standard_normal((5000, 2)))
    fd = frechet_distance(GaussianStats.from_samples(out), GaussianStats.from_samples(target(5000)))
    el = time.perf_counter() - t0
    return report(4, fd < 0.1 and el < 300, f"FID {fd:.4f} (< 0.1) in {el:.0f} s (< 300 s)")


# ------------------------------------------------------------------ 5. ablation ordering

ABLATION = {"ACE": (0.3, 0.7), "woFea": (0.3, 0.0), "woAdv": (0.0, 0.7)}


@functools.lru_cache(maxsize=1)
def run_ablation(seeds=(0, 1, 2), steps=600):
    """Metrics per (seed, variant), plus the trained generators and the prior."""
    cds = gen_character_dataset("spot", n_frames=3000, profile=CommandProfile(seed=0))
    hds = gen_human_dataset(CommandProfile(seed=1), n=20, n_frames=90)
    test = gen_human_dataset(CommandProfile(seed=2), n=8, n_frames=90)
    prior, _ = train_prior(cds, PriorConfig(steps=1500, input_noise=0.1))
    ref = cds.all_states()
    rows, gens = {}, {}
    for seed in seeds:
        for name, (wa, wf) in ABLATION.items():
            cfg = TrainConfig(w_adv=wa, w_fea=wf, steps=steps, batch_size=128, seed=seed, self_prev=0.5,
                              lr_min_ratio=1.0)
            res = train_ace(hds, cds, prior, SPOT_MAP, cfg)
            pairs = [(h, retarget(res.generator, prior, h)[0]) for h in test.trajectories]
            rows[seed, name] = evaluate_motions(pairs, ref, SPOT_MAP)
            gens[seed, name] = res.generator
    return rows, gens, prior


def check_ablation():
    t0 = time.perf_counter()
    rows, _, _ = run_ablation()
    el = time.perf_counter() - t0
    seeds = sorted({s for s, _ in rows})
    for s in seeds:
        print("  seed", s, "  ".join(f"{n}: div={rows[s, n].div:.3f} fea={rows[s, n].feature_loss:.3f} "
                                      f"ufr={rows[s, n].ufr:.3f}" for n in ABLATION), flush=True)
    checks = {
        "DIV(woFea) < 0.5 DIV(ACE)": lambda s: rows[s, "woFea"].div < 0.5 * rows[s, "ACE"].div,
        "L_fea(woAdv) <= L_fea(ACE)": lambda s: rows[s, "woAdv"].feature_loss <= rows[s, "ACE"].feature_loss,
        "L_fea(ACE) <= L_fea(woFea)": lambda s: rows[s, "ACE"].feature_loss <= rows[s, "woFea"].feature_loss,
        "UFR(woAdv) > UFR(ACE)": lambda s: rows[s, "woAdv"].ufr > rows[s, "ACE"].ufr,
    }
    votes = {k: sum(bool(f(s)) for s in seeds) for k, f in checks.items()}
    ok = all(2 * v > len(seeds) for v in votes.values()) and el < 3600
    detail = "; ".join(f"{k} on {v}/{len(seeds)} seeds" for k, v in votes.items())
    return report(5, ok, f"{detail}; {el / 60:.1f} min (< 60 min)")


def check_standing(warmup=10):
    """A standing human should leave the character's root still once the seed frame is forgotten."""
    _, gens, prior = run_ablation()
    clip = human_motion("stand", 90, seed=3)
    speeds = []
    for (seed, name), g in sorted(gens.items()):
        if name != "ACE":
            continue
        _, states = retarget(g, prior, clip)
        lin = states[warmup:, character_layout(prior.skeleton).indices("root_lin_ang_vel")[:3]]
        speeds.append(float(np.max(np.linalg.norm(lin, axis=1))))
    ok = max(speeds) < 0.05
    print(f"{'PASS' if ok else 'FAIL'} standing human: max root speed after frame {warmup} "
          f"{', '.join(f'{v:.3f}' for v in speeds)} BL/s over seeds (< 0.05)", flush=True)
    return ok


# ------------------------------------------------------------------ 6. metric identities


def _foot_skeleton():
    return Skeleton("foot", (Joint("root", None), Joint("toe", 0, (0.0, 0.0, -0.995))), (EndEffector(1, "foot"),), 1.0)


def _hairpin():
    z = (0.0, 0.0, 1.0)
    joints = [Joint("root", None)] + [Joint(f"j{k}", k, (1.0, 0.0, 0.0), "revolute1", z) for k in range(3)]
    joints.append(Joint("tip", 3, (1.0, 0.0, 0.0)))
    return Skeleton("hairpin", tuple(joints), (EndEffector(4, "hand"),), 1.0, "floating")


def check_metric_identities():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(300, 5))
    s = GaussianStats.from_samples(x)
    self_fid = frechet_distance(s, s)
    shift = frechet_distance(GaussianStats(np.zeros(1), np.ones((1, 1))), GaussianStats(np.ones(1), np.ones((1, 1))))
    div = diversity(np.tile(rng.normal(size=(1, 11)), (200, 1)), 64)

    rig = get_rig("spot")
    stand = rollout_controller(rig, np.zeros(30), np.zeros(30), seed=0)
    clean, _ = unrealistic_frame_ratio(stand)
    pos, _ = trajectory_fk(stand)
    rp = stand.root_positions.copy()
    rp[7, 2] -= pos[:, stand.skeleton.foot_indices, 2].min() + 0.05
    sunk = unrealistic_frame_ratio(Trajectory(stand.skeleton, stand.dt, rp, stand.root_orientations,
                                              stand.joint_values))[1]
    penetration = [i for i, f in enumerate(sunk) if f.foot_penetration] == [7]

    n, dt = 6, 0.1
    rp = np.zeros((n, 3)) + [0.0, 0.0, 1.0]
    rp[:, 0] = np.arange(n) * dt  # toe 5 mm above ground moving at 1 m/s
    slide = unrealistic_frame_ratio(Trajectory(_foot_skeleton(), dt, rp, np.tile([1.0, 0, 0, 0], (n, 1)),
                                               np.zeros((n, 0))))[1]
    sliding = [f.foot_sliding for f in slide] == [False] + [True] * (n - 1)

    jv = np.zeros((2, 3))
    jv[1] = np.pi / 2  # folds the chain back onto its first link
    fold = unrealistic_frame_ratio(Trajectory(_hairpin(), 0.1, np.zeros((2, 3)) + [0, 0, 2.0],
                                              np.tile([1.0, 0, 0, 0], (2, 1)), jv))[1]
    collision = [f.self_collision for f in fold] == [False, True]

    ok = (self_fid == 0.0 and abs(shift - 1.0) <= 1e-9 and div == 0.0 and clean == 0.0
          and penetration and sliding and collision)
    return report(6, ok, f"FID(X,X)={self_fid}, FID(N(0,1),N(1,1))={shift:.12f}, DIV(identical)={div}, "
                         f"clean UFR={clean}, flagged penetration/sliding/collision={penetration}/{sliding}/{collision}")


# ------------------------------------------------------------------ 7. end-effector mapping


def check_auto_mapping():
    rng = np.random.default_rng(7)
    hand = lambda: rng.normal([0.2, 0.0, 1.0], 0.08, size=(600, 3))  # noqa: E731
    foot = lambda: rng.normal([0.1, 0.0, 0.03], 0.04, size=(600, 3))  # noqa: E731
    # character: four low paws and one high gripper; human: two feet then two hands, shuffled
    truth_kind = ["low", "low", "low", "low", "high"]
    human_kind = ["high", "low", "high", "low"]
    chars = [foot() if k == "low" else hand() for k in truth_kind]
    humans = [foot() if k == "low" else hand() for k in human_kind]
    m = map_from_samples(chars, humans)

    def kl(c, h):
        return kl_diag(c.mean(0), np.maximum(c.var(0), 1e-8), h.mean(0), np.maximum(h.var(0), 1e-8))

    cost = lambda p: sum(kl(chars[j], humans[i]) for j, i in enumerate(p))  # noqa: E731
    best = min(itertools.product(range(len(humans)), repeat=len(chars)), key=cost)
    kinds_ok = all(human_kind[i] == truth_kind[j] for j, i in enumerate(m.pairs))
    ok = kinds_ok and tuple(m.pairs) == tuple(best) and abs(cost(m.pairs) - cost(best)) <= 1e-12 * cost(best)
    return report(7, ok, f"auto mapping {m.pairs} vs exhaustive {best}; low/high kinds preserved={kinds_ok}")


# ------------------------------------------------------------------ 8. determinism


def _pipeline(workdir: Path, clip: Path) -> dict:
    cfg = str(ROOT / "configs" / "tiny.yaml")
    for cmd in ("gen-data", "pretrain", "map-ee", "train"):
        assert main([cmd, "--config", cfg, "--set", f"workdir={workdir}"]) == 0, cmd
    assert main(["retarget", str(clip), "--config", cfg, "--set", f"workdir={workdir}"]) == 0
    assert main(["eval", str(workdir / "retargeted" / clip.name), "--config", cfg, "--set", f"workdir={workdir}"]) == 0
    names = ["character_data.json", "human_data.json", "prior.ckpt", "mapping.json", "generator.ckpt",
             "discriminator.ckpt", f"retargeted/{clip.name}"]
    out = {n: (workdir / n).read_bytes() for n in names}
    report_doc = json.loads((workdir / "metrics.json").read_text())
    out["metrics"] = json.dumps({k: report_doc[k] for k in ("div", "fid", "feature_loss", "ufr", "per_frame_flags")},
                                sort_keys=True).encode()
    return out


def check_determinism(tmp: Path):
    clip = tmp / "clip.json"
    save_motion(clip, human_motion("wave", 60, seed=5))
    a, b = _pipeline(tmp / "a", clip), _pipeline(tmp / "b", clip)
    differ = [k for k in a if a[k] != b[k]]
    return report(8, not differ, f"{len(a)} artifacts compared; differing: {differ or 'none'}")


# ------------------------------------------------------------------ 9. feature invariance


def check_feature_invariance():
    rig = get_rig("spot")
    rng = np.random.default_rng(9)
    worst = 0.0
    for k in range(20):
        tr = rollout_controller(rig, rng.uniform(-1.5, 5, 12), rng.uniform(-1, 1, 12), seed=k)
        a = character_features(rig.skeleton, SPOT_MAP)(character_states(tr))
        for scale in (0.1, 0.5, 2.0, 10.0):
            big = tr.scaled(scale)
            b = character_features(big.skeleton, SPOT_MAP)(character_states(big))
            worst = max(worst, float(np.max(np.abs(a - b))))
    return report(9, worst < 1e-9, f"max feature change {worst:.2e} (< 1e-9) under scales 0.1 to 10")


# ------------------------------------------------------------------ pytest entry points


def test_autodiff_matches_finite_differences():
    assert check_autodiff()


def test_penalty_gradient_matches_finite_differences():
    assert check_double_backprop()


def test_prior_memorizes_a_short_gait():
    assert check_prior_memorization()


def test_toy_gan_matches_a_two_gaussian_mixture():
    assert check_toy_gan()


@pytest.mark.slow
def test_ablation_orderings():
    assert check_ablation()


@pytest.mark.slow
def test_standing_human_keeps_the_character_still():
    assert check_standing()


def test_metric_identities():
    assert check_metric_identities()


def test_auto_mapping_recovers_ground_truth():
    assert check_auto_mapping()


def test_pipeline_is_bit_identical(tmp_path):
    assert check_determinism(tmp_path)


def test_features_are_scale_invariant():
    assert check_feature_invariance()


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        results = [check_autodiff(), check_double_backprop(), check_prior_memorization(), check_toy_gan(),
                   check_ablation(), check_metric_identities(), check_auto_mapping(), check_determinism(Path(tmp)),
                   check_feature_invariance(), check_standing()]
    sys.exit(0 if all(results) else 1)
