import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ace.autodiff.nn import LayerSpec, NetworkParams, evaluate
from ace.dataset import MotionDataset
from ace.datagen import CommandProfile, gen_human_dataset, human_motion, rollout_controller
from ace.errors import DimensionError, ValidationError
from ace.kinematics import (
    HUMAN_LAYOUT,
    character_layout,
    character_states,
    get_rig,
    human_skeleton,
    human_states,
    validate_character_state,
)
from ace.prior import LATENT_DIM, PriorConfig, train_prior
from ace.retarget import (
    DiscriminatorModel,
    EEMapping,
    GeneratorModel,
    TrainConfig,
    auto_map_end_effectors,
    character_features,
    discriminate,
    discriminator_loss,
    feature_fn,
    generate,
    generator_forward,
    generator_loss,
    human_features,
    kl_diag,
    map_from_samples,
    parse_mapping,
    retarget,
    train_ace,
)
from ace.retarget.networks import with_params
from helpers import rel_err

SMALL_PRIOR = dict(encoder_hidden=(32, 32), expert_hidden=(32, 32), gate_hidden=(16,), experts=4)
SPOT_MAP = EEMapping((0, 1, 0, 1, 3), "manual")
TINY = dict(g_hidden=(16, 16), d_hidden=(16, 16), batch_size=32)


@pytest.fixture(scope="module")
def rig():
    return get_rig("spot")


@pytest.fixture(scope="module")
def char_ds(rig):
    rng = np.random.default_rng(0)
    trajs = [rollout_controller(rig, np.full(61, v), np.full(61, w), seed=k)
             for k, (v, w) in enumerate(zip(rng.uniform(-0.5, 2.0, 3), rng.uniform(-0.5, 0.5, 3)))]
    trajs.append(rollout_controller(rig, np.zeros(61), np.zeros(61), seed=9))
    return MotionDataset(rig.skeleton, tuple(trajs))


@pytest.fixture(scope="module")
def human_ds():
    return gen_human_dataset(CommandProfile(seed=4), n=4, n_frames=40)


@pytest.fixture(scope="module")
def prior(char_ds):
    return train_prior(char_ds, PriorConfig(steps=200, **SMALL_PRIOR))[0]


@pytest.fixture(scope="module")
def models(prior, human_ds, char_ds):
    hs = human_states(human_ds.trajectories[0])
    g = GeneratorModel.create(prior, hs.mean(0), hs.std(0) + 0.1, char_ds.all_states()[0], hidden=(8,), seed=1)
    d = DiscriminatorModel.create(prior, hidden=(8, 8), seed=2)
    return g, d


def zero_output_layer(model):
    last = model.net.spec.n_layers - 1
    params = {k: (np.zeros_like(v) if k in (f"W{last}", f"b{last}") else v) for k, v in model.net.params.items()}
    return with_params(model, params)


def batch(prior, char_ds, n=6, seed=0):
    prev, cur = char_ds.transitions()
    idx = np.random.default_rng(seed).choice(len(prev), n, replace=False)
    return prev[idx], cur[idx], np.concatenate([prior.normalize(prev[idx]), prior.normalize(cur[idx])], axis=1)


# ------------------------------------------------------------------ features


def test_feature_length_is_eleven_plus_three_per_effector(rig):
    assert character_features(rig.skeleton, SPOT_MAP).size == 11 + 15
    one = EEMapping((3,), "manual")
    assert human_features(human_skeleton(), one).size == 14


def test_human_root_height_normalizes_to_one():
    tr = human_motion("stand", 5)
    sk = tr.skeleton
    s = human_states(tr)[0].copy()
    s[HUMAN_LAYOUT.slices["root_height"]] = 1.7
    assert sk.body_length == 1.7
    assert feature_fn(s, sk, EEMapping((0, 1, 2, 3, 4)), "human")[0] == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(0.05, 20.0), seed=st.integers(0, 1000))
def test_features_are_invariant_to_uniform_scaling(rig, scale, seed):
    rng = np.random.default_rng(seed)
    tr = rollout_controller(rig, rng.uniform(-1.5, 5, 12), rng.uniform(-1, 1, 12), seed=seed)
    spec = character_features(rig.skeleton, SPOT_MAP)
    big = tr.scaled(scale)
    a = spec(character_states(tr))
    b = character_features(big.skeleton, SPOT_MAP)(character_states(big))
    assert np.max(np.abs(a - b)) < 1e-9


def test_feature_fn_rejects_missing_effectors(rig):
    with pytest.raises(ValidationError):
        feature_fn(np.zeros(92), human_skeleton(), EEMapping((0, 7)), "human")
    with pytest.raises(ValidationError):
        character_features(rig.skeleton, EEMapping((0, 1)))


# ------------------------------------------------------------------ end-effector mapping


def test_identical_distributions_map_to_identity():
    rng = np.random.default_rng(0)
    samples = [rng.normal(loc=k, scale=0.1 + 0.1 * k, size=(500, 3)) for k in range(4)]
    m = map_from_samples(samples, samples)
    assert m.pairs == (0, 1, 2, 3) and m.source == "auto"
    assert np.allclose(np.diag(m.kl), 0.0)


def test_gripper_maps_to_hand_not_foot():
    rng = np.random.default_rng(1)
    gripper = rng.normal([0.3, 0.0, 0.9], 0.05, size=(800, 3))
    paw = rng.normal([0.3, 0.2, 0.02], 0.03, size=(800, 3))
    hand = rng.normal([0.2, -0.1, 0.9], 0.08, size=(800, 3))
    foot = rng.normal([0.0, 0.1, 0.05], 0.04, size=(800, 3))
    m = map_from_samples([paw, gripper], [foot, hand])
    assert m.pairs == (0, 1)
    # closed form for the diagonal fits
    mu_g, var_g = gripper.mean(0), gripper.var(0)
    want = [kl_diag(mu_g, var_g, s.mean(0), s.var(0)) for s in (foot, hand)]
    assert np.allclose(m.kl[1], want, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), nc=st.integers(1, 5), nh=st.integers(1, 5))
def test_auto_mapping_attains_the_exhaustive_minimum(seed, nc, nh):
    rng = np.random.default_rng(seed)
    cs = [rng.normal(rng.normal(size=3), rng.uniform(0.05, 1, 3), size=(50, 3)) for _ in range(nc)]
    hs = [rng.normal(rng.normal(size=3), rng.uniform(0.05, 1, 3), size=(50, 3)) for _ in range(nh)]
    m = map_from_samples(cs, hs)

    def kl(c, h):
        return kl_diag(c.mean(0), np.maximum(c.var(0), 1e-8), h.mean(0), np.maximum(h.var(0), 1e-8))

    best = min(itertools.product(range(nh), repeat=nc), key=lambda p: sum(kl(cs[j], hs[i]) for j, i in enumerate(p)))
    got = sum(kl(cs[j], hs[i]) for j, i in enumerate(m.pairs))
    assert got == pytest.approx(sum(kl(cs[j], hs[i]) for j, i in enumerate(best)), rel=1e-12)


def test_degenerate_variance_is_floored_and_ties_go_low():
    point = np.zeros((10, 3))
    m = map_from_samples([point], [point, point])
    assert m.pairs == (0,) and np.all(np.isfinite(m.kl))


def test_manual_override_is_returned_verbatim(human_ds, char_ds):
    over = EEMapping((4, 4, 4, 4, 2), "manual")
    m = auto_map_end_effectors(human_ds, char_ds, override=over)
    assert m.pairs == over.pairs and m.source == "manual"
    auto = auto_map_end_effectors(human_ds, char_ds)
    assert auto.source == "auto" and len(auto) == 5 and np.asarray(auto.kl).shape == (5, 5)


def test_parse_mapping_by_name_and_index(rig):
    hs = human_skeleton()
    names = [rig.skeleton.joints[e.joint].name for e in rig.skeleton.end_effectors]
    text = ",".join(f"{n}={h}" for n, h in zip(names, ["l_ankle", "r_ankle", "0", "1", "r_wrist"]))
    m = parse_mapping(text, rig.skeleton, hs)
    assert m.pairs == (0, 1, 0, 1, 3) and m.source == "manual"
    with pytest.raises(ValidationError):
        parse_mapping("0=0", rig.skeleton, hs)
    with pytest.raises(ValidationError):
        parse_mapping(text + ",0=1", rig.skeleton, hs)


# ------------------------------------------------------------------ networks


def test_generator_output_is_32_dimensional_and_deterministic(models, prior, human_ds, char_ds):
    g, _ = models
    xh = human_ds.all_states()[:5]
    prev = char_ds.all_states()[:5]
    z = generator_forward(g, prior, xh, prev)
    assert z.shape == (5, LATENT_DIM) and np.all(np.isfinite(z))
    assert np.array_equal(z, generator_forward(g, prior, xh, prev))
    assert generator_forward(g, prior, xh[0], prev[0]).shape == (LATENT_DIM,)
    validate_character_state(generate(g, prior, xh, prev), character_layout(prior.skeleton))
    with pytest.raises(DimensionError):
        generator_forward(g, prior, xh[:, :50], prev)
    with pytest.raises(DimensionError):
        generator_forward(g, prior, xh, prev[:, :10])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100.0))
def test_discriminator_output_is_strictly_inside_unit_interval(models, prior, seed, scale):
    _, d = models
    x = np.random.default_rng(seed).normal(size=(8, prior.state_size)) * scale + prior.mean
    p = discriminate(d, prior, x, x[::-1])
    assert np.all((p > 0) & (p < 1))


def test_constant_half_discriminator_loss(models, prior, char_ds):
    d = zero_output_layer(models[1])
    _, _, real = batch(prior, char_ds)
    fake = real[::-1] + 0.3
    parts, grads = discriminator_loss(d, real, fake, 0.1)
    assert parts["d_real"] == 0.5 and parts["penalty"] == 0.0
    assert parts.total == pytest.approx(2 * np.log(2), abs=1e-15)
    assert set(grads) == set(d.net.params)


def test_zero_input_dependence_has_exactly_zero_penalty(models, prior, char_ds):
    d = models[1]
    d = with_params(d, {**d.net.params, "W0": np.zeros_like(d.net.params["W0"])})
    _, _, real = batch(prior, char_ds)
    parts, _ = discriminator_loss(d, real, real + 1.0, 0.1)
    assert parts["penalty"] == 0.0


def toy_discriminator(k):
    spec = LayerSpec(1, (), 1, out_activation="sigmoid")
    return DiscriminatorModel(NetworkParams(spec, {"W0": np.array([[k]]), "b0": np.zeros(1)}))


@pytest.mark.parametrize("k", [5.0, 10.0])
def test_separated_toy_matches_closed_form(k):
    # D(x) = sigmoid(k x); real at +1, fake at -1; dD/dx = k s (1 - s)
    w_gp = 0.1
    parts, _ = discriminator_loss(toy_discriminator(k), np.ones((4, 1)), -np.ones((4, 1)), w_gp)
    s = 1 / (1 + np.exp(-k))
    assert parts["base"] == pytest.approx(-2 * np.log(s), rel=1e-12)
    assert parts["penalty"] == pytest.approx((k * s * (1 - s)) ** 2, rel=1e-9)
    assert parts.total == pytest.approx(parts["base"] + 0.5 * w_gp * parts["penalty"], rel=1e-12)


def test_near_step_toy_leaves_only_the_penalty():
    # with a steep step the base loss sits at the log clamp floor
    parts, _ = discriminator_loss(toy_discriminator(40.0), np.full((4, 1), 0.5), -np.ones((4, 1)), 0.1)
    assert parts["base"] == pytest.approx(-2 * np.log1p(-1e-7), rel=1e-9)  # both terms at the clamp
    s = 1 / (1 + np.exp(-20.0))
    assert parts["penalty"] == pytest.approx((40 * s * (1 - s)) ** 2, rel=1e-9)
    assert parts.total - 0.05 * parts["penalty"] == pytest.approx(parts["base"], abs=1e-15)


def test_zero_penalty_weight_is_the_plain_gan_loss(models, prior, char_ds):
    d = models[1]
    _, _, real = batch(prior, char_ds)
    fake = real + 0.5
    parts, _ = discriminator_loss(d, real, fake, 0.0)
    dr, df = evaluate(d.net, real)[:, 0], evaluate(d.net, fake)[:, 0]
    want = -np.mean(np.log(dr)) - np.mean(np.log(1 - df))
    assert parts.total == pytest.approx(want, rel=1e-14) and parts["penalty"] == 0.0


def test_generator_loss_with_half_discriminator(models, prior, human_ds, char_ds):
    g, d = models
    d = zero_output_layer(d)
    xh = human_ds.all_states()[:6]
    prev, _, _ = batch(prior, char_ds)
    psi_h = human_features(human_skeleton(), SPOT_MAP)(xh)
    spec = character_features(prior.skeleton, SPOT_MAP)
    parts, _ = generator_loss(g, d, prior, xh, prev, psi_h, spec, 0.3, 0.0)
    assert parts.total == pytest.approx(0.3 * np.log(2), abs=1e-15)
    assert parts.total == pytest.approx(0.2079, abs=5e-5)


def test_generator_loss_is_linear_in_the_weights(models, prior, human_ds, char_ds):
    g, d = models
    xh = human_ds.all_states()[:6]
    prev, _, _ = batch(prior, char_ds)
    psi_h = human_features(human_skeleton(), SPOT_MAP)(xh)
    spec = character_features(prior.skeleton, SPOT_MAP)
    both, gb = generator_loss(g, d, prior, xh, prev, psi_h, spec, 0.3, 0.7)
    adv, ga = generator_loss(g, d, prior, xh, prev, psi_h, spec, 0.3, 0.0)
    fea, gf = generator_loss(g, d, prior, xh, prev, psi_h, spec, 0.0, 0.7)
    assert adv.total == 0.3 * adv["adv"] and fea.total == 0.7 * fea["fea"]
    assert both.total == pytest.approx(adv.total + fea.total, rel=1e-14)
    for k in gb:
        assert np.allclose(gb[k], ga[k] + gf[k], rtol=1e-10, atol=1e-14)


def test_matched_features_give_zero_feature_term(models, prior, human_ds, char_ds):
    g, _ = models
    xh = human_ds.all_states()[:4]
    prev, _, _ = batch(prior, char_ds, n=4)
    spec = character_features(prior.skeleton, SPOT_MAP)
    psi = spec(generate(g, prior, xh, prev))
    parts, _ = generator_loss(g, None, prior, xh, prev, psi, spec, 0.0, 0.7)
    assert parts["fea"] < 1e-12


def test_generator_gradient_matches_finite_differences(models, prior, human_ds, char_ds):
    g, d = models
    xh = human_ds.all_states()[:4]
    prev, _, _ = batch(prior, char_ds, n=4)
    psi_h = human_features(human_skeleton(), SPOT_MAP)(xh) + 0.05
    spec = character_features(prior.skeleton, SPOT_MAP)

    def loss(params):
        return generator_loss(with_params(g, params), d, prior, xh, prev, psi_h, spec, 0.3, 0.7)[0].total

    _, grads = generator_loss(g, d, prior, xh, prev, psi_h, spec, 0.3, 0.7)
    rng = np.random.default_rng(0)
    h = 1e-6
    for k, v in g.net.params.items():
        flat = [np.unravel_index(i, v.shape) for i in rng.choice(v.size, min(v.size, 25), replace=False)]
        num, ana = [], []
        for i in flat:
            p = {kk: vv.copy() for kk, vv in g.net.params.items()}
            p[k][i] += h
            up = loss(p)
            p[k][i] -= 2 * h
            num.append((up - loss(p)) / (2 * h))
            ana.append(grads[k][i])
        assert rel_err(ana, num) < 1e-3, k


def test_adversarial_weight_needs_a_discriminator(models, prior, human_ds, char_ds):
    g, _ = models
    xh = human_ds.all_states()[:2]
    prev, _, _ = batch(prior, char_ds, n=2)
    spec = character_features(prior.skeleton, SPOT_MAP)
    with pytest.raises(ValidationError):
        generator_loss(g, None, prior, xh, prev, np.zeros((2, spec.size)), spec, 0.3, 0.7)


def test_checkpoints_round_trip(models):
    g, d = models
    g2 = GeneratorModel.from_bytes(g.to_bytes())
    d2 = DiscriminatorModel.from_bytes(d.to_bytes())
    assert g2.to_bytes() == g.to_bytes() and d2.to_bytes() == d.to_bytes()
    with pytest.raises(ValidationError):
        GeneratorModel.from_bytes(d.to_bytes())


# ------------------------------------------------------------------ training


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(w_adv=0.0, w_fea=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(w_gp=-0.1)
    with pytest.raises(ValidationError):
        TrainConfig.from_dict({"w_advv": 1})
    for bad in (dict(self_prev=1.0), dict(self_prev=-0.1), dict(lr_min_ratio=1.5)):
        with pytest.raises(ValidationError):
            TrainConfig(**bad)
    cfg = TrainConfig(steps=3, g_hidden=[4])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_training_is_deterministic_and_keeps_the_prior_frozen(human_ds, char_ds, prior):
    before = prior.to_bytes()
    cfg = TrainConfig(steps=15, seed=3, **TINY)
    a = train_ace(human_ds, char_ds, prior, SPOT_MAP, cfg)
    b = train_ace(human_ds, char_ds, prior, SPOT_MAP, cfg)
    assert prior.to_bytes() == before
    assert a.generator.to_bytes() == b.generator.to_bytes()
    assert a.discriminator.to_bytes() == b.discriminator.to_bytes()
    assert a.history.to_dict() == b.history.to_dict()
    c = train_ace(human_ds, char_ds, prior, SPOT_MAP, TrainConfig(steps=15, seed=4, **TINY))
    assert c.generator.to_bytes() != a.generator.to_bytes()


def test_self_generated_previous_states_are_deterministic_and_change_training(human_ds, char_ds, prior):
    cfg = TrainConfig(steps=15, seed=3, self_prev=0.5, **TINY)
    a = train_ace(human_ds, char_ds, prior, SPOT_MAP, cfg)
    b = train_ace(human_ds, char_ds, prior, SPOT_MAP, cfg)
    assert a.generator.to_bytes() == b.generator.to_bytes()
    plain = train_ace(human_ds, char_ds, prior, SPOT_MAP, TrainConfig(steps=15, seed=3, **TINY))
    # the first step draws only real states, so the runs agree there and part later
    assert a.history.g_loss[0] == plain.history.g_loss[0]
    assert a.generator.to_bytes() != plain.generator.to_bytes()


def test_learning_rate_decays_to_the_floor():
    from ace.prior import cosine_lr

    assert cosine_lr(3e-4, 0.05, 0, 100) == pytest.approx(3e-4)
    assert cosine_lr(3e-4, 0.05, 100, 100) == pytest.approx(1.5e-5)
    assert cosine_lr(3e-4, 1.0, 37, 100) == pytest.approx(3e-4)


def test_single_transition_smoke_run_reduces_feature_distance(rig):
    tr = rollout_controller(rig, np.full(20, 0.8), np.zeros(20), seed=1).slice(10, 13)
    cds = MotionDataset(rig.skeleton, (tr,))
    hds = MotionDataset(human_skeleton(), (human_motion("walk", 40, seed=2).slice(5, 8),), "human")
    pr = train_prior(cds, PriorConfig(steps=300, **SMALL_PRIOR))[0]
    # default network sizes; the prior decodes almost every code to its single transition, so the margin is small
    res = train_ace(hds, cds, pr, SPOT_MAP, TrainConfig(steps=500, log_every=50))
    fea = res.history.g_fea
    assert res.history.steps[0] == 0 and res.history.steps[-1] == 500
    assert fea[-1] < fea[0]


def test_checkpoints_are_written_periodically(human_ds, char_ds, prior, tmp_path):
    train_ace(human_ds, char_ds, prior, SPOT_MAP, TrainConfig(steps=6, checkpoint_every=3, **TINY), tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["discriminator_000003.ckpt", "discriminator_000006.ckpt",
                     "generator_000003.ckpt", "generator_000006.ckpt"]


def test_training_rejects_mismatched_inputs(human_ds, char_ds, prior):
    with pytest.raises(ValidationError):
        train_ace(char_ds, human_ds, prior, SPOT_MAP, TrainConfig(steps=1))
    with pytest.raises(ValidationError):
        train_ace(human_ds, char_ds, prior, EEMapping((0, 1)), TrainConfig(steps=1))


# ------------------------------------------------------------------ retarget


def test_retarget_keeps_frame_count_and_validity(models, prior):
    g, _ = models
    h = human_motion("walk", 25, seed=3)
    traj, states = retarget(g, prior, h)
    assert len(traj) == len(h) == len(states)
    assert not traj.meta["truncated"]
    validate_character_state(states, character_layout(prior.skeleton))
    assert np.allclose(traj.root_positions[0, :2], h.root_positions[0, :2])
    with pytest.raises(ValidationError):
        retarget(g, prior, h.slice(0, 1))


def test_retarget_truncates_on_non_finite_states(models, prior):
    g, _ = models
    bad = with_params(g, {k: np.full_like(v, np.nan) for k, v in g.net.params.items()})
    traj, states = retarget(bad, prior, human_motion("wave", 10))
    assert traj.meta["truncated"] and len(traj) == 1
