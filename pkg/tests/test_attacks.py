import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viapkit import attacks, nn, render, train


def tiny_params(seed=0):
    # init_params starts the readout at zero (no input gradient); give it a
    # random dense layer so attack directions have something to chew on
    params = train.init_params(seed, height=8, width=8)
    r = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 99])))
    return params.replace_weights(dense_w=0.1 * r.standard_normal(params.dense_w.shape))


def interior_batch(rng, n=3, hw=8, lo=0.3, hi=0.7):
    return rng.uniform(lo, hi, size=(n, hw, hw, 3))


# --- config ------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        attacks.AttackConfig("pgd", 5.0)
    with pytest.raises(ValueError):
        attacks.AttackConfig("fgsm", -1.0)
    with pytest.raises(ValueError):
        attacks.AttackConfig("fgsm", 5.0, iterations=5)
    with pytest.raises(ValueError):
        attacks.AttackConfig("bim", 5.0, step=0.0)
    with pytest.raises(ValueError):
        attacks.AttackConfig("viap", 5.0, rho=-0.1)
    with pytest.raises(ValueError):
        attacks.AttackConfig("bim", 5.0, iterations=0)


def test_config_iteration_defaults():
    assert attacks.AttackConfig("fgsm", 5.0).iterations == 1
    assert attacks.AttackConfig("fgsm-t", 5.0, target=1).iterations == 1
    assert attacks.AttackConfig("bim", 5.0).iterations == 20
    assert attacks.AttackConfig("viap-t", 5.0, target=2).iterations == 20


def test_config_step_resolution():
    # auto step: max(2.5 * eps / N, 0.5) on the 0-255 scale
    assert attacks.AttackConfig("bim", 10.0).step_unit == pytest.approx(1.25 / 255.0)
    assert attacks.AttackConfig("bim", 1.0).step_unit == pytest.approx(0.5 / 255.0)
    assert attacks.AttackConfig("bim", 10.0, step=2.0).step_unit == pytest.approx(2.0 / 255.0)
    literal = attacks.AttackConfig("bim", 10.0, literal_eq_step=True)
    assert literal.step_unit == pytest.approx(10.0 / 255.0)
    assert attacks.AttackConfig("fgsm", 5.0).eps_unit == pytest.approx(5.0 / 255.0)


def test_config_json_roundtrip():
    cfg = attacks.AttackConfig("viap-t", 5.0, step=1.5, target=3, rho=0.02, seed=9)
    back = attacks.AttackConfig.from_json_dict(cfg.to_json_dict())
    assert back == cfg


# --- clipping ----------------------------------------------------------------

def test_clip_ball_examples():
    assert attacks.clip_ball(np.array(0.9), np.array(0.5), 0.1) == pytest.approx(0.6)
    assert attacks.clip_ball(np.array(1.2), np.array(0.98), 0.1) == pytest.approx(1.0)
    inside = np.array([0.4, 0.5, 0.6])
    clean = np.array([0.45, 0.5, 0.55])
    assert np.array_equal(attacks.clip_ball(inside, clean, 0.1), inside)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eps=st.floats(0.0, 0.3))
def test_clip_ball_fuzz(seed, eps):
    r = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    clean = r.uniform(0, 1, size=17)
    adv = clean + r.uniform(-0.8, 0.8, size=17)
    out = attacks.clip_ball(adv, clean, eps)
    assert np.max(np.abs(out - clean)) <= eps + 1e-12
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.array_equal(attacks.clip_ball(out, clean, eps), out)


def test_apply_delta_zero_is_identity(rng):
    x = rng.uniform(0, 1, size=(2, 8, 8, 3))
    assert np.array_equal(attacks.apply_delta(np.zeros((8, 8, 3)), x), x)
    out = attacks.apply_delta(np.full((8, 8, 3), 0.5), x)
    assert out.max() <= 1.0


# --- FGSM --------------------------------------------------------------------

def test_fgsm_zero_eps_unchanged(rng):
    params = tiny_params()
    x = interior_batch(rng)
    y = np.array([0, 1, 2])
    assert np.array_equal(attacks.fgsm_batch(params, x, y, 0.0), x)


def test_fgsm_moves_pixels_by_exactly_eps(rng):
    params = tiny_params()
    x = interior_batch(rng, n=1)
    y = np.array([1])
    _, grad = nn.loss_and_input_grad(params, x, y)
    adv = attacks.fgsm_batch(params, x, y, 4.0)
    e = 4.0 / 255.0
    strong = np.abs(grad) > 1e-8
    assert strong.any()
    assert np.array_equal(adv[strong], (x + e * np.sign(grad))[strong])
    assert np.max(np.abs(adv - x)) <= e + 1e-15


def test_fgsm_targeted_descends_target_loss(victim, default_dataset):
    ds = default_dataset
    i = int(ds.indices("test")[0])
    view = ds.view(i)
    target = (view.label + 1) % ds.n_classes
    adv = attacks.fgsm_targeted(victim, view, 3.0, target)
    loss_clean, _ = nn.softmax_cross_entropy(
        nn.forward(victim, view.image[None]), np.array([target]))
    loss_adv, _ = nn.softmax_cross_entropy(
        nn.forward(victim, adv[None]), np.array([target]))
    assert loss_adv < loss_clean


def test_fgsm_targeted_plus_form_mirrors(rng):
    params = tiny_params()
    x = interior_batch(rng, n=2)
    minus = attacks.fgsm_targeted_batch(params, x, 2, 3.0)
    plus = attacks.fgsm_targeted_batch(params, x, 2, 3.0, plus_form=True)
    assert np.max(np.abs((minus + plus) - 2 * x)) < 1e-12


def test_fgsm_targeted_rejects_true_label(victim, default_dataset):
    view = default_dataset.view(0)
    with pytest.raises(ValueError):
        attacks.fgsm_targeted(victim, view, 3.0, view.label)


# --- BIM ---------------------------------------------------------------------

def test_bim_ball_invariant_every_iteration(rng):
    params = tiny_params()
    x = rng.uniform(0, 1, size=(2, 8, 8, 3))
    y = np.array([0, 3])
    cfg = attacks.AttackConfig("bim", 6.0, iterations=5)
    seen = []

    def trace(n, adv):
        seen.append(n)
        assert np.max(np.abs(adv - x)) <= cfg.eps_unit + 1e-12
        assert adv.min() >= 0.0 and adv.max() <= 1.0

    attacks.bim_batch(params, x, y, cfg, trace=trace)
    assert seen == list(range(5))


def test_bim_single_step_literal_equals_fgsm(rng):
    params = tiny_params(3)
    x = rng.uniform(0, 1, size=(6, 8, 8, 3))
    y = rng.integers(0, 4, size=6)
    cfg = attacks.AttackConfig("bim", 5.0, iterations=1, literal_eq_step=True)
    assert np.array_equal(
        attacks.bim_batch(params, x, y, cfg),
        attacks.fgsm_batch(params, x, y, 5.0),
    )


def test_bim_targeted_needs_valid_target(victim, default_dataset):
    view = default_dataset.view(0)
    with pytest.raises(ValueError):
        attacks.bim(victim, view, attacks.AttackConfig("bim-t", 5.0))
    with pytest.raises(ValueError):
        attacks.bim(victim, view, attacks.AttackConfig("bim-t", 5.0, target=view.label))


# --- shared gradient / VIAP --------------------------------------------------

def test_shared_gradient_is_sum_of_per_view_grads(rng):
    params = tiny_params(1)
    for trial in range(3):
        n = 2 + trial
        x = rng.uniform(0, 1, size=(n, 8, 8, 3))
        y = rng.integers(0, 4, size=n)
        _, g = attacks.shared_gradient(params, x, y)
        total = np.zeros((8, 8, 3))
        for i in range(n):
            # per-view gradient of the batch-mean loss: single-view grad / n
            _, gi = nn.loss_and_input_grad(params, x[i : i + 1], y[i : i + 1])
            total += gi[0] / n
        assert np.max(np.abs(g - total)) < 1e-10


def test_viap_delta_within_ball_and_deterministic(rng):
    params = tiny_params()
    x = interior_batch(rng, n=4)
    y = np.array([0, 1, 2, 3])
    cfg = attacks.AttackConfig("viap", 5.0, iterations=6, seed=12)
    a = attacks.viap_arrays(params, x, y, cfg)
    b = attacks.viap_arrays(params, x, y, cfg)
    assert np.array_equal(a.delta, b.delta)
    assert np.max(np.abs(a.delta)) <= cfg.eps_unit + 1e-12
    c = attacks.viap_arrays(params, x, y, attacks.AttackConfig("viap", 5.0, iterations=6, seed=13))
    assert not np.array_equal(a.delta, c.delta)


def test_viap_init_noise_respects_rho(rng):
    params = tiny_params()
    x = interior_batch(rng, n=2)
    cfg = attacks.AttackConfig("viap", 50.0, iterations=1, rho=0.004, seed=5)
    traced = []
    attacks.viap_arrays(params, x, np.array([0, 1]), cfg,
                        trace=lambda n, d, loss, g: traced.append((loss, g)))
    rng0 = np.random.Generator(np.random.PCG64(np.random.SeedSequence(5)))
    d0 = rng0.uniform(-0.004, 0.004, size=(8, 8, 3))
    assert np.max(np.abs(d0)) <= 0.004
    # rho = 0 starts from an exact zero field
    cfg0 = attacks.AttackConfig("viap", 5.0, iterations=1, rho=0.0)
    deltas = []
    attacks.viap_arrays(params, x, np.array([0, 1]), cfg0,
                        trace=lambda n, d, loss, g: deltas.append(d))
    # after one update every coordinate moved by at most one step
    assert np.max(np.abs(deltas[0])) <= cfg0.step_unit + 1e-15


def test_viap_eps_zero_gives_zero_delta(rng):
    params = tiny_params()
    x = interior_batch(rng, n=2)
    cfg = attacks.AttackConfig("viap", 0.0, iterations=3, seed=2)
    p = attacks.viap_arrays(params, x, np.array([1, 2]), cfg)
    assert np.array_equal(p.delta, np.zeros((8, 8, 3)))


def test_viap_validates_inputs(rng):
    params = tiny_params()
    x = interior_batch(rng, n=2)
    with pytest.raises(ValueError):
        attacks.viap(params, [], attacks.AttackConfig("viap", 5.0))
    with pytest.raises(ValueError):
        attacks.viap_arrays(params, x, np.array([0, 1]), attacks.AttackConfig("viap-t", 5.0))
    with pytest.raises(ValueError):
        attacks.viap_arrays(params, x, np.array([0, 1]),
                            attacks.AttackConfig("viap-t", 5.0, target=1))


def test_viap_single_view_matches_bim_directions(rng):
    params = tiny_params(2)
    x = interior_batch(rng, n=1, lo=0.35, hi=0.65)
    y = np.array([2])
    cfg = attacks.AttackConfig("viap", 2.0, iterations=4, rho=0.0, literal_eq_step=True)
    viap_signs, bim_signs = [], []
    attacks.viap_arrays(params, x, y, cfg,
                        trace=lambda n, d, loss, g: viap_signs.append(np.sign(g)))
    prev = [x.copy()]

    def bim_trace(n, adv):
        _, g = nn.loss_and_input_grad(params, prev[0], y)
        bim_signs.append(np.sign(g[0]))
        prev[0] = adv.copy()

    bim_cfg = attacks.AttackConfig("bim", 2.0, iterations=4, literal_eq_step=True)
    attacks.bim_batch(params, x, y, bim_cfg, trace=bim_trace)
    for a, b in zip(viap_signs, bim_signs):
        assert np.array_equal(a, b)


def test_monotone_pressure_on_victim(victim, default_dataset):
    ds = default_dataset
    obj = ds.objects()[0]
    idx = ds.indices("train", obj)
    images, labels = ds.images[idx], ds.labels[idx]

    cfg = attacks.AttackConfig("viap", 5.0, seed=1)
    first = []
    p = attacks.viap_arrays(victim, images, labels, cfg,
                            trace=lambda n, d, loss, g: first.append(loss) if n == 0 else None)
    probs_end = nn.softmax(nn.forward(victim, p.apply(images)))
    probs_0 = nn.softmax(nn.forward(victim, images))
    true_end = probs_end[np.arange(len(labels)), labels].mean()
    true_0 = probs_0[np.arange(len(labels)), labels].mean()
    assert true_end < true_0

    target = int((labels[0] + 1) % ds.n_classes)
    assert target not in set(labels.tolist())
    tcfg = attacks.AttackConfig("viap-t", 5.0, target=target, seed=1)
    tp = attacks.viap_arrays(victim, images, labels, tcfg)
    t_end = nn.softmax(nn.forward(victim, tp.apply(images)))[:, target].mean()
    t_0 = probs_0[:, target].mean()
    assert t_end > t_0


# --- Perturbation object / io --------------------------------------------------

def test_perturbation_validates_ball():
    cfg = attacks.AttackConfig("viap", 5.0)
    with pytest.raises(ValueError):
        attacks.Perturbation(np.full((8, 8, 3), 0.1), cfg, (), 0.0)
    with pytest.raises(ValueError):
        attacks.Perturbation(np.zeros((8, 8)), cfg, (), 0.0)


def test_perturbation_apply_semantics(rng, default_dataset):
    cfg = attacks.AttackConfig("viap", 8.0)
    delta = rng.uniform(-cfg.eps_unit, cfg.eps_unit, size=(32, 32, 3))
    p = attacks.Perturbation(delta, cfg, (0, 1), 1.0)
    view = default_dataset.view(0)
    out = attacks.apply(p, view)
    assert np.array_equal(out, np.clip(view.image + p.delta, 0.0, 1.0))
    with pytest.raises((ValueError, RuntimeError)):
        p.delta[0, 0, 0] = 0.0


def test_perturbation_roundtrip(tmp_path, rng):
    cfg = attacks.AttackConfig("viap-t", 6.0, target=2, seed=3)
    delta = rng.uniform(-cfg.eps_unit, cfg.eps_unit, size=(8, 8, 3))
    p = attacks.Perturbation(delta, cfg, (4, 5, 6), 0.25)
    path = tmp_path / "d.viapdlt"
    attacks.save_perturbation(p, path)
    back = attacks.load_perturbation(path)
    assert np.array_equal(back.delta, p.delta)
    assert back.config == p.config
    assert back.view_ids == p.view_ids
    assert back.final_loss == p.final_loss
    path2 = tmp_path / "d2.viapdlt"
    attacks.save_perturbation(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_perturbation_rejects_bad_magic(tmp_path):
    path = tmp_path / "x.viapdlt"
    path.write_bytes(b"WRONGMAG" + b"\x00" * 16)
    with pytest.raises(ValueError):
        attacks.load_perturbation(path)
