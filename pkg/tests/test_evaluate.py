import json

import numpy as np
import pytest
import scipy.special
import scipy.stats

import oracles
from viapkit import attacks, evaluate, nn, train


# --- top-1 metrics -----------------------------------------------------------

def zero_logit_params():
    p = train.init_params(0, height=8, width=8)
    return p.replace_weights(dense_w=np.zeros_like(p.dense_w), dense_b=np.zeros_like(p.dense_b))


def test_top1_arithmetic(rng):
    params = zero_logit_params()  # argmax ties resolve to class 0 everywhere
    x = rng.uniform(0, 1, size=(4, 8, 8, 3))
    assert evaluate.top1_accuracy(params, x, np.array([0, 0, 1, 3])) == 0.5
    assert evaluate.top1_accuracy(params, x, np.array([0, 0, 0, 1])) == 0.75
    assert evaluate.top1_target_accuracy(params, x, 0) == 1.0
    assert evaluate.top1_target_accuracy(params, x, np.array([2, 2, 2, 2])) == 0.0


def test_top1_on_trained_victim(victim, default_dataset):
    ds = default_dataset
    te = ds.indices("test")
    acc = evaluate.top1_accuracy(victim, ds.images[te], ds.labels[te])
    assert acc >= 0.9


# --- incomplete beta / Welch -------------------------------------------------

def test_betainc_matches_scipy():
    for a in (0.5, 1.0, 2.5, 4.0, 17.0):
        for b in (0.5, 1.0, 3.0):
            for x in (0.0, 1e-9, 0.1, 0.3, 0.5, 0.7, 0.9, 1 - 1e-9, 1.0):
                ours = evaluate.betainc_reg(a, b, x)
                ref = float(scipy.special.betainc(a, b, x))
                assert abs(ours - ref) < 2e-12, (a, b, x)
    assert evaluate.betainc_reg(2.0, 0.5, 0.0) == 0.0
    assert evaluate.betainc_reg(2.0, 0.5, 1.0) == 1.0


def test_welch_frozen_oracle_cases():
    for xs, ys, t_ref, df_ref, p_ref in oracles.WELCH_CASES:
        r = evaluate.welch_ttest(xs, ys)
        assert abs(r.t - t_ref) < 1e-12
        assert abs(r.df - df_ref) < 1e-12
        assert abs(r.p_value - p_ref) < 1e-6
        assert r.n_a == len(xs) and r.n_b == len(ys)


def test_welch_oracle_self_consistency():
    # the frozen numbers must be reproducible from the high-precision series
    # and agree with scipy's independent implementation
    for xs, ys, t_ref, df_ref, p_ref in oracles.WELCH_CASES:
        t, df, p = oracles.welch_reference(xs, ys)
        assert abs(t - t_ref) < 1e-12
        assert abs(df - df_ref) < 1e-12
        assert abs(p - p_ref) < 1e-12
        s = scipy.stats.ttest_ind(xs, ys, equal_var=False)
        assert abs(s.pvalue - p_ref) < 1e-12


def test_welch_mirrored_samples_give_p_one():
    a = [1.0, -1.0, 0.5, -0.5, 0.25, -0.25]
    b = [-v for v in a]
    r = evaluate.welch_ttest(a, b)
    assert r.t == 0.0
    assert r.p_value == 1.0


def test_welch_swap_symmetry(rng):
    for _ in range(5):
        a = rng.normal(0.4, 0.2, size=9)
        b = rng.normal(0.5, 0.25, size=13)
        r1 = evaluate.welch_ttest(a, b)
        r2 = evaluate.welch_ttest(b, a)
        assert abs(r1.p_value - r2.p_value) <= 1e-15
        assert r1.t == pytest.approx(-r2.t, abs=0.0)


def test_welch_degenerate_inputs():
    with pytest.raises(ValueError):
        evaluate.welch_ttest([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        evaluate.welch_ttest([2.0, 2.0, 2.0], [3.0, 3.0])
    # fine if only one sample is constant
    r = evaluate.welch_ttest([2.0, 2.0, 2.0], [3.0, 3.5])
    assert 0.0 <= r.p_value <= 1.0


def test_ttest_result_json():
    r = evaluate.welch_ttest([1.0, 2.0, 3.0], [2.0, 4.0, 6.0], label="x-vs-y")
    d = r.to_json_dict()
    assert d["label"] == "x-vs-y"
    assert set(d) == {"label", "t", "df", "p_value", "n_a", "n_b"}


def test_draw_target_excludes_true():
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
    for true in range(4):
        for _ in range(50):
            assert evaluate.draw_target(rng, true, 4) != true


# --- sweep -------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_sweep(tiny_dataset, victim):
    config = evaluate.SweepConfig(
        eps_grid=(0.0, 3.0), families=("fgsm", "fgsm-t", "viap", "viap-t"),
        iterations=3, gate_train=0.0, gate_test=0.0,
    )
    return evaluate.confidence_sweep(victim, tiny_dataset, config=config)


def test_sweep_cell_structure(tiny_sweep, tiny_dataset):
    assert len(tiny_sweep.cells) == 4 * 2 * 2
    n_tr = len(tiny_dataset.indices("train"))
    n_te = len(tiny_dataset.indices("test"))
    for c in tiny_sweep.cells:
        assert c.n == (n_tr if c.split == "train" else n_te)
        assert len(c.values) == c.n == len(c.correct) == len(c.hits_target)
        assert 0.0 <= c.mean <= 1.0 and c.std >= 0.0
        expected_metric = "target_softmax" if attacks.targeted(c.family) else "true_softmax"
        assert c.metric == expected_metric


def test_sweep_eps_zero_rows_are_clean(tiny_sweep):
    # every family's eps=0 row must equal the clean baseline exactly
    base_u = tiny_sweep.cell("fgsm", 0.0, "test")
    base_t = tiny_sweep.cell("fgsm-t", 0.0, "test")
    assert np.array_equal(tiny_sweep.cell("viap", 0.0, "test").values, base_u.values)
    assert np.array_equal(tiny_sweep.cell("viap-t", 0.0, "test").values, base_t.values)
    assert base_u.mean == pytest.approx(tiny_sweep.clean["test_true_softmax"], abs=1e-12)


def test_sweep_targets_shared_and_valid(tiny_sweep, tiny_dataset):
    ds = tiny_dataset
    for o, target in tiny_sweep.targets.items():
        true = int(ds.labels[ds.indices(object_id=o)][0])
        assert target != true
        assert 0 <= target < ds.n_classes


def test_sweep_deterministic_and_jobs_invariant(tiny_dataset, victim):
    config = evaluate.SweepConfig(
        eps_grid=(0.0, 5.0), families=("viap", "bim"), iterations=2,
        gate_train=0.0, gate_test=0.0,
    )
    a = evaluate.confidence_sweep(victim, tiny_dataset, config=config)
    b = evaluate.confidence_sweep(victim, tiny_dataset, config=config)
    c = evaluate.confidence_sweep(
        victim, tiny_dataset,
        config=evaluate.SweepConfig(
            eps_grid=(0.0, 5.0), families=("viap", "bim"), iterations=2,
            gate_train=0.0, gate_test=0.0, jobs=4,
        ),
    )
    for other in (b, c):
        for ca, cb in zip(a.cells, other.cells):
            assert ca.family == cb.family and ca.eps == cb.eps and ca.split == cb.split
            assert np.array_equal(ca.values, cb.values)


def test_sweep_gate_failure(tiny_dataset):
    untrained = train.init_params(0)
    with pytest.raises(evaluate.GateFailure) as err:
        evaluate.confidence_sweep(untrained, tiny_dataset)
    assert "train_acc" in err.value.diag


def test_sweep_ttests_present(tiny_dataset, victim):
    config = evaluate.SweepConfig(
        eps_grid=(0.0, 5.0), families=("fgsm", "viap"), iterations=2,
        gate_train=0.0, gate_test=0.0, ttest_eps=5.0,
    )
    sweep = evaluate.confidence_sweep(victim, tiny_dataset, config=config)
    labels = [t.label for t in sweep.ttests]
    assert any(l.startswith("viap-vs-fgsm") for l in labels)


# --- report ------------------------------------------------------------------

def test_emit_report_files_and_determinism(tiny_sweep, tmp_path):
    files1 = evaluate.emit_report(tiny_sweep, tiny_sweep.ttests, tmp_path / "a")
    files2 = evaluate.emit_report(tiny_sweep, tiny_sweep.ttests, tmp_path / "b")
    assert files1 == files2
    assert "report.csv" in files1 and "report.json" in files1 and "summary.csv" in files1
    for rel in files1:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    report_rows = (tmp_path / "a" / "report.csv").read_text().strip().split("\n")
    assert report_rows[0] == "family,epsilon,split,metric,mean,std,n"
    assert len(report_rows) - 1 == len(tiny_sweep.cells)  # one row per cell

    data = json.loads((tmp_path / "a" / "report.json").read_text())
    assert len(data["cells"]) == len(tiny_sweep.cells)
    assert data["footnotes"]

    # per-view records in the report are enough to recompute every mean
    for cell, raw in zip(tiny_sweep.cells, data["cells"]):
        assert cell.mean == pytest.approx(np.mean(raw["values"]), abs=1e-12)


def test_emit_report_without_ttests(tiny_sweep, tmp_path):
    files = evaluate.emit_report(tiny_sweep, [], tmp_path / "c")
    assert "significance.csv" not in files
    assert "report.csv" in files


def test_report_samples_are_ppm(tiny_sweep, tmp_path):
    files = evaluate.emit_report(tiny_sweep, [], tmp_path / "d")
    samples = [f for f in files if f.startswith("samples/")]
    assert samples
    clean = [f for f in samples if "clean_" in f]
    assert clean
    for rel in samples:
        assert (tmp_path / "d" / rel).read_bytes().startswith(b"P6\n")
