"""Evaluation harness: top-1 metrics, eps sweeps, Welch t-tests, reports.

The sweep reproduces the measurement protocol behind the attack comparison
tables: every attack is crafted on an object's training views only, then
scored on both splits. Untargeted cells track mean softmax mass on the true
label (lower = stronger attack); targeted cells track the target label
(higher = stronger).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from viapkit import attacks, nn, train
from viapkit.attacks import AttackConfig, FAMILIES
from viapkit.render import Dataset, write_ppm

DEFAULT_EPS_GRID = (0.0, 0.5, 1.0, 3.0, 5.0, 10.0, 15.0, 30.0, 50.0)

# fixed stream tags so target draws and delta inits never share an rng stream
_TARGET_STREAM = 101
_ATTACK_STREAM = 202


class GateFailure(RuntimeError):
    """Clean-accuracy gate failed; attacks on a bad victim measure nothing."""

    def __init__(self, diag: dict):
        self.diag = diag
        super().__init__(
            "clean-accuracy gate failed: "
            + ", ".join(f"{k}={v:.4f}" for k, v in sorted(diag.items()))
        )


# ---------------------------------------------------------------------------
# Top-1 metrics
# ---------------------------------------------------------------------------

def top1_accuracy(params: nn.ModelParams, images: np.ndarray, labels) -> float:
    """Fraction of views whose argmax logit is the true label."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty split")
    pred = np.argmax(nn.forward(params, images), axis=1)
    return float(np.mean(pred == labels))


def top1_target_accuracy(params: nn.ModelParams, images: np.ndarray, target) -> float:
    """Fraction of views whose argmax logit is the (per-view) target label."""
    pred = np.argmax(nn.forward(params, images), axis=1)
    target = np.asarray(target, dtype=np.int64)
    if target.ndim == 0:
        target = np.full(len(pred), int(target), dtype=np.int64)
    if len(target) == 0:
        raise ValueError("empty split")
    return float(np.mean(pred == target))


# ---------------------------------------------------------------------------
# Welch two-sample t-test (hand-rolled incomplete beta)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TTestResult:
    label: str
    t: float
    df: float
    p_value: float
    n_a: int
    n_b: int

    def to_json_dict(self) -> dict:
        return {
            "label": self.label, "t": self.t, "df": self.df,
            "p_value": self.p_value, "n_a": self.n_a, "n_b": self.n_b,
        }


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz scheme."""
    max_iter, eps, tiny = 300, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction failed to converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b); exact 0/1 at the endpoints."""
    if not (a > 0.0 and b > 0.0):
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def welch_ttest(sample_a, sample_b, label: str = "a-vs-b") -> TTestResult:
    """Unequal-variance t-test with Welch-Satterthwaite df, two-sided p.

    p comes from the t-distribution survival function expressed through the
    regularized incomplete beta: p = I_{df/(df+t^2)}(df/2, 1/2). Equal means
    give t = 0 and p = 1 exactly.
    """
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise ValueError("both samples have zero variance; t is undefined")
    na, nb = len(a), len(b)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    p = betainc_reg(df / 2.0, 0.5, df / (df + t * t))
    return TTestResult(label=label, t=float(t), df=float(df),
                       p_value=float(min(max(p, 0.0), 1.0)), n_a=na, n_b=nb)


# ---------------------------------------------------------------------------
# The eps sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    eps_grid: tuple = DEFAULT_EPS_GRID
    families: tuple = FAMILIES
    iterations: int = 20
    seed: int = 0
    rho: float = attacks.DEFAULT_RHO
    step: float | None = None
    literal_eq_step: bool = False
    ttest_eps: float = 5.0
    gate_train: float = 0.95
    gate_test: float = 0.90
    jobs: int = 1

    def __post_init__(self):
        for f in self.families:
            if f not in FAMILIES:
                raise ValueError(f"unknown family {f!r}")
        if any(e < 0 for e in self.eps_grid) or len(self.eps_grid) == 0:
            raise ValueError("eps grid must be non-empty and non-negative")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "eps_grid": list(self.eps_grid), "families": list(self.families),
            "iterations": self.iterations, "seed": self.seed, "rho": self.rho,
            "step": self.step, "literal_eq_step": self.literal_eq_step,
            "ttest_eps": self.ttest_eps, "gate_train": self.gate_train,
            "gate_test": self.gate_test, "jobs": self.jobs,
        }


@dataclass
class Cell:
    """One (family, eps, split) measurement with its raw per-view records."""

    family: str
    eps: float
    split: str
    metric: str           # "true_softmax" or "target_softmax"
    mean: float
    std: float
    n: int
    top1_true: float
    top1_target: float
    values: np.ndarray        # tracked softmax per view, split order
    correct: np.ndarray       # argmax == true label, per view
    hits_target: np.ndarray   # argmax == per-object target, per view

    def to_json_dict(self) -> dict:
        return {
            "family": self.family, "eps": self.eps, "split": self.split,
            "metric": self.metric, "mean": self.mean, "std": self.std, "n": self.n,
            "top1_true": self.top1_true, "top1_target": self.top1_target,
            "values": [float(v) for v in self.values],
            "correct": [bool(v) for v in self.correct],
            "hits_target": [bool(v) for v in self.hits_target],
        }


@dataclass
class SweepResult:
    config: SweepConfig
    clean: dict
    targets: dict                 # object id -> target label
    cells: list = field(default_factory=list)
    ttests: list = field(default_factory=list)
    split_indices: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)        # (family, eps, view idx) -> image
    samples_clean: dict = field(default_factory=dict)  # view idx -> image

    def cell(self, family: str, eps: float, split: str) -> Cell:
        for c in self.cells:
            if c.family == family and c.eps == eps and c.split == split:
                return c
        raise KeyError(f"no cell ({family}, {eps}, {split})")


def draw_target(rng: np.random.Generator, true_label: int, n_classes: int) -> int:
    """Uniform over labels, re-drawing until it differs from the true one."""
    t = int(rng.integers(0, n_classes))
    while t == true_label:
        t = int(rng.integers(0, n_classes))
    return t


def _derived_seed(parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _make_cell(params, family, eps, split, images, labels, targets_pv, is_targeted) -> Cell:
    probs = nn.softmax(nn.forward(params, images))
    pred = np.argmax(probs, axis=1)
    rows = np.arange(len(labels))
    tracked = probs[rows, targets_pv] if is_targeted else probs[rows, labels]
    return Cell(
        family=family, eps=float(eps), split=split,
        metric="target_softmax" if is_targeted else "true_softmax",
        mean=float(tracked.mean()), std=float(tracked.std()), n=len(labels),
        top1_true=float(np.mean(pred == labels)),
        top1_target=float(np.mean(pred == targets_pv)),
        values=tracked, correct=pred == labels, hits_target=pred == targets_pv,
    )


def confidence_sweep(
    params: nn.ModelParams,
    dataset: Dataset,
    families: tuple | None = None,
    eps_grid: tuple | None = None,
    config: SweepConfig = SweepConfig(),
) -> SweepResult:
    """Craft-on-train / score-on-both sweep over every (family, eps) cell.

    Per object: the viap families craft one universal delta on its training
    views and apply that same delta to both splits; the per-image families
    perturb each training view directly and carry the object's mean training
    noise onto its test views. eps = 0 short-circuits to clean images for
    every family. Objects are independent, so crafting may run on a thread
    pool (config.jobs) without changing any output bit.
    """
    if families is not None or eps_grid is not None:
        config = replace(
            config,
            families=tuple(families) if families is not None else config.families,
            eps_grid=tuple(eps_grid) if eps_grid is not None else config.eps_grid,
        )

    train_idx = dataset.indices("train")
    test_idx = dataset.indices("test")
    x_tr, y_tr = dataset.images[train_idx], dataset.labels[train_idx]
    x_te, y_te = dataset.images[test_idx], dataset.labels[test_idx]
    k = dataset.n_classes

    acc_tr, conf_tr = train.evaluate_clean(params, x_tr, y_tr)
    acc_te, conf_te = train.evaluate_clean(params, x_te, y_te)
    clean = {
        "train_acc": acc_tr, "train_true_softmax": conf_tr,
        "test_acc": acc_te, "test_true_softmax": conf_te,
    }
    if acc_tr < config.gate_train or acc_te < config.gate_test:
        raise GateFailure(
            {"train_acc": acc_tr, "test_acc": acc_te,
             "gate_train": config.gate_train, "gate_test": config.gate_test}
        )

    objects = dataset.objects()
    obj_label = {o: int(dataset.labels[dataset.indices(object_id=o)][0]) for o in objects}
    targets = {}
    for o in objects:
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([config.seed, _TARGET_STREAM, o]))
        )
        targets[o] = draw_target(rng, obj_label[o], k)

    tr_pos = {o: np.flatnonzero(dataset.object_ids[train_idx] == o) for o in objects}
    te_pos = {o: np.flatnonzero(dataset.object_ids[test_idx] == o) for o in objects}
    tgt_tr = np.array([targets[int(o)] for o in dataset.object_ids[train_idx]], dtype=np.int64)
    tgt_te = np.array([targets[int(o)] for o in dataset.object_ids[test_idx]], dtype=np.int64)

    # one sample view per class for the image dumps: first test view of the
    # class's first object
    sample_pos = []
    for class_id in range(k):
        cand = np.flatnonzero(dataset.labels[test_idx] == class_id)
        if len(cand):
            sample_pos.append(int(cand[0]))
    result = SweepResult(
        config=config, clean=clean, targets=targets,
        split_indices={"train": train_idx.tolist(), "test": test_idx.tolist()},
    )
    for p in sample_pos:
        result.samples_clean[int(test_idx[p])] = x_te[p].copy()

    def craft_object(family, eps, o, adv_tr, adv_te):
        pos_t, pos_e = tr_pos[o], te_pos[o]
        imgs, lbls = x_tr[pos_t], y_tr[pos_t]
        is_targeted = attacks.targeted(family)
        fam_idx = FAMILIES.index(family)
        eps_key = int(round(eps * 1000))
        if family == "fgsm":
            a_tr = attacks.fgsm_batch(params, imgs, lbls, eps)
        elif family == "fgsm-t":
            a_tr = attacks.fgsm_targeted_batch(params, imgs, targets[o], eps)
        elif family in ("bim", "bim-t"):
            cfg = AttackConfig(
                family=family, eps=eps, step=config.step, iterations=config.iterations,
                target=targets[o] if is_targeted else None,
                literal_eq_step=config.literal_eq_step,
            )
            y = targets[o] if is_targeted else lbls
            a_tr = attacks.bim_batch(params, imgs, y, cfg)
        else:  # viap / viap-t
            cfg = AttackConfig(
                family=family, eps=eps, step=config.step, iterations=config.iterations,
                target=targets[o] if is_targeted else None, rho=config.rho,
                seed=_derived_seed([config.seed, _ATTACK_STREAM, fam_idx, eps_key, o]),
                literal_eq_step=config.literal_eq_step,
            )
            pert = attacks.viap_arrays(
                params, imgs, lbls, cfg,
                view_ids=dataset.view_ids[train_idx][pos_t].tolist(),
            )
            adv_tr[pos_t] = pert.apply(imgs)
            adv_te[pos_e] = pert.apply(x_te[pos_e])
            return
        adv_tr[pos_t] = a_tr
        # universality on unseen views for per-image families: carry the
        # object's mean training noise over (stays inside the eps ball)
        mean_noise = (a_tr - imgs).mean(axis=0)
        adv_te[pos_e] = attacks.apply_delta(mean_noise, x_te[pos_e])

    for family in config.families:
        is_targeted = attacks.targeted(family)
        for eps in config.eps_grid:
            if eps == 0.0:
                adv_tr, adv_te = x_tr, x_te
            else:
                adv_tr = np.empty_like(x_tr)
                adv_te = np.empty_like(x_te)
                if config.jobs > 1:
                    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                        futs = [
                            pool.submit(craft_object, family, eps, o, adv_tr, adv_te)
                            for o in objects
                        ]
                        for f in futs:
                            f.result()
                else:
                    for o in objects:
                        craft_object(family, eps, o, adv_tr, adv_te)
            result.cells.append(
                _make_cell(params, family, eps, "train", adv_tr, y_tr, tgt_tr, is_targeted)
            )
            result.cells.append(
                _make_cell(params, family, eps, "test", adv_te, y_te, tgt_te, is_targeted)
            )
            if eps > 0.0:
                for p in sample_pos:
                    result.samples[(family, float(eps), int(test_idx[p]))] = adv_te[p].copy()

    result.ttests = _sweep_ttests(result)
    return result


def _sweep_ttests(result: SweepResult) -> list:
    """Welch tests pairing viap against each baseline on the test split."""
    eps = result.config.ttest_eps
    if eps not in result.config.eps_grid:
        return []
    pairs = [("viap", "fgsm"), ("viap", "bim"), ("viap-t", "fgsm-t"), ("viap-t", "bim-t")]
    out = []
    for fam_a, fam_b in pairs:
        if fam_a not in result.config.families or fam_b not in result.config.families:
            continue
        a = result.cell(fam_a, eps, "test").values
        b = result.cell(fam_b, eps, "test").values
        try:
            out.append(welch_ttest(a, b, label=f"{fam_a}-vs-{fam_b}@eps{eps:g}/test"))
        except ValueError:
            # degenerate (both samples constant): skip the pair rather than fake a p
            continue
    return out


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

_FOOTNOTES = (
    "epsilon values are on the 0-255 scale; images live in [0,1], so the applied bound is eps/255",
    "eps=0 rows are strictly clean images for every family (no init noise applied)",
    "per-image families are crafted on the train split; their test rows apply each object's mean training noise to unseen views",
    "viap families craft one universal delta per object on its training views and apply the identical delta to both splits",
    "untargeted rows track softmax mass on the true label (lower = stronger); targeted rows track the target label (higher = stronger)",
    "each object draws one target label uniformly excluding its true label; all targeted families and eps values share it",
    "summary rows aggregate the per-eps cell means across the whole eps grid",
)


def _fmt_eps(eps: float) -> str:
    return f"{eps:g}"


def emit_report(sweep: SweepResult, ttests: list, out_dir) -> list:
    """Write report.csv / summary.csv / report.json (+ significance.csv, samples/).

    Returns the sorted list of relative paths written. Re-running on the same
    sweep produces byte-identical files: floats are serialized with repr and
    JSON keys are sorted.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    rows = ["family,epsilon,split,metric,mean,std,n"]
    for c in sweep.cells:
        rows.append(
            f"{c.family},{_fmt_eps(c.eps)},{c.split},{c.metric},"
            f"{repr(c.mean)},{repr(c.std)},{c.n}"
        )
    with open(os.path.join(out_dir, "report.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    written.append("report.csv")

    rows = ["family,split,metric,mean,std"]
    for family in sweep.config.families:
        for split in ("train", "test"):
            cells = [c for c in sweep.cells if c.family == family and c.split == split]
            means = np.array([c.mean for c in cells])
            rows.append(
                f"{family},{split},{cells[0].metric},"
                f"{repr(float(means.mean()))},{repr(float(means.std()))}"
            )
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    written.append("summary.csv")

    if ttests:
        rows = ["pair,t,df,p_value,n_a,n_b"]
        for t in ttests:
            rows.append(f"{t.label},{repr(t.t)},{repr(t.df)},{repr(t.p_value)},{t.n_a},{t.n_b}")
        with open(os.path.join(out_dir, "significance.csv"), "w") as fh:
            fh.write("\n".join(rows) + "\n")
        written.append("significance.csv")

    report = {
        "config": sweep.config.to_json_dict(),
        "clean": sweep.clean,
        "targets": {str(k): v for k, v in sorted(sweep.targets.items())},
        "split_indices": sweep.split_indices,
        "cells": [c.to_json_dict() for c in sweep.cells],
        "ttests": [t.to_json_dict() for t in ttests],
        "footnotes": list(_FOOTNOTES),
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append("report.json")

    if sweep.samples_clean:
        os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
        for view_idx, img in sorted(sweep.samples_clean.items()):
            name = f"samples/clean_{view_idx}.ppm"
            write_ppm(img, os.path.join(out_dir, name))
            written.append(name)
        for (family, eps, view_idx), img in sorted(sweep.samples.items()):
            name = f"samples/{family}_{_fmt_eps(eps)}_{view_idx}.ppm"
            write_ppm(img, os.path.join(out_dir, name))
            written.append(name)

    return sorted(written)
