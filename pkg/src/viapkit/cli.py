"""Command-line pipeline: dataset | train | attack | sweep | verify.

Every subcommand resolves its configuration from defaults <- JSON config
file <- explicit flags (flags win), prints the resolved config, and writes
it verbatim as config.json into the output directory. Nothing here reads
wall-clock time or any other ambient randomness, so a fixed config + seed
reproduces every output byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from viapkit import attacks, evaluate, nn, render
from viapkit import train as train_mod

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_GATE = 3

DEFAULT_DATASET_CFG = {
    "classes": list(render.CLASS_KINDS),
    "objects_per_class": 4,
    "views_per_object": 10,
    "train_views": None,
    "seed": 7,
    "jitter_frac": 0.15,
    "axis_restrict": "theta",
    "image_size": render.IMG_SIZE,
    "camera_radius": 3.0,
}

DEFAULT_TRAIN_CFG = {
    "epochs": train_mod.DEFAULT_EPOCHS,
    "batch_size": train_mod.DEFAULT_BATCH,
    "lr": train_mod.DEFAULT_LR,
    "momentum": train_mod.DEFAULT_MOMENTUM,
    "seed": 0,
}

DEFAULT_SWEEP_CFG = {
    "eps_grid": list(evaluate.DEFAULT_EPS_GRID),
    "families": list(attacks.FAMILIES),
    "iterations": attacks.DEFAULT_ITERATIONS,
    "rho": attacks.DEFAULT_RHO,
    "step": None,
    "literal_eq_step": False,
    "ttest_eps": 5.0,
    "gate_train": 0.95,
    "gate_test": 0.90,
    "jobs": 1,
}


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def _merge(defaults: dict, *overrides: dict) -> dict:
    out = dict(defaults)
    for layer in overrides:
        for k, v in layer.items():
            if v is not None or k in out and out[k] is None:
                out[k] = v
    return out


def _echo_config(cfg: dict, out_dir) -> None:
    text = json.dumps(cfg, indent=2, sort_keys=True)
    print("resolved config:")
    print(text)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            fh.write(text + "\n")


def _parse_eps(text: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ValueError(f"--eps expects a comma-separated list of numbers: {exc}") from exc


def _parse_target(text: str):
    if text == "random":
        return "random"
    return int(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_dataset(args) -> int:
    file_cfg = _load_config_file(args.config).get("dataset", _load_config_file(args.config))
    cfg = _merge(DEFAULT_DATASET_CFG, file_cfg, {"seed": args.seed})
    out = args.out or "runs/dataset"
    _echo_config(cfg, out)
    ds = render.generate_dataset(
        out_dir=out,
        classes=tuple(cfg["classes"]),
        objects_per_class=cfg["objects_per_class"],
        views_per_object=cfg["views_per_object"],
        train_views=cfg["train_views"],
        seed=cfg["seed"],
        jitter_frac=cfg["jitter_frac"],
        axis_restrict=cfg["axis_restrict"],
        image_size=cfg["image_size"],
        camera_radius=cfg["camera_radius"],
    )
    n_train = int(ds.train_mask.sum())
    print(f"wrote {len(ds.labels)} views ({n_train} train / {len(ds.labels) - n_train} test) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _merge(DEFAULT_TRAIN_CFG, file_cfg.get("train", file_cfg), {"seed": args.seed})
    out = args.out or "runs/model"
    _echo_config(cfg, out)

    ds = render.load_dataset(args.dataset)
    tr, te = ds.indices("train"), ds.indices("test")
    params = train_mod.init_params(
        cfg["seed"], *ds.manifest.image_shape[:2], ds.manifest.image_shape[2], ds.n_classes
    )
    tcfg = train_mod.TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        momentum=cfg["momentum"], seed=cfg["seed"],
    )
    params, log = train_mod.train(
        params, ds.images[tr], ds.labels[tr], tcfg,
        val=(ds.images[te], ds.labels[te]),
    )
    nn.save_params(params, os.path.join(out, "weights.viapnet"))
    with open(os.path.join(out, "train_log.csv"), "w") as fh:
        fh.write(train_mod.log_csv(log))
    acc_tr, conf_tr = train_mod.evaluate_clean(params, ds.images[tr], ds.labels[tr])
    acc_te, conf_te = train_mod.evaluate_clean(params, ds.images[te], ds.labels[te])
    print(f"final train acc {acc_tr:.4f} (true softmax {conf_tr:.4f}), "
          f"test acc {acc_te:.4f} (true softmax {conf_te:.4f})")
    print(f"wrote weights.viapnet and train_log.csv to {out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _merge(
        {
            "family": "viap", "eps": [5.0], "iterations": None, "target": "random",
            "rho": attacks.DEFAULT_RHO, "step": None, "literal_eq_step": False,
            "seed": 0, "object": 0,
        },
        file_cfg.get("attack", file_cfg),
        {
            "family": args.family, "eps": args.eps, "iterations": args.iters,
            "target": args.target, "seed": args.seed, "object": args.object,
            "literal_eq_step": True if args.literal_eq_step else None,
        },
    )
    out = args.out or "runs/attack"
    _echo_config(cfg, out)

    ds = render.load_dataset(args.dataset)
    params = nn.load_params(args.weights)
    family = cfg["family"]
    eps = cfg["eps"][0] if isinstance(cfg["eps"], list) else float(cfg["eps"])
    o = cfg["object"]
    tr = ds.indices("train", object_id=o)
    te = ds.indices("test", object_id=o)
    if len(tr) == 0:
        raise ValueError(f"object {o} has no training views")
    imgs, lbls = ds.images[tr], ds.labels[tr]
    true_label = int(lbls[0])

    target = None
    if attacks.targeted(family):
        if cfg["target"] == "random":
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg["seed"], 101, o])))
            target = evaluate.draw_target(rng, true_label, ds.n_classes)
        else:
            target = int(cfg["target"])

    acfg = attacks.AttackConfig(
        family=family, eps=eps, step=cfg["step"], iterations=cfg["iterations"],
        target=target, rho=cfg["rho"], seed=cfg["seed"],
        literal_eq_step=cfg["literal_eq_step"],
    )

    if family in attacks.VIAP_FAMILIES:
        pert = attacks.viap_arrays(
            params, imgs, lbls, acfg, view_ids=ds.view_ids[tr].tolist()
        )
    else:
        if family == "fgsm":
            adv = attacks.fgsm_batch(params, imgs, lbls, eps)
        elif family == "fgsm-t":
            adv = attacks.fgsm_targeted_batch(params, imgs, target, eps)
        else:
            y = target if attacks.targeted(family) else lbls
            adv = attacks.bim_batch(params, imgs, y, acfg)
        noise = (adv - imgs).mean(axis=0)
        loss, _ = nn.softmax_cross_entropy(
            nn.forward(params, adv),
            np.full(len(lbls), target, dtype=np.int64) if target is not None else lbls,
        )
        pert = attacks.Perturbation(
            delta=noise, config=acfg, view_ids=ds.view_ids[tr].tolist(), final_loss=loss
        )

    attacks.save_perturbation(pert, os.path.join(out, "delta.viapdlt"))
    tracked_label = target if attacks.targeted(family) else true_label
    metrics = {"family": family, "eps": eps, "object": o, "true_label": true_label,
               "target": target, "final_loss": pert.final_loss}
    for split, idx in (("train", tr), ("test", te)):
        if len(idx) == 0:
            continue
        adv_split = pert.apply(ds.images[idx])
        probs = nn.softmax(nn.forward(params, adv_split))
        metrics[f"{split}_tracked_softmax"] = float(probs[:, tracked_label].mean())
        metrics[f"{split}_top1_true"] = evaluate.top1_accuracy(params, adv_split, ds.labels[idx])
        write_idx = int(idx[0])
        render.write_ppm(ds.images[write_idx], os.path.join(out, f"clean_{split}_{write_idx}.ppm"))
        render.write_ppm(adv_split[0], os.path.join(out, f"adv_{split}_{write_idx}.ppm"))
    with open(os.path.join(out, "metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(metrics, sort_keys=True))
    print(f"wrote delta.viapdlt, metrics.json and sample ppms to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    file_cfg = _load_config_file(args.config)
    dataset_cfg = _merge(DEFAULT_DATASET_CFG, file_cfg.get("dataset", {}))
    train_cfg = _merge(DEFAULT_TRAIN_CFG, file_cfg.get("train", {}))
    sweep_cfg = _merge(
        DEFAULT_SWEEP_CFG,
        file_cfg.get("sweep", {}),
        {
            "eps_grid": args.eps, "iterations": args.iters, "jobs": args.jobs,
            "families": args.family.split(",") if args.family else None,
            "literal_eq_step": True if args.literal_eq_step else None,
        },
    )
    global_seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    out = args.out or "runs/sweep"
    resolved = {
        "seed": global_seed, "dataset": dataset_cfg, "train": train_cfg,
        "sweep": sweep_cfg,
    }
    _echo_config(resolved, out)

    if args.dataset:
        ds = render.load_dataset(args.dataset)
    else:
        ds = render.generate_dataset(
            out_dir=os.path.join(out, "dataset"),
            classes=tuple(dataset_cfg["classes"]),
            objects_per_class=dataset_cfg["objects_per_class"],
            views_per_object=dataset_cfg["views_per_object"],
            train_views=dataset_cfg["train_views"],
            seed=dataset_cfg["seed"],
            jitter_frac=dataset_cfg["jitter_frac"],
            axis_restrict=dataset_cfg["axis_restrict"],
            image_size=dataset_cfg["image_size"],
            camera_radius=dataset_cfg["camera_radius"],
        )

    if args.weights:
        params = nn.load_params(args.weights)
    else:
        tr, te = ds.indices("train"), ds.indices("test")
        params = train_mod.init_params(
            train_cfg["seed"], *ds.manifest.image_shape[:2],
            ds.manifest.image_shape[2], ds.n_classes,
        )
        tcfg = train_mod.TrainConfig(
            epochs=train_cfg["epochs"], batch_size=train_cfg["batch_size"],
            lr=train_cfg["lr"], momentum=train_cfg["momentum"], seed=train_cfg["seed"],
        )
        params, log = train_mod.train(
            params, ds.images[tr], ds.labels[tr], tcfg, val=(ds.images[te], ds.labels[te])
        )
        model_dir = os.path.join(out, "model")
        os.makedirs(model_dir, exist_ok=True)
        nn.save_params(params, os.path.join(model_dir, "weights.viapnet"))
        with open(os.path.join(model_dir, "train_log.csv"), "w") as fh:
            fh.write(train_mod.log_csv(log))

    scfg = evaluate.SweepConfig(
        eps_grid=tuple(sweep_cfg["eps_grid"]),
        families=tuple(sweep_cfg["families"]),
        iterations=sweep_cfg["iterations"],
        seed=global_seed,
        rho=sweep_cfg["rho"],
        step=sweep_cfg["step"],
        literal_eq_step=sweep_cfg["literal_eq_step"],
        ttest_eps=sweep_cfg["ttest_eps"],
        gate_train=sweep_cfg["gate_train"],
        gate_test=sweep_cfg["gate_test"],
        jobs=sweep_cfg["jobs"],
    )
    result = evaluate.confidence_sweep(params, ds, config=scfg)
    files = evaluate.emit_report(result, result.ttests, out)

    print(f"clean gate: train acc {result.clean['train_acc']:.4f}, "
          f"test acc {result.clean['test_acc']:.4f}")
    for t in result.ttests:
        print(f"t-test {t.label}: t={t.t:.4f} df={t.df:.2f} p={t.p_value:.3e}")
    print(f"wrote {len(result.cells)} cells to {out}: {', '.join(files)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except AssertionError as exc:
            checks.append((name, False, str(exc)))

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(12345)))

    def small_model(k=3):
        p = train_mod.init_params(99, 8, 8, 3, k)
        x = rng.uniform(0.05, 0.95, size=(3, 8, 8, 3))
        y = rng.integers(0, k, size=3)
        return p, x, y

    def chk_gradients():
        p, x, y = small_model()
        _, grad = nn.loss_and_input_grad(p, x, y)
        h = 1e-5
        for _ in range(25):
            i = tuple(int(rng.integers(0, s)) for s in x.shape)
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd = (nn.softmax_cross_entropy(nn.forward(p, xp), y)[0]
                  - nn.softmax_cross_entropy(nn.forward(p, xm), y)[0]) / (2 * h)
            denom = max(abs(fd), abs(grad[i]), 1e-3)
            assert abs(fd - grad[i]) / denom < 1e-6, f"input grad mismatch at {i}"

    def chk_shared_gradient():
        p, x, y = small_model()
        _, batch_grad = nn.loss_and_input_grad(p, x, y)
        summed = batch_grad.sum(axis=0)
        per_view = np.zeros(x.shape[1:])
        for i in range(x.shape[0]):
            _, g = nn.loss_and_input_grad(p, x[i : i + 1], y[i : i + 1])
            per_view += g[0] / x.shape[0]
        assert np.abs(summed - per_view).max() < 1e-10, "shared-gradient identity broken"

    def chk_ball():
        p, x, y = small_model()
        for _ in range(40):
            eps = float(rng.uniform(0.0, 50.0))
            cfg = attacks.AttackConfig(family="bim", eps=eps, iterations=3)
            seen = []
            attacks.bim_batch(p, x, y, cfg, trace=lambda n, adv: seen.append(adv.copy()))
            for adv in seen:
                assert np.abs(adv - x).max() <= eps / 255.0 + 1e-12, "ball violated"
                assert adv.min() >= 0.0 and adv.max() <= 1.0, "range violated"

    def chk_reductions():
        p, x, y = small_model()
        for i in range(x.shape[0]):
            eps = 4.0
            f = attacks.fgsm_batch(p, x[i : i + 1], y[i : i + 1], eps)
            cfg = attacks.AttackConfig(family="bim", eps=eps, iterations=1, literal_eq_step=True)
            b = attacks.bim_batch(p, x[i : i + 1], y[i : i + 1], cfg)
            assert np.array_equal(f, b), "bim(1, step=eps) != fgsm"

    def chk_welch():
        r = evaluate.welch_ttest([-2.0, -1.0, 0.0, 1.0, 2.0], [2.0, 1.0, 0.0, -1.0, -2.0])
        assert r.t == 0.0 and abs(r.p_value - 1.0) < 1e-12, "symmetric samples should give p=1"
        a, b = [1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 9.0]
        r1, r2 = evaluate.welch_ttest(a, b), evaluate.welch_ttest(b, a)
        assert abs(r1.p_value - r2.p_value) < 1e-15, "p not symmetric under swap"
        assert 0.0 < r1.p_value < 1.0, "p out of the open interval"

    check("gradient finite differences", chk_gradients)
    check("shared-perturbation gradient identity", chk_shared_gradient)
    check("eps-ball and pixel-range invariants", chk_ball)
    check("bim/fgsm reduction", chk_reductions)
    check("welch t-test sanity", chk_welch)

    failed = 0
    for name, ok, msg in checks:
        tag = "ok  " if ok else "FAIL"
        print(f"[{tag}] {name}" + (f" -- {msg}" if msg else ""))
        failed += 0 if ok else 1
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_INTERNAL


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="viapkit",
        description="view-invariant adversarial perturbation pipeline",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, dataset_required=False):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("dataset", help="render the multi-view dataset")
    common(p)

    p = sub.add_parser("train", help="train the victim classifier")
    common(p)
    p.add_argument("--dataset", default="runs/dataset", help="dataset directory")

    p = sub.add_parser("attack", help="craft a perturbation for one object")
    common(p)
    p.add_argument("--dataset", default="runs/dataset")
    p.add_argument("--weights", default="runs/model/weights.viapnet")
    p.add_argument("--family", choices=attacks.FAMILIES, default=None)
    p.add_argument("--eps", type=_parse_eps, default=None, help="comma list, 0-255 scale")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--target", type=_parse_target, default=None, help="label id or 'random'")
    p.add_argument("--object", type=int, default=None)
    p.add_argument("--literal-eq-step", action="store_true", help="force step = eps")

    p = sub.add_parser("sweep", help="full eps sweep over all families")
    common(p)
    p.add_argument("--dataset", default=None, help="existing dataset dir (else generated)")
    p.add_argument("--weights", default=None, help="existing weights file (else trained)")
    p.add_argument("--family", default=None, help="comma list restricting families")
    p.add_argument("--eps", type=_parse_eps, default=None, help="comma list, 0-255 scale")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="worker threads for crafting")
    p.add_argument("--literal-eq-step", action="store_true")

    p = sub.add_parser("verify", help="run the invariant suite")

    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "dataset": cmd_dataset,
        "train": cmd_train,
        "attack": cmd_attack,
        "sweep": cmd_sweep,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except evaluate.GateFailure as exc:
        print(json.dumps({"error": "gate-failure", "message": str(exc), "diag": exc.diag},
                         sort_keys=True), file=sys.stderr)
        return EXIT_GATE
    except (ValueError, OSError, json.JSONDecodeError, train_mod.TrainingDiverged) as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}, sort_keys=True),
              file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        print(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"},
                         sort_keys=True), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
