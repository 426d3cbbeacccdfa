"""Craft one view-invariant perturbation and watch it transfer across views.

The delta is optimized only on an object's training views, then applied,
unchanged, to held-out views of the same object. The fgsm-mean column is the
obvious per-image recipe for a universal noise — average the object's
per-view FGSM deltas and reuse that — and it is the natural foil: the sign
patterns decorrelate across poses, so their mean is incoherent, while the
shared-gradient delta was a single pattern to begin with.
"""

import argparse
import os

import numpy as np

from viapkit import attacks, nn, render
from viapkit import train as train_mod


def true_softmax(params, images, labels):
    probs = nn.softmax(nn.forward(params, images))
    return probs[np.arange(len(labels)), labels]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--weights", default=None, help="trained weights (else trains here)")
    ap.add_argument("--object", type=int, default=8)
    ap.add_argument("--eps", type=float, default=5.0, help="budget, 0-255 scale")
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--out", default="demo_out/perturbation")
    args = ap.parse_args()

    ds = render.generate_dataset(seed=7)
    if args.weights:
        params = nn.load_params(args.weights)
    else:
        tr = ds.indices("train")
        params, _ = train_mod.train(train_mod.init_params(0), ds.images[tr],
                                    ds.labels[tr], train_mod.TrainConfig())

    views_tr = [ds.view(int(i)) for i in ds.indices("train", object_id=args.object)]
    views_te = [ds.view(int(i)) for i in ds.indices("test", object_id=args.object)]
    label = views_tr[0].label
    print(f"object {args.object} (class {label}, {render.CLASS_KINDS[label]}): "
          f"{len(views_tr)} crafting views, {len(views_te)} held out, eps={args.eps:g}/255")

    cfg = attacks.AttackConfig(family="viap", eps=args.eps, iterations=args.iters)

    def progress(n, delta, loss, g):
        if (n + 1) % 5 == 0 or n == 0:
            print(f"  iter {n + 1:>3}  batch loss {loss:.4f}  |delta|_inf "
                  f"{np.abs(delta).max() * 255:.2f}/255")

    pert = attacks.viap(params, views_tr, cfg, trace=progress)

    # per-image baseline: mean of the crafting views' own FGSM deltas
    xc, yc = render.stack_views(views_tr)
    fgsm_delta = (attacks.fgsm_batch(params, xc, yc, args.eps) - xc).mean(axis=0)

    print(f"\n{'view':>6} {'split':>6} {'clean':>8} {'viap':>8} {'fgsm-mean':>9}")
    for views, split in ((views_tr, "train"), (views_te, "test")):
        x, y = render.stack_views(views)
        clean = true_softmax(params, x, y)
        adv = true_softmax(params, pert.apply(x), y)
        carried = true_softmax(params, attacks.apply_delta(fgsm_delta, x), y)
        for v, view in enumerate(views):
            print(f"{view.view_id:>6} {split:>6} {clean[v]:8.4f} {adv[v]:8.4f} "
                  f"{carried[v]:9.4f}")

    os.makedirs(args.out, exist_ok=True)
    attacks.save_perturbation(pert, os.path.join(args.out, "delta.viapdlt"))
    x, _ = render.stack_views(views_te)
    render.write_ppm(x[0], os.path.join(args.out, "clean.ppm"))
    render.write_ppm(pert.apply(x[0]), os.path.join(args.out, "adv.ppm"))
    # the raw field is tiny; rescale to full range so it is visible at all
    d = pert.delta
    render.write_ppm((d - d.min()) / max(np.ptp(d), 1e-12),
                     os.path.join(args.out, "delta_rescaled.ppm"))
    print(f"\nartifacts -> {args.out}")


if __name__ == "__main__":
    main()
