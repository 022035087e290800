"""Pilot: desk-scale table 1-3 pattern and timing (scratch, not shipped)."""
import sys
import time
import numpy as np
from survnn import simgen, trainer, baselines
from survnn.hazard import chf_discrepancy, batched_cum_hazard


def table_rep(family, n, cfg, seed):
    sc = simgen.SimScenario(family, target_censor_rate=0.4)
    gd = simgen.generate(sc, n, seed=seed)
    res = trainer.fit(gd.data, cfg)
    test = gd.data.subset(res.test_indices)
    trainval = gd.data.subset(np.sort(np.concatenate([res.train_indices, res.val_indices])))
    dnn_d = chf_discrepancy(gd.true_cum_hazard,
                            lambda t, x: batched_cum_hazard(res.model, t, x), test)
    if family.startswith("cox"):
        base = baselines.fit_cox(trainval)
    elif family.startswith("ah"):
        base = baselines.fit_ah(trainval)
    else:
        base = baselines.fit_aft_normal(trainval)
    base_d = chf_discrepancy(gd.true_cum_hazard, base.cum_hazard, test)
    return dnn_d, base_d, res


if __name__ == "__main__":
    name = sys.argv[1]
    cfg = trainer.TrainConfig(
        depth_grid=tuple(int(v) for v in sys.argv[2].split(",")),
        width_grid=tuple(int(v) for v in sys.argv[3].split(",")),
        lr_grid=tuple(float(v) for v in sys.argv[4].split(",")),
        max_epochs=int(sys.argv[5]), patience=int(sys.argv[6]))
    fams = sys.argv[7].split(",") if len(sys.argv) > 7 else ["cox_i", "cox_ii", "ah_i", "ah_ii", "aft_i", "aft_ii"]
    nseeds = int(sys.argv[8]) if len(sys.argv) > 8 else 3
    print("==", name, flush=True)
    for fam in fams:
        t0 = time.time()
        ds, bs, eps = [], [], []
        for seed in range(nseeds):
            d, b, res = table_rep(fam, 1000, cfg, 100 + seed)
            ds.append(d); bs.append(b); eps.append(res.epochs_run)
        print(f"  {fam}: dnn={np.median(ds):.4f} classical={np.median(bs):.4f} "
              f"ratio={np.median(bs) / np.median(ds):.2f} ({(time.time() - t0) / nseeds:.1f}s/rep, "
              f"epochs {eps})", flush=True)
