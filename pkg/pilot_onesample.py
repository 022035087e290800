"""Pilot: one-sample test size/power at desk scale (scratch, not shipped)."""
import sys
import time
import numpy as np
from survnn import simgen, trainer, infer
from survnn.infer import WeightSpec, one_sample_test


def one_rep(data_family, null_family, n, cfg, seed, spec):
    sc = simgen.SimScenario(data_family, target_censor_rate=0.4)
    gd = simgen.generate(sc, n, seed=seed)
    res = trainer.fit(gd.data, cfg)
    eval_data = gd.data.subset(res.train_indices)
    null_sc = simgen.SimScenario(null_family, target_censor_rate=0.4)
    g0 = null_sc.true_log_hazard
    return one_sample_test(eval_data, res.model, g0, spec)


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
    reps = int(sys.argv[2]) if len(sys.argv) > 2 else 30
    depth = int(sys.argv[3]) if len(sys.argv) > 3 else 2
    width = int(sys.argv[4]) if len(sys.argv) > 4 else 32
    mb = int(sys.argv[5]) if len(sys.argv) > 5 else 64
    cfg = trainer.TrainConfig(depth_grid=(depth,), width_grid=(width,), lr_grid=(3e-3,),
                              max_epochs=400, patience=40, minibatch=mb,
                              split=(0.8, 0.2, 0.0), allow_empty_test=True)
    spec = WeightSpec(0, 0)
    t0 = time.time()
    zs, rej = [], []
    for rep in range(reps):
        rpt = one_rep("cox_test", "cox_test", n, cfg, 5000 + rep, spec)
        zs.append(rpt.z); rej.append(rpt.reject)
    print(f"size pilot n={n} d{depth}w{width}mb{mb}: reject={np.mean(rej):.3f} "
          f"mean z={np.mean(zs):.3f} sd z={np.std(zs):.3f} ({(time.time()-t0)/reps:.1f}s/rep)")
    t0 = time.time()
    rej2 = []
    for rep in range(max(reps // 2, 10)):
        rpt = one_rep("ah_test", "cox_test", n, cfg, 7000 + rep, spec)
        rej2.append(rpt.reject)
    print(f"power AH-data vs Cox-null: reject={np.mean(rej2):.3f} ({(time.time()-t0)/len(rej2):.1f}s/rep)")
