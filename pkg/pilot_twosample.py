"""Pilot: two-sample test size/power at desk scale (scratch, not shipped)."""
import sys
import time
import numpy as np
from survnn import simgen, trainer
from survnn.infer import WeightSpec, two_sample_test


def rep_pair(family, c, n, cfg, rep_seed, weights):
    ss = np.random.SeedSequence([rep_seed, 17])
    s1, s2, f1, f2 = [int(v) for v in ss.generate_state(4)]
    sc1 = simgen.SimScenario(family, target_censor_rate=0.4)
    sc2 = simgen.SimScenario(family, shift_c=c, target_censor_rate=0.4)
    # common random numbers across c: sample-2 seed does not depend on c
    gd1 = simgen.generate(sc1, n, seed=s1)
    gd2 = simgen.generate(sc2, n, seed=s2)
    tau = max(gd1.data.tau, gd2.data.tau)
    d1 = gd1.data.with_tau(tau)
    d2 = gd2.data.with_tau(tau)
    r1 = trainer.fit(d1, cfg.__class__(**{**cfg.to_dict(), "seed": f1}))
    r2 = trainer.fit(d2, cfg.__class__(**{**cfg.to_dict(), "seed": f2}))
    e1 = d1.subset(r1.train_indices)
    e2 = d2.subset(r2.train_indices)
    return [two_sample_test(e1, e2, r1.model, r2.model, w) for w in weights]


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
    reps = int(sys.argv[2]) if len(sys.argv) > 2 else 25
    all_w = len(sys.argv) > 3 and sys.argv[3] == "allw"
    weights = [WeightSpec(0, 0), WeightSpec(1, 0), WeightSpec(0.5, 0.5), WeightSpec(1, 1)] if all_w \
        else [WeightSpec(0, 0)]
    cfg = trainer.TrainConfig(depth_grid=(1,), width_grid=(16,), lr_grid=(3e-3,),
                              max_epochs=400, patience=40, minibatch=64,
                              split=(0.8, 0.2, 0.0), allow_empty_test=True)
    for c in (0.0, 0.125, 0.25, 0.5):
        t0 = time.time()
        rej = np.zeros(len(weights))
        for rep in range(reps):
            reports = rep_pair("cox_test", c, n, cfg, 9000 + rep, weights)
            rej += [r.reject for r in reports]
        rates = ", ".join(f"{w.label}={r / reps:.2f}" for w, r in zip(weights, rej))
        print(f"c={c}: {rates} ({(time.time() - t0) / reps:.1f}s/rep)", flush=True)
