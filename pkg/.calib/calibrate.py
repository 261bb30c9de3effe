import json, time
import numpy as np
from mslstm.architecture import SequenceSpec, preset
from mslstm.datasets import MovingSpec, generate_moving
from mslstm.training import TrainConfig, train, evaluate

def protocol(n_train, n_test, frames, m, n, lr, seeds, epochs=5, speed=(2.0,4.0), tag=""):
    out = {}
    for seed in seeds:
        tr = generate_moving(MovingSpec(count=n_train, digits=1, frames=frames, canvas=32,
                                        glyph=16, speed_min=speed[0], speed_max=speed[1], seed=1000+seed))
        te = generate_moving(MovingSpec(count=n_test, digits=1, frames=frames, canvas=32,
                                        glyph=16, speed_min=speed[0], speed_max=speed[1], seed=9000+seed), split="test")
        seq = SequenceSpec(m, n)
        row = {}
        for name in ("convlstm6", "ms6"):
            cfg = TrainConfig(lr=lr, batch=4, epochs=epochs, seed=seed, dtype="float32")
            t0 = time.time()
            result = train(preset(name, hidden=8), tr, seq, cfg)
            rep = evaluate(result.model, te, seq)
            row[name] = {"mse": rep.overall["mse"], "ssim": rep.overall["ssim"],
                         "train_s": round(time.time()-t0,1),
                         "losses": [round(h["mean_loss"],4) for h in result.history]}
            print(f"[{tag} seed{seed}] {name}: mse={rep.overall['mse']:.2f} ssim={rep.overall['ssim']:.3f} "
                  f"t={row[name]['train_s']}s losses={row[name]['losses']}", flush=True)
        gap = 1 - row["ms6"]["mse"]/row["convlstm6"]["mse"]
        print(f"[{tag} seed{seed}] GAP: {gap*100:.1f}%", flush=True)
        out[seed] = row
    return out

res = protocol(300, 100, frames=6, m=3, n=3, lr=3e-4, seeds=[0], tag="m3n3-lr3e-4")
res2 = protocol(300, 100, frames=6, m=3, n=3, lr=1e-3, seeds=[0], tag="m3n3-lr1e-3")
json.dump({"a": res, "b": res2}, open("/root/pkg/.calib/result1.json","w"), indent=1)
print("DONE")
