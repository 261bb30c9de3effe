import json, time
import numpy as np
from mslstm.architecture import SequenceSpec, preset
from mslstm.datasets import MovingSpec, generate_moving
from mslstm.training import TrainConfig, train, evaluate, CopyLastBaseline

tr = generate_moving(MovingSpec(count=1000, digits=1, frames=6, canvas=32, glyph=16,
                                speed_min=2.0, speed_max=4.0, seed=1000))
te = generate_moving(MovingSpec(count=200, digits=1, frames=6, canvas=32, glyph=16,
                                speed_min=2.0, speed_max=4.0, seed=9000), split="test")
seq = SequenceSpec(3, 3)
base = evaluate(CopyLastBaseline(), te, seq)
print(f"persistence baseline: mse={base.overall['mse']:.2f} ssim={base.overall['ssim']:.3f}", flush=True)

out = {}
for name in ("convlstm6", "ms6"):
    cfg = TrainConfig(lr=3e-4, batch=4, epochs=5, seed=0, dtype="float32")
    t0 = time.time()
    result = train(preset(name, hidden=8), tr, seq, cfg)
    rep = evaluate(result.model, te, seq)
    out[name] = {"mse": rep.overall["mse"], "ssim": rep.overall["ssim"], "t": time.time()-t0,
                 "losses": [round(h["mean_loss"],4) for h in result.history]}
    print(f"{name}: mse={rep.overall['mse']:.2f} ssim={rep.overall['ssim']:.3f} "
          f"t={out[name]['t']:.0f}s losses={out[name]['losses']}", flush=True)
gap = 1 - out["ms6"]["mse"]/out["convlstm6"]["mse"]
print(f"GAP at N=1000 protocol: {gap*100:.1f}%", flush=True)
json.dump(out, open("/root/pkg/.calib/result2.json","w"), indent=1)
print("DONE")
