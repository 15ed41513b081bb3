"""How ID-Miner's AUC degrades as surrogate perturbations grow (both sides perturbed alike).

Run:  python3 demos/03_surrogate_sweep.py runs/desk.ckpt
      (checkpoint from demo 02 or `idminer train`)
"""

# %%
import sys

from idminer import protocols as P
from idminer.model import load_checkpoint
from idminer.synth import SURROGATE_KINDS, GenerationConfig, SurrogateSpec, build_rddp_dataset

model, _ = load_checkpoint(sys.argv[1])
ds = build_rddp_dataset(GenerationConfig(), seed=7).dataset()
scorer = P.IDMinerScorer(model)

# %% Level 0 is the unperturbed test set, so it reproduces the conventional AUC.
print("conventional", round(P.evaluate(scorer, ds, P.ProtocolKind(P.CONVENTIONAL)).auc, 4))
print(f"{'kind':14s}" + "".join(f"{'L' + str(lv):>8s}" for lv in range(6)))
for kind in SURROGATE_KINDS:
    row = [P.evaluate(scorer, ds, P.ProtocolKind(P.SURROGATE, surrogate=SurrogateSpec(kind, lv))).auc
           for lv in range(6)]
    print(f"{kind:14s}" + "".join(f"{v:8.3f}" for v in row))

# Blur and resize remove the fast action components the identity signal lives in, so
# they hurt most; quantization (jpeg) keeps the timing and hurts least.
