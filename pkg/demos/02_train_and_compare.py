"""Train ID-Miner on the desk corpus and compare it with the mean-feature reference classifier.

The reference classifier does well when forged videos are compared with plain genuine
ones, and collapses once the genuine side carries the same artifacts (self-deepfakes).

Run:  python3 demos/02_train_and_compare.py [--epochs 150] [--out runs/desk.ckpt]
"""

# %%
import argparse
import time

from idminer import protocols as P
from idminer.baseline import fit_baseline
from idminer.synth import GenerationConfig, build_rddp_dataset
from idminer.trainer import TrainConfig, default_model_config, save_checkpoint, train

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=150)
ap.add_argument("--out", default=None, help="optional checkpoint path, reused by demo 03")
args = ap.parse_args()

ds = build_rddp_dataset(GenerationConfig(), seed=7).dataset()

# %% Ten steps make an epoch here; print every hundred.
t0 = time.perf_counter()


def progress(step, row):
    if (step + 1) % 100 == 0:
        print(f"step {row[0]:5d}  L_id {row[1]:.3f}  L_art {row[2]:.3f}  total {row[3]:.3f}")


result = train(ds, TrainConfig(epochs=args.epochs), model_config=default_model_config(ds), on_step=progress)
print(f"trained {result.model.store.step_count} steps in {time.perf_counter() - t0:.0f} s")
if args.out:
    save_checkpoint(result, args.out)

# %% ID-Miner compares a probe with a genuine reference of the face it shows.
scorer = P.IDMinerScorer(result.model)
clf = fit_baseline(ds)
print(f"{'':12s}{'conventional':>14s}{'whitehat':>10s}")
for name, sc, mode in (("ID-Miner", scorer, P.REFERENCE_BASED), ("reference", clf, P.REFERENCE_FREE)):
    conv = P.evaluate(sc, ds, P.ProtocolKind(P.CONVENTIONAL, mode)).auc
    wh = P.evaluate(sc, ds, P.ProtocolKind(P.WHITEHAT, mode)).auc
    print(f"{name:12s}{conv:14.3f}{wh:10.3f}   drop {(conv - wh) / conv:+.1%}")

# %% Who is really moving the face? Re-identify the puppeteer behind each forgery.
for name, rep in (("ID-Miner", result.model.represent), ("reference", clf.represent)):
    r = P.evaluate_reid(rep, ds)
    print(f"{name:12s}Rank-1 {r.rank1:.3f}  Rank-5 {r.rank5:.3f}  mAP {r.mAP:.3f}")
