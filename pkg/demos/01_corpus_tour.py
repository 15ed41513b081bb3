"""A walk through the synthetic corpus: identities, deepfakes, self-deepfakes, surrogates.

Run:  python3 demos/01_corpus_tour.py
"""

# %%
import numpy as np

from idminer import data as D
from idminer.synth import GenerationConfig, SurrogateSpec, apply_surrogate, build_rddp_dataset

corpus = build_rddp_dataset(GenerationConfig(), seed=7)
m = corpus.manifest
print("train identities:", m.split["train"])
print("test identities: ", m.split["test"])
for tag in (D.GENUINE, D.FORGED, D.RECONSTRUCTED):
    print(f"{tag:>14}: {len(m.entries(tag=tag))} videos")

# %% One genuine video and the two deepfakes it drove.
gen = m.entries(tag=D.GENUINE)[0]
kids = [vid for vid, drv in m.metadata["driving"].items() if drv == gen.video_id]
for vid in [gen.video_id] + kids:
    e = m.by_id()[vid]
    print(f"{vid:32s} subject={e.subject} appearance={e.appearance} puppeteer={e.puppeteer} "
          f"({e.provenance.tag})")

# %% The forged video shows someone else's face, but the motion is the driver's.
g = corpus.records[gen.video_id].frames
forged = corpus.records[next(k for k in kids if k.startswith("forg"))]
recon = corpus.records[next(k for k in kids if k.startswith("recon"))]
print("per-AU mean shift, forged vs driver: ", np.round((forged.frames.mean(0) - g.mean(0))[:6], 3))
print("per-AU mean shift, recon vs driver:  ", np.round((recon.frames.mean(0) - g.mean(0))[:6], 3))
print("artifact pattern (first AUs):        ", np.round(corpus.signature.pattern[:6], 3))

# A self-deepfake keeps identity and appearance, so the only shift left is the artifact
# pattern; a detector that keys on the mean frame cannot tell it apart from a forgery
# in that respect.

# %% Centred dynamics survive the face swap almost untouched.
cg = g - g.mean(0)
n = min(len(cg), len(forged.frames))
cf = forged.frames[:n] - forged.frames[:n].mean(0)
print("correlation of centred AU01 tracks:", round(float(np.corrcoef(cg[:n, 0], cf[:, 0])[0, 1]), 3))

# %% Surrogate analogs: level 0 is a no-op, higher levels perturb more.
for kind in ("resize_analog", "jpeg_analog", "vc_analog", "blur_analog"):
    dist = [np.linalg.norm(apply_surrogate(corpus.records[gen.video_id], SurrogateSpec(kind, lv)).frames - g,
                           axis=1).mean() for lv in range(6)]
    print(f"{kind:14s}", " ".join(f"{d:.3f}" for d in dist))
