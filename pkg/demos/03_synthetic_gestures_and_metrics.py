"""
Synthetic gestures and how they are scored
==========================================

The dataset is a 4-bone planar arm whose swing reverses on every beat of a
control track, with a short random-sign pulse at each beat. Because the
chain is built by forward kinematics, bone lengths are known exactly and the
beat frames are known exactly, so both geometry and beat alignment can be
measured against ground truth.

Run with:  python demos/03_synthetic_gestures_and_metrics.py   (about a minute)
"""

import numpy as np

from fastgesture import metrics
from fastgesture.synthdata import bone_lengths, make_dataset

ds = make_dataset(1000, seed=0)
train, val, test = ds["train"], ds["val"], ds["test"]
print("clips per split:", len(train), len(val), len(test))
print("positions array:", test.positions.shape, "(clip, frame, joint, xy)")

clip = test.clip(0)
print("bone lengths of clip 0, every frame:", np.unique(np.round(bone_lengths(clip.positions), 12), axis=0))
print("beats of clip 0 at frames:", test.beat_frames[0], " style", test.styles[0])

# Kinematic beats are the places where the hand nearly stops. The swing
# also slows between beats, so there are more minima than beats; BA only
# asks that every control beat has one nearby.
found = metrics.kinematic_beats(test.positions[0])
print("detected speed minima:    ", found)
print("BA of clip 0 vs its own beats: %.3f" % metrics.beat_align(test.beat_frames[0], test.positions[0]))
print("BA over the real test set:     %.3f" % metrics.real_ba(test))

# Shift the motion by 3 frames and alignment drops.
shifted = np.roll(test.positions, 3, axis=1)
print("BA after a 3-frame shift:      %.3f" % metrics.mean_ba(test, shifted))

# FGD needs a feature space; here it is a small autoencoder trained on the
# training clips only.
fe = metrics.train_feature_extractor(train, val, epochs=15)
print("\nextractor reconstruction error  train %.4f  held-out %.4f" % (fe.train_error, fe.heldout_error))
f_test = fe.features(test.positions)
print("FGD val vs test      %.2f" % metrics.frechet_distance(fe.features(val.positions), f_test))
print("FGD shifted vs test  %.2f" % metrics.frechet_distance(fe.features(shifted), f_test))
# FGD compares distributions of whole clips, so a time shift (which keeps
# the set of poses) and small jitter barely move it, while noise does.
rng = np.random.default_rng(0)
jitter = test.positions + 0.05 * rng.standard_normal(test.positions.shape)
print("FGD jittered vs test %.2f" % metrics.frechet_distance(fe.features(jitter), f_test))
noise = rng.normal(test.positions.mean(axis=0), test.positions.std(), test.positions.shape)
print("FGD noise vs test    %.2f" % metrics.frechet_distance(fe.features(noise), f_test))

# Diversity: mean pairwise L1 distance between clips
print("\nDIV of five different test clips: %.3f" % metrics.diversity(test.positions[:5]))
print("DIV of one clip repeated:         %.3f" % metrics.diversity(np.stack([test.positions[0]] * 5)))
