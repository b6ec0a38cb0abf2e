"""
Training a few-step sampler end to end
======================================

The generator predicts the clean clip x0 from a noisy x_t, a latent z and the
control track. Each training step draws t, builds a real pair
(x_{t-1}, x_t) from data and a fake pair from the generator's x0 estimate,
updates the discriminator on both, then updates the generator on the
nonsaturating adversarial loss plus lambda * Huber(x0_hat, x0).

This is a deliberately short run (about two minutes on one core) on a small
model, so the numbers are rough. configs/desk.ini has the recipe the
acceptance suite uses.

Run with:  python demos/04_train_a_few_step_sampler.py
"""

import numpy as np

from fastgesture import metrics
from fastgesture.models import ModelConfig
from fastgesture.sampling import SamplerSpec, benchmark, sample_batch
from fastgesture.synthdata import make_dataset
from fastgesture.training import Trainer, TrainConfig, fit

ds = make_dataset(1000, seed=0)
train, test = ds["train"], ds["test"]

small = ModelConfig(d_model=32, n_layers=1, n_heads=4, d_ff=64, disc_hidden=64)
cfg = TrainConfig(T=4, model=small, lr_g=1e-3, lr_d=1e-3, max_steps=600)

untrained = Trainer(cfg, train).model(ema=False)
log = []
res = fit(cfg, train, callback=lambda tr, rep: log.append(rep))
for rep in log[::100] + log[-1:]:
    print(f"step {rep.step:4d}  d_loss {rep.d_loss:.3f}  g_adv {rep.g_adv:.3f}  g_recon {rep.g_recon:.4f}")

# The sampler walks T -> 0: predict x0, draw x_{t-1} from the Gaussian
# posterior q(x_{t-1} | x_t, x0_hat), repeat. With T=4 that is four
# generator passes per clip.
fe = metrics.train_feature_extractor(train, ds["val"], epochs=10)
ref = fe.features(test.positions)
for name, model in (("untrained", untrained), ("trained", res.model)):
    gen = sample_batch(SamplerSpec(), model, test.tracks())
    fgd = metrics.frechet_distance(fe.features(gen), ref)
    print(f"{name:9s}  FGD {fgd:7.3f}  BA {metrics.mean_ba(test, gen):.3f}")
# BA of unstructured output is not zero: smoothed noise has speed minima
# everywhere, some near beats. A run this short fixes the pose distribution
# (FGD) well before it learns to stop exactly on the beat.
print("real BA   ", round(metrics.real_ba(test), 3))

# Different z, same control track: different gestures
multi = np.stack([sample_batch(SamplerSpec(seed=s), res.model, test.tracks()[:1])[0] for s in range(5)])
print("DIV over 5 seeds for one track: %.3f" % metrics.diversity(multi))

lat = benchmark(SamplerSpec(), res.model, test.tracks()[:8], repetitions=3)
print(f"{lat.ms_per_frame:.3f} ms per generated frame ({lat.steps} steps)")
