import numpy as np
import pytest

from fastgesture.models import GestureModel, ModelConfig, Normalizer, init_generator
from fastgesture.numerics import NumericalError
from fastgesture.sampling import (
    LatencyReport,
    SamplerSpec,
    batch_generate,
    benchmark,
    denoise,
    sample,
    sample_batch,
)
from fastgesture.schedule import make_schedule
from fastgesture.synthdata import make_dataset

CFG = ModelConfig(d_model=32, n_layers=2, n_heads=2, d_ff=64, d_z=8)


@pytest.fixture(scope="module")
def data():
    return make_dataset(40, seed=1)


def _model(T, data, kind="geometric-alpha", cfg=CFG, seed=0):
    norm = Normalizer.fit(data["train"].features())
    params = init_generator(cfg, np.random.default_rng(seed))
    return GestureModel(cfg, params, norm, make_schedule(T, kind))


@pytest.fixture(scope="module")
def model10(data):
    return _model(10, data)


# ---------------------------------------------------------------- spec


def test_spec_validation():
    with pytest.raises(ValueError):
        SamplerSpec(kind="euler")
    with pytest.raises(ValueError):
        SamplerSpec(steps=0)
    with pytest.raises(ValueError):
        SamplerSpec(eta=1.5)


def test_timesteps():
    assert np.array_equal(SamplerSpec().timesteps(5), [5, 4, 3, 2, 1, 0])
    ts = SamplerSpec("ddim", steps=4).timesteps(20)
    assert ts[0] == 20 and ts[-1] == 0 and np.all(np.diff(ts) < 0) and len(ts) == 5
    with pytest.raises(ValueError):
        SamplerSpec("ddim", steps=30).timesteps(20)
    with pytest.raises(ValueError):
        SamplerSpec("gan_fewstep", steps=5).timesteps(10)


# ---------------------------------------------------------------- sampling


def test_same_seed_same_clip(model10, data):
    track = data["test"].track(0)
    a = sample(SamplerSpec(seed=3), model10, track)
    b = sample(SamplerSpec(seed=3), model10, track)
    assert a.positions.tobytes() == b.positions.tobytes()
    assert a.positions.shape == (80, 5, 2) and a.angles.shape == (80, 4)
    c = sample(SamplerSpec(seed=4), model10, track)
    assert c.positions.tobytes() != a.positions.tobytes()


def test_single_step_is_one_generator_pass(data):
    m = _model(1, data)
    tracks = data["test"].tracks()[:3]
    tb = m.tracks(tracks)
    out = sample_batch(SamplerSpec(seed=5), m, tb)
    rng = np.random.default_rng(5)
    x_T = rng.standard_normal((3,) + CFG.gesture_shape)
    z = rng.standard_normal((3, CFG.d_z))
    direct = m.normalizer.decode(m.predict_x0(x_T, z, tb, np.full(3, 1))).reshape(out.shape)
    assert np.array_equal(out, direct)


def test_ddim_and_ancestral_run(data):
    m = _model(20, data, "linear")
    tracks = data["test"].tracks()[:2]
    for spec in (SamplerSpec("ddim", steps=5), SamplerSpec("ddim", steps=5, eta=1.0), SamplerSpec("ancestral")):
        out = sample_batch(spec, m, tracks)
        assert out.shape == (2, 80, 5, 2) and np.isfinite(out).all()


def test_nan_parameters_are_rejected(data):
    m = _model(5, data)
    m.params["out_b"].data[0] = np.nan
    with pytest.raises(NumericalError):
        sample_batch(SamplerSpec(), m, data["test"].tracks()[:1])


class _GaussianOracle:
    """Stands in for a generator that returns the exact E[x0 | x_t] of N(m, s^2) data."""

    def __init__(self, schedule, m, s):
        self.cfg = ModelConfig(n_frames=4, n_joints=1, d_model=8, n_heads=2, disc_hidden=8, disc_groups=2, seed_frames=2)
        self.schedule, self.m, self.s = schedule, m, s

    def predict_x0(self, x_t, z, tracks, t, null_mask=False):
        ab = self.schedule.alpha_bars[np.asarray(t)][:, None, None]
        gain = np.sqrt(ab) * self.s**2 / (ab * self.s**2 + 1 - ab)
        return self.m + gain * (x_t - np.sqrt(ab) * self.m)


class _Tracks:
    def __init__(self, n):
        self.n = n

    def __len__(self):
        return self.n


@pytest.mark.parametrize("variance", ["beta", "posterior"])
def test_ancestral_sampling_reproduces_gaussian_data(variance):
    m, s, n = 0.6, 0.5, 10_000
    oracle = _GaussianOracle(make_schedule(1000, "linear", variance), m, s)
    x = denoise(SamplerSpec("ancestral"), oracle, _Tracks(n), np.random.default_rng(0))[:, 0, 0]
    assert abs(x.mean() - m) < 3 * s / np.sqrt(n)
    assert abs(x.var(ddof=1) - s * s) < 3 * s * s * np.sqrt(2 / (n - 1))


def test_ddim_eta0_deterministic_from_the_same_start(data):
    m = _model(20, data)
    tb = m.tracks(data["test"].tracks()[:2])
    spec = SamplerSpec("ddim", steps=4)
    a = denoise(spec, m, tb, np.random.default_rng(9))
    b = denoise(spec, m, tb, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------- batch generation


def test_batch_generate_reproducible_and_order_free(model10, data):
    tracks = data["test"].tracks()[:3]
    a = batch_generate(SamplerSpec(seed=2), model10, tracks, 2)
    b = batch_generate(SamplerSpec(seed=2), model10, tracks, 2)
    assert a.shape == (3, 2, 80, 5, 2) and a.tobytes() == b.tobytes()
    rev = batch_generate(SamplerSpec(seed=2), model10, tracks[::-1], 2)
    assert np.array_equal(rev[::-1], a)
    for i in range(3):
        assert np.abs(a[i, 0] - a[i, 1]).sum() > 0
    with pytest.raises(ValueError):
        batch_generate(SamplerSpec(), model10, tracks, 0)


# ---------------------------------------------------------------- latency


def test_latency_report_accounting(model10, data):
    rep = benchmark(SamplerSpec(), model10, data["test"].tracks()[:2], repetitions=2)
    assert isinstance(rep, LatencyReport)
    assert rep.frames == 160 and rep.steps == 10 and len(rep.step_ms) == 10 and len(rep.rep_ms) == 2
    assert rep.ms_per_frame == pytest.approx(rep.total_ms / rep.frames, rel=1e-12)
    assert rep.total_ms == pytest.approx(np.mean(rep.rep_ms), rel=1e-12)
    assert rep.row()[0] == "gan_fewstep" and len(rep.row()) == len(LatencyReport.HEADER)


def test_default_repetitions_is_five():
    import inspect

    assert inspect.signature(benchmark).parameters["repetitions"].default == 5


def test_more_steps_cost_more(data):
    cfg = ModelConfig()
    tracks = data["test"].tracks()[:4]
    reps = {T: benchmark(SamplerSpec(), _model(T, data, cfg=cfg), tracks, repetitions=5) for T in (10, 20, 50)}
    assert reps[50].ms_per_frame > reps[10].ms_per_frame
    ratio = reps[20].total_ms / reps[10].total_ms
    assert 1.6 <= ratio <= 2.4
