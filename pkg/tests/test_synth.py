import numpy as np
import pytest

from lossbench import analysis, synth


def test_rng_streams_are_deterministic_and_independent():
    a = synth.uniforms(3, synth.STREAM_NOISE, 1000)
    assert np.array_equal(a, synth.uniforms(3, synth.STREAM_NOISE, 1000))
    assert not np.array_equal(a, synth.uniforms(3, synth.STREAM_CELLS, 1000))
    assert not np.array_equal(a, synth.uniforms(4, synth.STREAM_NOISE, 1000))
    assert a.min() >= 0 and a.max() < 1
    z = synth.normals(1, synth.STREAM_NOISE, 200000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


def test_grf_slope_follows_index():
    for index in [-1.0, -2.0]:
        f = synth.gaussian_random_field(64, 64.0, index=index, seed=11)
        s = analysis.power_spectrum(f, 64.0, contrast=False)
        sel = (s.k_bins > 0.3) & (s.k_bins < 2.0)
        slope = np.polyfit(np.log(s.k_bins[sel]), np.log(s.pk[sel]), 1)[0]
        assert slope == pytest.approx(index, abs=0.15)


def test_lognormal_density_positive_with_mean():
    g = synth.gaussian_random_field(32, 1.0, seed=2)
    rho = synth.lognormal_density(g, mean=3.0)
    assert rho.values.min() > 0
    x = g.values.astype(np.float64)
    assert np.allclose(rho.values, 3.0 * np.exp(x - x.var() / 2), rtol=1e-6)


def test_nyx_like_fields():
    fields = synth.nyx_like(16, 16.0, seed=5)
    assert tuple(fields) == synth.NYX_FIELDS
    for name in synth.NYX_DENSITY_FIELDS + ("temperature",):
        assert fields[name].values.min() > 0
    for f in fields.values():
        assert f.dims == (16, 16, 16) and np.isfinite(f.values).all()
    again = synth.nyx_like(16, 16.0, seed=5)
    assert all(np.array_equal(fields[k].values, again[k].values) for k in fields)
    other = synth.nyx_like(16, 16.0, seed=6)
    assert not np.array_equal(fields["temperature"].values, other["temperature"].values)


def test_hacc_like_particles_cluster():
    p = synth.hacc_like(8192, 128.0, grid=16, seed=1)
    assert len(p) == 8192
    pos = p.positions
    assert pos.min() >= 0 and pos.max() < 128.0
    cat = analysis.fof_halos(p)
    assert len(cat.halos) >= 5
    q = synth.hacc_like(8192, 128.0, grid=16, seed=1)
    assert np.array_equal(q.positions, pos)
