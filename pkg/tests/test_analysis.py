import itertools
import math

import numpy as np
import pytest

from lossbench import analysis as an
from lossbench.datamodel import ConfigError, DomainError, Field, ParticleSet


# ---------------------------------------------------------------- distortion

def _f(a, name="f"):
    return Field.from_array(name, np.asarray(a, dtype=np.float32))


def test_distortion_worked_example():
    q = an.distortion(_f([0, 1, 2, 3]), _f([0, 1, 2, 4]))
    assert q.mse == 0.25
    assert q.max_abs_err == 1.0
    assert q.psnr == pytest.approx(20 * math.log10(3 / 0.5))
    assert q.mre == pytest.approx((1 / 3) / 3)
    assert q.mre_zeros_excluded == 1


def test_distortion_special_cases():
    assert an.distortion(_f([1, 2]), _f([1, 2])).psnr == math.inf
    c = an.distortion(_f([5, 5, 5]), _f([5, 5, 6]))
    assert math.isnan(c.psnr) and c.psnr_flag == "constant_original"
    assert math.isnan(an.distortion(_f([0, 0]), _f([0, 1])).mre)
    with pytest.raises(DomainError):
        an.distortion(_f([1, 2]), _f([1, 2, 3]))


def test_distortion_matches_loop_oracle(rng):
    x = rng.normal(size=500).astype(np.float32)
    x[::7] = 0
    y = (x + rng.normal(scale=0.01, size=500)).astype(np.float32)
    xs, ys = [float(v) for v in x], [float(v) for v in y]
    mse = sum((a - b) ** 2 for a, b in zip(xs, ys)) / len(xs)
    nz = [(a, b) for a, b in zip(xs, ys) if a != 0]
    mre = sum(abs(a - b) / abs(a) for a, b in nz) / len(nz)
    q = an.distortion(_f(x), _f(y))
    assert q.mse == pytest.approx(mse, rel=1e-12)
    assert q.mre == pytest.approx(mre, rel=1e-12)
    assert q.psnr == pytest.approx(20 * math.log10((max(xs) - min(xs)) / math.sqrt(mse)))


def test_psnr_40db_example():
    x = np.linspace(0, 100, 1001)
    y = x + np.where(np.arange(1001) % 2 == 0, 1.0, -1.0)
    q = an.distortion(Field("x", (1001,), x.astype(np.float32)), Field("y", (1001,), y.astype(np.float32)))
    assert q.psnr == pytest.approx(40.0, abs=1e-4)


# ---------------------------------------------------------------- spectrum

def test_constant_field_has_zero_spectrum():
    s = an.power_spectrum(_f(np.full((8, 8, 8), 3.0)), 1.0)
    assert np.all(s.pk == 0)
    assert s.k_bins.tolist() == pytest.approx([2 * np.pi * m for m in range(1, 5)])


def test_single_cosine_lands_in_one_shell():
    n, L = 16, 2.0
    i = np.arange(n)
    a = 1.0 + 0.5 * np.cos(2 * np.pi * 3 * i / n)[:, None, None] * np.ones((n, n, n))
    s = an.power_spectrum(_f(a), L)
    hot = np.flatnonzero(s.pk > 1e-12)
    assert hot.tolist() == [2]  # shell 3
    # two modes of amplitude (0.5 / 2) * n**3 each, L**3 / N**2 normalization
    expected = 2 * (0.25 * n ** 3) ** 2 * L ** 3 / n ** 6 / s.mode_counts[2]
    assert s.pk[2] == pytest.approx(expected, rel=1e-5)


def _brute_spectrum(a, L):
    n = a.shape[0]
    d = a / a.mean() - 1.0
    idx = np.arange(n)
    sums = np.zeros(n // 2 + 1)
    cnt = np.zeros(n // 2 + 1)
    for m in itertools.product(range(n), repeat=3):
        mm = [v if v < n // 2 else v - n for v in m]
        r = int(np.rint(math.sqrt(sum(v * v for v in mm))))
        if not 1 <= r <= n // 2:
            continue
        ph = np.exp(-2j * np.pi * (m[0] * idx[:, None, None] + m[1] * idx[None, :, None]
                                   + m[2] * idx[None, None, :]) / n)
        dk = (d * ph).sum()
        sums[r] += abs(dk) ** 2 * L ** 3 / n ** 6
        cnt[r] += 1
    return sums[1:] / cnt[1:], cnt[1:]


def test_spectrum_matches_brute_dft(rng):
    a = np.exp(rng.normal(size=(8, 8, 8)) * 0.3).astype(np.float32)
    s = an.power_spectrum(_f(a), 5.0)
    pk, cnt = _brute_spectrum(a.astype(np.float64), 5.0)
    assert s.mode_counts.tolist() == cnt.astype(int).tolist()
    assert np.allclose(s.pk, pk, rtol=1e-9)


def test_parseval(rng):
    n, L = 12, 3.0
    a = rng.normal(size=(n, n, n))
    d = a - a.mean()
    dk = np.fft.fftn(d)
    # all modes including those past the reported shells
    assert (np.abs(dk) ** 2).sum() / n ** 3 == pytest.approx((d * d).sum())
    s = an.power_spectrum(_f(a), L, contrast=False)
    assert (s.pk * s.mode_counts).sum() * n ** 6 / L ** 3 <= (np.abs(dk) ** 2).sum() * (1 + 1e-5)


def test_pk_ratio_gate(rng):
    a = np.exp(rng.normal(size=(16, 16, 16)) * 0.5).astype(np.float32)
    s = an.power_spectrum(_f(a), 1.0)
    g = an.pk_ratio(s, s)
    assert g.verdict == "PASS" and np.allclose(g.ratios, 1.0)
    scaled = an.SpectrumCurve(s.k_bins, s.pk * 1.02, s.mode_counts, 1.0)
    assert an.pk_ratio(s, scaled, tol=0.01).verdict == "FAIL"
    assert an.pk_ratio(s, scaled, tol=0.03).verdict == "PASS"
    # shell 1 holds the 6 axis and 12 face-diagonal modes; below min_modes it is shown, not gated
    assert s.mode_counts[0] == 18
    tweak = s.pk.copy(); tweak[0] *= 2
    g = an.pk_ratio(s, an.SpectrumCurve(s.k_bins, tweak, s.mode_counts, 1.0), min_modes=19)
    assert g.verdict == "PASS" and g.ratios[0] == pytest.approx(2.0)
    with pytest.raises(DomainError):
        an.power_spectrum(_f(np.zeros((4, 4, 4))), 1.0)
    with pytest.raises(DomainError):
        an.power_spectrum(_f(np.ones((4, 4, 2))), 1.0)


def test_gate_excludes_zero_bins():
    g = an.ratio_gate("g", [1, 2, 3], [0, 2, 4], [5, 2, 4], 0.01)
    assert g.verdict == "PASS" and g.notes and np.isnan(g.ratios[0])
    assert an.ratio_gate("g", [1], [1], [1.0101], 0.01).verdict == "FAIL"


# ---------------------------------------------------------------- halos

def _ps(pos, box, vel=None):
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.zeros_like(pos) if vel is None else vel
    return ParticleSet.from_arrays(pos, vel, box)


def _brute_fof(pos, box, ll):
    n = len(pos)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i
    for i in range(n):
        for j in range(i + 1, n):
            d = np.abs(pos[i] - pos[j])
            d = np.minimum(d, box - d)
            if (d * d).sum() <= ll * ll:
                a, b = find(i), find(j)
                parent[max(a, b)] = min(a, b)
    return np.array([find(i) for i in range(n)])


def test_fof_threshold_and_periodic():
    box = 10.0
    pos = np.array([[1, 1, 1], [1.5, 1, 1], [5, 5, 5], [5.5001, 5, 5], [9.8, 1, 1], [0.2, 1, 1]])
    roots = an.fof_groups(pos, box, 0.5)
    assert roots.tolist() == [0, 0, 2, 3, 4, 4]  # last pair links across the boundary
    with pytest.raises(ConfigError):
        an.fof_groups(pos, box, 5.0)
    with pytest.raises(ConfigError):
        an.fof_groups(pos, box, 0.0)


def test_fof_chain_links_transitively():
    pos = np.array([[1 + 0.4 * i, 2, 2] for i in range(10)])
    assert set(an.fof_groups(pos, 20.0, 0.45).tolist()) == {0}
    assert len(set(an.fof_groups(pos, 20.0, 0.35).tolist())) == 10


@pytest.mark.parametrize("box,ll,n", [(10.0, 0.7, 300), (4.0, 1.9, 80), (3.0, 1.2, 60)])
def test_fof_matches_bruteforce(rng, box, ll, n):
    pos = rng.uniform(0, box, (n, 3)).astype(np.float32).astype(np.float64)
    assert np.array_equal(an.fof_groups(pos, box, ll), _brute_fof(pos, box, ll))


def _partition(roots):
    groups = {}
    for i, r in enumerate(roots):
        groups.setdefault(int(r), []).append(i)
    return sorted(tuple(g) for g in groups.values())


def test_fof_permutation_and_translation_invariant(rng):
    box, ll = 10.0, 0.8
    pos = rng.uniform(0, box, (400, 3))
    base = _partition(an.fof_groups(pos, box, ll))
    perm = rng.permutation(400)
    back = _partition(perm[np.array(an.fof_groups(pos[perm], box, ll))][np.argsort(perm)])
    roots_p = an.fof_groups(pos[perm], box, ll)
    groups_p = sorted(tuple(sorted(perm[list(g)])) for g in _partition(roots_p))
    assert groups_p == base
    shifted = np.mod(pos + np.array([3.3, -1.7, 9.1]), box)
    assert _partition(an.fof_groups(shifted, box, ll)) == base
    del back


def test_most_connected_star():
    pos = np.array([[5, 5, 5], [5.4, 5, 5], [4.6, 5, 5], [5, 5.4, 5], [5, 4.6, 5]])
    p = _ps(pos, 10.0)
    assert an.most_connected(np.arange(5), p, 0.5) == 0
    # pair: tie goes to the lower index
    assert an.most_connected([3, 1], p, 0.5) == 1


def test_most_bound_oracle(rng):
    pos = np.array([[1, 1, 1], [2, 1, 1], [3, 1, 1], [4, 1, 1.0]])
    p = _ps(pos, 50.0)
    assert an.most_bound(np.arange(4), p, 0.01) == 1  # inner points tie, lower index
    phi = an.potentials(np.arange(4), p, 0.01)
    assert phi[0] == pytest.approx(-(1 + 1 / 2 + 1 / 3))
    assert phi[1] == pytest.approx(-(1 + 1 + 1 / 2))
    pos = rng.uniform(0, 3, (40, 3))
    p = _ps(pos, 100.0)
    ref = [-sum(1 / max(np.linalg.norm(pos[i] - pos[j]), 0.05) for j in range(40) if j != i)
           for i in range(40)]
    assert np.allclose(an.potentials(np.arange(40), p, 0.05), ref, rtol=1e-5)
    assert an.most_bound(np.arange(40), p, 0.05) == int(np.argmin(ref))
    with pytest.raises(DomainError):
        an.most_bound([0], p, 0.05)


def test_center_of_mass_wraps():
    p = _ps([[9.8, 5, 5], [0.2, 5, 5]], 10.0)
    c = an.center_of_mass([0, 1], p)
    assert min(c[0], 10 - c[0]) == pytest.approx(0.0, abs=1e-5)


def _clusters(rng, sizes, box):
    pts = []
    for s in sizes:
        c = rng.uniform(1, box - 1, 3)
        pts.append(c + rng.normal(scale=0.05, size=(s, 3)))
    return np.concatenate(pts)


def test_fof_halos_and_mass_function(rng):
    box = 100.0
    pos = _clusters(rng, [40, 25, 12, 5], box)
    p = _ps(pos, box)
    cat = an.fof_halos(p, linking_length=0.5, n_min=10)
    assert sorted(h.count for h in cat.halos) == [12, 25, 40]
    assert (cat.assignments == 0).sum() == 5
    for h in cat.halos:
        m = cat.members(h.id)
        assert h.most_connected in m and h.most_bound in m
    edges = np.array([9.5, 20, 30, 50])
    assert an.halo_mass_function(cat, edges).tolist() == [1, 1, 1]
    assert an.halo_count_ratio([1, 1, 1], [1, 1, 1], 0.02, edges).verdict == "PASS"
    with pytest.raises(ValueError):
        an.halo_mass_function(cat, [3, 2])


def test_halo_count_ratio_cases():
    g = an.halo_count_ratio([10, 0, 4], [10, 3, 4], 0.02)
    assert g.verdict == "PASS" and len(g.notes) == 1
    g = an.halo_count_ratio([100, 50], [99, 50], 0.02)
    assert g.verdict == "PASS"
    g = an.halo_count_ratio([100, 50], [97, 50], 0.02)
    assert g.verdict == "FAIL" and g.failing_bins.tolist() == [0]
    with pytest.raises(ValueError):
        an.halo_count_ratio([1, 2], [1], 0.02)
