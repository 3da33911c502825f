"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``python3 -m pytest tests/test_acceptance.py -v -s`` to see the
per-criterion detail lines; the terminal summary lists the verdicts.
"""

import hashlib
import itertools
import json
import math
import time
from collections import deque
from pathlib import Path

import numpy as np
import pytest

from lossbench import analysis, bench, codec, codec_block, codec_pred, synth, workflow
from lossbench.analysis.spectrum import _mode_shells
from lossbench.datamodel import CompressionConfig, Field, ParticleSet

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _report(num, ok, detail):
    print(f"\ncriterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


# ---------------------------------------------------------------- fields

def _random_dims(rng):
    nd = int(rng.integers(1, 4))
    if nd == 3:
        return tuple(int(v) for v in np.exp(rng.uniform(0, math.log(64), 3)).round().astype(int))
    return tuple(int(v) for v in np.exp(rng.uniform(0, math.log(4096 if nd == 1 else 256), nd))
                 .round().astype(int))


def _random_field(rng, dims):
    kind = rng.integers(0, 5)
    n = int(np.prod(dims))
    if kind == 0:
        a = rng.normal(size=n)
    elif kind == 1:
        a = rng.normal(size=dims).cumsum(axis=0).ravel()
    elif kind == 2:
        a = np.full(n, rng.normal() * 100)
    elif kind == 3:
        a = rng.normal(size=n) * np.exp(rng.normal(size=n) * 4)
    else:
        a = np.sin(np.linspace(0, 20, n)) * 1e3
        a[rng.integers(0, n, max(1, n // 50))] += rng.normal(size=max(1, n // 50)) * 1e5
    return Field.from_array("x", a.reshape(dims) * 10.0 ** rng.uniform(-3, 3))


# ---------------------------------------------------------------- 1

def test_criterion_1_abs_error_bound():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    violations, largest = 0, 0
    for case in range(1000):
        dims = (64, 64, 64) if case % 100 == 0 else _random_dims(rng)
        f = _random_field(rng, dims)
        x = f.values.astype(np.float64)
        span = float(x.max() - x.min()) or abs(float(x[0])) or 1.0
        eb = span * 10.0 ** rng.uniform(-6, -1)
        s = codec_pred.compress_pred(f, codec_pred.PredParams(eb))
        r = codec_pred.decompress_pred(s).values.astype(np.float64)
        err = np.abs(r - x).max()
        violations += int(err > eb)
        largest = max(largest, f.size)
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 120
    assert _report(1, ok, f"1000 cases up to {largest} values, {violations} violations, {dt:.1f} s")


# ---------------------------------------------------------------- 2

def _velocity_like(rng, n):
    g = rng.normal(size=n).cumsum()
    mag = 10.0 ** (rng.uniform(-8, 8) + 4 * np.tanh(rng.normal(size=n)))
    v = np.sign(g - g.mean()) * mag
    v[rng.random(n) < 0.02] = 0.0
    v[rng.random(n) < 0.01] = 1e-40  # subnormal float32, below the zero threshold
    return v


def test_criterion_2_pw_rel_bound():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    bad_rel = bad_zero = 0
    for case in range(200):
        n = int(rng.integers(100, 20000))
        f = Field.from_array("v", _velocity_like(rng, n))
        x = f.values.astype(np.float64)
        for rel in (0.1, 0.25):
            s = codec_pred.compress_pred_rel(f, rel)
            r = codec_pred.decompress_pred(s).values.astype(np.float64)
            theta = rel * 1e-30
            big = np.abs(x) >= theta
            bad_rel += int(np.sum(np.abs(r[big] - x[big]) > rel * np.abs(x[big])))
            bad_zero += int(np.sum(r[~big] != 0))
    dt = time.perf_counter() - t0
    ok = bad_rel == 0 and bad_zero == 0 and dt < 60
    assert _report(2, ok, f"400 (field, bound) cases, {bad_rel} relative violations, "
                          f"{bad_zero} nonzero sub-threshold values, {dt:.1f} s")


# ---------------------------------------------------------------- 3

def test_criterion_3_fixed_rate_identity():
    rng = np.random.default_rng(3)
    mismatches = 0
    for dims in [(1,), (1000,), (37, 41), (5, 4, 4), (13, 17, 9), (64, 64, 64)]:
        f = _random_field(rng, dims)
        for b in (1, 2, 4, 8, 16):
            s = codec_block.compress_block_codec(f, codec_block.BlockParams(b))
            expected = codec_block.n_blocks(dims) * round(64 * b)
            mismatches += int(s.payload_len * 8 != expected)
    f = Field.from_array("x", rng.normal(size=(64, 64, 64)))
    s = codec.compress(f, CompressionConfig("block", "fixed_rate", 4))
    ratio = f.nbytes / s.total_bytes
    ok = mismatches == 0 and abs(ratio - 8.0) / 8.0 <= 0.01
    assert _report(3, ok, f"{mismatches} payload size mismatches, 64^3 bitrate 4 ratio {ratio:.5f}")


# ---------------------------------------------------------------- 4

def test_criterion_4_transform_and_refinement():
    rng = np.random.default_rng(4)
    q = rng.integers(-2 ** 30, 2 ** 30 + 1, (10000, 4, 4, 4))
    lifting_ok = np.array_equal(codec_block.inverse_transform(codec_block.forward_transform(q)), q)

    b = rng.uniform(-1, 1, (2000, 4, 4, 4)).astype(np.float32)
    p = codec_block.BlockParams(32)
    buf = codec_block.encode_blocks(b, p)
    exact, _ = codec_block.encode_coefficients(b, p)
    value_viol = coeff_viol = 0
    prev_v = prev_c = None
    for planes in range(p.planes + 1):
        r = codec_block.decode_blocks(buf, len(b), p, max_planes=planes)
        c, _ = codec_block.decode_coefficients(buf, len(b), p, max_planes=planes)
        ev = np.abs(r - b).reshape(len(b), -1).max(axis=1)
        ec = np.abs(c - exact).max(axis=1)
        if prev_v is not None:
            value_viol += int(np.sum(ev > prev_v))
            coeff_viol += int(np.sum(ec > prev_c))
        prev_v, prev_c = ev, ec
    ok = lifting_ok and value_viol == 0
    assert _report(4, ok, f"lifting round trip exact: {lifting_ok}; per-plane max-error increases: "
                          f"value domain {value_viol} (block, plane) pairs, coefficient domain "
                          f"{coeff_viol}")


# ---------------------------------------------------------------- 5

def _oracle_groups(pos, box, ll):
    d = np.abs(pos[:, None, :] - pos[None, :, :])
    d = np.minimum(d, box - d)
    adj = (d * d).sum(axis=2) <= ll * ll
    n = len(pos)
    root = np.full(n, -1)
    for s in range(n):
        if root[s] >= 0:
            continue
        root[s] = s
        queue = deque([s])
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(adj[i] & (root < 0)):
                root[j] = s
                queue.append(j)
    return root, d


def _clustered(rng, n, box):
    centers = rng.uniform(0, box, (12, 3))
    centers[:4, 0] = rng.choice([0.1, box - 0.1], 4)  # straddle the periodic boundary
    centers[4:6, 1:] = box - 0.05
    who = rng.integers(0, 13, n)
    pos = np.where((who < 12)[:, None], centers[np.minimum(who, 11)]
                   + rng.normal(scale=box * 0.01, size=(n, 3)), rng.uniform(0, box, (n, 3)))
    return np.mod(pos, box).astype(np.float32).astype(np.float64)


def test_criterion_5_fof_oracle():
    t0 = time.perf_counter()
    part_bad = mcp_bad = mbp_bad = halos = 0
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        box = 100.0
        pos = _clustered(rng, 2000, box)
        p = ParticleSet.from_arrays(pos, np.zeros_like(pos), box)
        ll = analysis.default_linking_length(p)
        pos = p.positions
        oracle, dist = _oracle_groups(pos, box, ll)
        part_bad += int(not np.array_equal(analysis.fof_groups(pos, box, ll), oracle))
        soft = 0.01 * ll
        cat = analysis.fof_halos(p, ll, n_min=10, softening=soft)
        for h in cat.halos:
            m = cat.members(h.id)
            halos += 1
            sub = dist[np.ix_(m, m)]
            r = np.sqrt((sub * sub).sum(axis=2))
            friends = (r <= ll).sum(axis=1) - 1
            mcp_bad += int(h.most_connected != m[int(np.argmax(friends))])
            inv = 1.0 / np.maximum(r, soft)
            np.fill_diagonal(inv, 0.0)
            mbp_bad += int(h.most_bound != m[int(np.argmin(-inv.sum(axis=1)))])
    dt = time.perf_counter() - t0
    ok = part_bad == mcp_bad == mbp_bad == 0 and halos > 0 and dt < 120
    assert _report(5, ok, f"20 seeds x 2000 particles, {halos} halos; partition mismatches "
                          f"{part_bad}, MCP {mcp_bad}, MBP {mbp_bad}; {dt:.1f} s")


# ---------------------------------------------------------------- 6

def _dft_oracle(delta, L):
    n = delta.shape[0]
    idx = np.arange(n)
    pk = np.zeros(n // 2 + 1)
    cnt = np.zeros(n // 2 + 1)
    for m in itertools.product(range(n), repeat=3):
        mm = [v if v < n // 2 else v - n for v in m]
        shell = int(np.rint(math.sqrt(sum(v * v for v in mm))))
        if not 1 <= shell <= n // 2:
            continue
        phase = np.exp(-2j * np.pi * (m[0] * idx[:, None, None] + m[1] * idx[None, :, None]
                                      + m[2] * idx[None, None, :]) / n)
        pk[shell] += abs((delta * phase).sum()) ** 2 * L ** 3 / n ** 6
        cnt[shell] += 1
    return pk[1:] / cnt[1:], cnt[1:]


def test_criterion_6_spectrum_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    counts_ok = True
    for _ in range(3):
        a = np.exp(rng.normal(size=(8, 8, 8)) * 0.5).astype(np.float32)
        L = float(rng.uniform(1, 100))
        s = analysis.power_spectrum(Field.from_array("a", a), L)
        x = a.astype(np.float64)
        pk, cnt = _dft_oracle(x / x.mean() - 1, L)
        counts_ok &= s.mode_counts.tolist() == cnt.astype(int).tolist()
        worst = max(worst, float(np.max(np.abs(s.pk - pk) / pk)))
    # Parseval over every mode, using the half-spectrum conjugate weights
    d = rng.normal(size=(8, 8, 8))
    shell, weight = _mode_shells(8)
    dk = np.fft.rfftn(d)
    lhs = float((weight * np.abs(dk) ** 2).sum()) / d.size
    parseval = abs(lhs - (d * d).sum()) / (d * d).sum()
    # one mode: all power in its shell
    i = np.arange(8)
    single = 1 + 0.3 * np.cos(2 * np.pi * (2 * i[:, None, None] + 1 * i[None, :, None]) / 8) \
        * np.ones((8, 8, 8))
    s1 = analysis.power_spectrum(Field.from_array("s", single), 1.0)
    target = int(np.rint(math.sqrt(5))) - 1
    others = np.delete(s1.pk, target)
    single_ok = s1.pk[target] > 0 and np.all(others <= 1e-12 * s1.pk[target])
    ok = counts_ok and worst <= 1e-6 and parseval <= 1e-6 and single_ok
    assert _report(6, ok, f"max relative shell error {worst:.2e}, Parseval error {parseval:.2e}, "
                          f"single mode concentrated: {bool(single_ok)}")


# ---------------------------------------------------------------- 7

def test_criterion_7_gate_exactness():
    f = synth.nyx_like(32, 32.0, seed=7)["baryon_density"]
    s = analysis.power_spectrum(f, 32.0)
    same = analysis.pk_ratio(s, analysis.power_spectrum(f.with_values(f.values.copy()), 32.0))
    pk_ok = same.verdict == "PASS" and np.all(same.ratios == 1.0)

    p = synth.hacc_like(8192, 128.0, grid=16, seed=7)
    co = analysis.fof_halos(p)
    cr = analysis.fof_halos(ParticleSet.from_arrays(p.positions, p.velocities, p.box_length))
    edges = analysis.mass_bin_edges(co)
    hg = analysis.halo_count_ratio(analysis.halo_mass_function(co, edges),
                                   analysis.halo_mass_function(cr, edges), 0.02, edges)
    halo_ok = hg.verdict == "PASS" and np.all(hg.ratios[hg.checked] == 1.0)

    # boost one well-populated shell by 2%
    x = f.array.astype(np.float64)
    dk = np.fft.rfftn(x)
    shell, _ = _mode_shells(32)
    target = 6
    dk[shell == target] *= math.sqrt(1.02)
    y = np.fft.irfftn(dk, s=x.shape, axes=(0, 1, 2))
    sp = analysis.power_spectrum(Field.from_array("y", y), 32.0)
    g = analysis.pk_ratio(s, sp, tol=0.01)
    r = g.ratios[target - 1]
    others = np.delete(g.ratios, target - 1)
    pert_ok = (g.verdict == "FAIL" and g.failing_bins.tolist() == [target - 1]
               and abs(r - 1.02) < 1e-4 and np.all(np.abs(others - 1) < 1e-4))
    ok = pk_ok and halo_ok and pert_ok
    assert _report(7, ok, f"identity pk PASS: {pk_ok}, halo PASS: {halo_ok} ({len(co.halos)} halos); "
                          f"perturbed shell ratio {r:.5f} -> {g.verdict}")


# ---------------------------------------------------------------- 8

SWEEP_CONFIGS = ([{"codec": "pred", "mode": "pw_rel", "param": p} for p in (1e-4, 1e-3, 1e-2, 1e-1)]
                 + [{"codec": "block", "mode": "fixed_rate", "param": b} for b in (2, 4, 8, 16)])


def _nyx_sweep(out, pk_tol):
    fields = {name: {"gate": "pk", "contrast": name in synth.NYX_DENSITY_FIELDS + ("temperature",)}
              for name in synth.NYX_FIELDS}
    return workflow.SweepSpec.from_dict({
        "version": 1, "seed": 8, "output_dir": str(out),
        "protocol": {"warmup": 0, "runs": 1}, "gates": {"pk_tol": pk_tol},
        "datasets": [{"name": "nyx", "kind": "grid", "box_length": 64.0,
                      "source": {"synthetic": "nyx_like", "n": 64}, "fields": fields}],
        "configs": SWEEP_CONFIGS})


def _exhaustive_best(spec, jobs):
    records, _, gaps = workflow.load_results(spec, jobs)
    per_field = {}
    for r in records:
        per_field.setdefault(r.field, []).append(r)
    best, best_ratio = None, None
    choices = [[r for r in per_field[f] if r.all_pass] for f in sorted(per_field)]
    if all(choices):
        for combo in itertools.product(*choices):
            ratio = sum(r.original_bytes for r in combo) / sum(r.compressed_bytes for r in combo)
            if best_ratio is None or ratio > best_ratio:
                best_ratio, best = ratio, {r.field: r.compressed_bytes for r in combo}
    return records, best, best_ratio, gaps


def test_criterion_8_guideline_end_to_end(tmp_path):
    t0 = time.perf_counter()
    spec = _nyx_sweep(tmp_path / "sweep", 0.01)
    jobs = workflow.plan(spec)
    ledger = workflow.execute(spec, jobs, max_workers=2)
    records, best, best_ratio, gaps = _exhaustive_best(spec, jobs)
    sel = workflow.select_best_fit(records, expected_fields=[("nyx", f) for f in synth.NYX_FIELDS])
    chosen = {k[1]: v.compressed_bytes for k, v in sel.chosen.items() if v is not None}
    sel_ok = (not ledger.failed and not gaps and len(records) == 48 and best is not None
              and sel.ok and chosen == best and sel.overall_ratio == pytest.approx(best_ratio))
    summary = json.loads((spec.output_dir / "summary.json").read_text())
    sel_ok &= summary["status"] == "selected"

    strict = _nyx_sweep(tmp_path / "sweep", 1e-9)
    sjobs = workflow.plan(strict)
    workflow.execute(strict, sjobs, max_workers=2)
    srecords, sbest, _, _ = _exhaustive_best(strict, sjobs)
    ssel = workflow.select_best_fit(srecords, expected_fields=[("nyx", f) for f in synth.NYX_FIELDS])
    ssummary = json.loads((strict.output_dir / "summary.json").read_text())
    fail_ok = (sbest is None and not ssel.ok and ssel.overall_ratio is None
               and ssummary["status"] == workflow.NO_SELECTION and ssummary["overall_ratio"] is None)
    dt = time.perf_counter() - t0
    ok = sel_ok and fail_ok and dt < 300
    ratio_txt = f"{sel.overall_ratio:.3f}" if sel.overall_ratio else "n/a"
    assert _report(8, ok, f"48 cells; best-fit overall ratio {ratio_txt} matches enumeration: "
                          f"{sel_ok}; all-FAIL sweep gives '{ssummary['status']}': {fail_ok}; "
                          f"{dt:.1f} s")


# ---------------------------------------------------------------- 9

def test_criterion_9_rate_distortion_monotone():
    t0 = time.perf_counter()
    fields = list(synth.nyx_like(64, 64.0, seed=9).values())
    p = synth.hacc_like(32768, 256.0, seed=9)
    fields += [getattr(p, c) for c in ParticleSet.COMPONENTS]
    drops = []
    for f in fields:
        x = f.values.astype(np.float64)
        span = float(x.max() - x.min())
        prev = -math.inf
        for k in range(1, 9):
            eb = span * 0.05 / 2 ** (2 * k)
            s = codec.compress(f, CompressionConfig("pred", "abs", eb))
            psnr = analysis.distortion(f, codec.decompress(s, f.name)).psnr
            if psnr < prev:
                drops.append(f"{f.name} pred eb {eb:.3g}")
            prev = psnr
        prev = -math.inf
        for b in (1, 2, 4, 8, 16, 32):
            s = codec.compress(f, CompressionConfig("block", "fixed_rate", b))
            psnr = analysis.distortion(f, codec.decompress(s, f.name)).psnr
            if psnr < prev:
                drops.append(f"{f.name} block {b}")
            prev = psnr
    dt = time.perf_counter() - t0
    ok = not drops and dt < 120
    assert _report(9, ok, f"{len(fields)} fields, PSNR decreases: {drops or 'none'}, {dt:.1f} s")


# ---------------------------------------------------------------- 10

class SquareClock:
    """The k-th read returns k**2."""

    def __init__(self):
        self.k = 0

    def __call__(self):
        self.k += 1
        return float(self.k ** 2)


def test_criterion_10_timing_protocol():
    f = Field.from_array("t", np.random.default_rng(10).normal(size=(16, 16, 16)))
    clk = SquareClock()
    rec = bench.run_cell(f, CompressionConfig("pred", "abs", 1e-3), warmup=10, runs=10, clock=clk)
    # measured run r reads the clock at 5r+1 .. 5r+5 (start plus one per stage), so its
    # total is (5r+5)**2 - (5r+1)**2 = 40r + 24 and its setup stage (5r+2)**2 - (5r+1)**2
    c, d = rec.compress_timing, rec.decompress_timing
    std = 40 * math.sqrt((10 ** 2 - 1) / 12)
    ok = (clk.k == 100 and c.total_mean == 204.0 and d.total_mean == 604.0
          and math.isclose(c.total_std, std, rel_tol=1e-12)
          and math.isclose(d.total_std, std, rel_tol=1e-12)
          and c.warmup_runs == 10 and c.measured_runs == 10
          and c.stage_times["setup"][0] == 10 * 4.5 + 3)
    assert _report(10, ok, f"clock reads {clk.k} (warm-ups read none); compress mean "
                           f"{c.total_mean} std {c.total_std:.6f}; decompress mean {d.total_mean}")


# ---------------------------------------------------------------- 11

def _digest(root: Path, rel):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.glob(rel)) if p.is_file()}


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = json.loads((CONFIGS / "sweep_example.json").read_text())
    outs = []
    for tag in ("a", "b"):
        cfg["output_dir"] = str(tmp_path / tag)
        path = tmp_path / f"{tag}.json"
        path.write_text(json.dumps(cfg))
        spec = workflow.SweepSpec.load(path)
        ledger = workflow.run_sweep(spec, resume=False)
        assert not ledger.failed
        outs.append(tmp_path / tag)
    a, b = outs
    same_metrics = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    same_summary = (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    sa, sb = _digest(a, "streams/**/*"), _digest(b, "streams/**/*")
    same_streams = bool(sa) and sa == sb
    dt = time.perf_counter() - t0
    ok = same_metrics and same_summary and same_streams and dt < 300
    assert _report(11, ok, f"metrics.csv identical: {same_metrics}, summary.json identical: "
                           f"{same_summary}, {len(sa)} streams identical: {same_streams}; {dt:.1f} s")
