"""Sweep outputs: CSV tables, ratio curves, best-fit summary and SVG charts.

Layout under the output directory::

    metrics.csv                      one row per cell, no timing columns
    rate_distortion.csv              field, codec, mode, param, bitrate, psnr
    timing.csv                       stage means/stds and throughput per cell
    spectra/<dataset>__<field>.csv   pk ratio per shell and config
    halo_ratios/<dataset>__<field>.csv
    halos/<run>.csv                  halo catalog summary per run
    summary.json, summary.txt
    plots/*.svg

Everything except ``timing.csv`` is a deterministic function of the inputs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Optional

from .bench import STAGES, BenchRecord
from .datamodel import FRAMING_BYTES
from .workflow import NO_SELECTION, Selection

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["status", "overall_ratio", "fields", "gates", "caveats", "gaps", "records"],
    "properties": {
        "status": {"enum": ["selected", NO_SELECTION]},
        "overall_ratio": {"type": ["number", "null"]},
        "missing": {"type": "array", "items": {"type": "string"}},
        "fields": {"type": "array", "items": {
            "type": "object",
            "required": ["dataset", "field", "config", "ratio"],
            "properties": {
                "dataset": {"type": "string"}, "field": {"type": "string"},
                "config": {"type": ["object", "null"]},
                "ratio": {"type": ["number", "null"]}}}},
        "gates": {"type": "object"},
        "caveats": {"type": "array", "items": {"type": "string"}},
        "gaps": {"type": "array", "items": {"type": "string"}},
        "records": {"type": "array"},
    },
}

CAVEATS = (
    f"Compressed sizes include the {FRAMING_BYTES}-byte stream header and checksum.",
    "Timings are CPU stage analogs (setup, kernel, serialize, teardown), not GPU measurements.",
    "Halo-count tolerance default 0.02 is a chosen default, not a published threshold.",
    "Linking length default 0.2 x mean interparticle spacing, n_min 10 and softening 0.01 x "
    "linking length are conventional choices.",
    "Spectrum shells with fewer than min_modes modes are reported but not gated.",
    "Fields configured with gate 'none' pass vacuously.",
)


def _num(x) -> str:
    """Stable text for a float: shortest round-trip repr, or nan/inf."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _json_num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def _csv(header: list[str], rows: Iterable[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _sorted(records) -> list[BenchRecord]:
    return sorted(records, key=lambda r: (r.dataset, r.field, r.config))


def _field_key(rec: BenchRecord) -> str:
    return f"{rec.dataset}/{rec.field}" if rec.dataset else rec.field


def metrics_table(records) -> str:
    header = ["dataset", "field", "codec", "mode", "param", "original_bytes", "compressed_bytes",
              "ratio", "bitrate", "payload_bitrate", "psnr", "psnr_flag", "mse", "mre",
              "max_abs_err", "stream_sha256", "verdicts", "all_pass"]
    rows = []
    for r in _sorted(records):
        q = r.quality
        payload_bits = 8.0 * (r.compressed_bytes - FRAMING_BYTES) / (r.original_bytes / 4)
        verdicts = ";".join(f"{k}={v['verdict']}" for k, v in sorted(r.verdicts.items()))
        rows.append([r.dataset, r.field, r.config.codec.name, r.config.mode.name,
                     _num(r.config.param), r.original_bytes, r.compressed_bytes, _num(r.ratio),
                     _num(q.bitrate), _num(payload_bits), _num(q.psnr), q.psnr_flag,
                     _num(q.mse), _num(q.mre), _num(q.max_abs_err), r.stream_sha256, verdicts,
                     int(r.all_pass)])
    return _csv(header, rows)


def rate_distortion_table(records) -> str:
    """One row per record, sorted by field then bitrate."""
    rows = sorted(records, key=lambda r: (_field_key(r), r.quality.bitrate, r.config))
    return _csv(["field", "codec", "mode", "param", "bitrate", "psnr"],
                [[_field_key(r), r.config.codec.name, r.config.mode.name, _num(r.config.param),
                  _num(r.quality.bitrate), _num(r.quality.psnr)] for r in rows])


def timing_table(records) -> str:
    header = ["dataset", "field", "codec", "mode", "param", "threads", "direction",
              "warmup_runs", "measured_runs", "throughput_gbps", "total_mean_s", "total_std_s"]
    for s in STAGES:
        header += [f"{s}_mean_s", f"{s}_std_s"]
    rows = []
    for r in _sorted(records):
        for direction, t in (("compress", r.compress_timing), ("decompress", r.decompress_timing)):
            row = [r.dataset, r.field, r.config.codec.name, r.config.mode.name,
                   _num(r.config.param), r.threads, direction, t.warmup_runs, t.measured_runs,
                   _num(t.throughput), _num(t.total_mean), _num(t.total_std)]
            for s in STAGES:
                m, sd = t.stage_times.get(s, (0.0, 0.0))
                row += [_num(m), _num(sd)]
            rows.append(row)
    return _csv(header, rows)


def ratio_curves(docs) -> dict[str, str]:
    """CSV text per ``<kind>/<dataset>__<field>.csv`` from analysis documents."""
    groups: dict[str, list] = {}
    for d in sorted(docs, key=lambda d: d["cell"]):
        c = d.get("curve")
        if not c:
            continue
        sub = "spectra" if c["kind"] == "pk" else "halo_ratios"
        groups.setdefault(f"{sub}/{d['dataset']}__{d['field']}.csv", []).append(d)
    out = {}
    for name, items in groups.items():
        kind = items[0]["curve"]["kind"]
        xname = "k" if kind == "pk" else "mass"
        o, rname, mname = ("pk_orig", "pk_recon", "modes") if kind == "pk" else \
            ("count_orig", "count_recon", "count_orig")
        header = ["config", xname, o, rname, "ratio"]
        if kind == "pk":
            header.append(mname)
        header += ["gated", "band_lo", "band_hi", "in_band"]
        rows = []
        for d in items:
            c = d["curve"]
            label = "{codec}-{mode}-{param}".format(codec=d["config"]["codec"],
                                                    mode=d["config"]["mode"],
                                                    param=_num(d["config"]["param"]))
            tol = c["tol"]
            for i, x in enumerate(c["x"]):
                ratio = c["ratio"][i]
                ratio = math.nan if ratio is None else ratio
                inb = (not math.isnan(ratio)) and abs(ratio - 1.0) <= tol
                row = [label, _num(x), _num(c["orig"][i]), _num(c["recon"][i]), _num(ratio)]
                if kind == "pk":
                    row.append(c["modes"][i])
                row += [int(c["checked"][i]), _num(1.0 - tol), _num(1.0 + tol), int(inb)]
                rows.append(row)
        out[name] = _csv(header, rows)
    return out


def halo_tables(docs) -> dict[str, str]:
    header = ["id", "count", "com_x", "com_y", "com_z", "mcp", "mbp"]

    def table(rows):
        return _csv(header, [[h["id"], h["count"], _num(h["com_x"]), _num(h["com_y"]),
                              _num(h["com_z"]), h["mcp"], h["mbp"]] for h in rows])

    out = {}
    for d in sorted(docs, key=lambda d: d["cell"]):
        if "halos_orig" not in d:
            continue
        out[f"halos/{d['dataset']}__original.csv"] = table(d["halos_orig"])
        out[f"halos/{d['cell'].replace('/', '__')}.csv"] = table(d["halos_recon"])
    return out


def summary(selection: Selection, records, gates: Optional[dict] = None,
            gaps: Iterable[str] = ()) -> tuple[str, dict]:
    """Human-readable text and a JSON-ready dict; no timing values."""
    gates = dict(gates or {})
    sel = selection.to_dict()
    for f in sel["fields"]:
        f["ratio"] = _json_num(f["ratio"])
        f["psnr"] = _json_num(f["psnr"])
    doc = {
        "status": sel["status"],
        "overall_ratio": _json_num(sel["overall_ratio"]),
        "missing": sel["missing"],
        "fields": sel["fields"],
        "gates": gates,
        "caveats": list(CAVEATS),
        "gaps": sorted(gaps),
        "records": [{"dataset": r.dataset, "field": r.field, "config": r.config.to_dict(),
                     "ratio": _json_num(r.ratio), "psnr": _json_num(r.quality.psnr),
                     "verdicts": {k: v["verdict"] for k, v in sorted(r.verdicts.items())}}
                    for r in _sorted(records)],
    }
    lines = ["Best-fit selection (gates first, then highest compression ratio)", ""]
    if not selection.ok:
        lines.append(f"WARNING: {NO_SELECTION}"
                     + (f" for {', '.join(sel['missing'])}" if sel["missing"] else ""))
        lines.append("")
    for f in sel["fields"]:
        name = f"{f['dataset']}/{f['field']}"
        if f["config"] is None:
            lines.append(f"  {name}: no configuration passed its gates")
        else:
            c = f["config"]
            lines.append(f"  {name}: {c['codec']} {c['mode']} {_num(c['param'])}"
                         f"  ratio {f['ratio']:.4g}x")
    lines.append("")
    if selection.overall_ratio is not None:
        lines.append(f"Overall compression ratio: {selection.overall_ratio:.4g}x")
    else:
        lines.append("Overall compression ratio: n/a")
    if gates:
        lines.append("Gates: " + ", ".join(f"{k}={gates[k]}" for k in sorted(gates)))
    if doc["gaps"]:
        lines.append("Cells missing from this report (failed or skipped): " + ", ".join(doc["gaps"]))
    lines.append("")
    lines.append("Caveats:")
    lines += [f"  - {c}" for c in CAVEATS]
    return "\n".join(lines) + "\n", doc


# ------------------------------------------------------------------ svg

def svg_line_chart(series: dict, title: str, xlabel: str, ylabel: str,
                   band: Optional[tuple[float, float]] = None, logx: bool = False) -> str:
    """Minimal static line chart; ``series`` maps label -> (xs, ys)."""
    w, h, m = 640, 400, 60
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys)
           if math.isfinite(x) and math.isfinite(y) and (x > 0 or not logx)]
    if band:
        pts += [(pts[0][0] if pts else 0, band[0]), (pts[0][0] if pts else 0, band[1])]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    xs = [tx(p[0]) for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(v):
        return m + (tx(v) - x0) / (x1 - x0) * (w - 2 * m)

    def sy(v):
        return h - m - (v - y0) / (y1 - y0) * (h - 2 * m)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
              "#7f7f7f", "#bcbd22", "#17becf"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{w}" height="{h}" fill="white"/>',
           f'<text x="{w / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="black"/>',
           f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="black"/>',
           f'<text x="{w / 2:.1f}" y="{h - 15}" text-anchor="middle">{_esc(xlabel)}</text>',
           f'<text x="15" y="{h / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 15 {h / 2:.1f})">{_esc(ylabel)}</text>',
           f'<text x="{m}" y="{h - m + 15}" text-anchor="middle">{_tick(x0, logx)}</text>',
           f'<text x="{w - m}" y="{h - m + 15}" text-anchor="middle">{_tick(x1, logx)}</text>',
           f'<text x="{m - 5}" y="{h - m}" text-anchor="end">{y0:.4g}</text>',
           f'<text x="{m - 5}" y="{m + 4}" text-anchor="end">{y1:.4g}</text>']
    if band:
        for b in band:
            out.append(f'<line x1="{m}" y1="{sy(b):.2f}" x2="{w - m}" y2="{sy(b):.2f}" '
                       f'stroke="orange" stroke-dasharray="6,4"/>')
    for i, (label, (xs_, ys_)) in enumerate(sorted(series.items())):
        c = colors[i % len(colors)]
        p = [(sx(x), sy(y)) for x, y in zip(xs_, ys_)
             if math.isfinite(x) and math.isfinite(y) and (x > 0 or not logx)]
        if p:
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="'
                       + " ".join(f"{a:.2f},{b:.2f}" for a, b in p) + '"/>')
        out.append(f'<text x="{w - m + 5}" y="{m + 14 * i}" fill="{c}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _tick(v, logx):
    return f"{10 ** v:.3g}" if logx else f"{v:.3g}"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def plots(records, docs) -> dict[str, str]:
    out = {}
    by_field: dict[str, dict] = {}
    for r in sorted(records, key=lambda r: (_field_key(r), r.quality.bitrate, r.config)):
        key = f"{r.config.codec.name}-{r.config.mode.name}"
        s = by_field.setdefault(_field_key(r), {}).setdefault(key, ([], []))
        s[0].append(r.quality.bitrate)
        s[1].append(r.quality.psnr)
    for fk, series in sorted(by_field.items()):
        out[f"plots/rd__{fk.replace('/', '__')}.svg"] = svg_line_chart(
            series, f"Rate-distortion: {fk}", "bitrate (bits/value)", "PSNR (dB)")
    curves: dict[str, dict] = {}
    for d in sorted(docs, key=lambda d: d["cell"]):
        c = d.get("curve")
        if not c:
            continue
        key = f"{d['dataset']}__{d['field']}"
        label = "{}-{}-{}".format(d["config"]["codec"], d["config"]["mode"],
                                  _num(d["config"]["param"]))
        ratios = [math.nan if v is None else v for v in c["ratio"]]
        curves.setdefault(key, {"kind": c["kind"], "tol": c["tol"], "series": {}})
        curves[key]["series"][label] = (c["x"], ratios)
    for key, cv in sorted(curves.items()):
        kind = "pk ratio" if cv["kind"] == "pk" else "halo count ratio"
        out[f"plots/{'pk' if cv['kind'] == 'pk' else 'halo'}__{key}.svg"] = svg_line_chart(
            cv["series"], f"{kind}: {key}", "k" if cv["kind"] == "pk" else "halo mass", kind,
            band=(1 - cv["tol"], 1 + cv["tol"]), logx=True)
    return out


def write_report(out_dir, records, docs, selection: Selection, gates: Optional[dict] = None,
                 gaps: Iterable[str] = (), with_plots: bool = True) -> list[str]:
    out_dir = Path(out_dir)
    text, doc = summary(selection, records, gates, gaps)
    files = {
        "metrics.csv": metrics_table(records),
        "rate_distortion.csv": rate_distortion_table(records),
        "timing.csv": timing_table(records),
        "summary.json": json.dumps(doc, indent=1, sort_keys=True) + "\n",
        "summary.txt": text,
    }
    files.update(ratio_curves(docs))
    files.update(halo_tables(docs))
    if with_plots:
        files.update(plots(records, docs))
    written = []
    for rel, content in sorted(files.items()):
        p = out_dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(content)
        written.append(str(p))
    return written
