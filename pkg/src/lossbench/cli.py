"""Command-line entry point.

Exit status: 0 on success, 1 when a task fails, 2 on usage or configuration
errors. Diagnostics go to stderr; results go to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import analysis, bench, codec, synth, workflow
from .datamodel import (CompressionConfig, ConfigError, DomainError, FormatError, bitrate,
                        compression_ratio, read_field, read_particles, read_stream, write_field,
                        write_particles, write_stream)

log = logging.getLogger("lossbench")


class UsageError(Exception):
    pass


def _config_flags(p: argparse.ArgumentParser, required: bool = False):
    p.add_argument("--config", help="JSON file; its values win over flags")
    p.add_argument("--codec", choices=["pred", "block"])
    p.add_argument("--mode", choices=["abs", "pw_rel", "fixed_rate"])
    p.add_argument("--param", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lossbench", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="command")

    g = sub.add_parser("gen", help="write synthetic grid fields or particles")
    g.add_argument("--kind", choices=["nyx", "hacc", "grf"], default="nyx")
    g.add_argument("--output", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=64, help="grid edge (nyx, grf)")
    g.add_argument("--particles", type=int, default=32768, help="particle count (hacc)")
    g.add_argument("--box-length", type=float)
    g.add_argument("--index", type=float, default=-2.0, help="spectral index (grf)")

    c = sub.add_parser("compress", help="compress a field file into a stream")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    _config_flags(c)
    c.add_argument("--threads", type=int, default=1)

    d = sub.add_parser("decompress", help="decode a stream into a field file")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--threads", type=int, default=1)

    a = sub.add_parser("analyze", help="compare an original and a reconstruction")
    a.add_argument("--input", required=True, help="original field file or particle directory")
    a.add_argument("--recon", required=True, help="reconstructed field file or particle directory")
    a.add_argument("--output", required=True, help="JSON result file")
    a.add_argument("--box-length", type=float, default=1.0)
    a.add_argument("--contrast", action="store_true", help="use density contrast for the spectrum")
    a.add_argument("--pk-tol", type=float, default=analysis.DEFAULT_PK_TOL)
    a.add_argument("--halo-tol", type=float, default=analysis.DEFAULT_HALO_TOL)
    a.add_argument("--linking-length", type=float)
    a.add_argument("--n-min", type=int, default=analysis.DEFAULT_N_MIN)

    b = sub.add_parser("bench", help="time one (field, config) cell")
    b.add_argument("--input", required=True)
    b.add_argument("--output", required=True, help="JSON record file")
    _config_flags(b)
    b.add_argument("--warmup", type=int, default=bench.DEFAULT_WARMUP)
    b.add_argument("--runs", type=int, default=bench.DEFAULT_RUNS)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--csv", help="append a row to this CSV file")

    s = sub.add_parser("sweep", help="run a JSON-configured sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--output", help="output directory (output_dir)")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, help="codec threads (protocol.threads)")
    s.add_argument("--warmup", type=int)
    s.add_argument("--runs", type=int)
    s.add_argument("--pk-tol", type=float)
    s.add_argument("--halo-tol", type=float)
    s.add_argument("--linking-length", type=float)
    s.add_argument("--workers", type=int, default=2, help="executor worker threads")
    s.add_argument("--fresh", action="store_true", help="ignore the resume ledger")

    r = sub.add_parser("report", help="rebuild report files from a finished sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--output", help="output directory (output_dir)")
    return ap


def _resolve_config(args) -> CompressionConfig:
    flags = {"codec": args.codec, "mode": args.mode, "param": args.param}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
        for k, v in flags.items():
            if v is not None and k in d and str(d[k]).lower() != str(v).lower():
                log.warning("%s sets %s=%r; ignoring --%s %r", args.config, k, d[k], k, v)
        flags.update({k: d[k] for k in flags if k in d})
    missing = [k for k, v in flags.items() if v is None]
    if missing:
        raise UsageError(f"missing {', '.join('--' + m for m in missing)}")
    return CompressionConfig(flags["codec"], flags["mode"], flags["param"])


def cmd_gen(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "nyx":
        box = args.box_length or 64.0
        for name, f in synth.nyx_like(args.n, box, args.seed).items():
            write_field(f, out / f"{name}.f32")
    elif args.kind == "grf":
        f = synth.gaussian_random_field(args.n, args.box_length or 1.0, args.index, seed=args.seed)
        write_field(f, out / "grf.f32")
    else:
        write_particles(synth.hacc_like(args.particles, args.box_length or 256.0, seed=args.seed),
                        out)
    log.info("wrote %s data to %s", args.kind, out)
    return 0


def cmd_compress(args) -> int:
    cfg = _resolve_config(args)
    f = read_field(args.input)
    s = codec.compress(f, cfg, args.threads)
    write_stream(s, args.output)
    print(f"{f.name}: {cfg.label} ratio {compression_ratio(f.nbytes, s):.4f} "
          f"bitrate {bitrate(f.size, s):.4f} ({s.total_bytes} bytes)", file=sys.stderr)
    return 0


def cmd_decompress(args) -> int:
    s = read_stream(args.input)
    name = Path(args.output).stem
    write_field(codec.decompress(s, name, args.threads), args.output)
    return 0


def cmd_analyze(args) -> int:
    src, rec = Path(args.input), Path(args.recon)
    out = {}
    if src.is_dir():
        p, q = read_particles(src), read_particles(rec)
        ll = args.linking_length or analysis.default_linking_length(p)
        co = analysis.fof_halos(p, ll, args.n_min)
        cr = analysis.fof_halos(q, ll, args.n_min)
        edges = analysis.mass_bin_edges(co)
        g = analysis.halo_count_ratio(analysis.halo_mass_function(co, edges),
                                      analysis.halo_mass_function(cr, edges), args.halo_tol, edges)
        out = {"halos_orig": len(co.halos), "halos_recon": len(cr.halos), "linking_length": ll,
               "halo_count_ratio": g.to_dict(), "ratios": g.ratios.tolist()}
    else:
        f, r = read_field(src), read_field(rec)
        out["quality"] = analysis.distortion(f, r).to_dict()
        if len(f.dims) == 3 and len(set(f.dims)) == 1:
            so = analysis.power_spectrum(f, args.box_length, args.contrast)
            sr = analysis.power_spectrum(r, args.box_length, args.contrast)
            g = analysis.pk_ratio(so, sr, args.pk_tol)
            out["pk_ratio"] = g.to_dict()
            out["k"] = so.k_bins.tolist()
            out["ratios"] = g.ratios.tolist()
    Path(args.output).write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    for k in ("pk_ratio", "halo_count_ratio"):
        if k in out:
            print(f"{k}: {out[k]['verdict']}", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve_config(args)
    f = read_field(args.input)
    rec = bench.run_cell(f, cfg, args.warmup, args.runs, threads=args.threads)
    Path(args.output).write_text(json.dumps(rec.to_dict(), indent=1, sort_keys=True) + "\n")
    if args.csv:
        bench.append_csv(args.csv, rec)
    print(f"{f.name}: {cfg.label} ratio {rec.ratio:.4f} psnr {rec.quality.psnr:.3f} dB "
          f"compress {rec.compress_timing.throughput:.4g} GB/s", file=sys.stderr)
    return 0


def _sweep_overrides(args) -> dict:
    keys = {"output": "output_dir", "seed": "seed", "threads": "protocol.threads",
            "warmup": "protocol.warmup", "runs": "protocol.runs", "pk_tol": "gates.pk_tol",
            "halo_tol": "gates.halo_tol", "linking_length": "gates.linking_length"}
    out = {}
    for attr, dotted in keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[dotted] = str(Path(v).resolve()) if attr == "output" else v
    return out


def cmd_sweep(args) -> int:
    spec = workflow.SweepSpec.load(args.config, _sweep_overrides(args))
    ledger = workflow.run_sweep(spec, max_workers=args.workers, resume=not args.fresh)
    for jid in ledger.failed:
        print(f"job failed: {jid}: {ledger.entries[jid]['error']}", file=sys.stderr)
    print(f"sweep output in {spec.output_dir}", file=sys.stderr)
    return 1 if ledger.failed else 0


def cmd_report(args) -> int:
    spec = workflow.SweepSpec.load(args.config, _sweep_overrides(args))
    jobs = workflow.plan(spec)
    ledger = workflow.RunLedger.load(spec.output_dir / "ledger.json")
    for jid, j in jobs.items():
        st = ledger.entries.get(jid, {}).get("status")
        j.status = workflow.Status(st) if st else workflow.Status.PENDING
    workflow.task_report(spec, jobs["report"], jobs)
    print(f"report written to {spec.output_dir}", file=sys.stderr)
    return 0


COMMANDS = {"gen": cmd_gen, "compress": cmd_compress, "decompress": cmd_decompress,
            "analyze": cmd_analyze, "bench": cmd_bench, "sweep": cmd_sweep, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.command:
        parser.print_help(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, DomainError, OSError, bench.CellError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
