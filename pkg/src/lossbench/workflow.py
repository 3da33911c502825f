"""JSON-driven sweeps: plan a job DAG, run it locally, pick the best-fit configs.

Sweep file (version 1)::

    {
      "version": 1,
      "seed": 0,
      "output_dir": "sweep_out",
      "protocol": {"warmup": 10, "runs": 10, "threads": 1},
      "gates": {"pk_tol": 0.01, "min_modes": 8, "halo_tol": 0.02,
                "linking_length": null, "n_min": 10, "halo_bins": 8},
      "datasets": [
        {"name": "nyx", "kind": "grid", "box_length": 64.0,
         "source": {"synthetic": "nyx_like", "n": 64},
         "fields": {"baryon_density": {"gate": "pk", "contrast": true}}},
        {"name": "hacc", "kind": "particles",
         "source": {"path": "data/hacc"},
         "fields": {"position_x": {"gate": "halo"}, "velocity_x": {"gate": "none"}}}
      ],
      "configs": [{"codec": "pred", "mode": "abs", "param": 0.1}],
      "field_configs": {"nyx/temperature": [{"codec": "block", "mode": "fixed_rate", "param": 8}]},
      "dependencies": {"bench:nyx/baryon_density/pred-abs-0.1": ["report"]}
    }

Relative paths resolve against the sweep file's directory. ``gate`` is ``pk``
(spectrum of the field itself), ``halo`` (FoF on the particle set with this
component replaced by its reconstruction) or ``none``. ``dependencies`` adds
extra edges to the planned DAG.

Jobs are ``gen:<dataset>`` (synthetic sources only), ``bench:<cell>``,
``analysis:<cell>`` and ``report`` where ``<cell>`` is
``<dataset>/<field>/<config label>``. The executor keeps ``ledger.json`` in the
output directory; a job whose fingerprint (hash of its command, inputs and
upstream fingerprints) matches a finished ledger entry is not re-run.
"""

from __future__ import annotations

import copy
import enum
import graphlib
import hashlib
import json
import logging
import threading
import traceback
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional


from . import analysis, bench, codec, synth
from .datamodel import (CompressionConfig, ConfigError, Field, ParticleSet, read_field,
                        read_particles, read_stream, write_field, write_particles, write_stream)

log = logging.getLogger(__name__)

SPEC_VERSION = 1
GATES = ("pk", "halo", "none")
DEFAULT_GATES = {"pk_tol": analysis.DEFAULT_PK_TOL, "min_modes": analysis.DEFAULT_MIN_MODES,
                 "halo_tol": analysis.DEFAULT_HALO_TOL, "linking_length": None,
                 "n_min": analysis.DEFAULT_N_MIN, "halo_bins": 8}
DEFAULT_PROTOCOL = {"warmup": bench.DEFAULT_WARMUP, "runs": bench.DEFAULT_RUNS, "threads": 1}
SYNTHETIC = {"nyx_like": "grid", "hacc_like": "particles"}
NO_SELECTION = "no acceptable configuration"


class PlanningError(ConfigError):
    """The job graph cannot be built (empty sweep, cycle, unknown job)."""


# ------------------------------------------------------------------ spec

@dataclass(frozen=True)
class FieldSpec:
    name: str
    gate: str = "pk"
    contrast: bool = False


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    kind: str
    source: dict
    fields: tuple[FieldSpec, ...]
    box_length: Optional[float] = None

    @property
    def synthetic(self) -> bool:
        return "synthetic" in self.source


@dataclass(frozen=True)
class SweepSpec:
    datasets: tuple[DatasetSpec, ...]
    configs: dict  # "dataset/field" -> tuple of CompressionConfig
    gates: dict
    protocol: dict
    output_dir: Path
    seed: int = 0
    dependencies: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "SweepSpec":
        base_dir = Path(base_dir)
        try:
            version = d.get("version", SPEC_VERSION)
            if version != SPEC_VERSION:
                raise ConfigError(f"unsupported sweep version {version}")
            gates = {**DEFAULT_GATES, **d.get("gates", {})}
            protocol = {**DEFAULT_PROTOCOL, **d.get("protocol", {})}
            unknown = set(gates) - set(DEFAULT_GATES)
            if unknown:
                raise ConfigError(f"unknown gate keys {sorted(unknown)}")
            if gates["pk_tol"] < 0 or gates["halo_tol"] < 0:
                raise ConfigError("gate tolerances must be non-negative")
            if gates["n_min"] < 1 or gates["halo_bins"] < 1 or gates["min_modes"] < 0:
                raise ConfigError("n_min and halo_bins must be positive")
            if gates["linking_length"] is not None and not gates["linking_length"] > 0:
                raise ConfigError("linking_length must be positive")
            if protocol["warmup"] < 0 or protocol["runs"] < 1 or protocol["threads"] < 1:
                raise ConfigError("protocol needs warmup >= 0, runs >= 1, threads >= 1")
            default_cfgs = tuple(CompressionConfig.from_dict(c) for c in d.get("configs", []))
            overrides = {k: tuple(CompressionConfig.from_dict(c) for c in v)
                         for k, v in d.get("field_configs", {}).items()}
            datasets, configs = [], {}
            for ds in d.get("datasets", []):
                spec = _dataset_from_dict(ds, base_dir)
                if any(x.name == spec.name for x in datasets):
                    raise ConfigError(f"duplicate dataset name {spec.name!r}")
                datasets.append(spec)
                for fs in spec.fields:
                    key = f"{spec.name}/{fs.name}"
                    cfgs = overrides.pop(key, default_cfgs)
                    if len(set(cfgs)) != len(cfgs):
                        raise ConfigError(f"duplicate configs for {key}")
                    configs[key] = tuple(cfgs)
            if overrides:
                raise ConfigError(f"field_configs for unknown fields {sorted(overrides)}")
            if not datasets or not any(configs.values()):
                raise PlanningError("sweep needs at least one field and one config")
            out = Path(d.get("output_dir", "sweep_out"))
            deps = {str(k): [str(x) for x in v] for k, v in d.get("dependencies", {}).items()}
            return cls(tuple(datasets), configs, gates, protocol,
                       out if out.is_absolute() else base_dir / out, int(d.get("seed", 0)),
                       deps, base_dir)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid sweep spec: {exc!r}") from exc

    @classmethod
    def load(cls, path, overrides: Optional[dict] = None) -> "SweepSpec":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sweep spec {path}: {exc}") from exc
        if overrides:
            d = merge_overrides(d, overrides)
        return cls.from_dict(d, path.parent)

    def dataset(self, name: str) -> DatasetSpec:
        return next(d for d in self.datasets if d.name == name)

    def dataset_dir(self, ds: DatasetSpec) -> Path:
        if ds.synthetic:
            return self.output_dir / "data" / ds.name
        p = Path(ds.source["path"])
        return p if p.is_absolute() else self.base_dir / p


def _dataset_from_dict(ds: dict, base_dir: Path) -> DatasetSpec:
    name = str(ds["name"])
    if "/" in name or not name:
        raise ConfigError(f"bad dataset name {name!r}")
    kind = ds.get("kind", "grid")
    if kind not in ("grid", "particles"):
        raise ConfigError(f"dataset {name}: kind must be grid or particles")
    source = dict(ds["source"])
    if ("synthetic" in source) == ("path" in source):
        raise ConfigError(f"dataset {name}: source needs exactly one of synthetic/path")
    if "synthetic" in source:
        gen = source["synthetic"]
        if SYNTHETIC.get(gen) != kind:
            raise ConfigError(f"dataset {name}: synthetic source {gen!r} does not make {kind} data")
    fields = []
    for fname, opts in ds["fields"].items():
        opts = opts or {}
        gate = opts.get("gate", "pk" if kind == "grid" else "halo")
        if gate not in GATES:
            raise ConfigError(f"{name}/{fname}: gate must be one of {GATES}")
        if gate == "halo" and kind != "particles":
            raise ConfigError(f"{name}/{fname}: halo gate needs particle data")
        if gate == "pk" and kind != "grid":
            raise ConfigError(f"{name}/{fname}: pk gate needs grid data")
        if kind == "particles" and fname not in ParticleSet.COMPONENTS:
            raise ConfigError(f"{name}/{fname}: not a particle component")
        fields.append(FieldSpec(str(fname), gate, bool(opts.get("contrast", False))))
    if not fields:
        raise ConfigError(f"dataset {name} lists no fields")
    box = ds.get("box_length", source.get("box_length"))
    return DatasetSpec(name, kind, source, tuple(fields), None if box is None else float(box))


def merge_overrides(d: dict, overrides: dict) -> dict:
    """Fill flag values into a sweep dict; values already in the file win."""
    d = copy.deepcopy(d)
    for dotted, value in overrides.items():
        if value is None:
            continue
        keys = dotted.split(".")
        node = d
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        if keys[-1] in node and node[keys[-1]] != value:
            log.warning("sweep file sets %s=%r; ignoring command-line value %r",
                        dotted, node[keys[-1]], value)
            continue
        node[keys[-1]] = value
    return d


# ------------------------------------------------------------------ plan

class Status(str, enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"
    SKIPPED = "skipped"


@dataclass
class Job:
    id: str
    kind: str  # gen | bench | analysis | report
    command: dict
    depends_on: list[str]
    status: Status = Status.PENDING
    timed: bool = False
    tolerant: bool = False  # runs even when dependencies failed


def cell_id(dataset: str, fname: str, config: CompressionConfig) -> str:
    return f"{dataset}/{fname}/{config.label}"


def plan(spec: SweepSpec) -> dict[str, Job]:
    """Job DAG in deterministic insertion order."""
    jobs: dict[str, Job] = {}
    analyses = []
    for ds in spec.datasets:
        gen_deps = []
        if ds.synthetic:
            gid = f"gen:{ds.name}"
            jobs[gid] = Job(gid, "gen", {"dataset": ds.name, "source": ds.source,
                                         "seed": spec.seed}, [])
            gen_deps = [gid]
        for fs in ds.fields:
            for cfg in spec.configs[f"{ds.name}/{fs.name}"]:
                cell = cell_id(ds.name, fs.name, cfg)
                cmd = {"dataset": ds.name, "field": fs.name, "config": cfg.to_dict()}
                bid, aid = f"bench:{cell}", f"analysis:{cell}"
                jobs[bid] = Job(bid, "bench", {**cmd, "protocol": spec.protocol}, list(gen_deps),
                                timed=True)
                jobs[aid] = Job(aid, "analysis", {**cmd, "gate": fs.gate, "contrast": fs.contrast,
                                                  "gates": spec.gates}, [bid])
                analyses.append(aid)
    if not analyses:
        raise PlanningError("sweep has no (field, config) cells")
    jobs["report"] = Job("report", "report", {"gates": spec.gates}, analyses, tolerant=True)
    for jid, extra in spec.dependencies.items():
        if jid not in jobs:
            raise PlanningError(f"dependency names unknown job {jid!r}")
        for dep in extra:
            if dep not in jobs:
                raise PlanningError(f"job {jid!r} depends on unknown job {dep!r}")
            if dep not in jobs[jid].depends_on:
                jobs[jid].depends_on.append(dep)
    check_acyclic(jobs)
    return jobs


def check_acyclic(jobs: dict[str, Job]) -> list[str]:
    """Topological order; raises PlanningError naming a cycle."""
    ts = graphlib.TopologicalSorter({j.id: j.depends_on for j in jobs.values()})
    try:
        return list(ts.static_order())
    except graphlib.CycleError as exc:
        cycle = exc.args[1]
        raise PlanningError("dependency cycle: " + " -> ".join(cycle)) from None


# ------------------------------------------------------------------ artifacts

def _safe(s: str) -> str:
    return s.replace("/", "__").replace(":", "_")


def stream_path(spec: SweepSpec, cell: str) -> Path:
    return spec.output_dir / "streams" / f"{_safe(cell)}.fsc"


def record_path(spec: SweepSpec, cell: str) -> Path:
    return spec.output_dir / "records" / f"{_safe(cell)}.json"


def analysis_path(spec: SweepSpec, cell: str) -> Path:
    return spec.output_dir / "analysis" / f"{_safe(cell)}.json"


def _cell_of(job: Job) -> str:
    return job.id.split(":", 1)[1]


def _sha_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


# ------------------------------------------------------------------ tasks

_cache_lock = threading.Lock()
_orig_cache: dict = {}


def load_dataset_field(spec: SweepSpec, ds: DatasetSpec, fname: str) -> Field:
    return read_field(spec.dataset_dir(ds) / f"{fname}.f32")


def _load_particles(spec: SweepSpec, ds: DatasetSpec) -> ParticleSet:
    return read_particles(spec.dataset_dir(ds))


def task_gen(spec: SweepSpec, job: Job) -> list[str]:
    ds = spec.dataset(job.command["dataset"])
    src = dict(ds.source)
    gen = src.pop("synthetic")
    out = spec.dataset_dir(ds)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(src.pop("seed", spec.seed))
    if gen == "nyx_like":
        box = ds.box_length or float(src.get("box_length", 64.0))
        fields = synth.nyx_like(int(src.get("n", 64)), box, seed)
        paths = []
        for fs in ds.fields:
            if fs.name not in fields:
                raise ConfigError(f"nyx_like has no field {fs.name!r}")
        for name, f in fields.items():
            write_field(f, out / f"{name}.f32")
            paths.append(str(out / f"{name}.f32"))
        return paths
    p = synth.hacc_like(int(src.get("n_particles", 32768)), ds.box_length or 256.0,
                        int(src.get("grid", 32)), seed, float(src.get("velocity_sigma", 300.0)))
    write_particles(p, out)
    return [str(out)]


def task_bench(spec: SweepSpec, job: Job, clock=None) -> list[str]:
    ds = spec.dataset(job.command["dataset"])
    fname = job.command["field"]
    cfg = CompressionConfig.from_dict(job.command["config"])
    proto = job.command["protocol"]
    f = load_dataset_field(spec, ds, fname)
    kw = {} if clock is None else {"clock": clock}
    rec = bench.run_cell(f, cfg, proto["warmup"], proto["runs"], threads=proto["threads"],
                         dataset=ds.name, **kw)
    cell = _cell_of(job)
    sp, rp = stream_path(spec, cell), record_path(spec, cell)
    sp.parent.mkdir(parents=True, exist_ok=True)
    rp.parent.mkdir(parents=True, exist_ok=True)
    write_stream(rec.stream, sp)
    rp.write_text(_dump(rec.to_dict()))
    return [str(sp), str(rp)]


def _orig_spectrum(path: Path, f: Field, box: float, contrast: bool):
    key = ("pk", str(path), _sha_file(path), box, contrast)
    with _cache_lock:
        if key in _orig_cache:
            return _orig_cache[key]
    s = analysis.power_spectrum(f, box, contrast)
    with _cache_lock:
        _orig_cache[key] = s
    return s


def _orig_catalog(spec: SweepSpec, ds: DatasetSpec, p: ParticleSet, ll: float, n_min: int):
    d = spec.dataset_dir(ds)
    key = ("halo", str(d), _sha_file(d / "position_x.f32"), _sha_file(d / "position_y.f32"),
           _sha_file(d / "position_z.f32"), ll, n_min)
    with _cache_lock:
        if key in _orig_cache:
            return _orig_cache[key]
    c = analysis.fof_halos(p, ll, n_min)
    with _cache_lock:
        _orig_cache[key] = c
    return c


def catalog_rows(c: analysis.HaloCatalog) -> list[dict]:
    return [{"id": h.id, "count": h.count, "com_x": h.center[0], "com_y": h.center[1],
             "com_z": h.center[2], "mcp": h.most_connected, "mbp": h.most_bound}
            for h in c.halos]


def task_analysis(spec: SweepSpec, job: Job) -> list[str]:
    ds = spec.dataset(job.command["dataset"])
    fname = job.command["field"]
    gates = job.command["gates"]
    cell = _cell_of(job)
    recon = codec.decompress(read_stream(stream_path(spec, cell)), fname)
    out = {"cell": cell, "dataset": ds.name, "field": fname, "config": job.command["config"],
           "gate": job.command["gate"], "verdicts": {}}
    if job.command["gate"] == "pk":
        path = spec.dataset_dir(ds) / f"{fname}.f32"
        f = read_field(path)
        box = ds.box_length or 1.0
        so = _orig_spectrum(path, f, box, job.command["contrast"])
        sr = analysis.power_spectrum(recon, box, job.command["contrast"])
        g = analysis.pk_ratio(so, sr, gates["pk_tol"], gates["min_modes"])
        out["verdicts"]["pk_ratio"] = g.to_dict()
        out["curve"] = {"kind": "pk", "x": so.k_bins.tolist(), "orig": so.pk.tolist(),
                        "recon": sr.pk.tolist(), "ratio": g.ratios.tolist(),
                        "modes": so.mode_counts.tolist(), "checked": g.checked.tolist(),
                        "tol": g.tol}
    elif job.command["gate"] == "halo":
        p = _load_particles(spec, ds)
        ll = gates["linking_length"] or analysis.default_linking_length(p)
        co = _orig_catalog(spec, ds, p, ll, gates["n_min"])
        cr = analysis.fof_halos(p.replace(**{fname: recon}), ll, gates["n_min"])
        edges = analysis.mass_bin_edges(co, gates["halo_bins"])
        no = analysis.halo_mass_function(co, edges)
        nr = analysis.halo_mass_function(cr, edges)
        g = analysis.halo_count_ratio(no, nr, gates["halo_tol"], edges)
        out["verdicts"]["halo_count_ratio"] = g.to_dict()
        out["curve"] = {"kind": "halo", "x": g.bins.tolist(), "orig": no.tolist(),
                        "recon": nr.tolist(), "ratio": g.ratios.tolist(),
                        "modes": no.tolist(), "checked": g.checked.tolist(), "tol": g.tol}
        out["halos_orig"] = catalog_rows(co)
        out["halos_recon"] = catalog_rows(cr)
        out["linking_length"] = ll
    ap = analysis_path(spec, cell)
    ap.parent.mkdir(parents=True, exist_ok=True)
    ap.write_text(_dump(out))
    return [str(ap)]


def load_results(spec: SweepSpec, jobs: dict[str, Job]) -> tuple[list[bench.BenchRecord], list[dict], list[str]]:
    """Records with verdicts attached, analysis documents, and cells missing either."""
    records, docs, gaps = [], [], []
    for job in jobs.values():
        if job.kind != "analysis":
            continue
        cell = _cell_of(job)
        rp, ap = record_path(spec, cell), analysis_path(spec, cell)
        if job.status is not Status.DONE or not rp.exists() or not ap.exists():
            gaps.append(cell)
            continue
        rec = bench.BenchRecord.from_dict(json.loads(rp.read_text()))
        doc = json.loads(ap.read_text())
        rec.verdicts = doc["verdicts"]
        records.append(rec)
        docs.append(doc)
    return records, docs, gaps


def task_report(spec: SweepSpec, job: Job, jobs: dict[str, Job]) -> list[str]:
    from . import report
    records, docs, gaps = load_results(spec, jobs)
    sel = select_best_fit(records, expected_fields=_expected_fields(spec))
    return report.write_report(spec.output_dir, records, docs, sel, spec.gates, gaps)


def _expected_fields(spec: SweepSpec) -> list[tuple[str, str]]:
    return [(ds.name, fs.name) for ds in spec.datasets for fs in ds.fields]


# ------------------------------------------------------------------ execute

def _fingerprint(spec: SweepSpec, job: Job, fps: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"id": job.id, "command": job.command}, sort_keys=True).encode())
    for dep in sorted(job.depends_on):
        h.update(fps.get(dep, "").encode())
    if job.kind == "bench":
        ds = spec.dataset(job.command["dataset"])
        path = spec.dataset_dir(ds) / f"{job.command['field']}.f32"
        if path.exists():
            h.update(_sha_file(path).encode())
    return h.hexdigest()


@dataclass
class RunLedger:
    path: Path
    entries: dict

    @classmethod
    def load(cls, path: Path) -> "RunLedger":
        try:
            return cls(path, json.loads(path.read_text()).get("jobs", {}))
        except (OSError, json.JSONDecodeError):
            return cls(path, {})

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(_dump({"version": SPEC_VERSION, "jobs": self.entries}))
        tmp.replace(self.path)

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.entries.items() if v["status"] == Status.FAILED.value]


def execute(spec: SweepSpec, jobs: Optional[dict[str, Job]] = None, max_workers: int = 2,
            runner: Optional[Callable[[SweepSpec, Job, dict], list[str]]] = None,
            resume: bool = True) -> RunLedger:
    """Run the DAG in dependency order and return the ledger.

    ``runner`` replaces the built-in task dispatch (tests use it to record
    execution order). Timed bench jobs hold a lock so no two run at once.
    """
    jobs = plan(spec) if jobs is None else jobs
    order = check_acyclic(jobs)
    ledger = RunLedger.load(spec.output_dir / "ledger.json") if resume else \
        RunLedger(spec.output_dir / "ledger.json", {})
    runner = runner or _dispatch
    timed_lock = threading.Lock()
    fps: dict[str, str] = {}
    dependents = {j: [] for j in jobs}
    for j in jobs.values():
        for d in j.depends_on:
            dependents[d].append(j.id)

    def ready(j: Job) -> bool:
        if j.status is not Status.PENDING:
            return False
        finished = (Status.DONE, Status.FAILED, Status.SKIPPED)
        if j.tolerant:
            return all(jobs[d].status in finished for d in j.depends_on)
        return all(jobs[d].status is Status.DONE for d in j.depends_on)

    def skip_downstream(jid: str):
        for child in dependents[jid]:
            c = jobs[child]
            if c.status is Status.PENDING and not c.tolerant:
                c.status = Status.SKIPPED
                ledger.entries[child] = {"status": Status.SKIPPED.value, "fingerprint": "",
                                         "artifacts": [], "error": f"upstream {jid} did not finish"}
                skip_downstream(child)

    def run(j: Job):
        if j.timed:
            with timed_lock:
                return runner(spec, j, jobs)
        return runner(spec, j, jobs)

    rank = {jid: i for i, jid in enumerate(order)}
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        running = {}
        while True:
            for j in sorted((j for j in jobs.values() if ready(j)), key=lambda j: rank[j.id]):
                fp = _fingerprint(spec, j, fps)
                prev = ledger.entries.get(j.id)
                if (resume and prev and prev["status"] == Status.DONE.value
                        and prev["fingerprint"] == fp
                        and all(Path(a).exists() for a in prev["artifacts"])
                        and j.kind != "report"):
                    j.status = Status.DONE
                    fps[j.id] = fp
                    continue
                j.status = Status.RUNNING
                running[pool.submit(run, j)] = (j, fp)
            if not running:
                if any(ready(j) for j in jobs.values()):
                    continue
                break
            done, _ = wait(list(running), return_when=FIRST_COMPLETED)
            for fut in done:
                j, fp = running.pop(fut)
                try:
                    artifacts = fut.result()
                    j.status = Status.DONE
                    fps[j.id] = fp
                    ledger.entries[j.id] = {"status": Status.DONE.value, "fingerprint": fp,
                                            "artifacts": list(artifacts), "error": None}
                except Exception as exc:  # noqa: BLE001 - recorded, branch continues
                    j.status = Status.FAILED
                    log.error("job %s failed: %s", j.id, exc)
                    log.debug("%s", traceback.format_exc())
                    ledger.entries[j.id] = {"status": Status.FAILED.value, "fingerprint": fp,
                                            "artifacts": [], "error": f"{type(exc).__name__}: {exc}"}
                    skip_downstream(j.id)
                ledger.save()
    for j in jobs.values():
        if j.status is Status.DONE and j.id not in ledger.entries:
            ledger.entries[j.id] = {"status": Status.DONE.value, "fingerprint": fps[j.id],
                                    "artifacts": [], "error": None}
    ledger.save()
    return ledger


def _dispatch(spec: SweepSpec, job: Job, jobs: dict[str, Job]) -> list[str]:
    if job.kind == "gen":
        return task_gen(spec, job)
    if job.kind == "bench":
        return task_bench(spec, job)
    if job.kind == "analysis":
        return task_analysis(spec, job)
    if job.kind == "report":
        return task_report(spec, job, jobs)
    raise ValueError(f"unknown job kind {job.kind}")


def run_sweep(spec: SweepSpec, max_workers: int = 2, resume: bool = True) -> RunLedger:
    return execute(spec, plan(spec), max_workers=max_workers, resume=resume)


# ------------------------------------------------------------------ selection

@dataclass(frozen=True)
class Selection:
    """Best-fit choice per (dataset, field); ``chosen[key]`` is None when nothing passed."""

    chosen: dict
    overall_ratio: Optional[float]
    missing: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.missing and bool(self.chosen)

    @property
    def status(self) -> str:
        return "selected" if self.ok else NO_SELECTION

    def to_dict(self) -> dict:
        fields = []
        for (ds, fname), rec in sorted(self.chosen.items()):
            fields.append({"dataset": ds, "field": fname,
                           "config": rec.config.to_dict() if rec else None,
                           "ratio": rec.ratio if rec else None,
                           "original_bytes": rec.original_bytes if rec else None,
                           "compressed_bytes": rec.compressed_bytes if rec else None,
                           "psnr": rec.quality.psnr if rec else None,
                           "verdicts": {k: v["verdict"] for k, v in rec.verdicts.items()}
                           if rec else None})
        return {"status": self.status, "overall_ratio": self.overall_ratio,
                "missing": ["/".join(k) for k in self.missing], "fields": fields}


def _rank_key(rec: bench.BenchRecord):
    # sort ascending: best first
    return (-rec.ratio, -rec.total_throughput, rec.config)


def select_best_fit(records, expected_fields=None) -> Selection:
    """Gate-first, then highest ratio, then higher throughput, then smallest config.

    ``expected_fields`` lists (dataset, field) keys that must be covered; by
    default every field appearing in ``records``.
    """
    keys = {(r.dataset, r.field) for r in records}
    if expected_fields is not None:
        keys |= {tuple(k) for k in expected_fields}
    chosen = {}
    for key in sorted(keys):
        ok = [r for r in records if (r.dataset, r.field) == key and r.all_pass]
        chosen[key] = min(ok, key=_rank_key) if ok else None
    missing = tuple(k for k in sorted(keys) if chosen[k] is None)
    overall = None
    if chosen and not missing:
        orig = sum(r.original_bytes for r in chosen.values())
        comp = sum(r.compressed_bytes for r in chosen.values())
        overall = orig / comp
    return Selection(chosen, overall, missing)
