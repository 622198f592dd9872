"""End-to-end PEC experiments: sampling, simulation, estimation and reports.

An archive directory holds

* ``raw/<circuit>.npz``: sampled index tuples, weights and per-instance shot
  statistics for every basis, plus the no-PEC and noiseless references;
* ``results.csv``: one row per (circuit, basis, observable) task;
* ``meta.json``: configuration, its hash, seed and package version.

Every random draw comes from :func:`qpdcv.numerics.derive_stream` with a
path naming the circuit, basis and instance, so archives do not depend on
the number of worker threads.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import erf

from . import __version__
from .controls import build_cv_set, evaluate_controls, precompute_stats, rho_squared_grid
from .estimators import (
    Dataset,
    daf,
    estimate_basic,
    estimate_centered,
    estimate_cv,
    sorp,
    studentized_residual,
    variance_decomposition,
)
from .ising import IsingCircuitSpec, PecRunner, build_qpd, observable_names, resolve_noise
from .numerics import derive_stream
from .qpd import gamma, instance_weights, mu_w, n_sigma_k, sample_indices

PERCENTILES = (25, 50, 75, 90)


# --- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    qubits: int = 4
    n_trot_list: tuple[int, ...] = tuple(range(1, 9))
    h: float = 1.0
    j: float = 0.15
    dt: float = 0.5
    n_instances: int = 200
    n_shots: int = 256
    bases: tuple[str, ...] = ("Y", "Z")
    observables: tuple[str, ...] = ()  # empty means every observable
    cv_sets: tuple[dict, ...] = ({"kind": 1}, {"kind": 2}, {"kind": 3}, {"kind": 4}, {"kind": 5})
    master_seed: int = 20240101
    noise_file: str = "builtin:q4"
    noiseless_shots: int = 1024**2
    nopec_reference: bool = True
    spiral_method: str = "cv2"
    heatmap_gammas: tuple[float, ...] = (1.13, 2.0, 6.48)
    name: str = "experiment"

    def __post_init__(self):
        for f in ("n_trot_list", "bases", "observables", "heatmap_gammas"):
            object.__setattr__(self, f, tuple(getattr(self, f)))
        object.__setattr__(self, "cv_sets", tuple(dict(c) for c in self.cv_sets))
        if self.qubits < 2:
            raise ValueError("qubits must be at least 2")
        if self.n_instances < 4:
            raise ValueError("n_instances must be at least 4")
        if self.n_shots < 2:
            raise ValueError("n_shots must be at least 2")
        if self.noiseless_shots < 2:
            raise ValueError("noiseless_shots must be at least 2")
        if not self.n_trot_list or min(self.n_trot_list) < 1:
            raise ValueError("n_trot_list must hold positive integers")
        if not self.bases or set(self.bases) - {"Y", "Z"}:
            raise ValueError("bases must be a non-empty subset of Y, Z")
        unknown = set(self.observables) - set(observable_names(self.qubits))
        if unknown:
            raise ValueError(f"unknown observables {sorted(unknown)}")
        labels = [cv_label(c) for c in self.cv_sets]
        if len(set(labels)) != len(labels):
            raise ValueError("cv set labels must be unique")
        for c in self.cv_sets:
            if c.get("kind") not in (1, 2, 3, 4, 5):
                raise ValueError(f"cv set kind must be 1..5, got {c.get('kind')!r}")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path_or_name) -> ExperimentConfig:
        """Load a JSON file, or a bundled config by name (``q4_desk``, ``q4_full``, ``q10_full``)."""
        p = Path(path_or_name)
        if p.is_file():
            return cls.from_dict(json.loads(p.read_text()))
        res = resources.files("qpdcv") / "configs" / f"{path_or_name}.json"
        if res.is_file():
            return cls.from_dict(json.loads(res.read_text()))
        raise FileNotFoundError(f"no config file or bundled config named {path_or_name!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def replace(self, **changes) -> ExperimentConfig:
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def observable_list(self) -> list[str]:
        names = observable_names(self.qubits)
        return [o for o in names if not self.observables or o in self.observables]

    @property
    def methods(self) -> list[str]:
        return ["basic", "centered"] + [cv_label(c) for c in self.cv_sets]

    def circuit(self, n_trot: int) -> IsingCircuitSpec:
        return IsingCircuitSpec(self.qubits, n_trot, self.h, self.j, self.dt)


def cv_label(cv: dict) -> str:
    return cv.get("label", f"cv{cv['kind']}")


def circuit_id(cfg: ExperimentConfig, n_trot: int) -> str:
    return f"q{cfg.qubits}_t{n_trot}"


# --- deterministic npz ---------------------------------------------------------------


def save_npz(path: Path, arrays: dict) -> None:
    """Like ``np.savez`` but with fixed zip timestamps, so equal data gives equal bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[key]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_npz(path: Path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return {k: z[k] for k in z.files}


# --- stages -------------------------------------------------------------------------


@dataclass
class CircuitContext:
    """Per-circuit objects shared by every stage."""

    cfg: ExperimentConfig
    n_trot: int
    runner: PecRunner = field(init=False)

    def __post_init__(self):
        noise = resolve_noise(self.cfg.noise_file)
        self.runner = PecRunner(self.cfg.circuit(self.n_trot), noise)

    @property
    def cid(self) -> str:
        return circuit_id(self.cfg, self.n_trot)

    @property
    def model(self):
        return self.runner.pec.model

    def obs_columns(self) -> list[int]:
        names = observable_names(self.cfg.qubits)
        return [names.index(o) for o in self.cfg.observable_list]


def sample_circuit(ctx: CircuitContext) -> dict:
    rng = derive_stream(ctx.cfg.master_seed, ("instances", ctx.cid))
    idx = sample_indices(ctx.model, rng, ctx.cfg.n_instances)
    return {"indices": idx.astype(np.int8), "w": instance_weights(ctx.model, idx)}


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def simulate_circuit(ctx: CircuitContext, raw: dict, threads: int = 1) -> dict:
    """Shot statistics for every sampled instance, plus no-PEC and noiseless references."""
    cfg, runner = ctx.cfg, ctx.runner
    out = dict(raw)
    idx = raw["indices"]
    cols = ctx.obs_columns()
    for basis in cfg.bases:
        def one(i, basis=basis):
            rng = derive_stream(cfg.master_seed, ("shots", ctx.cid, basis, i))
            vals = runner.shot_observables(idx[i], basis, cfg.n_shots, rng)[:, cols]
            return vals.mean(axis=0), vals.var(axis=0, ddof=1)

        res = _map(one, range(cfg.n_instances), threads)
        out[f"x_{basis}"] = np.stack([r[0] for r in res])
        out[f"shotvar_{basis}"] = np.stack([r[1] for r in res])

        if cfg.nopec_reference:
            def nopec(i, basis=basis):
                rng = derive_stream(cfg.master_seed, ("nopec", ctx.cid, basis, i))
                return runner.shot_observables(None, basis, cfg.n_shots, rng)[:, cols]

            vals = np.concatenate(_map(nopec, range(cfg.n_instances), threads))
            out[f"nopec_t_{basis}"] = vals.mean(axis=0)
            out[f"nopec_s2_{basis}"] = vals.var(axis=0, ddof=1) / vals.shape[0]

        t, s2 = noiseless_reference(ctx, basis)
        out[f"ref_t_{basis}"] = t
        out[f"ref_s2_{basis}"] = s2
    return out


def noiseless_reference(ctx: CircuitContext, basis: str) -> tuple[np.ndarray, np.ndarray]:
    """Shot-sampled noiseless estimate and its variance (sample variance / shots)."""
    n = ctx.cfg.noiseless_shots
    probs = ctx.runner.sim.exact_probabilities(basis)
    rng = derive_stream(ctx.cfg.master_seed, ("noiseless", ctx.cid, basis))
    counts = rng.multinomial(n, probs / probs.sum())
    vals = ctx.runner.outcome_values[:, ctx.obs_columns()]
    mean = counts @ vals / n
    var = (counts @ (vals - mean) ** 2) / (n - 1)
    return mean, var / n


def run_noiseless_reference(cfg: ExperimentConfig) -> dict:
    """``{(circuit_id, basis): (t_hat, sigma_sq)}`` arrays over observables."""
    out = {}
    for n_trot in cfg.n_trot_list:
        ctx = CircuitContext(cfg, n_trot)
        for basis in cfg.bases:
            out[ctx.cid, basis] = noiseless_reference(ctx, basis)
    return out


def control_data(ctx: CircuitContext, indices) -> dict:
    """Control values and exact statistics for every configured cv set."""
    out = {}
    pec = ctx.runner.pec
    for cv in ctx.cfg.cv_sets:
        kind = cv["kind"]
        kwargs = {}
        if kind == 2 and "thetas" in cv:
            kwargs["thetas"] = tuple(cv["thetas"])
        if kind == 3 and "phis" in cv:
            kwargs["phis"] = tuple(cv["phis"])
        if kind == 4:
            kwargs.update(qubit_grouping=pec.grouping, n_qubits=ctx.cfg.qubits)
        if kind == 5:
            kwargs["rng"] = derive_stream(ctx.cfg.master_seed, ("cvset5", ctx.cid, cv_label(cv)))
        controls = build_cv_set(kind, ctx.model, **kwargs)
        stats = precompute_stats(ctx.model, controls)
        out[cv_label(cv)] = (evaluate_controls(controls, indices), stats)
    return out


def result_columns(methods) -> list[str]:
    cols = ["circuit", "n_trot", "basis", "observable", "gamma", "mu_w",
            "ref_t", "ref_s2", "nopec_t", "nopec_s2", "ceiling_daf", "ceiling_sorp"]
    for m in methods:
        cols += [f"{m}_t", f"{m}_s2", f"{m}_daf", f"{m}_sorp", f"{m}_resid"]
    return cols


def estimate_circuit(ctx: CircuitContext, raw: dict) -> list[dict]:
    """One result row per (basis, observable) of this circuit."""
    cfg = ctx.cfg
    w = raw["w"]
    mw = mu_w(ctx.model)
    g = gamma(ctx.model)
    cvs = control_data(ctx, raw["indices"].astype(np.int64))
    rows = []
    for basis in cfg.bases:
        for o, obs in enumerate(cfg.observable_list):
            x = raw[f"x_{basis}"][:, o]
            sv = raw[f"shotvar_{basis}"][:, o]
            results = {"basic": estimate_basic(Dataset(x, w)), "centered": estimate_centered(Dataset(x, w), mw)}
            for label, (v, stats) in cvs.items():
                results[label] = estimate_cv(Dataset(x, w, v), stats, label)
            split = variance_decomposition(w, x, sv, cfg.n_shots)
            ref_t = float(raw[f"ref_t_{basis}"][o])
            ref_s2 = float(raw[f"ref_s2_{basis}"][o])
            row = {
                "circuit": ctx.cid, "n_trot": ctx.n_trot, "basis": basis, "observable": obs,
                "gamma": g, "mu_w": mw, "ref_t": ref_t, "ref_s2": ref_s2,
                "nopec_t": float(raw[f"nopec_t_{basis}"][o]) if cfg.nopec_reference else math.nan,
                "nopec_s2": float(raw[f"nopec_s2_{basis}"][o]) if cfg.nopec_reference else math.nan,
                "ceiling_daf": split.ceiling_daf, "ceiling_sorp": split.ceiling_sorp,
            }
            base = results["basic"].sigma_hat_sq
            for m in cfg.methods:
                r = results[m]
                row[f"{m}_t"] = r.t_hat
                row[f"{m}_s2"] = r.sigma_hat_sq
                row[f"{m}_daf"] = daf(base, r.sigma_hat_sq)
                row[f"{m}_sorp"] = sorp(base, r.sigma_hat_sq)
                row[f"{m}_resid"] = studentized_residual(r.t_hat, r.sigma_hat_sq, ref_t, ref_s2)
            rows.append(row)
    return rows


# --- archive -------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "unbounded" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _parse(v: str):
    if v == "unbounded":
        return math.inf
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def write_results(path: Path, rows: list[dict], methods) -> None:
    cols = result_columns(methods)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in cols])


def read_results(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_meta(out: Path, cfg: ExperimentConfig) -> dict:
    circuits = {}
    for n_trot in cfg.n_trot_list:
        pec = build_qpd(resolve_noise(cfg.noise_file), cfg.circuit(n_trot))
        circuits[circuit_id(cfg, n_trot)] = {
            "n_trot": n_trot,
            "gamma": gamma(pec.model),
            "m_total": pec.m_total,
            "m_nonzero": pec.model.n_positions,
            "n_sigma_k": n_sigma_k(pec.model),
        }
    meta = {
        "package": "qpdcv",
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.master_seed,
        "methods": cfg.methods,
        "observables": cfg.observable_list,
        "circuits": circuits,
        "results_columns": result_columns(cfg.methods),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def read_config(archive: Path) -> ExperimentConfig:
    meta = json.loads((Path(archive) / "meta.json").read_text())
    return ExperimentConfig.from_dict(meta["config"])


def raw_path(out: Path, cid: str) -> Path:
    return Path(out) / "raw" / f"{cid}.npz"


def stage_sample(cfg: ExperimentConfig, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_meta(out, cfg)
    for n_trot in cfg.n_trot_list:
        ctx = CircuitContext(cfg, n_trot)
        save_npz(raw_path(out, ctx.cid), sample_circuit(ctx))


def stage_simulate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> None:
    out = Path(out)
    for n_trot in cfg.n_trot_list:
        ctx = CircuitContext(cfg, n_trot)
        path = raw_path(out, ctx.cid)
        if not path.is_file():
            raise FileNotFoundError(f"{path} missing; run the sample stage first")
        save_npz(path, simulate_circuit(ctx, load_npz(path), threads))


def stage_estimate(cfg: ExperimentConfig, out: Path) -> list[dict]:
    out = Path(out)
    rows = []
    for n_trot in cfg.n_trot_list:
        ctx = CircuitContext(cfg, n_trot)
        path = raw_path(out, ctx.cid)
        if not path.is_file():
            raise FileNotFoundError(f"{path} missing; run the simulate stage first")
        raw = load_npz(path)
        if f"x_{cfg.bases[0]}" not in raw:
            raise ValueError(f"{path} has no shot data; run the simulate stage first")
        rows += estimate_circuit(ctx, raw)
    write_results(out / "results.csv", rows, cfg.methods)
    return rows


def run_experiment(cfg: ExperimentConfig, out: Path | None = None, threads: int = 1,
                   keep_raw: bool = True) -> list[dict]:
    """Sample, simulate and estimate every circuit; optionally persist an archive."""
    rows = []
    raws = {}
    for n_trot in cfg.n_trot_list:
        ctx = CircuitContext(cfg, n_trot)
        raw = simulate_circuit(ctx, sample_circuit(ctx), threads)
        raws[ctx.cid] = raw
        rows += estimate_circuit(ctx, raw)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_meta(out, cfg)
        if keep_raw:
            for cid, raw in raws.items():
                save_npz(raw_path(out, cid), raw)
        write_results(out / "results.csv", rows, cfg.methods)
    return rows


# --- reports -------------------------------------------------------------------------


def percentile_table(rows: list[dict], methods) -> list[dict]:
    """DAF and SORP percentiles per method (linear interpolation between order statistics)."""
    table = []
    for m in methods:
        d = np.array([r[f"{m}_daf"] for r in rows], dtype=float)
        s = np.array([r[f"{m}_sorp"] for r in rows], dtype=float)
        d, s = d[np.isfinite(d)], s[np.isfinite(s)]
        entry = {"method": m}
        for p in PERCENTILES:
            entry[f"daf_p{p}"] = float(np.percentile(d, p)) if d.size else math.nan
            entry[f"sorp_p{p}"] = float(np.percentile(s, p)) if s.size else math.nan
        table.append(entry)
    return table


def half_normal_cdf(x) -> np.ndarray:
    return erf(np.asarray(x, dtype=float) / math.sqrt(2.0))


def residual_cdf(rows: list[dict], methods) -> list[dict]:
    out = []
    for m in methods:
        r = np.sort(np.abs([row[f"{m}_resid"] for row in rows]))
        r = r[np.isfinite(r)]
        ecdf = np.arange(1, r.size + 1) / r.size
        ref = half_normal_cdf(r)
        out += [{"method": m, "abs_resid": a, "ecdf": e, "half_normal": h} for a, e, h in zip(r, ecdf, ref)]
    return out


def spiral_series(rows: list[dict], method: str, observable: str = "w1") -> list[dict]:
    """``<O_y>`` against ``<O_z>`` across Trotter depth for several estimates."""
    by = {}
    for r in rows:
        if r["observable"] == observable:
            by.setdefault(r["n_trot"], {})[r["basis"]] = r
    out = []
    for n_trot in sorted(by):
        pair = by[n_trot]
        if set(pair) != {"Y", "Z"}:
            continue
        for label, key in (("noiseless", "ref_t"), ("nopec", "nopec_t"), ("basic", "basic_t"), (method, f"{method}_t")):
            out.append({"n_trot": n_trot, "series": label, "y": pair["Y"][key], "z": pair["Z"][key]})
    return out


def heatmap_grids(gammas, n: int = 101) -> list[dict]:
    out = []
    for g in gammas:
        if not g > 1:
            raise ValueError(f"gamma must exceed 1, got {g}")
        grid = rho_squared_grid(float(g), n)
        for i, ex in enumerate(grid["ex"]):
            for k, ewx in enumerate(grid["ewx"]):
                out.append({"gamma": float(g), "ex": float(ex), "ewx": float(ewx),
                            "rho2": float(grid["rho2"][i, k]), "allowed": bool(grid["allowed"][i, k])})
    return out


def _write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _fmt(v) for k, v in r.items()})


def format_percentiles(table: list[dict]) -> str:
    head = f"{'method':<10}" + "".join(f"{'p' + str(p):>18}" for p in PERCENTILES)
    lines = [head]
    for e in table:
        cells = "".join(f"{e[f'daf_p{p}']:>9.2f} ({round(e[f'sorp_p{p}']) + 0.0:>5.0f}%)" for p in PERCENTILES)
        lines.append(f"{e['method']:<10}{cells}")
    return "\n".join(lines)


def report(archive: Path, out: Path | None = None, heatmap_n: int = 101) -> dict:
    """Write percentile, residual-CDF, spiral and heatmap tables for an archive."""
    archive = Path(archive)
    path = archive / "results.csv"
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found")
    rows = read_results(path)
    if not rows:
        raise ValueError("archive holds no results")
    cfg = read_config(archive)
    out = Path(out) if out is not None else archive / "report"
    out.mkdir(parents=True, exist_ok=True)
    methods = cfg.methods
    table = percentile_table(rows, methods)
    cdf = residual_cdf(rows, methods)
    spiral_method = cfg.spiral_method if cfg.spiral_method in methods else "basic"
    spiral = spiral_series(rows, spiral_method)
    heat = heatmap_grids(cfg.heatmap_gammas, heatmap_n)
    _write_table(out / "percentiles.csv", table)
    _write_table(out / "residual_cdf.csv", cdf)
    _write_table(out / "spiral.csv", spiral)
    _write_table(out / "heatmap.csv", heat)
    text = format_percentiles(table)
    (out / "summary.txt").write_text(text + "\n")
    return {"percentiles": table, "residual_cdf": cdf, "spiral": spiral, "heatmap": heat, "summary": text}
