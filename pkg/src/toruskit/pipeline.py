"""End-to-end analyses driven by a JSON configuration.

Two modes share the back end: ``autonomous`` (return map on an affine section of
an autonomous field) and ``averaging`` (stroboscopic map of a periodically
perturbed field, with the averaged guiding system supplying the Hopf data).
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import avg, torus
from .errors import (ConfigError, DivergedIteration, NoInvariantCircle, ToruskitError, WeakGap)
from .exprvf import load_system
from .nshopf import certify_ns, hopf_detect_equilibrium
from .section import (ReturnMapFamily, StroboscopicFamily, StroboscopicSection,
                      continue_fixed_points, make_affine_section)
from .spectral import tracked_pair

log = logging.getLogger(__name__)

# Every knob with its default. ``None`` means "derived", see ``resolve_config``.
DEFAULTS = {
    "system": None,
    "mode": None,
    "section": None,
    "mu_bracket": None,
    "continuation_step": None,
    "p_guess": None,
    "x_guess": None,
    "search_box": None,
    "eps": 0.02,
    "eps_samples": None,
    "bracket_factor": 2.0,
    "fit_extra_orders": 1,
    "mu": None,
    "mu_offset": None,
    "grid": [64, 16],
    "M": 16,
    "lyap_iterations": 10000,
    "t_max": 1000.0,
    "angle_floor": 0.1,
    "tolerances": {
        "flow_tol": 1e-11,
        "newton_tol": 1e-11,
        "unit_band": 1e-6,
        "resonance_tol": 1e-4,
        "circle_tol": 1e-9,
        "mesh_tol": None,
        "gap_tol": 1e-4,
        "tang_tol": 1e-5,
        "quad_tol": 1e-12,
        "nd_tol": 1e-6,
        "vanish_rel": 1e-8,
        "lyap_tol": 1e-9,
    },
    "sweep": None,
}

TOL_RANGES = {
    "flow_tol": (1e-13, 1e-3),
    "newton_tol": (1e-14, 1e-4),
    "unit_band": (1e-12, 1e-2),
    "resonance_tol": (1e-10, 1e-1),
    "circle_tol": (1e-13, 1e-2),
    "mesh_tol": (1e-13, 1e-1),
    "gap_tol": (0.0, 1.0),
    "tang_tol": (0.0, 1.0),
    "quad_tol": (1e-15, 1e-4),
    "nd_tol": (0.0, 1.0),
    "vanish_rel": (0.0, 1e-2),
    "lyap_tol": (0.0, 1.0),
}


@dataclass
class PipelineConfig:
    data: dict
    base_dir: Path

    def __getitem__(self, key):
        return self.data[key]

    @property
    def tol(self):
        return self.data["tolerances"]

    def system_path(self):
        p = Path(self.data["system"])
        return p if p.is_absolute() else self.base_dir / p


def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"{where}: unknown key {k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def _float_list(value, length, name):
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers") from None
    if length is not None and len(out) != length:
        raise ConfigError(f"{name} must have {length} entries")
    return out


def resolve_config(raw: dict, base_dir=".", tol_scale=1.0) -> PipelineConfig:
    """Merge with defaults, validate ranges and apply ``tol_scale`` to every tolerance."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    data = _merge(DEFAULTS, raw)
    if data["system"] is None:
        raise ConfigError("config needs 'system'")
    if not tol_scale > 0:
        raise ConfigError("--tol-scale must be positive")
    for key, val in data["tolerances"].items():
        if val is None:
            continue
        try:
            val = float(val) * tol_scale
        except (TypeError, ValueError):
            raise ConfigError(f"tolerance {key} must be a number") from None
        lo, hi = TOL_RANGES[key]
        if not lo <= val <= hi:
            raise ConfigError(f"tolerance {key} = {val:.3g} outside [{lo:.0e}, {hi:.0e}]")
        data["tolerances"][key] = val
    if data["tolerances"]["mesh_tol"] is None:
        data["tolerances"]["mesh_tol"] = 10 * data["tolerances"]["circle_tol"]
    grid = data["grid"]
    if not (isinstance(grid, list) and len(grid) == 2 and int(grid[0]) >= 3 and int(grid[1]) >= 1):
        raise ConfigError("grid must be [N_theta >= 3, N_s >= 1]")
    data["grid"] = [int(grid[0]), int(grid[1])]
    if int(data["M"]) < 2:
        raise ConfigError("M must be at least 2")
    sweep = data["sweep"]
    if sweep is not None:
        if not isinstance(sweep, dict) or "mu" not in sweep:
            raise ConfigError("sweep needs a 'mu' range [lo, hi, count]")
        for key in sweep:
            if key not in ("mu", "eps"):
                raise ConfigError(f"sweep: unknown key {key!r}")
            lo, hi, count = sweep[key]
            if int(count) < 1:
                raise ConfigError(f"sweep.{key} count must be positive")
    return PipelineConfig(data, Path(base_dir))


def load_config(path, tol_scale=1.0) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return resolve_config(raw, path.parent, tol_scale)


def _mode(cfg, vf):
    mode = cfg["mode"] or ("averaging" if vf.is_periodic else "autonomous")
    if mode not in ("autonomous", "averaging"):
        raise ConfigError(f"mode must be 'autonomous' or 'averaging', got {mode!r}")
    if (mode == "averaging") != vf.is_periodic:
        raise ConfigError(f"mode {mode!r} does not match a {vf.kind} system")
    return mode


def _section(cfg, vf, mode):
    spec = cfg["section"] or ({"type": "stroboscopic"} if mode == "averaging" else None)
    if spec is None:
        raise ConfigError("autonomous mode needs a 'section' with anchor and normal")
    kind = spec.get("type", "affine")
    if mode == "averaging":
        if kind != "stroboscopic":
            raise ConfigError("averaging mode uses a stroboscopic section")
        return StroboscopicSection(vf.period, float(spec.get("t0", 0.0)))
    if kind != "affine":
        raise ConfigError("autonomous mode uses an affine section")
    anchor = _float_list(spec.get("anchor"), vf.dimension, "section.anchor")
    normal = _float_list(spec.get("normal"), vf.dimension, "section.normal")
    return make_affine_section(vf, anchor, normal, int(spec.get("orientation", 1)),
                               mu=float(np.mean(cfg["mu_bracket"])) if cfg["mu_bracket"] else 0.0)


# -- shared torus stage ---------------------------------------------------------------------

def _torus_stage(cfg, vf, sec, family, curve, cert, mu, eps, report):
    tol = cfg.tol
    sample = curve.solve_at(mu)
    r0 = torus.predicted_radius(cert.d_mod, cert.ell1, mu, cert.mu_star)
    handle = family.at(mu)
    inverse = handle.inverse()
    circle = torus.invariant_circle(handle, sample.point, r0, int(cfg["M"]), tol["circle_tol"],
                                    inverse=inverse)
    report["circle"] = circle.to_dict()
    nh = torus.nh_certificate(circle, handle, int(cfg["lyap_iterations"]), tol["gap_tol"],
                              tol["tang_tol"])
    fen = torus.fenichel_checks(circle, vf, sec, mu, eps, float(cfg["t_max"]),
                                angle_floor=float(cfg["angle_floor"]), tol=tol["flow_tol"])
    mesh, residual, extended = torus.saturate_torus(circle, vf, sec, mu, eps, tuple(cfg["grid"]),
                                                    tol["flow_tol"], mesh_tol=tol["mesh_tol"],
                                                    t_max=float(cfg["t_max"]))
    tc = torus.certify_torus(circle, nh, mesh, residual, tol["mesh_tol"], extended, fen)
    report["torus"] = tc.to_dict()
    expected = cert.predicted["torus_stability"]
    report["torus"]["consistent_with_prediction"] = expected == tc.attracting_or_repelling
    return circle, tc


def _side_mu(cfg, cert, default_offset):
    if cfg["mu"] is not None:
        return float(cfg["mu"])
    offset = float(cfg["mu_offset"]) if cfg["mu_offset"] is not None else default_offset
    side = cert.predicted["torus_side"] or 1
    return cert.mu_star + side * offset


# -- autonomous ---------------------------------------------------------------------------------

def analyze_autonomous(cfg, vf, report):
    tol = cfg.tol
    sec = _section(cfg, vf, "autonomous")
    if cfg["mu_bracket"] is None:
        raise ConfigError("autonomous mode needs 'mu_bracket'")
    lo, hi = _float_list(cfg["mu_bracket"], 2, "mu_bracket")
    family = ReturnMapFamily(vf, sec, tol["flow_tol"], float(cfg["t_max"]))
    p0 = np.zeros(vf.dimension - 1) if cfg["p_guess"] is None else \
        np.array(_float_list(cfg["p_guess"], vf.dimension - 1, "p_guess"))
    step = float(cfg["continuation_step"] or (hi - lo) / 8)
    curve = continue_fixed_points(family, p0, (lo, hi), step, tol["newton_tol"])
    cert = certify_ns(family, curve, (lo, hi), tol["unit_band"], tol["resonance_tol"],
                      tol=max(tol["flow_tol"], 1e-12) * 10, lyap_tol=tol["lyap_tol"])
    report["ns_certificate"] = cert.to_dict()
    mu = _side_mu(cfg, cert, 0.05 * (hi - lo))
    report["torus_parameter"] = {"mu": mu, "eps": 0.0}
    circle, tc = _torus_stage(cfg, vf, sec, family, curve, cert, mu, 0.0, report)
    return sec, circle, tc


# -- averaging ---------------------------------------------------------------------------------

def _l_grid(cfg, vf):
    if cfg["x_guess"] is None:
        raise ConfigError("averaging mode needs 'x_guess' for the guiding Hopf point")
    x = np.array(_float_list(cfg["x_guess"], vf.dimension, "x_guess"))
    if cfg["search_box"] is not None:
        box = np.array([_float_list(b, 2, "search_box") for b in cfg["search_box"]])
    else:
        box = np.column_stack([x - 0.5, x + 0.5])
    axes = [np.linspace(b[0], b[1], 3) for b in box]
    return x, np.array(np.meshgrid(*axes, indexing="ij")).reshape(vf.dimension, -1).T


def eps_samples(cfg):
    eps = float(cfg["eps"])
    if cfg["eps_samples"] is not None:
        vals = _float_list(cfg["eps_samples"], None, "eps_samples")
    else:
        vals = [eps * f for f in (2.0, 1.5, 1.0, 0.75, 0.5)]
    if eps not in vals:
        vals.append(eps)
    return sorted(set(vals), reverse=True)


def averaging_front(cfg, vf):
    """Orders, guiding Hopf point and first Lyapunov expansion. Returns (report, certs)."""
    tol = cfg.tol
    x_guess, grid = _l_grid(cfg, vf)
    l = avg.first_nonvanishing_index(vf, grid, 0.0, tol["vanish_rel"],
                                     quad_tol=tol["quad_tol"])
    g_l = avg.g_evaluator(vf, l, quad_tol=tol["quad_tol"])
    hopf = hopf_detect_equilibrium(g_l, x_guess, l=l, newton_tol=tol["newton_tol"])
    certs = {}
    for e in eps_samples(cfg):
        _, cert, curve = avg.locate_mu_epsilon(vf, e, hopf, float(cfg["bracket_factor"]),
                                               tol=tol["flow_tol"], unit_band=tol["unit_band"],
                                               resonance_tol=tol["resonance_tol"])
        certs[e] = (cert, curve)
    samples = sorted(certs)
    fit = avg.ell1_expansion(samples, [certs[e][0].ell1 for e in samples], l, vf.order_k,
                             tol["nd_tol"], extra_orders=int(cfg["fit_extra_orders"]))
    closed = {i: avg.closed_form(vf, i, tol["quad_tol"]) for i in (1, 2) if i <= vf.order_k}
    rep = avg.AveragingReport(
        l=l, g_closed=closed,
        g_numeric=lambda z, mu: avg.extract_gi_numeric(vf, z, mu).orders,
        hopf=hopf, ell1_coeffs=fit.coeffs, j_star=fit.j_star,
        mu_of_eps=[(e, certs[e][0].mu_star) for e in samples],
        ell1_samples=[(e, certs[e][0].ell1) for e in samples], ell1_stderr=fit.stderr,
        fit_residual=fit.residual)
    return rep, certs


def analyze_averaging(cfg, vf, report):
    sec = _section(cfg, vf, "averaging")
    rep, certs = averaging_front(cfg, vf)
    report["averaging"] = rep.to_dict()
    eps = float(cfg["eps"])
    cert, curve = certs[eps]
    report["ns_certificate"] = cert.to_dict()
    side = avg.ell1_sign_torus_side(rep.hopf.alpha_prime_0, rep.ell1_coeffs[rep.j_star])
    report["averaging"]["torus_side"] = side
    mu = _side_mu(cfg, cert, 0.05 * eps)
    report["torus_parameter"] = {"mu": mu, "eps": eps}
    family = StroboscopicFamily(vf, eps, cfg.tol["flow_tol"], sec.t0)
    circle, tc = _torus_stage(cfg, vf, sec, family, curve, cert, mu, eps, report)
    return sec, circle, tc


# -- entry points ---------------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, data):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2) + "\n")


def run_analyze(cfg: PipelineConfig, out_dir) -> int:
    """Run the configured analysis, write report files, return the exit code."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"config": cfg.data, "status": None}
    code = 0
    try:
        vf = load_system(cfg.system_path())
        mode = _mode(cfg, vf)
        report["mode"] = mode
        runner = analyze_averaging if mode == "averaging" else analyze_autonomous
        sec, circle, tc = runner(cfg, vf, report)
        torus.write_mesh_csv(out / "torus_mesh.csv", tc.mesh, tc.extended)
        torus.write_circle_csv(out / "circle.csv", circle, sec)
        report["status"] = "torus_certified"
    except (NoInvariantCircle, DivergedIteration) as exc:
        report["status"] = "no_torus"
        report["absence"] = {"reason": type(exc).__name__, "message": str(exc)}
        code = 3
    except ToruskitError as exc:
        report["status"] = "error"
        report["error"] = _error_dict(exc)
        code = exc.exit_code
    write_json(out / "report.json", report)
    return code


def _error_dict(exc):
    d = {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
    hyp = getattr(exc, "hypothesis", None)
    if hyp is not None:
        d["hypothesis"] = hyp
    return d


# -- sweeps ------------------------------------------------------------------------------------

CLASSES = ("no_torus", "torus_attracting", "torus_repelling", "resonant", "failed")


def _linspace(spec):
    lo, hi, count = float(spec[0]), float(spec[1]), int(spec[2])
    return [lo] if count == 1 else list(np.linspace(lo, hi, count))


def _is_resonant(lam, tol):
    theta = math.atan2(lam.imag, lam.real)
    return min(abs(np.exp(1j * q * theta) - 1) for q in range(1, 5)) < tol


def classify_cell(family, curve, cert, mu, cfg):
    """(classification, circle residual, gap) at one parameter value of a certified family."""
    tol = cfg.tol
    try:
        sample = curve.solve_at(mu)
        lam = tracked_pair(sample.eigenvalues)
        if lam is None:
            return "failed", float("nan"), float("nan")
        if _is_resonant(lam, tol["resonance_tol"]):
            return "resonant", float("nan"), float("nan")
        r0 = torus.predicted_radius(cert.d_mod, cert.ell1, mu, cert.mu_star)
        handle = family.at(mu)
        inverse = handle.inverse()
        circle = torus.invariant_circle(handle, sample.point, r0, int(cfg["M"]), tol["circle_tol"],
                                        inverse=inverse)
        nh = torus.nh_certificate(circle, handle, int(cfg["lyap_iterations"]), tol["gap_tol"],
                                  tol["tang_tol"])
        label = "torus_attracting" if nh.attracting else "torus_repelling"
        return label, circle.residual, nh.gap
    except (NoInvariantCircle, DivergedIteration):
        return "no_torus", float("nan"), float("nan")
    except WeakGap as exc:
        log.info("mu = %.6g: %s", mu, exc)
        return "failed", float("nan"), float("nan")
    except ToruskitError as exc:
        log.info("mu = %.6g: %s: %s", mu, type(exc).__name__, exc)
        return "failed", float("nan"), float("nan")


def _sweep_row_worker(args):
    cfg_data, base_dir, eps, mus = args
    cfg = PipelineConfig(cfg_data, Path(base_dir))
    vf = load_system(cfg.system_path())
    mode = _mode(cfg, vf)
    return _sweep_row(cfg, vf, mode, eps, mus)


def _sweep_row(cfg, vf, mode, eps, mus):
    tol = cfg.tol
    try:
        if mode == "averaging":
            x_guess, grid = _l_grid(cfg, vf)
            l = avg.first_nonvanishing_index(vf, grid, 0.0, tol["vanish_rel"],
                                     quad_tol=tol["quad_tol"])
            g_l = avg.g_evaluator(vf, l, quad_tol=tol["quad_tol"])
            hopf = hopf_detect_equilibrium(g_l, x_guess, l=l, newton_tol=tol["newton_tol"])
            _, cert, curve = avg.locate_mu_epsilon(vf, eps, hopf, float(cfg["bracket_factor"]),
                                                   tol=tol["flow_tol"], unit_band=tol["unit_band"],
                                                   resonance_tol=tol["resonance_tol"])
            family = curve.family
        else:
            sec = _section(cfg, vf, mode)
            lo, hi = _float_list(cfg["mu_bracket"], 2, "mu_bracket")
            family = ReturnMapFamily(vf, sec, tol["flow_tol"], float(cfg["t_max"]))
            p0 = np.zeros(vf.dimension - 1) if cfg["p_guess"] is None else np.array(cfg["p_guess"], float)
            step = float(cfg["continuation_step"] or (hi - lo) / 8)
            curve = continue_fixed_points(family, p0, (lo, hi), step, tol["newton_tol"])
            cert = certify_ns(family, curve, (lo, hi), tol["unit_band"], tol["resonance_tol"],
                              tol=max(tol["flow_tol"], 1e-12) * 10, lyap_tol=tol["lyap_tol"])
    except ToruskitError as exc:
        log.info("eps = %.6g: certification failed: %s", eps, exc)
        return [(mu, eps, "failed", float("nan"), float("nan")) for mu in mus]
    rows = []
    for mu in mus:
        label, res, gap = classify_cell(family, curve, cert, mu, cfg)
        rows.append((mu, eps, label, res, gap))
    return rows


def run_sweep(cfg: PipelineConfig, out_dir, jobs=1):
    """Classify every (mu, eps) grid cell; rows in row-major (eps outer, mu inner) order."""
    if cfg["sweep"] is None:
        raise ConfigError("config has no 'sweep' grid")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vf = load_system(cfg.system_path())
    mode = _mode(cfg, vf)
    mus = _linspace(cfg["sweep"]["mu"])
    if mode == "averaging":
        eps_list = _linspace(cfg["sweep"].get("eps", [cfg["eps"], cfg["eps"], 1]))
    else:
        eps_list = [0.0]
    tasks = [(cfg.data, str(cfg.base_dir), e, mus) for e in eps_list]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_row_worker, tasks))
    else:
        results = [_sweep_row(cfg, vf, mode, e, mus) for e in eps_list]
    rows = [r for block in results for r in block]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu", "eps", "classification", "residual", "gap"])
        for mu, eps, label, res, gap in rows:
            w.writerow([repr(float(mu)), repr(float(eps)), label, repr(float(res)), repr(float(gap))])
    return rows
