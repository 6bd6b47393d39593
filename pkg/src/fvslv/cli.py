"""Command line harness for the convergence and calibration studies.

Every subcommand writes plain CSV artifacts into the output directory
(``--out``, else ``$FVSLV_OUT``, else ``./fvslv_out``).  Exit status is 0 on
success, 2 for configuration errors and 3 for solver failures.

    fvslv cir --set A --m 200 --sweep 50:50:1000
    fvslv calibrate --set G --m1 400 --m2 200 --n 200 --q 2
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .calibration import (
    CalibrationError,
    LvSurface,
    calibrate,
    lv_density_1d,
    marginal_density,
    smile_surface,
)
from .diagnostics import (
    ImpliedVolError,
    IrregularOrderWarning,
    convergence_order,
    fair_value,
    implied_vol,
    mixed_error,
    v_low_filter,
)
from .fv1d import ModelError, assemble_1d, dirac_initial_1d
from .fv2d import assemble_2d, dirac_initial_2d
from .grids import NonUniformGrid, make_pinned_grid
from .models import (
    Bs2dParams,
    BsParams1D,
    CirParams,
    HestonParams,
    SlvParams,
    bs1d_coefficients,
    bs1d_exact_density,
    bs2d_coefficients,
    bs2d_exact_density,
    cir_coefficients,
    cir_exact_density,
    heston_coefficients,
)
from .timestepping import (
    DEFAULT_THETA,
    HvConfig,
    SolverError,
    TimeGrid,
    crank_nicolson_evolve,
    hv_evolve,
)

__all__ = [
    "SETS",
    "BS1D",
    "BS2D",
    "S0_FX",
    "STRIKES",
    "ExperimentConfig",
    "bs_grid",
    "variance_grid",
    "log_grid",
    "solve_bs1d",
    "solve_cir",
    "solve_bs2d",
    "solve_heston",
    "run_calibration",
    "run_experiment",
    "list_sets",
    "main",
]

logger = logging.getLogger("fvslv")

OUT_ENV = "FVSLV_OUT"
DRIFT_WARN = 1e-8
LOG30 = math.log(30.0)

# Published parameter sets.  CIR sets A/B extend to Heston C/D; the SLV sets
# E/F/G share the FX rates and spot below.
SETS: dict[str, dict] = {
    "A": dict(kind="cir", kappa=5.0, eta=0.16, xi=0.9, V0=0.0625, T=0.25),
    "B": dict(kind="cir", kappa=1.15, eta=0.0348, xi=0.39, V0=0.0348, T=0.25),
    "C": dict(kind="heston", kappa=5.0, eta=0.16, xi=0.9, rho=0.1, r_d=0.1, r_f=0.0,
              X0=0.0, V0=0.0625, T=0.25),
    "D": dict(kind="heston", kappa=1.15, eta=0.0348, xi=0.39, rho=-0.64, r_d=0.04,
              r_f=0.0, X0=0.0, V0=0.0348, T=0.25),
    "E": dict(kind="slv", kappa=5.0, eta=0.16, xi=0.9, rho=0.1, T=0.25, V0=0.0625),
    "F": dict(kind="slv", kappa=1.15, eta=0.0348, xi=0.39, rho=-0.64, T=0.25, V0=0.0348),
    "G": dict(kind="slv", kappa=1.50, eta=0.0154, xi=0.24, rho=-0.11, T=1.0, V0=0.0154),
}
SLV_RATES = dict(r_d=0.02, r_f=0.01)
S0_FX = 1.08815
STRIKES = (0.75, 0.8, 0.9, 1.0, 1.1, 1.2, 1.25)

BS1D = BsParams1D(r_d=0.03, r_f=0.01, sigma=0.2, S0=100.0)
BS1D_T = 1.0
BS2D = Bs2dParams(r=0.03, sigma1=0.2, sigma2=0.25, rho=-0.7, S1_0=100.0, S2_0=100.0)
BS2D_T = 1.0

# default counts per experiment: (m or m1, m2, N)
DEFAULTS = {
    "bs1d": (200, None, 2000),
    "cir": (200, None, 1000),
    "bs2d": (100, 100, 200),
    "heston": (100, 50, 100),
    "calibrate": (400, 200, None),
}


# ---------------------------------------------------------------- grids


def bs_grid(S0: float, m: int) -> NonUniformGrid:
    """Price grid on ``[0, 30 S0]`` concentrated at and containing ``S0``."""
    return make_pinned_grid(0.0, 30.0 * S0, S0, 0.2 * S0, m)


def variance_grid(V0: float, m: int, density: float | None = None,
                  lower_density: float | None = None) -> NonUniformGrid:
    """Variance grid on ``[0, 15]`` with extra nodes near 0 and ``V0``."""
    c = 0.5 * V0 if density is None else density
    lo = c if lower_density is None else lower_density
    return make_pinned_grid(0.0, 15.0, V0, c, m, lower_density_param=lo or None)


def log_grid(X0: float, m: int, density: float = 0.1) -> NonUniformGrid:
    """Log-price grid on ``[X0 - log 30, X0 + log 30]`` containing ``X0``."""
    return make_pinned_grid(X0 - LOG30, X0 + LOG30, X0, density, m)


# ---------------------------------------------------------------- solvers


class MassLog:
    """Collects the total mass after every (half) step."""

    def __init__(self, volumes: np.ndarray):
        self.volumes = np.asarray(volumes).ravel(order="F")
        self.rows: list[tuple[str, int, float, float]] = []

    def __call__(self, kind: str, n: int, tau: float, values: np.ndarray) -> None:
        mass = float(self.volumes @ np.asarray(values).ravel(order="F"))
        self.rows.append((kind, n, tau, mass))

    @property
    def max_drift(self) -> float:
        return max((abs(r[3] - 1.0) for r in self.rows), default=0.0)


def _volumes(*grids: NonUniformGrid) -> np.ndarray:
    if len(grids) == 1:
        return grids[0].weights
    return np.outer(grids[0].weights, grids[1].weights)


def solve_bs1d(m: int, N: int, rannacher: bool = True, p: BsParams1D = BS1D,
               T: float = BS1D_T):
    g = bs_grid(p.S0, m)
    log = MassLog(_volumes(g))
    P = crank_nicolson_evolve(lambda tau: assemble_1d(g, bs1d_coefficients(p), tau),
                              dirac_initial_1d(g, p.S0), TimeGrid(T, N),
                              rannacher=rannacher, time_dependent=False, callback=log)
    return g, P.values, log


def bs1d_error(g: NonUniformGrid, P: np.ndarray, p: BsParams1D = BS1D,
               T: float = BS1D_T) -> float:
    return mixed_error(bs1d_exact_density(p, g.nodes, T), P).max_error


def _cir_params(name: str) -> tuple[CirParams, float]:
    s = _lookup(name, "cir")
    return CirParams(s["kappa"], s["eta"], s["xi"], s["V0"]), s["T"]


def solve_cir(name: str, m: int, N: int, rannacher: bool = True):
    p, T = _cir_params(name)
    g = variance_grid(p.V0, m)
    log = MassLog(_volumes(g))
    P = crank_nicolson_evolve(lambda tau: assemble_1d(g, cir_coefficients(p), tau),
                              dirac_initial_1d(g, p.V0), TimeGrid(T, N),
                              rannacher=rannacher, time_dependent=False, callback=log)
    return g, P.values, log


def cir_error(name: str, g: NonUniformGrid, P: np.ndarray) -> float:
    p, T = _cir_params(name)
    ref = np.zeros(g.m)
    ref[1:] = cir_exact_density(p, g.nodes[1:], T)
    j1 = v_low_filter(g, lambda m: variance_grid(p.V0, m), coarse_m=50)
    return mixed_error(ref, P, j1=j1).max_error


def solve_bs2d(m1: int, m2: int, N: int, cfg: HvConfig = HvConfig(),
               p: Bs2dParams = BS2D, T: float = BS2D_T):
    gx, gy = bs_grid(p.S1_0, m1), bs_grid(p.S2_0, m2)
    log = MassLog(_volumes(gx, gy))
    P = hv_evolve(lambda tau: assemble_2d(gx, gy, bs2d_coefficients(p), tau),
                  dirac_initial_2d(gx, gy, p.S1_0, p.S2_0), TimeGrid(T, N), cfg,
                  time_dependent=False, callback=log)
    return gx, gy, P.values, log


def bs2d_error(gx: NonUniformGrid, gy: NonUniformGrid, P: np.ndarray,
               p: Bs2dParams = BS2D, T: float = BS2D_T) -> float:
    ref = bs2d_exact_density(p, gx.nodes[:, None], gy.nodes[None, :], T)
    return mixed_error(ref, P).max_error


def heston_params(name: str) -> HestonParams:
    s = _lookup(name, "heston")
    return HestonParams(s["kappa"], s["eta"], s["xi"], s["rho"], s["r_d"], s["r_f"],
                        s["X0"], s["V0"], s["T"])


def solve_heston(name: str, m1: int, m2: int, N: int, cfg: HvConfig = HvConfig()):
    p = heston_params(name)
    gx, gv = log_grid(p.X0, m1), variance_grid(p.V0, m2)
    log = MassLog(_volumes(gx, gv))
    P = hv_evolve(lambda tau: assemble_2d(gx, gv, heston_coefficients(p), tau,
                                          attainable_lower_y=p.q < 0.0),
                  dirac_initial_2d(gx, gv, p.X0, p.V0), TimeGrid(p.T, N), cfg,
                  time_dependent=False, callback=log)
    return gx, gv, P.values, log


def heston_self_error(name: str, ref: tuple, gx: NonUniformGrid, gv: NonUniformGrid,
                      P: np.ndarray) -> float:
    """Mixed error against a fine-grid solution interpolated by bicubic splines.

    Columns below ``v_low`` (smallest positive node of the m2=50 grid) are
    excluded.
    """
    p = heston_params(name)
    rgx, rgv, rP = ref
    R = RectBivariateSpline(rgx.nodes, rgv.nodes, rP, kx=3, ky=3)(gx.nodes, gv.nodes)
    j1 = v_low_filter(gv, lambda m: variance_grid(p.V0, m), coarse_m=50)
    return mixed_error(R, P, j1=j1).max_error


def slv_params(name: str, **overrides) -> SlvParams:
    s = _lookup(name, "slv")
    kw = dict(kappa=s["kappa"], eta=s["eta"], xi=s["xi"], rho=s["rho"],
              X0=0.0, V0=s["V0"], T=s["T"], **SLV_RATES)
    kw.update(overrides)
    return SlvParams(**kw)


@dataclass
class CalibrationRun:
    params: SlvParams
    grid_x: NonUniformGrid
    grid_v: NonUniformGrid
    leverage: object
    density: np.ndarray
    p_lv: np.ndarray
    p_slv: np.ndarray
    density_error: float
    iv_table: list[tuple[float, float, float, float]]
    mass: MassLog


def run_calibration(p: SlvParams, m1: int, m2: int, N: int, Q: int = 2,
                    cfg: HvConfig = HvConfig(), lv: LvSurface | None = None,
                    grid_v: NonUniformGrid | None = None,
                    strikes=STRIKES, S0: float = S0_FX) -> CalibrationRun:
    """Calibrate, solve the LV density and compare marginals and implied vols."""
    lv = smile_surface() if lv is None else lv
    gx = log_grid(p.X0, m1)
    gv = variance_grid(p.V0, m2) if grid_v is None else grid_v
    tg = TimeGrid(p.T, N)
    log = MassLog(_volumes(gx, gv))
    lev, P = calibrate(p, lv, gx, gv, tg, cfg, Q=Q, callback=log)
    p_lv = lv_density_1d(lv, p.r_d, p.r_f, gx, tg, x0=p.X0,
                         rannacher=cfg.rannacher_steps > 0).values
    p_slv = marginal_density(P.values, gv)
    err = mixed_error(p_lv, p_slv).max_error
    table = []
    for k in strikes:
        K = k * S0
        pay = lambda x, K=K: np.maximum(S0 * np.exp(x) - K, 0.0)
        ivs = []
        for dens in (p_lv, p_slv):
            price = fair_value(dens, pay, p.r_d, p.T, gx)
            try:
                ivs.append(implied_vol(price, S0, K, p.r_d, p.r_f, p.T))
            except ImpliedVolError as exc:
                # coarse grids can push deep in-the-money prices below intrinsic
                logger.warning("K/S0=%g: %s", k, exc)
                ivs.append(float("nan"))
        table.append((k, ivs[0], ivs[1], abs(ivs[0] - ivs[1])))
    return CalibrationRun(p, gx, gv, lev, P.values, p_lv, p_slv, err, table, log)


def _lookup(name: str, kind: str) -> dict:
    s = SETS.get(str(name).upper())
    if s is None or s["kind"] != kind:
        valid = ", ".join(k for k, v in SETS.items() if v["kind"] == kind)
        raise ValueError(f"unknown {kind} parameter set {name!r}; choose from {valid}")
    return s


# ---------------------------------------------------------------- artifacts


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else f"{v:.17g}" for v in row) + "\n")


def _density_rows(grids, P):
    if len(grids) == 1:
        return zip(grids[0].nodes, P)
    gx, gy = grids
    return ((gx.nodes[i], gy.nodes[j], P[i, j])
            for i in range(gx.m) for j in range(gy.m))


def _write_mass(path: Path, log: MassLog, label: str) -> None:
    _write_csv(path, "kind,step,tau,mass,drift",
               ((k, str(n), t, mass, mass - 1.0) for k, n, t, mass in log.rows))
    if log.max_drift > DRIFT_WARN:
        logger.warning("%s: total mass drifted by %.3e", label, log.max_drift)
    else:
        logger.info("%s: max mass drift %.3e", label, log.max_drift)


@dataclass
class ExperimentConfig:
    experiment: str
    set: str | None = None
    m: int | None = None
    m1: int | None = None
    m2: int | None = None
    n: int | None = None
    theta: float = DEFAULT_THETA
    q: int = 2
    rannacher: int = 2
    sweep: list[int] | None = None
    ref_m1: int = 400
    lv_file: str | None = None
    out: Path = field(default_factory=lambda: Path(os.environ.get(OUT_ENV, "fvslv_out")))

    def __post_init__(self) -> None:
        if self.experiment not in DEFAULTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        for name in ("m", "m1", "m2", "n", "q", "ref_m1"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"--{name.replace('_', '-')} must be positive")
        if self.rannacher < 0:
            raise ValueError("--rannacher must be non-negative")
        if self.sweep is not None and (len(self.sweep) < 1 or min(self.sweep) < 3):
            raise ValueError("sweep sizes must be at least 3")

    @property
    def hv(self) -> HvConfig:
        return HvConfig(theta=self.theta, rannacher_steps=self.rannacher)

    @property
    def stem(self) -> str:
        return self.experiment + (f"_{self.set.upper()}" if self.set else "")


def _order_line(ms, errs) -> str:
    if len(ms) < 3:
        return "n/a"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IrregularOrderWarning)
        return f"{convergence_order(ms, errs):.4f}"


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one study and write its artifacts; returns the process exit code."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    exp = cfg.experiment
    m_def, m2_def, n_def = DEFAULTS[exp]
    rann = cfg.rannacher > 0
    stem = cfg.out / cfg.stem

    if exp in ("cir", "heston", "calibrate") and cfg.set is None:
        raise ValueError(f"{exp} needs --set")

    if exp == "bs1d":
        m, N = cfg.m or m_def, cfg.n or n_def
        g, P, log = solve_bs1d(m, N, rann)
        grids, err_fn = (g,), lambda m_: bs1d_error(*solve_bs1d(m_, N, rann)[:2])
    elif exp == "cir":
        m, N = cfg.m or m_def, cfg.n or n_def
        g, P, log = solve_cir(cfg.set, m, N, rann)
        grids = (g,)
        err_fn = lambda m_: cir_error(cfg.set, *solve_cir(cfg.set, m_, N, rann)[:2])
    elif exp == "bs2d":
        m1, N = cfg.m1 or cfg.m or m_def, cfg.n or n_def
        m2 = cfg.m2 or m1
        gx, gy, P, log = solve_bs2d(m1, m2, N, cfg.hv)
        grids = (gx, gy)
        err_fn = lambda m_: bs2d_error(*solve_bs2d(m_, m_, N, cfg.hv)[:3])
    elif exp == "heston":
        m1, N = cfg.m1 or cfg.m or m_def, cfg.n or n_def
        m2 = cfg.m2 or max(3, m1 // 2)
        gx, gy, P, log = solve_heston(cfg.set, m1, m2, N, cfg.hv)
        grids = (gx, gy)
        ref = None
        if cfg.sweep:
            ref = solve_heston(cfg.set, cfg.ref_m1, cfg.ref_m1 // 2, N, cfg.hv)[:3]
        err_fn = lambda m_: heston_self_error(
            cfg.set, ref, *solve_heston(cfg.set, m_, max(3, m_ // 2), N, cfg.hv)[:3])
    else:
        return _run_calibrate(cfg)

    _write_csv(Path(f"{stem}_density.csv"), "x,p" if len(grids) == 1 else "x,v,p",
               _density_rows(grids, P))
    _write_mass(Path(f"{stem}_mass.csv"), log, cfg.stem)
    if cfg.sweep:
        errs = [err_fn(m_) for m_ in cfg.sweep]
        _write_csv(Path(f"{stem}_convergence.csv"), "m,error",
                   ((str(m_), e) for m_, e in zip(cfg.sweep, errs)))
        logger.info("%s: fitted order %s", cfg.stem, _order_line(cfg.sweep, errs))
    return 0


def _run_calibrate(cfg: ExperimentConfig) -> int:
    p = slv_params(cfg.set)
    m1_def, m2_def, _ = DEFAULTS["calibrate"]
    m1 = cfg.m1 or cfg.m or m1_def
    m2 = cfg.m2 or max(3, m1 // 2)
    N = cfg.n or max(1, round(200 * p.T))
    lv = LvSurface.read_csv(cfg.lv_file) if cfg.lv_file else None
    run = run_calibration(p, m1, m2, N, cfg.q, cfg.hv, lv=lv)
    stem = cfg.out / cfg.stem
    run.leverage.write_csv(Path(f"{stem}_leverage.csv"))
    _write_csv(Path(f"{stem}_density.csv"), "x,v,p",
               _density_rows((run.grid_x, run.grid_v), run.density))
    _write_csv(Path(f"{stem}_marginals.csv"), "x,p_lv,p_slv,diff",
               zip(run.grid_x.nodes, run.p_lv, run.p_slv, run.p_lv - run.p_slv))
    _write_csv(Path(f"{stem}_implied_vol.csv"), "k_over_s0,iv_lv,iv_slv,eps_imp", run.iv_table)
    _write_mass(Path(f"{stem}_mass.csv"), run.mass, cfg.stem)
    logger.info("%s: density mixed error %.3e, max eps_imp %.4f", cfg.stem,
                run.density_error, np.nanmax([r[3] for r in run.iv_table]))
    return 0


def list_sets(stream=None) -> str:
    """Table of the built-in parameter sets with their Feller exponent q."""
    cols = ("kappa", "eta", "xi", "rho", "r_d", "r_f", "X0", "V0", "T")
    lines = ["set  kind    " + " ".join(f"{c:>8}" for c in cols) + "        q"]
    for name, s in SETS.items():
        vals = dict(s, **(SLV_RATES if s["kind"] == "slv" else {}))
        if s["kind"] == "slv":
            vals.setdefault("X0", 0.0)
        cells = " ".join(f"{vals[c]:>8g}" if c in vals else f"{'-':>8}" for c in cols)
        q = 2.0 * s["kappa"] * s["eta"] / s["xi"] ** 2 - 1.0
        lines.append(f"{name:<4} {s['kind']:<7} {cells} {q:8.2f}")
    lines.append(f"SLV sets E-G use S0 = {S0_FX}")
    text = "\n".join(lines)
    print(text, file=stream or sys.stdout)
    return text


# ---------------------------------------------------------------- argparse


def _parse_sweep(text: str) -> list[int]:
    try:
        parts = [int(s) for s in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sweep {text!r}; expected start:step:stop")
    if len(parts) != 3 or parts[1] <= 0 or parts[0] > parts[2]:
        raise argparse.ArgumentTypeError(f"bad sweep {text!r}; expected start:step:stop")
    return list(range(parts[0], parts[2] + 1, parts[1]))


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _ArgumentParser(prog="fvslv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="experiment", required=True, parser_class=_ArgumentParser)
    for exp in ("bs1d", "cir", "bs2d", "heston", "calibrate"):
        sp = sub.add_parser(exp)
        if exp in ("cir", "heston", "calibrate"):
            sp.add_argument("--set", required=True)
        sp.add_argument("--m", type=int)
        if exp in ("bs2d", "heston", "calibrate"):
            sp.add_argument("--m1", type=int)
            sp.add_argument("--m2", type=int)
            sp.add_argument("--theta", type=float, default=DEFAULT_THETA)
        sp.add_argument("--n", type=int, help="number of time steps")
        sp.add_argument("--rannacher", type=int, default=2,
                        help="replaced start-up steps (0 disables)")
        if exp != "calibrate":
            sp.add_argument("--sweep", type=_parse_sweep, help="start:step:stop")
        if exp == "heston":
            sp.add_argument("--ref-m1", type=int, default=400)
        if exp == "calibrate":
            sp.add_argument("--q", type=int, default=2, help="inner iterations")
            sp.add_argument("--lv", dest="lv_file", help="CSV file tau,x,sigma_lv")
        sp.add_argument("--out", type=Path)
    sub.add_parser("list-sets")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    logging.getLogger("numba").setLevel(logging.WARNING)
    if args.experiment == "list-sets":
        list_sets()
        return 0
    kw = {k: v for k, v in vars(args).items() if k not in ("verbose",) and v is not None}
    try:
        cfg = ExperimentConfig(**kw)
        return run_experiment(cfg)
    except (SolverError, CalibrationError, ArithmeticError, ImpliedVolError) as exc:
        print(f"fvslv: solver error: {exc}", file=sys.stderr)
        return 3
    except (ModelError, ValueError, OSError) as exc:
        print(f"fvslv: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
