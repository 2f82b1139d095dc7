"""Configuration parsing and experiment orchestration for the `hybridsim`
command-line tool.

Configs are flat `key = value` text files (one pair per line, `#` starts
a comment); the full key set is documented in the README.  Every run
writes CSV tables plus a meta.txt that echoes the resolved configuration
in the same parseable format, and identical configs produce byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .fock import TruncationError, TruncationScheme, coherent_state, make_fock, tensor_kets
from .model import SystemParams, build_h_total
from .dynamics import (
    PropagationError,
    TimeGrid,
    evolve_lindblad,
    evolve_unitary,
    reduced_mechanics,
    truncation_gap,
)
from .wigner import PhaseSpaceGrid, negativity_volume, snapshot_series
from .analysis import (
    SweepSpec,
    measure_f,
    perturbative_pe,
    reference_population,
    revival_report,
    run_sweep,
    rwa_mixing,
    rwa_weights,
    displaced_thermal_variance,
    initial_density,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_NUMERICAL = 4

EXPERIMENTS = ("evolve", "master", "wigner", "sweep-beta", "scan-initial", "limits")
REGIMES = ("slow-rabi", "small-beta")
METHODS = ("auto", "eig", "expm", "ode")
CONVERGENCE_MODES = ("auto", "doubling", "tail", "off")

TAIL_THRESHOLD = 1e-6
DOUBLING_THRESHOLD = 1e-5


class ConfigError(ValueError):
    """Invalid, unknown, or missing configuration input."""


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully resolved run description."""

    experiment: str
    beta: float = 0.0
    g: float = 1.0
    omega: float = 0.0
    kappa: float = 0.0
    Gamma: float = 0.0
    gamma: float = 0.0
    mbar: float = 0.0
    init_alpha_re: float = 0.0
    init_alpha_im: float = 0.0
    init_mbar: float = 0.0
    n_cav: int = 3
    n_mec: int = 40
    t_start_tau: float = 0.0
    t_end_tau: float = 5.0
    n_samples: int = 1001
    snapshot_times_tau: tuple = ()
    x_min: float = -6.0
    x_max: float = 6.0
    p_min: float = -6.0
    p_max: float = 6.0
    n_x: int = 101
    n_p: int = 101
    beta_values: tuple = ()
    alpha_values: tuple = ()
    mbar_values: tuple = ()
    n_angles: int = 8
    f_t_end_tau: float = 1.2
    reference_damped: bool = True
    regime: str = ""
    method: str = "auto"
    convergence: str = "auto"
    allow_nonconverged: bool = False
    emit_matrix: bool = False
    threads: int = 1
    deterministic: bool = True
    out_dir: str = "."

    def params(self) -> SystemParams:
        return SystemParams.from_beta(
            self.beta, g=self.g, omega=self.omega, kappa=self.kappa,
            Gamma=self.Gamma, gamma=self.gamma, mbar=self.mbar)

    def trunc(self) -> TruncationScheme:
        return TruncationScheme(n_cav=self.n_cav, n_mec=self.n_mec)

    def grid(self) -> TimeGrid:
        return TimeGrid(self.t_start_tau, self.t_end_tau, self.n_samples)

    def phase_grid(self) -> PhaseSpaceGrid:
        return PhaseSpaceGrid(self.x_min, self.x_max, self.p_min, self.p_max,
                              self.n_x, self.n_p)

    @property
    def init_alpha(self) -> complex:
        return complex(self.init_alpha_re, self.init_alpha_im)


_FLOAT_KEYS = {
    "beta", "g", "omega", "kappa", "Gamma", "gamma", "mbar",
    "init_alpha_re", "init_alpha_im", "init_mbar",
    "t_start_tau", "t_end_tau", "f_t_end_tau",
    "x_min", "x_max", "p_min", "p_max",
}
_INT_KEYS = {"n_cav", "n_mec", "n_samples", "n_x", "n_p", "n_angles", "threads"}
_BOOL_KEYS = {"reference_damped", "allow_nonconverged", "emit_matrix", "deterministic"}
_LIST_KEYS = {"snapshot_times_tau", "beta_values", "alpha_values", "mbar_values"}
_STR_KEYS = {"experiment", "regime", "method", "convergence", "out_dir"}
_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _BOOL_KEYS | _LIST_KEYS | _STR_KEYS


def _coerce(key: str, raw: str, lineno: int):
    try:
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key in _BOOL_KEYS:
            if raw not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw == "true"
        if key in _LIST_KEYS:
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: cannot parse {key} = {raw!r} ({exc})")
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse and validate a flat key = value config; raises ConfigError
    naming the offending line on unknown keys, bad values, or missing
    required keys."""
    assignments: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in assignments:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        assignments[key] = _coerce(key, raw, lineno)

    if "experiment" not in assignments:
        raise ConfigError("missing required key 'experiment'")
    experiment = assignments["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")

    resolved = dict(assignments)
    resolved.setdefault("beta", 0.0)

    # mechanical cutoff default scales with the strongest coupling in the run
    betas = [resolved["beta"], *resolved.get("beta_values", ())]
    beta_max = max(betas)
    if "n_mec" not in resolved:
        if beta_max <= 1.0:
            resolved["n_mec"] = 40
        elif beta_max <= 2.0:
            resolved["n_mec"] = 80
        else:
            raise ConfigError(
                f"no default mechanical cutoff for beta = {beta_max}; set n_mec")

    if "t_end_tau" not in resolved and experiment == "limits":
        regime = resolved.get("regime", "")
        g = resolved.get("g", 1.0)
        if regime == "slow-rabi":
            # one period of the slow population exchange
            omega_x, delta, _ = rwa_mixing(SystemParams.from_beta(resolved["beta"], g=g))
            if omega_x == 0:
                raise ConfigError("slow-rabi limit needs g > 0 and beta > 0")
            freq = np.hypot(omega_x, delta)
            resolved["t_end_tau"] = (2 * np.pi / freq) / (2 * np.pi)
        elif regime == "small-beta":
            # one beat of the modulation envelope
            resolved["t_end_tau"] = 2.0 / resolved["beta"] if resolved["beta"] > 0 else 2.0

    cfg = RunConfig(**resolved)

    if cfg.regime and cfg.regime not in REGIMES:
        raise ConfigError(f"unknown regime {cfg.regime!r}; expected one of {REGIMES}")
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; expected one of {METHODS}")
    if cfg.convergence not in CONVERGENCE_MODES:
        raise ConfigError(f"unknown convergence mode {cfg.convergence!r}")
    if not cfg.deterministic:
        raise ConfigError("deterministic = false is not supported; "
                          "every computation in this tool is deterministic")
    if experiment == "limits" and not cfg.regime:
        raise ConfigError("limits experiment requires regime = slow-rabi | small-beta")
    if experiment == "sweep-beta" and not cfg.beta_values:
        raise ConfigError("sweep-beta requires beta_values")
    if experiment == "scan-initial" and not (cfg.alpha_values and cfg.mbar_values):
        raise ConfigError("scan-initial requires alpha_values and mbar_values")
    if experiment == "wigner" and not cfg.snapshot_times_tau:
        raise ConfigError("wigner experiment requires snapshot_times_tau")
    if experiment == "evolve" and cfg.init_mbar > 0:
        raise ConfigError("evolve propagates pure states; "
                          "use experiment = master for thermal initial states")
    if experiment == "evolve" and (cfg.kappa or cfg.Gamma or cfg.gamma):
        raise ConfigError("evolve is the closed-system experiment; "
                          "use experiment = master for dissipative runs")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    try:
        cfg.params()
        cfg.trunc()
        cfg.grid()
        cfg.phase_grid()
    except ValueError as exc:
        raise ConfigError(str(exc))
    return cfg


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _LIST_KEYS and not value:
            continue
        if f.name == "regime" and not value:
            continue
        lines.append(f"{f.name} = {_format(value)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# file writers
# --------------------------------------------------------------------------

def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_timeseries(path: Path, record) -> None:
    obs = record.observables
    cols = [record.times_tau, obs["P_e"], obs["x_over_xi"], obs["n_cav"],
            obs["n_mec"], obs["purity"]]
    _write_csv(path, "t_over_tau,P_e,x_over_xi,n_cav,n_mec,purity",
               zip(*cols))


def _write_wigner(path: Path, field) -> None:
    x_axis = field.grid.x_axis
    p_axis = field.grid.p_axis

    def rows():
        for i, x in enumerate(x_axis):
            for j, p in enumerate(p_axis):
                yield (x, p, field.values[i, j])

    _write_csv(path, "x,p,W", rows())


def _write_meta(path: Path, cfg: RunConfig, report: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("# resolved configuration (parseable as a config file)\n")
        fh.write(serialize_config(cfg))
        fh.write("# --- run report ---\n")
        for key, value in report.items():
            fh.write(f"# {key} = {_format(value)}\n")


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------

def _check_convergence(cfg: RunConfig, record, report: dict) -> None:
    """Fill the convergence section of the report; raise TruncationError on
    a failed check unless overridden."""
    mode = cfg.convergence
    dissipative = bool(cfg.kappa or cfg.Gamma or cfg.gamma)
    if mode == "auto":
        mode = "tail" if dissipative or cfg.experiment in ("sweep-beta", "scan-initial") \
            else "doubling"
    report["convergence_method"] = mode
    if mode == "off":
        report["converged"] = True
        return
    if mode == "doubling":
        gap = truncation_gap(cfg.params(), cfg.trunc(), cfg.grid())
        report["convergence_value"] = gap
        converged = gap < DOUBLING_THRESHOLD
        report["convergence_threshold"] = DOUBLING_THRESHOLD
    else:
        tail = record.meta.get("mec_tail_max", 0.0) if record else 0.0
        # with n_cav = 2 the top cavity level is the physical one-photon
        # state of single-excitation runs, not truncation spill
        if record and cfg.n_cav >= 3:
            tail = max(tail, record.meta.get("cav_top_max", 0.0))
        report["convergence_value"] = tail
        converged = tail < TAIL_THRESHOLD
        report["convergence_threshold"] = TAIL_THRESHOLD
    report["converged"] = converged
    if not converged and not cfg.allow_nonconverged:
        raise TruncationError(
            f"truncation check ({mode}) failed: "
            f"{report['convergence_value']:.3e} >= {report['convergence_threshold']:.0e}; "
            "raise n_mec or set allow_nonconverged = true")


def _initial_ket(cfg: RunConfig):
    trunc = cfg.trunc()
    atom = make_fock("atom", 1, trunc)
    cav = make_fock("cav", 0, trunc)
    mec = coherent_state(cfg.init_alpha, trunc.n_mec) if cfg.init_alpha != 0 \
        else make_fock("mec", 0, trunc)
    return tensor_kets(atom, cav, mec)


def _run_evolution(cfg: RunConfig):
    """Unitary or Lindblad propagation depending on the configured rates."""
    p = cfg.params()
    dissipative = bool(cfg.kappa or cfg.Gamma or cfg.gamma)
    if dissipative or cfg.init_mbar > 0:
        rho0 = initial_density(cfg.init_alpha, cfg.init_mbar, cfg.trunc())
        return evolve_lindblad(p, rho0, cfg.grid(), method=cfg.method,
                               snapshot_times_tau=cfg.snapshot_times_tau)
    psi0 = _initial_ket(cfg)
    return evolve_unitary(build_h_total(p, cfg.trunc()), psi0, cfg.grid(),
                          nu=p.nu, snapshot_times_tau=cfg.snapshot_times_tau)


def _run_timeseries_experiment(cfg: RunConfig, out: Path, report: dict) -> list[str]:
    record = _run_evolution(cfg)
    _check_convergence(cfg, record, report)
    files = ["timeseries.csv"]
    _write_timeseries(out / "timeseries.csv", record)
    for key in ("trace_drift", "norm_drift", "hermiticity_drift",
                "mec_tail_max", "cav_top_max", "method"):
        if key in record.meta and record.meta[key] is not None:
            report[key] = record.meta[key]
    if record.snapshots:
        states = [reduced_mechanics(state) for _t, state in record.snapshots]
        grid = cfg.phase_grid()
        fields_ = snapshot_series(states, grid, n_workers=cfg.threads,
                                  warn_window=False)
        for i, ((t_tau, _), fld) in enumerate(zip(record.snapshots, fields_)):
            name = f"wigner_{i}.csv"
            _write_wigner(out / name, fld)
            files.append(name)
            report[f"snapshot_{i}_t_tau"] = t_tau
            report[f"snapshot_{i}_negativity"] = negativity_volume(fld)
            report[f"snapshot_{i}_norm_error"] = fld.normalization_error
    return files


def _run_sweep_beta(cfg: RunConfig, out: Path, report: dict) -> list[str]:
    spec = SweepSpec("beta", cfg.beta_values, cfg.params(), cfg.trunc(), cfg.grid())
    rows = run_sweep(spec)
    table = []
    worst_tail = 0.0
    for point in rows:
        if point.error is not None:
            table.append((point.value, np.nan, np.nan, np.nan))
            report[f"error_beta_{point.value}"] = point.error
            continue
        rep = revival_report(point.record, cfg.params().with_beta(point.value))
        first = rep.t_maxima_tau[0] if rep.t_maxima_tau else np.nan
        table.append((point.value, rep.suppression_min, first, len(rep.t_maxima_tau)))
        worst_tail = max(worst_tail, point.record.meta.get("mec_tail_max", 0.0))
    _write_csv(out / "sweep.csv",
               "beta,suppression_min,t_first_max_tau,n_maxima", table)
    files = ["sweep.csv"]
    if cfg.emit_matrix:
        ok = [pt for pt in rows if pt.error is None]
        header = "t_over_tau," + ",".join(f"pe_beta_{pt.value}" for pt in ok)
        cols = [cfg.grid().times_tau] + [pt.record.observables["P_e"] for pt in ok]
        _write_csv(out / "sweep_matrix.csv", header, zip(*cols))
        files.append("sweep_matrix.csv")
    record = rows[0].record if rows and rows[0].error is None else None
    _check_convergence(cfg, record, report)
    return files


def _run_scan_initial(cfg: RunConfig, out: Path, report: dict) -> list[str]:
    p = cfg.params()
    trunc = cfg.trunc()
    n_samples = max(601, cfg.n_samples)
    grid = TimeGrid(0.0, cfg.f_t_end_tau, n_samples)
    reference = reference_population(p, trunc, grid, damped=cfg.reference_damped,
                                     method=cfg.method)
    report["reference_damped"] = cfg.reference_damped
    table = []
    for alpha_mag in cfg.alpha_values:
        for mbar in cfg.mbar_values:
            try:
                f_val = measure_f(alpha_mag, mbar, p, trunc,
                                  n_angles=cfg.n_angles,
                                  t_end_tau=cfg.f_t_end_tau,
                                  n_samples=n_samples,
                                  reference_damped=cfg.reference_damped,
                                  method=cfg.method, reference=reference)
            except Exception as exc:
                report[f"error_{alpha_mag}_{mbar}"] = f"{type(exc).__name__}: {exc}"
                f_val = np.nan
            table.append((alpha_mag, mbar, f_val,
                          displaced_thermal_variance(alpha_mag, mbar)))
    _write_csv(out / "sweep.csv", "alpha_mag,mbar,F,delta_m_sq", table)
    _check_convergence(cfg, reference, report)
    return ["sweep.csv"]


def limits_report(cfg: RunConfig, out: Path, report: dict) -> list[str]:
    """Exact-versus-analytic comparison columns for the two limit regimes."""
    p = cfg.params()
    trunc = cfg.trunc()
    grid = cfg.grid()
    psi0 = _initial_ket(cfg)
    exact = evolve_unitary(build_h_total(p, trunc), psi0, grid, nu=p.nu)
    _check_convergence(cfg, exact, report)
    pe_exact = exact.observables["P_e"]
    t_abs = grid.times(p.nu)
    if cfg.regime == "slow-rabi":
        pe_analytic = np.array([rwa_weights(t, p)[0] for t in t_abs])
    else:
        pe_analytic = perturbative_pe(t_abs, p)
    abs_err = np.abs(pe_exact - pe_analytic)
    _write_csv(out / "limits.csv", "t_over_tau,P_e_exact,P_e_analytic,abs_err",
               zip(grid.times_tau, pe_exact, pe_analytic, abs_err))
    report["regime"] = cfg.regime
    report["max_abs_err"] = float(abs_err.max())
    return ["limits.csv"]


def run(cfg: RunConfig, out_dir: str | None = None, threads: int | None = None) -> int:
    """Execute one configured experiment; returns the process exit code and
    writes the result files plus meta.txt into the output directory."""
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    report: dict = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.experiment in ("evolve", "master", "wigner"):
            files = _run_timeseries_experiment(cfg, out, report)
        elif cfg.experiment == "sweep-beta":
            files = _run_sweep_beta(cfg, out, report)
        elif cfg.experiment == "scan-initial":
            files = _run_scan_initial(cfg, out, report)
        else:
            files = limits_report(cfg, out, report)
        report["files"] = ",".join(files)
        report["status"] = "ok"
        _write_meta(out / "meta.txt", cfg, report)
        return EXIT_OK
    except TruncationError as exc:
        report["status"] = f"convergence error: {exc}"
        _write_meta(out / "meta.txt", cfg, report)
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (PropagationError, FloatingPointError) as exc:
        report["status"] = f"numerical failure: {exc}"
        _write_meta(out / "meta.txt", cfg, report)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hybridsim",
        description="Simulate a two-level emitter in a cavity with a "
                    "harmonically bound end mirror and export CSV tables.")
    parser.add_argument("config", help="path to a key = value config file")
    parser.add_argument("--out", default=None, help="output directory "
                        "(default: out_dir from the config, or '.')")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for phase-space grids")
    parser.add_argument("--allow-nonconverged", action="store_true",
                        help="keep going when the truncation check fails")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.allow_nonconverged:
        cfg = replace(cfg, allow_nonconverged=True)
    return run(cfg, out_dir=args.out, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
