"""Command-line front end: scenario files in, CSV/JSON/figures out.

A scenario file is a YAML document with ``model``, ``rate``, ``bounds``,
``time`` and ``x0`` blocks plus optional command-specific blocks.  Every
command writes its delimited artifacts into ``--out`` together with a JSON
report that echoes the parsed scenario (so a report is always reproducible
from itself) and, unless ``--no-plot`` is given, renders the matching figure
next to the data.

Exit codes: 0 success, 2 configuration/validation failure, 3 numerical
failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import dim2, plots
from .dynamics import ControlSignal, PositivityError, pmp_residual, simulate
from .floquet import (
    DefectiveBasisError,
    FloquetOverflowError,
    PeriodicControl,
    fd_second_derivative,
    floquet_eigenvalue,
    floquet_second_derivative_formula,
    high_frequency_limit,
    spectral_basis,
)
from .model import (
    ModelParams,
    ModelValidationError,
    RateFunction,
    build_matrices,
)
from .optimize import DirectProblem, duty_ratio_stats, optimize_direct
from .spectral import (
    EigenConvergenceError,
    expansion_check,
    maximize_perron_constant,
    maximize_perron_hull,
    perron_triple,
    string_params,
)

SCHEMA_VERSION = "1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64


class ConfigError(ValueError):
    """Scenario file is missing, malformed, or inconsistent."""


# ---------------------------------------------------------------------------
# scenario configuration


def _need(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"missing '{key}' in {where}")
    return block[key]


def _float_list(values, where: str) -> list:
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where} must be a list of numbers: {e}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario: a normalized plain dict plus typed accessors.

    Two configs are equal when their normalized dicts are equal, which is
    what makes the emitted scenario echo round-trip testable.
    """

    data: dict

    # -- construction ------------------------------------------------------

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as f:
                raw = yaml.safe_load(f)
        except OSError as e:
            raise ConfigError(f"cannot read scenario file: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"scenario file does not parse: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("scenario file must hold a mapping at top level")
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        data = {}

        model = _need(raw, "model", "scenario")
        n = _need(model, "n", "model block")
        if not isinstance(n, int) or n < 2:
            raise ConfigError(f"model.n = {n!r} must be an integer >= 2")
        tau = _float_list(_need(model, "tau", "model block"), "model.tau")
        beta = _float_list(_need(model, "beta", "model block"), "model.beta")
        kappa_raw = _need(model, "kappa", "model block")
        kappa = []
        for entry in kappa_raw:
            try:
                i, j, k = entry
                kappa.append([int(i), int(j), float(k)])
            except (TypeError, ValueError):
                raise ConfigError(
                    f"model.kappa entries must be [i, j, value] triples, got {entry!r}"
                ) from None
        kappa.sort(key=lambda t: (t[0], t[1]))
        data["model"] = {"n": n, "tau": tau, "beta": beta, "kappa": kappa}

        rate_block = dict(_need(raw, "rate", "scenario"))
        _need(rate_block, "form", "rate block")
        try:
            rate = RateFunction.from_dict(rate_block)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad rate block: {e}") from None
        rd = rate.to_dict()
        data["rate"] = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in rd.items()
        }

        bounds = _need(raw, "bounds", "scenario")
        u_min = float(_need(bounds, "u_min", "bounds block"))
        u_max = float(_need(bounds, "u_max", "bounds block"))
        if not 0 < u_min < u_max:
            raise ConfigError(f"need 0 < u_min < u_max, got [{u_min}, {u_max}]")
        data["bounds"] = {"u_min": u_min, "u_max": u_max}

        time = _need(raw, "time", "scenario")
        T = float(_need(time, "T", "time block"))
        dt = float(_need(time, "dt", "time block"))
        if not (T > 0 and 0 < dt <= T):
            raise ConfigError(f"need T > 0 and 0 < dt <= T, got T={T}, dt={dt}")
        data["time"] = {"T": T, "dt": dt}

        x0 = _float_list(_need(raw, "x0", "scenario"), "x0")
        if len(x0) != n:
            raise ConfigError(f"x0 has {len(x0)} entries, model.n = {n}")
        if min(x0) < 0 or not max(x0) > 0:
            raise ConfigError("x0 must be nonnegative and not identically zero")
        data["x0"] = x0

        # optional command-specific blocks, normalized where present
        if "control" in raw:
            data["control"] = cls._normalize_control(raw["control"])
        if "omega" in raw:
            om = _float_list(raw["omega"], "omega")
            if min(om) <= 0:
                raise ConfigError("omega values must be > 0")
            data["omega"] = om
        if "n_pieces" in raw:
            npc = raw["n_pieces"]
            if not isinstance(npc, int) or npc < 1:
                raise ConfigError(f"n_pieces = {npc!r} must be a positive integer")
            data["n_pieces"] = npc
        if "scan" in raw:
            sb = dict(raw["scan"])
            points = sb.get("points", 241)
            if not isinstance(points, int) or points < 3:
                raise ConfigError(f"scan.points = {points!r} must be an integer >= 3")
            norm = {"points": points}
            for key in ("u_lo", "u_hi"):
                if key in sb:
                    norm[key] = float(sb[key])
            data["scan"] = norm
        if "optimizer" in raw:
            ob = dict(raw["optimizer"])
            norm = {"cell_dt": float(_need(ob, "cell_dt", "optimizer block"))}
            norm["max_iters"] = int(ob.get("max_iters", 400))
            norm["v_rule"] = str(ob.get("v_rule", "rate"))
            if norm["v_rule"] not in ("rate", "string"):
                raise ConfigError(f"optimizer.v_rule = {norm['v_rule']!r} unknown")
            norm["restarts"] = int(ob.get("restarts", 0))
            norm["seed"] = int(ob.get("seed", 0))
            if "window" in ob:
                w = _float_list(ob["window"], "optimizer.window")
                if len(w) != 2 or not w[0] < w[1]:
                    raise ConfigError("optimizer.window must be [t_lo, t_hi] with t_lo < t_hi")
                norm["window"] = w
            data["optimizer"] = norm
        if "expansion" in raw:
            eb = dict(raw["expansion"])
            norm = {"k": int(_need(eb, "k", "expansion block"))}
            if "u_samples" in eb:
                norm["u_samples"] = _float_list(eb["u_samples"], "expansion.u_samples")
            data["expansion"] = norm
        if "floquet" in raw:
            fb = dict(raw["floquet"])
            norm = {}
            if "eps" in fb:
                norm["eps"] = float(fb["eps"])
            if "u0" in fb:
                norm["u0"] = float(fb["u0"])
            data["floquet"] = norm

        return cls(data=data)

    @staticmethod
    def _normalize_control(block) -> dict:
        block = dict(block)
        ctype = _need(block, "type", "control block")
        if ctype == "constant":
            out = {"type": "constant", "u": float(_need(block, "u", "control block"))}
            if "v" in block:
                out["v"] = float(block["v"])
            return out
        if ctype == "piecewise":
            bp = _float_list(_need(block, "breakpoints", "control block"), "control.breakpoints")
            u = _float_list(_need(block, "u", "control block"), "control.u")
            out = {"type": "piecewise", "breakpoints": bp, "u": u}
            if "v" in block:
                out["v"] = _float_list(block["v"], "control.v")
            return out
        raise ConfigError(f"control.type = {ctype!r} must be 'constant' or 'piecewise'")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.data))  # deep copy, JSON-clean

    # -- typed accessors -----------------------------------------------------

    def model_params(self) -> ModelParams:
        m = self.data["model"]
        kappa = {(i, j): k for i, j, k in m["kappa"]}
        return ModelParams(n=m["n"], tau=tuple(m["tau"]), beta=tuple(m["beta"]), kappa=kappa)

    def matrices(self):
        try:
            return build_matrices(self.model_params())
        except ModelValidationError as e:
            raise ConfigError(str(e)) from None

    def rate(self) -> RateFunction:
        return RateFunction.from_dict(self.data["rate"])

    @property
    def u_min(self) -> float:
        return self.data["bounds"]["u_min"]

    @property
    def u_max(self) -> float:
        return self.data["bounds"]["u_max"]

    @property
    def T(self) -> float:
        return self.data["time"]["T"]

    @property
    def dt(self) -> float:
        return self.data["time"]["dt"]

    @property
    def x0(self) -> np.ndarray:
        return np.array(self.data["x0"], dtype=float)

    def string(self):
        return string_params(self.rate(), self.u_min, self.u_max)

    def control_signal(self) -> ControlSignal | None:
        """The explicit control block as a signal, if one is present."""
        block = self.data.get("control")
        if block is None:
            return None
        rate = self.rate()
        if block["type"] == "constant":
            u = block["u"]
            v = block.get("v", float(rate(u)))
            return ControlSignal.constant(self.T, u, v)
        bp = list(block["breakpoints"])
        if abs(bp[-1] - self.T) > 1e-12 * max(1.0, self.T):
            raise ConfigError(
                f"control.breakpoints end at {bp[-1]}, scenario horizon is {self.T}"
            )
        bp[-1] = self.T
        u = np.array(block["u"], dtype=float)
        if "v" in block:
            return ControlSignal(np.array(bp), u, np.array(block["v"], dtype=float))
        return ControlSignal.from_u(np.array(bp), u, rate)

    def dim2_config(self) -> dim2.Dim2Config:
        mp = self.model_params()
        if mp.n != 2:
            raise ConfigError("this command needs a two-compartment model (model.n = 2)")
        if mp.kappa_at(1, 2) != 2.0:
            raise ConfigError("two-compartment synthesis assumes binary splitting, kappa[1,2] = 2")
        strp = self.string()
        try:
            return dim2.Dim2Config(
                theta=strp.theta,
                zeta=strp.zeta,
                tau=mp.tau[0],
                beta=mp.beta[1],
                u_min=self.u_min,
                u_max=self.u_max,
            )
        except ValueError as e:
            raise ConfigError(f"scenario does not define a valid chord problem: {e}") from None


# ---------------------------------------------------------------------------
# artifact writers


def _fmt_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt_cell(x) for x in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_report(path, command: str, cfg: ScenarioConfig, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, "command": command}
    doc.update(_jsonable(payload))
    doc["scenario"] = cfg.to_dict()
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    return path


def _control_rows(control: ControlSignal):
    return [(t0, t1, u, v) for t0, t1, u, v in control.segments()]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ScenarioConfig, args) -> list:
    mats = cfg.matrices()
    control = cfg.control_signal()
    if control is None:
        u_mid = 0.5 * (cfg.u_min + cfg.u_max)
        control = ControlSignal.constant(cfg.T, u_mid, float(cfg.rate()(u_mid)))
    strp = cfg.string()
    traj = simulate(cfg.x0, control, mats, args.dt or cfg.dt, theta=strp.theta)

    out = Path(args.out)
    n = mats.n
    header = (
        ["t"]
        + [f"x{i}" for i in range(1, n + 1)]
        + [f"p{i}" for i in range(1, n + 1)]
        + ["u", "v", "H", "Phi"]
    )
    rows = [
        [traj.times[i], *traj.x[i], *traj.p[i], traj.u[i], traj.v[i], traj.H[i], traj.Phi[i]]
        for i in range(traj.times.size)
    ]
    files = [write_csv(out / "trajectory.csv", header, rows)]
    duality = traj.p[0] @ traj.x[0] - traj.J
    files.append(
        write_report(
            out / "simulate_report.json",
            "simulate",
            cfg,
            {
                "J": traj.J,
                "duality_defect": duality,
                "hamiltonian_min": float(traj.H.min()),
                "hamiltonian_max": float(traj.H.max()),
                "theta": strp.theta,
                "zeta": strp.zeta,
                "control": _control_rows(control),
            },
        )
    )
    if not args.no_plot:
        files.append(plots.trajectory_figure(traj, out / "trajectory.png"))
    return files


def cmd_perron_scan(cfg: ScenarioConfig, args) -> list:
    mats = cfg.matrices()
    rate = cfg.rate()
    strp = cfg.string()
    scan = cfg.data.get("scan", {"points": 241})
    u_lo = scan.get("u_lo", cfg.u_min)
    u_hi = scan.get("u_hi", cfg.u_max)
    grid = np.linspace(u_lo, u_hi, scan["points"])

    lam_rate = np.empty(grid.size)
    lam_chord = np.empty(grid.size)
    x_warm = w_warm = None
    for i, u in enumerate(grid):
        tri = perron_triple(float(u), float(rate(u)), mats, x0=x_warm, w0=w_warm)
        x_warm, w_warm = tri.X, tri.phi
        lam_rate[i] = tri.lam
    x_warm = w_warm = None
    for i, u in enumerate(grid):
        tri = perron_triple(float(u), float(strp.sigma(u)), mats, x0=x_warm, w0=w_warm)
        x_warm, w_warm = tri.X, tri.phi
        lam_chord[i] = tri.lam

    best = maximize_perron_constant(mats, rate, cfg.u_min, cfg.u_max)
    best_hull = maximize_perron_hull(mats, rate, cfg.u_min, cfg.u_max)

    out = Path(args.out)
    rows = [
        [u, float(rate(u)), lr, float(strp.sigma(u)), lc]
        for u, lr, lc in zip(grid, lam_rate, lam_chord)
    ]
    files = [write_csv(out / "perron_scan.csv", ["u", "v_rate", "lam_rate", "v_chord", "lam_chord"], rows)]
    files.append(
        write_report(
            out / "perron_scan_report.json",
            "perron-scan",
            cfg,
            {
                "u_opt": best.u_opt,
                "lam_opt": best.lam,
                "interior_max": not best.boundary,
                "u_bar": best_hull.u_bar,
                "v_bar": best_hull.v_bar,
                "lam_bar": best_hull.lam,
                "hull_interior_max": not best_hull.boundary,
            },
        )
    )
    if not args.no_plot:
        marks = [
            (best.u_opt, best.lam, "max on v=r(u)"),
            (best_hull.u_bar, best_hull.lam, "max on chord"),
        ]
        files.append(plots.perron_scan_figure(grid, lam_rate, lam_chord, marks, out / "perron_scan.png"))
    return files


def cmd_perron_max(cfg: ScenarioConfig, args) -> list:
    mats = cfg.matrices()
    rate = cfg.rate()
    best = maximize_perron_constant(mats, rate, cfg.u_min, cfg.u_max)
    best_hull = maximize_perron_hull(mats, rate, cfg.u_min, cfg.u_max)
    tri = best_hull.triple
    grad_u = float(tri.phi @ mats.F @ tri.X)
    grad_v = float(tri.phi @ mats.G @ tri.X)
    out = Path(args.out)
    report = write_report(
        out / "perron_max.json",
        "perron-max",
        cfg,
        {
            "u_opt": best.u_opt,
            "lam_opt": best.lam,
            "boundary": best.boundary,
            "u_bar": best_hull.u_bar,
            "v_bar": best_hull.v_bar,
            "lam_bar": best_hull.lam,
            "hull_boundary": best_hull.boundary,
            "theta": best_hull.strp.theta,
            "zeta": best_hull.strp.zeta,
            "X_bar": tri.X,
            "phi_bar": tri.phi,
            "grad_u": grad_u,
            "grad_v": grad_v,
        },
    )
    return [report]


def cmd_floquet_scan(cfg: ScenarioConfig, args) -> list:
    mats = cfg.matrices()
    rate = cfg.rate()
    fb = cfg.data.get("floquet", {})
    eps = fb.get("eps", 0.05)
    if args.omega:
        omegas = args.omega
    else:
        omegas = cfg.data.get("omega")
        if not omegas:
            raise ConfigError("floquet-scan needs an 'omega' list (config block or --omega)")

    if "u0" in fb:
        u0 = fb["u0"]
    else:
        u0 = maximize_perron_constant(mats, rate, cfg.u_min, cfg.u_max).u_opt
    basis = spectral_basis(u0, mats, rate)
    lam_p = float(basis.lam[0].real)
    hf = high_frequency_limit(basis, rate)

    rows = []
    for om in omegas:
        lam_f = floquet_eigenvalue(PeriodicControl.cosine(u0, eps, om), mats, rate)
        d2 = floquet_second_derivative_formula(basis, om, mats, rate)
        rows.append([om, lam_f, lam_f - lam_p, d2])

    out = Path(args.out)
    files = [
        write_csv(out / "floquet_scan.csv", ["omega", "lam_f", "lam_f_minus_lam_p", "d2lam_deps2"], rows)
    ]
    files.append(
        write_report(
            out / "floquet_scan_report.json",
            "floquet-scan",
            cfg,
            {
                "u0": u0,
                "eps": eps,
                "lam_p": lam_p,
                "high_frequency_limit": hf,
                "basis_cond": basis.cond,
                "omega": list(omegas),
            },
        )
    )
    if not args.no_plot:
        lam_f_vals = [r[1] for r in rows]
        files.append(
            plots.floquet_sweep_figure(list(omegas), lam_f_vals, lam_p, hf, out / "floquet_scan.png")
        )
    return files


def cmd_expansion_check(cfg: ScenarioConfig, args) -> list:
    mats = cfg.matrices()
    rate = cfg.rate()
    block = cfg.data.get("expansion")
    if block is None:
        raise ConfigError("expansion-check needs an 'expansion' block with the ladder depth k")
    kwargs = {}
    if "u_samples" in block:
        kwargs["u_samples"] = tuple(block["u_samples"])
    try:
        report = expansion_check(cfg.model_params(), rate, block["k"], **kwargs)
    except ValueError as e:
        raise ConfigError(f"scenario does not fit the expansion setup: {e}") from None

    out = Path(args.out)
    rows = list(zip(report.u_samples, report.lam_samples))
    files = [write_csv(out / "expansion_samples.csv", ["u", "lam"], rows)]
    files.append(
        write_report(
            out / "expansion_report.json",
            "expansion-check",
            cfg,
            {
                "k": report.k,
                "l": report.l,
                "case": report.case,
                "order": report.order,
                "predicted_coeff": report.predicted_coeff,
                "empirical_coeff": report.empirical_coeff,
                "coeff_rel_err": report.coeff_rel_err,
                "expected_exponent": report.expected_exponent,
                "exponent_fit": report.exponent_fit,
                "eigvec_expected_slopes": report.eigvec_expected_slopes,
                "eigvec_slopes": report.eigvec_slopes,
                "eigvec_expected_amplitudes": report.eigvec_expected_amplitudes,
                "eigvec_amplitudes": report.eigvec_amplitudes,
            },
        )
    )
    if not args.no_plot:
        r0 = rate.params["r0"]
        tau1 = cfg.model_params().tau[0]
        files.append(
            plots.expansion_figure(
                report.u_samples,
                report.lam_samples,
                r0 * tau1,
                report.order,
                out / "expansion_decay.png",
            )
        )
    if not args.quiet:
        print(report.summary())
    return files


def _synthesize(cfg: ScenarioConfig):
    d2cfg = cfg.dim2_config()
    return d2cfg, dim2.synthesize_turnpike(cfg.x0, cfg.T, d2cfg)


def cmd_synthesize(cfg: ScenarioConfig, args) -> list:
    d2cfg, tc = _synthesize(cfg)
    mats = d2cfg.matrices()
    dt = args.dt or cfg.dt
    traj = simulate(cfg.x0, tc.control, mats, dt, theta=d2cfg.theta)
    pmp = pmp_residual(traj, cfg.u_min, cfg.u_max)

    out = Path(args.out)
    n = mats.n
    header = (
        ["t"]
        + [f"x{i}" for i in range(1, n + 1)]
        + [f"p{i}" for i in range(1, n + 1)]
        + ["u", "v", "H", "Phi"]
    )
    rows = [
        [traj.times[i], *traj.x[i], *traj.p[i], traj.u[i], traj.v[i], traj.H[i], traj.Phi[i]]
        for i in range(traj.times.size)
    ]
    files = [write_csv(out / "turnpike_trajectory.csv", header, rows)]
    files.append(
        write_report(
            out / "synthesize_report.json",
            "synthesize",
            cfg,
            {
                "u_sing": tc.u_bar,
                "v_sing": tc.v_bar,
                "lam_bar": tc.lam_bar,
                "u_init": tc.u_init,
                "T0": tc.T0,
                "T_psi": tc.T_psi,
                "arc_window": list(tc.arc_window),
                "Y_bar": tc.Y_bar,
                "pi_bar": tc.pi_bar,
                "Y_psi": tc.Y_psi,
                "segments": _control_rows(tc.control),
                "J": traj.J,
                "pmp_violations": pmp.n_violations,
                "hamiltonian_drift_rel": pmp.hamiltonian_drift_rel,
            },
        )
    )
    if not args.no_plot:
        files.append(plots.turnpike_figure(traj, tc, out / "turnpike.png"))
    return files


def cmd_chatter(cfg: ScenarioConfig, args) -> list:
    d2cfg, tc = _synthesize(cfg)
    n_pieces = args.pieces or cfg.data.get("n_pieces")
    if not n_pieces:
        raise ConfigError("chatter needs n_pieces (config key or --pieces)")
    mats = d2cfg.matrices()
    dt = args.dt or cfg.dt

    J_star = simulate(cfg.x0, tc.control, mats, dt).J
    ladder = sorted({2**p for p in range(0, 30) if 2**p < n_pieces} | {n_pieces})
    gap_rows = []
    final_chat = None
    for N in ladder:
        chat = dim2.chattering_approximation(tc, N)
        J_n = simulate(cfg.x0, chat, mats, dt).J
        gap_rows.append([N, J_n, J_star, (J_star - J_n) / J_star])
        final_chat = chat

    stats = duty_ratio_stats(final_chat, cfg.u_min, cfg.u_max, window=tc.arc_window)
    r_opt = (tc.u_bar - cfg.u_min) / (cfg.u_max - tc.u_bar)

    out = Path(args.out)
    files = [
        write_csv(out / "chatter_control.csv", ["t_start", "t_end", "u", "v"], _control_rows(final_chat)),
        write_csv(out / "chatter_convergence.csv", ["n_pieces", "J_n", "J_star", "rel_gap"], gap_rows),
    ]
    files.append(
        write_report(
            out / "chatter_report.json",
            "chatter",
            cfg,
            {
                "n_pieces": n_pieces,
                "J_star": J_star,
                "J_final": gap_rows[-1][1],
                "rel_gap_final": gap_rows[-1][3],
                "arc_mean_u": stats.mean_u,
                "u_sing": tc.u_bar,
                "empirical_ratio": stats.empirical_ratio,
                "optimal_ratio": r_opt,
            },
        )
    )
    if not args.no_plot:
        files.append(
            plots.chatter_gap_figure([r[0] for r in gap_rows], [r[3] for r in gap_rows], out / "chatter_gap.png")
        )
    return files


def cmd_optimize(cfg: ScenarioConfig, args) -> list:
    mats = cfg.matrices()
    rate = cfg.rate()
    ob = cfg.data.get("optimizer")
    if ob is None:
        raise ConfigError("optimize needs an 'optimizer' block with at least cell_dt")
    T = cfg.T
    n_cells = round(T / ob["cell_dt"])
    if n_cells < 1 or abs(n_cells * ob["cell_dt"] - T) > 1e-9 * T:
        raise ConfigError(
            f"optimizer.cell_dt = {ob['cell_dt']} does not divide the horizon T = {T}"
        )
    problem = DirectProblem(
        mats=mats,
        rate=rate,
        u_min=cfg.u_min,
        u_max=cfg.u_max,
        T=T,
        n_cells=n_cells,
        x0=cfg.x0,
        dt=args.dt or cfg.dt,
        v_rule=ob["v_rule"],
    )
    result = optimize_direct(
        problem,
        max_iters=ob["max_iters"],
        restarts=ob["restarts"],
        seed=ob["seed"],
    )
    window = tuple(ob.get("window", (T / 6.0, 5.0 * T / 6.0)))
    stats = duty_ratio_stats(result.control, cfg.u_min, cfg.u_max, window=window)
    hull = maximize_perron_hull(mats, rate, cfg.u_min, cfg.u_max)

    out = Path(args.out)
    files = [
        write_csv(out / "optimize_history.csv", ["iter", "J", "grad_norm", "step"], result.history),
        write_csv(out / "optimized_control.csv", ["t_start", "t_end", "u", "v"], _control_rows(result.control)),
    ]
    files.append(
        write_report(
            out / "optimize_report.json",
            "optimize",
            cfg,
            {
                "J": result.J,
                "converged": result.converged,
                "iterations": result.iterations,
                "grad_projection_norm": result.grad_projection_norm,
                "n_cells": n_cells,
                "window": list(window),
                "window_mean_u": stats.mean_u,
                "window_fraction_at_umax": stats.fraction_at_umax,
                "window_empirical_ratio": stats.empirical_ratio,
                "u_bar_reference": hull.u_bar,
            },
        )
    )
    if not args.no_plot:
        files.append(plots.history_figure(result.history, out / "optimize_history.png"))
        files.append(
            plots.optimized_control_figure(
                result.control, cfg.u_min, cfg.u_max, window, out / "optimized_control.png"
            )
        )
    return files


def cmd_verify_pmp(cfg: ScenarioConfig, args) -> list:
    mats = cfg.matrices()
    control = cfg.control_signal()
    source = "control block"
    tc = None
    if control is None:
        if cfg.model_params().n == 2:
            _, tc = _synthesize(cfg)
            control = tc.control
            source = "synthesized turnpike"
        else:
            raise ConfigError(
                "verify-pmp needs a 'control' block (only two-compartment scenarios "
                "can fall back to the synthesized control)"
            )
    strp = cfg.string()
    dt = args.dt or cfg.dt
    traj = simulate(cfg.x0, control, mats, dt, theta=strp.theta)
    pmp = pmp_residual(traj, cfg.u_min, cfg.u_max)

    out = Path(args.out)
    files = [
        write_report(
            out / "pmp_report.json",
            "verify-pmp",
            cfg,
            {
                "control_source": source,
                "J": traj.J,
                "n_points": pmp.n_points,
                "n_violations": pmp.n_violations,
                "violation_fraction": pmp.violation_fraction,
                "tol": pmp.tol,
                "max_abs_phi": pmp.max_abs_phi,
                "hamiltonian_median": pmp.hamiltonian_median,
                "hamiltonian_drift": pmp.hamiltonian_drift,
                "hamiltonian_drift_rel": pmp.hamiltonian_drift_rel,
                "ok": pmp.ok(),
            },
        )
    ]
    if not args.no_plot:
        files.append(plots.switching_figure(traj, cfg.u_min, cfg.u_max, out / "switching.png"))
    return files


COMMANDS = {
    "simulate": cmd_simulate,
    "perron-scan": cmd_perron_scan,
    "perron-max": cmd_perron_max,
    "floquet-scan": cmd_floquet_scan,
    "expansion-check": cmd_expansion_check,
    "synthesize": cmd_synthesize,
    "chatter": cmd_chatter,
    "optimize": cmd_optimize,
    "verify-pmp": cmd_verify_pmp,
}


# ---------------------------------------------------------------------------
# argument parsing and dispatch


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_omega_list(text: str) -> list:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--omega expects comma-separated numbers, got {text!r}")
    if not values or min(values) <= 0:
        raise argparse.ArgumentTypeError("--omega values must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pmca-control",
        description="Optimal sonication control for growth-fragmentation amplification.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True, metavar="PATH", help="scenario YAML file")
        p.add_argument("--out", default="out", metavar="DIR", help="artifact directory")
        p.add_argument("--dt", type=float, default=None, help="override the scenario time step")
        p.add_argument("--pieces", type=int, default=None, metavar="N", help="chattering cell count")
        p.add_argument("--omega", type=_parse_omega_list, default=None, metavar="LIST",
                       help="comma-separated forcing frequencies")
        p.add_argument("--quiet", action="store_true", help="suppress progress text")
        p.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    return parser


NUMERIC_FAILURES = (
    EigenConvergenceError,
    PositivityError,
    FloquetOverflowError,
    DefectiveBasisError,
    dim2.HorizonError,
    OverflowError,
    FloatingPointError,
    ZeroDivisionError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        cfg = ScenarioConfig.load(args.config)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        files = COMMANDS[args.command](cfg, args)
    except (ConfigError, ModelValidationError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_FAILURES as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RuntimeError, ValueError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"cannot write artifacts: {e}", file=sys.stderr)
        return EXIT_CONFIG

    if not args.quiet:
        for f in files:
            print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
