"""Figure rendering for the command-line reports.

Every function takes already-computed arrays, draws one figure, writes it
next to the delimited output, and returns the path.  The Agg backend keeps
this safe on headless machines.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 150


def _finish(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return out_path


def _staircase(ax, breakpoints, values, **kw):
    ax.step(np.append(breakpoints[:-1], breakpoints[-1]), np.append(values, values[-1]),
            where="post", **kw)


def trajectory_figure(traj, out_path) -> Path:
    """Counts (log scale), control, Hamiltonian, and switching value."""
    has_phi = traj.Phi is not None
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    (ax_x, ax_u), (ax_h, ax_phi) = axes

    for i in range(traj.x.shape[1]):
        ax_x.semilogy(traj.times, np.maximum(traj.x[:, i], 1e-300), label=f"$x_{{{i + 1}}}$")
    ax_x.set_ylabel("counts")
    ax_x.legend(loc="best", fontsize=8)

    ax_u.plot(traj.times, traj.u, drawstyle="steps-post", label="u")
    ax_u.plot(traj.times, traj.v, drawstyle="steps-post", label="v", alpha=0.7)
    ax_u.set_ylabel("control")
    ax_u.legend(loc="best", fontsize=8)

    ax_h.plot(traj.times, traj.H)
    ax_h.set_ylabel("H(t)")
    ax_h.set_xlabel("t")

    if has_phi:
        ax_phi.plot(traj.times, traj.Phi)
        ax_phi.axhline(0.0, color="k", lw=0.6)
        ax_phi.set_ylabel(r"$\Phi(t)$")
    else:
        ax_phi.set_axis_off()
    ax_phi.set_xlabel("t")

    fig.suptitle(f"terminal mass J = {traj.J:.6g}")
    return _finish(fig, out_path)


def perron_scan_figure(u_grid, lam_constant, lam_hull, marks, out_path) -> Path:
    """lam_P along v = r(u) and along the hull chord, maxima marked.

    ``marks`` is a list of (u, lam, label) points.
    """
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.plot(u_grid, lam_constant, label=r"$\lambda_P(u, r(u))$")
    if lam_hull is not None:
        ax.plot(u_grid, lam_hull, label=r"$\lambda_P(u, \sigma(u))$", ls="--")
    for u, lam, label in marks:
        ax.plot([u], [lam], "o", ms=6)
        ax.annotate(f"{label}\nu={u:.4g}", (u, lam), textcoords="offset points",
                    xytext=(6, -12), fontsize=8)
    ax.set_xlabel("u")
    ax.set_ylabel(r"$\lambda_P$")
    ax.legend(loc="best")
    return _finish(fig, out_path)


def floquet_sweep_figure(omegas, lam_f, lam_p, hf_limit, out_path) -> Path:
    """Floquet exponent against forcing frequency with its two anchors."""
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.semilogx(omegas, lam_f, "o-", label=r"$\lambda_F(\omega)$")
    ax.axhline(lam_p, color="k", lw=0.8, ls=":", label=r"$\lambda_P$ (no forcing)")
    if hf_limit is not None:
        ax.axhline(hf_limit, color="C3", lw=0.8, ls="--",
                   label=r"$\omega \to \infty$ prediction")
    ax.set_xlabel(r"$\omega$")
    ax.set_ylabel(r"$\lambda_F$")
    ax.legend(loc="best")
    return _finish(fig, out_path)


def expansion_figure(u_samples, lam_samples, lam_limit, exponent, out_path) -> Path:
    """Log-log decay of lam_P(u) - lam_P(inf) with the fitted slope."""
    gaps = np.abs(np.asarray(lam_samples) - lam_limit)
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.loglog(u_samples, gaps, "o", label="measured gap")
    u = np.asarray(u_samples, dtype=float)
    ref = gaps[0] * (u / u[0]) ** (-exponent)
    ax.loglog(u, ref, "--", label=f"slope -{exponent:g}")
    ax.set_xlabel("u")
    ax.set_ylabel(r"$|\lambda_P(u) - r_0 \tau_1|$")
    ax.legend(loc="best")
    return _finish(fig, out_path)


def turnpike_figure(traj, tc, out_path) -> Path:
    """Control staircase and the projective coordinate against its rail."""
    fig, (ax_u, ax_y) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)

    ax_u.plot(traj.times, traj.u, drawstyle="steps-post")
    for t in (tc.T0, tc.T - tc.T_psi):
        ax_u.axvline(t, color="k", lw=0.6, ls=":")
    ax_u.axhline(tc.u_bar, color="C3", lw=0.8, ls="--", label=r"$\bar u$")
    ax_u.set_ylabel("u(t)")
    ax_u.legend(loc="best", fontsize=8)

    y = traj.x[:, 0] / traj.x.sum(axis=1)
    ax_y.plot(traj.times, y, label=r"$y(t) = x_1/(x_1 + x_2)$")
    ax_y.axhline(tc.Y_bar, color="C3", lw=0.8, ls="--", label=r"$Y(\bar u)$")
    ax_y.set_xlabel("t")
    ax_y.set_ylabel("monomer fraction")
    ax_y.legend(loc="best", fontsize=8)

    fig.suptitle(f"turnpike on [{tc.arc_window[0]:.4g}, {tc.arc_window[1]:.4g}], "
                 f"J = {traj.J:.6g}")
    return _finish(fig, out_path)


def chatter_gap_figure(pieces, gaps, out_path) -> Path:
    """Relative terminal-mass gap of chattering approximants vs cell count."""
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.loglog(pieces, np.maximum(gaps, 1e-300), "o-")
    ax.set_xlabel("chattering cells on the arc")
    ax.set_ylabel("relative J gap to the relaxed control")
    return _finish(fig, out_path)


def history_figure(history, out_path) -> Path:
    """Ascent diagnostics: objective and projected gradient per iteration."""
    hist = np.asarray(history, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.plot(hist[:, 0], hist[:, 1], "o-", color="C0")
    ax.set_xlabel("iteration")
    ax.set_ylabel("J", color="C0")
    ax2 = ax.twinx()
    ax2.semilogy(hist[:, 0], np.maximum(hist[:, 2], 1e-300), "s--", color="C3", alpha=0.7)
    ax2.set_ylabel("projected gradient (scaled)", color="C3")
    return _finish(fig, out_path)


def optimized_control_figure(control, u_min, u_max, window, out_path) -> Path:
    """Optimized staircase with bounds and (optionally) a highlighted window."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    _staircase(ax, control.breakpoints, control.u)
    for bound in (u_min, u_max):
        ax.axhline(bound, color="k", lw=0.6, ls=":")
    if window is not None:
        ax.axvspan(window[0], window[1], color="C1", alpha=0.15, label="interior window")
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("t")
    ax.set_ylabel("u(t)")
    return _finish(fig, out_path)


def switching_figure(traj, u_min, u_max, out_path) -> Path:
    """Switching value with the control overlaid; sign bands shaded."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(traj.times, traj.Phi, color="C0", label=r"$\Phi(t)$")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\Phi(t)$", color="C0")
    ax2 = ax.twinx()
    ax2.plot(traj.times, traj.u, drawstyle="steps-post", color="C1", alpha=0.7, label="u(t)")
    ax2.set_ylim(u_min - 0.1 * (u_max - u_min), u_max + 0.1 * (u_max - u_min))
    ax2.set_ylabel("u(t)", color="C1")
    return _finish(fig, out_path)
