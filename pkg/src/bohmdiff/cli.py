"""Command line entry point: ``bohmdiff <command> --config FILE``.

Every command writes CSV tables into the output directory together with a
``<command>.manifest.json`` record. The exit status is 0 when no item
failed, 1 when some items failed (listed on stderr and in the manifest) and
2 for configuration or IO errors.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import separator as S
from . import trajectories as T
from . import vortices as V
from . import wavefield as W
from ._kernels import pack_params, velocity_many
from .config import THETA_MIN, ConfigError, Mode
from .errors import BohmDiffError
from .io import load_config, read_csv, resolve_output_dir, write_csv, write_manifest
from .lattice import fit_constants

COMMANDS = ("field", "separator", "nodes", "xpoints", "manifolds", "rx-survey", "trajectories", "tof", "fit-fraunhofer")


class Run:
    """Output directory, metadata and bookkeeping for one command."""

    def __init__(self, cfg, command, out_dir: Path):
        self.cfg = cfg
        self.command = command
        self.out_dir = out_dir
        self.files: list[Path] = []
        self.failures: list[str] = []
        self.meta = {"command": command, "config_sha256": cfg.digest(), "seeds": cfg.seeds, "version": __version__}

    def csv(self, name, columns, rows):
        self.files.append(write_csv(self.out_dir / name, columns, rows, self.meta))

    def fail(self, what):
        self.failures.append(what)


# --- commands ------------------------------------------------------------------------------


def cmd_field(run: Run):
    cfg, f = run.cfg, run.cfg.field
    z = np.linspace(f.z_min, f.z_max, f.nz)
    R = np.linspace(f.R_min, f.R_max, f.nR)
    Z, RR = (a.ravel() for a in np.meshgrid(z, R, indexing="ij"))
    theta = np.arctan2(RR, Z)
    ok = theta > THETA_MIN
    p, thq, kap = pack_params(cfg.physical, run.cfg.mode, t_frozen=f.t)
    rows = []
    for zi, Ri, good in zip(Z, RR, ok):
        if not good:
            rows.append([zi, Ri, math.nan, math.nan, math.nan, math.nan, math.nan])
            continue
        psi = complex(W.psi(cfg.physical, W.SpacetimePoint(zi, Ri, f.t), run.cfg.mode))
        v = velocity_many(np.array([zi]), np.array([Ri]), f.t, p, thq, kap)
        rows.append([zi, Ri, psi.real, psi.imag, abs(psi) ** 2, v[0, 0], v[1, 0]])
    run.csv("field.csv", ["z_nm", "R_nm", "re_psi", "im_psi", "density", "vz_nm_per_tu", "vR_nm_per_tu"], rows)


def cmd_separator(run: Run):
    cfg, s = run.cfg.physical, run.cfg.separator
    inner, outer = S.trace_separator(cfg, (s.theta_min, s.theta_max), s.n_samples)
    rows = []
    for br in (inner, outer):
        for th, R in zip(br.theta, br.R):
            rows.append([br.branch_id, th, R, R / math.tan(th)])
    run.csv("separator_branches.csv", ["branch", "theta_rad", "R_nm", "z_nm"], rows)
    rows = []
    for ch in S.classify_all(cfg):
        rows.append([ch.q, ch.theta_q, ch.case, ch.theta_a, ch.theta_a_prime, ch.width, ch.theta_b, ch.theta_b_prime,
                     ch.G_peak])
    run.csv(
        "channels.csv",
        ["q", "theta_q", "case", "theta_a", "theta_a_prime", "width", "theta_b", "theta_b_prime", "G_peak_nm"],
        rows,
    )
    run.csv("separator_gaps.csv", ["theta_start", "theta_end"], [list(g) for g in inner.gaps])


def _windows(cfg, lo, hi):
    """[lo, hi] with the open channels cut out (the separator has no roots there)."""
    cuts = sorted((ch.theta_a, ch.theta_a_prime) for ch in S.classify_all(cfg) if ch.case == "I")
    out, a = [], lo
    for ca, cb in cuts:
        if cb <= a or ca >= hi:
            continue
        if ca > a:
            out.append((a, ca))
        a = max(a, cb)
    if a < hi:
        out.append((a, hi))
    return out


def _nodes(run: Run):
    n = run.cfg.nodes
    nodes = []
    for win in _windows(run.cfg.physical, n.theta_min, n.theta_max):
        found, failures = V.find_nodal_points(
            run.cfg.physical, win, n.branch, q_bars=n.q_bars or None, max_nodes=n.max_nodes, mode=run.cfg.mode
        )
        nodes += found
        for q, exc in failures:
            run.fail(f"node q_bar={q}: {exc}")
    return sorted(nodes, key=lambda nd: nd.theta0)


def cmd_nodes(run: Run):
    branch = run.cfg.nodes.branch
    rows = [[nd.q_bar, branch, nd.z0, nd.R0, nd.theta0, nd.r0] for nd in _nodes(run)]
    run.csv("nodes.csv", ["q_bar", "branch", "z_nm", "R_nm", "theta_rad", "r_nm"], rows)


def _complexes(run: Run):
    out = []
    for nd in _nodes(run):
        try:
            out.append(V.build_complex(run.cfg.physical, nd, run.cfg.mode))
        except (BohmDiffError, np.linalg.LinAlgError) as exc:
            run.fail(f"X-point q_bar={nd.q_bar}: {exc}")
    return out


def cmd_xpoints(run: Run):
    rows = []
    for cx in _complexes(run):
        nd = cx.node
        xo = cx.x_offset
        l1, l2 = cx.eigenvalues
        rows.append([
            nd.q_bar, nd.z0 + cx.node_offset[0], nd.R0 + cx.node_offset[1], nd.z0 + xo[0], nd.R0 + xo[1],
            cx.uX, cx.vX, cx.RX, l1, l2, cx.speed_at_x, cx.node_character, ";".join(cx.flags),
        ])
    run.csv(
        "xpoints.csv",
        ["q_bar", "node_z_nm", "node_R_nm", "x_z_nm", "x_R_nm", "uX_nm", "vX_nm", "RX_nm", "lambda_unstable",
         "lambda_stable", "speed_at_x", "node_character", "flags"],
        rows,
    )


def cmd_manifolds(run: Run):
    rows, summary = [], []
    for cx in _complexes(run):
        ms = V.trace_manifolds(run.cfg.physical, cx)
        for k, br in enumerate(ms.branches):
            for z, R in br.points:
                rows.append([cx.node.q_bar, k, br.kind, br.side, z, R])
            if br.status not in ("arc_done", "detected"):
                run.fail(f"manifold q_bar={cx.node.q_bar} {br.kind}{br.side:+d}: {br.status}")
        summary.append([cx.node.q_bar, cx.RX, ms.epsilon, ms.loop_gap])
    run.csv("manifolds.csv", ["q_bar", "branch_index", "kind", "side", "z_nm", "R_nm"], rows)
    run.csv("manifold_summary.csv", ["q_bar", "RX_nm", "epsilon_nm", "loop_gap_nm"], summary)


def cmd_rx_survey(run: Run):
    s = run.cfg.survey
    grid = np.linspace(s.theta_min, s.theta_max, s.n)
    entries = V.rx_survey(run.cfg.physical, grid, s.branch, run.cfg.mode, bragg_below=s.bragg_below)
    rows = []
    for e in entries:
        if not e.ok:
            run.fail(f"survey theta={e.theta:.6f}: {e.status}")
        nd = e.node
        q, side = e.bragg if e.bragg else (0, 0)
        rows.append([
            e.theta, e.status, "bragg" if e.bragg else "diffuse", q, side,
            nd.q_bar if nd else -1, nd.z0 if nd else math.nan, nd.R0 if nd else math.nan,
            nd.theta0 if nd else math.nan, e.RX,
        ])
    run.csv(
        "rx_survey.csv",
        ["theta_grid", "status", "domain", "bragg_q", "bragg_side", "q_bar", "z_nm", "R_nm", "theta_node", "RX_nm"],
        rows,
    )


def _swarm(run: Run):
    spec = run.cfg.swarm_spec()

    def progress(i, tr):
        print(f"  {i + 1}/{spec.n} R0={tr.R0:.3f} {tr.status}", file=sys.stderr, flush=True)

    res = T.run_swarm(run.cfg.physical, spec, keep_samples=True, progress=progress)
    for i, status in res.failures:
        run.fail(f"trajectory {i} (R0={res.trajectories[i].R0:.6f}): {status}")
    return res


def _exit_rows(res):
    rows = []
    for tr in res.trajectories:
        e = tr.exit
        rows.append([
            tr.R0, e.theta if e else math.nan, e.T if e else math.nan, e.T_seconds if e else math.nan,
            e.direction if e else math.nan, tr.n_crossings, tr.status,
        ])
    return rows


EXIT_COLUMNS = ["R0", "theta_exit", "T_exit", "T_exit_s", "direction_exit", "crossings", "status"]


def cmd_trajectories(run: Run, stride: int):
    res = _swarm(run)
    run.csv("exits.csv", EXIT_COLUMNS, _exit_rows(res))
    tracks = []
    for i, tr in enumerate(res.trajectories):
        s = tr.samples
        if len(s) == 0:
            continue
        keep = list(range(0, len(s), stride))
        if keep[-1] != len(s) - 1:
            keep.append(len(s) - 1)
        tracks += [[i, *s[k]] for k in keep]
    run.csv("tracks.csv", ["trajectory", "t", "z_nm", "R_nm"], tracks)
    cross = []
    for i, tr in enumerate(res.trajectories):
        for c in tr.crossings:
            cross.append([
                i, c.q, c.kind, c.entry_side, c.exit_side if c.exit_side is not None else 0, c.entry_x[0], c.entry_x[1],
                c.exit_x[0] if c.exit_x else math.nan, c.exit_x[1] if c.exit_x else math.nan, c.t_entry,
                c.t_exit if c.t_exit is not None else math.nan,
                c.post_direction if c.post_direction is not None else math.nan,
            ])
    run.csv(
        "crossings.csv",
        ["trajectory", "q", "kind", "entry_side", "exit_side", "entry_x1", "entry_x2", "exit_x1", "exit_x2",
         "t_entry", "t_exit", "post_direction"],
        cross,
    )


def cmd_tof(run: Run, exits_path):
    cfg, tb = run.cfg.physical, run.cfg.tof
    if exits_path:
        _, header, rows = read_csv(exits_path)
        col = {h: k for k, h in enumerate(header)}
        keep = [r for r in rows if r[col["status"]] == "detected" and abs(float(r[col["direction_exit"]])) >= T.TRANSMITTED_TOL]
        theta = np.array([float(r[col["theta_exit"]]) for r in keep])
        Tm = np.array([float(r[col["T_exit"]]) for r in keep])
        source = (theta, Tm)
    else:
        res = _swarm(run)
        run.csv("exits.csv", EXIT_COLUMNS, _exit_rows(res))
        source = res
    edges = np.radians(np.linspace(tb.theta_min_deg, tb.theta_max_deg, tb.n_bins + 1))
    ref = math.radians(tb.theta_ref_deg)
    try:
        tab = T.tof_table(source, edges, ref)
    except ValueError as exc:
        # empty reference bin: report counts, no differences
        run.fail(f"tof: {exc}")
        theta = source[0] if isinstance(source, tuple) else np.array([t.exit.theta for t in source.trajectories
                                                                     if t.detected and not t.transmitted])
        counts = np.histogram(theta, edges)[0]
        tab = T.TofTable(edges, 0.5 * (edges[1:] + edges[:-1]), np.full(len(counts), np.nan), counts, ref,
                         [int(i) for i in np.flatnonzero(counts == 0)])
    # comparators at the mean exit angles the binned times belong to (bin centres where empty)
    ref_angle = tab.theta_ref_mean if tab.theta_mean is not None else ref
    means = tab.theta_mean if tab.theta_mean is not None else np.full(len(tab.centres), np.nan)
    rows = []
    for c, th, dT, n in zip(tab.centres, means, tab.dT, tab.counts):
        angle = th if np.isfinite(th) else c
        try:
            an = float(T.analytic_tof_diff(cfg, angle, ref_angle))
        except BohmDiffError:
            an = math.nan
        ru = float(T.rutherford_tof_diff(cfg, angle, ref_angle))
        rows.append([c, math.degrees(c), th, dT, dT * T.TIME_UNIT_S, int(n), an, ru * T.TIME_UNIT_S])
    for k in tab.missing:
        run.fail(f"empty theta bin {math.degrees(tab.centres[k]):.3f} deg")
    run.csv(
        "tof.csv",
        ["theta_bin", "theta_bin_deg", "theta_mean", "dT", "dT_s", "n_in_bin", "dT_analytic", "dT_rutherford_s"],
        rows,
    )


def cmd_fit(run: Run):
    f = run.cfg.fit
    res = fit_constants(run.cfg.physical, f.n_realizations, run.cfg.seeds["fit"], f.N_perp)
    run.csv(
        "fit.csv",
        ["C_coherent", "C_diffuse", "n_realizations", "N_perp", "rms_residual"],
        [[res.c_coherent, res.c_diffuse, res.n_realizations, f.N_perp, res.rms_residual]],
    )


# --- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bohmdiff", description="Bohmian trajectories in charged-particle diffraction")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--out", help="output directory (default: $BOHMDIFF_OUTPUT_DIR, then [run] output_dir)")
        p.add_argument("--seed", type=int, help="override every seed in [seeds]")
        p.add_argument("--mode", choices=[m.value for m in Mode], help="override [run] mode")
        if name == "trajectories":
            p.add_argument("--stride", type=int, default=1, help="keep every n-th track sample")
        if name == "tof":
            p.add_argument("--exits", help="reuse an exits.csv instead of integrating a swarm")
    return ap


def dispatch(command: str, cfg, out_dir: Path, stride: int = 1, exits=None) -> tuple[Path, list[str]]:
    """Run one command; returns (manifest path, failures)."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from None
    run = Run(cfg, command, out_dir)
    t0 = time.perf_counter()
    if command == "trajectories":
        if stride < 1:
            raise ValueError("--stride must be >= 1")
        cmd_trajectories(run, stride)
    elif command == "tof":
        cmd_tof(run, exits)
    else:
        {
            "field": cmd_field,
            "separator": cmd_separator,
            "nodes": cmd_nodes,
            "xpoints": cmd_xpoints,
            "manifolds": cmd_manifolds,
            "rx-survey": cmd_rx_survey,
            "fit-fraunhofer": cmd_fit,
        }[command](run)
    manifest = write_manifest(
        out_dir / f"{command}.manifest.json", cfg, command, run.files, run.failures, time.perf_counter() - t0,
        __version__,
    )
    return manifest, run.failures


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(mode=args.mode, seed=args.seed)
        out_dir = resolve_output_dir(cfg, args.out)
        manifest, failures = dispatch(
            args.command, cfg, out_dir, getattr(args, "stride", 1), getattr(args, "exits", None)
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    if failures:
        print(f"{len(failures)} failure(s):", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
