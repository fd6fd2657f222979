"""Command-line front end.

    biorthcurv wu-verify      [--config F] [--grid N] [--out F] [--jobs J]
    biorthcurv wilking-scan   [--config F] [--grid N] [--out F] [--jobs J]
    biorthcurv deform-verify  [--config F] [--theta T] [--grid N] [--atlas F] [--from-certificate F] [--out F] [--jobs J]
    biorthcurv diff A B

Exit codes: 0 pass, 2 numeric failure, 3 resolution insufficient, 4 config error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import certificates as C

SPACES = ("wu", "wilking", "deformed")

DEFAULT_GRIDS = {
    "wu": {"trace": 32, "infeasibility": 1024, "planes": 4096, "complements": 100, "refine": 5, "fit_planes": 100},
    "wilking": {"points": 100, "planes": 100, "radial": 6, "angular": 32, "cloud": 24, "flat_planes": 600},
    "deformed": {
        "tube_angles": 5,
        "global_rings": 5,
        "global_angles": 16,
        "pair_planes": 400,
        "pair_low": 80,
        "pair_refine": 3,
        "halvings": 40,
        "bisections": 2,
        "flat_points_per_sphere": 3,
    },
}
PRIMARY_GRID = {"wu": "infeasibility", "wilking": "angular", "deformed": "pair_planes"}
DEFAULT_TOLS = {
    "wu": {"trace": 1e-12, "L_min": 0.2},
    "wilking": {"sec_floor": 5e-5},
    "deformed": {"first_variation": 2e-3, "hessian_identity": 5e-2},
}
DEFAULT_EXTRA = {
    "wu": {"method": "interval", "target": 0.24},
    "wilking": {},
    "deformed": {"r0": 0.1, "r1": 0.25, "use_symmetry": True, "tube_radii": [0.0, 0.03, 0.06, 0.1, 0.13, 0.16, 0.19, 0.22, 0.25]},
}


class ConfigError(ValueError):
    pass


@dataclass
class ScanConfig:
    space: str
    grid: dict = field(default_factory=dict)
    theta: float | None = None
    s: float | None = None
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.space not in SPACES:
            raise ConfigError(f"space must be one of {SPACES}")
        grid = dict(DEFAULT_GRIDS[self.space])
        unknown = set(self.grid) - set(grid)
        if unknown:
            raise ConfigError(f"unknown grid keys {sorted(unknown)}")
        grid.update(self.grid)
        for k, v in grid.items():
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"grid.{k} must be an integer")
            if v < 2 and k not in ("bisections", "refine", "pair_refine", "flat_points_per_sphere"):
                raise ConfigError(f"grid.{k} must be >= 2")
        self.grid = grid
        tols = dict(DEFAULT_TOLS[self.space])
        unknown = set(self.tolerances) - set(tols)
        if unknown:
            raise ConfigError(f"unknown tolerance keys {sorted(unknown)}")
        tols.update({k: float(v) for k, v in self.tolerances.items()})
        self.tolerances = tols
        opts = dict(DEFAULT_EXTRA[self.space])
        unknown = set(self.options) - set(opts)
        if unknown:
            raise ConfigError(f"unknown option keys {sorted(unknown)}")
        opts.update(self.options)
        self.options = opts
        if self.space == "deformed":
            self.theta = 0.1 if self.theta is None else float(self.theta)
            if self.theta <= 0:
                raise ConfigError("theta must be positive")
        if self.s is not None and self.s < 0:
            raise ConfigError("s must be >= 0")

    def as_dict(self):
        return {
            "space": self.space,
            "grid": dict(self.grid),
            "theta": self.theta,
            "s": self.s,
            "tolerances": dict(self.tolerances),
            "seed": self.seed,
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {"space", "grid", "theta", "s", "tolerances", "seed", "options"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_wu_verify(cfg: ScanConfig, jobs=1):
    from . import wu

    g, tol, opt = cfg.grid, cfg.tolerances, cfg.options
    failures = []
    trace_dev = wu.trace_grid_check(g["trace"])
    if not trace_dev <= tol["trace"]:
        failures.append(f"trace closed forms deviate by {trace_dev:.3e}")
    spot = wu.spot_e11()
    inf = wu.infeasibility_certificate(resolution=g["infeasibility"], method=opt["method"], target=opt["target"])
    fit = wu.fit_wu_constant(n_planes=g["fit_planes"], seed=cfg.seed)
    bi = wu.biorth_wu_at_base(planes=g["planes"], complements=g["complements"], refine=g["refine"])
    if not bi.value > 0:
        failures.append(f"biorthogonal minimum {bi.value:.3e} is not positive")
    status = "pass"
    if not inf.certified:
        status = "insufficient-resolution"
        failures.append(f"infeasibility bound not certified at resolution {inf.resolution} (L = {inf.L:.4g})")
    elif inf.L < tol["L_min"]:
        failures.append(f"certified L = {inf.L:.4g} below {tol['L_min']}")
    if status == "pass" and failures:
        status = "numeric-failure"
    results = {
        "trace_max_deviation": trace_dev,
        "spot_e11": spot,
        "infeasibility": inf,
        "fit": fit,
        "biorthogonal": bi,
    }
    return C.make_certificate("wu-verify", cfg.as_dict(), results, status, failures)


def cmd_wilking_scan(cfg: ScanConfig, jobs=1):
    from .wilking import FlatScanConfig, find_flat_locus, nonnegativity_scan

    g, tol = cfg.grid, cfg.tolerances
    nn = nonnegativity_scan(n_points=g["points"], n_planes=g["planes"], seed=cfg.seed, jobs=jobs)
    atlas = find_flat_locus(FlatScanConfig(radial=g["radial"], angular=g["angular"], cloud=g["cloud"], n_planes=g["flat_planes"]), jobs=jobs)
    failures = []
    if not nn.min_sec >= -tol["sec_floor"]:
        failures.append(f"sec floor {nn.min_sec:.3e} below -{tol['sec_floor']}")
    results = {
        "nonnegativity": nn,
        "cluster_count": atlas.cluster_count,
        "family_flags": [int(np.all(s.family_dim == 1)) for s in atlas.spheres],
        "atlas_verified": atlas.verified,
        "warnings": atlas.warnings,
        "atlas": atlas,
    }
    return C.make_certificate("wilking-scan", cfg.as_dict(), results, "numeric-failure" if failures else "pass", failures)


def _load_atlas(path):
    from .wilking import FlatLocusAtlas

    d = C.load(path)
    if d.get("kind") == "wilking-scan":
        d = d["results"]["atlas"]
    return FlatLocusAtlas.from_dict(d)


def _first_variation_checks(atlas, potential, tol, n_sphere_points=1):
    """FD-in-s vs first variation, and the Hessian identity, at atlas points."""
    from .conformal import DeformedCurvature, hessian_identity_check, sec_derivative_fd
    from .grassmann import min_sec_planes, orthonormal_curvature
    from .wilking import S2xS3Point, sphere_frames_chart

    fv_gap, hess_res = 0.0, 0.0
    for sph in atlas.spheres:
        for k in range(n_sphere_points):
            x = S2xS3Point.from_array(sph.points[k])
            dc = DeformedCurvature(x, potential)
            Ron, Linv = orthonormal_curvature(dc.R, dc.g)
            _, Q = min_sec_planes(Ron)
            A = Linv @ Q
            fv = dc.first_variation(A[:, 0], A[:, 1])
            fd = sec_derivative_fd(x, A[:, 0], A[:, 1], potential)
            fv_gap = max(fv_gap, abs(fv - fd))
            T, N = sphere_frames_chart(x, dc.field)
            for X in (T[:, 0], N[:, 0], (T[:, 1] + N[:, 2]) / np.sqrt(2)):
                hess_res = max(hess_res, hessian_identity_check(x, X, potential, normal=N, field=dc.field, method="chart")[0])
    return {"first_variation_max_gap": fv_gap, "hessian_identity_max_residual": hess_res}


def cmd_deform_verify(cfg: ScanConfig, jobs=1, atlas_path=None, from_certificate=None):
    from .conformal import (
        SStarConfig,
        find_s_star,
        flat_pair_scan,
        negative_plane_search,
        potential_from_atlas,
        prepare_points,
        ricci_positivity_scan,
    )
    from .wilking import FlatScanConfig, find_flat_locus

    if from_certificate is not None:
        return _containment(cfg, from_certificate)
    g, tol, opt = cfg.grid, cfg.tolerances, cfg.options
    atlas = _load_atlas(atlas_path) if atlas_path else find_flat_locus(FlatScanConfig(), jobs=jobs)
    potential = potential_from_atlas(atlas, r0=opt["r0"], r1=opt["r1"])
    scfg = SStarConfig(
        theta=cfg.theta,
        r0=opt["r0"],
        r1=opt["r1"],
        tube_radii=tuple(opt["tube_radii"]),
        tube_angles=g["tube_angles"],
        global_rings=g["global_rings"],
        global_angles=g["global_angles"],
        pair_planes=g["pair_planes"],
        pair_low=g["pair_low"],
        pair_refine=g["pair_refine"],
        halvings=g["halvings"],
        bisections=g["bisections"],
        use_symmetry=bool(opt["use_symmetry"]),
    )
    prepared = prepare_points(potential, scfg, jobs=jobs)
    cert = find_s_star(potential, scfg, prepared=prepared, jobs=jobs)
    failures = []
    results = {"s_star": cert, "atlas_clusters": atlas.cluster_count}
    if not cert.global_min_f > 0:
        w = cert.global_argmin.get("invariants")
        failures.append(f"global samples reach f = {cert.global_min_f:.3e} at invariants {w}; g_s = g_W there for every s")
    if not cert.tube_success:
        failures.append("no s with positive min f on the tube samples")
        return C.make_certificate("deform-verify", cfg.as_dict(), results, "numeric-failure", failures)
    # the s-dependent checks run at the tube-certified s even when a global sample fails
    s = cert.s_star
    neg = negative_plane_search(s, potential, prepared, jobs=jobs)
    ric = ricci_positivity_scan(s, prepared)
    ric0 = ricci_positivity_scan(0.0, prepared)
    flat = flat_pair_scan(atlas, potential, theta=cfg.theta, per_sphere=g["flat_points_per_sphere"])
    checks = _first_variation_checks(atlas, potential, tol)
    results.update({"negative_plane": neg, "ricci": ric, "ricci_s0": ric0, "flat_pairs": flat, "checks": checks})
    if not neg.found:
        failures.append("no plane with negative curvature found at s_*")
    if not ric.min_ricci > 0:
        failures.append(f"Ricci floor {ric.min_ricci:.3e} is not positive")
    if not flat.min_value > 0:
        failures.append(f"df/ds at flat pairs reaches {flat.min_value:.3e}")
    if checks["first_variation_max_gap"] > tol["first_variation"]:
        failures.append("first variation disagrees with FD in s")
    if checks["hessian_identity_max_residual"] > tol["hessian_identity"]:
        failures.append("Hessian identity residual too large")
    return C.make_certificate("deform-verify", cfg.as_dict(), results, "numeric-failure" if failures else "pass", failures)


def _containment(cfg: ScanConfig, path):
    """A successful certificate at theta also certifies every theta' >= theta (K_theta' inside K_theta)."""
    base = C.load(path)
    if base.get("kind") != "deform-verify":
        raise ConfigError("--from-certificate needs a deform-verify certificate")
    bcfg = base["config"]
    if base["status"] != "pass":
        raise ConfigError("the base certificate did not pass")
    if cfg.theta < bcfg["theta"]:
        raise ConfigError(f"theta {cfg.theta} is smaller than the certificate's {bcfg['theta']}; a rescan is needed")
    for k in ("grid", "options"):
        if bcfg[k] != cfg.as_dict()[k]:
            raise ConfigError(f"config {k} differs from the base certificate")
    sst = base["results"]["s_star"]
    results = {
        "method": "containment",
        "base_theta": bcfg["theta"],
        "s_star": sst["s_star"],
        "min_f_lower_bound": sst["min_f"],
        "base_results_digest": _digest(base["results"]),
    }
    return C.make_certificate("deform-verify", cfg.as_dict(), results, "pass")


def _digest(obj):
    import hashlib

    return hashlib.sha256(C.dumps(obj).encode()).hexdigest()


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMAND_SPACE = {"wu-verify": "wu", "wilking-scan": "wilking", "deform-verify": "deformed"}


def build_parser():
    p = argparse.ArgumentParser(prog="biorthcurv", description="Curvature scans and certificates.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMAND_SPACE:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config (a certificate's config block)")
        sp.add_argument("--grid", type=int, help="primary resolution of the scan")
        sp.add_argument("--out", help="certificate path (default: stdout)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes; results do not depend on it")
        sp.add_argument("--timing", action="store_true", help="add wall-clock seconds to the certificate")
        if name == "deform-verify":
            sp.add_argument("--theta", type=float)
            sp.add_argument("--atlas", help="atlas JSON or wilking-scan certificate")
            sp.add_argument("--from-certificate", help="certify a larger theta from an existing certificate")
        if name == "wu-verify":
            sp.add_argument("--theta", type=float, help=argparse.SUPPRESS)
    d = sub.add_parser("diff")
    d.add_argument("a")
    d.add_argument("b")
    d.add_argument("--json", action="store_true", help="machine-readable report")
    return p


def _config_from_args(args, space):
    d = {"space": space}
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config: {e}") from e
        if "schema_version" in loaded and "config" in loaded:
            loaded = loaded["config"]
        if loaded.get("space", space) != space:
            raise ConfigError(f"config is for space {loaded.get('space')!r}, command needs {space!r}")
        d.update(loaded)
    if args.grid is not None:
        d["grid"] = {**d.get("grid", {}), PRIMARY_GRID[space]: args.grid}
    if getattr(args, "theta", None) is not None and space == "deformed":
        d["theta"] = args.theta
    return ScanConfig.from_dict(d)


def _emit(cert, out):
    text = C.dumps(cert)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "diff":
        try:
            report = C.diff_certificates(C.load(args.a), C.load(args.b))
        except (OSError, json.JSONDecodeError, C.SchemaMismatch) as e:
            print(f"error: {e}", file=sys.stderr)
            return C.EXIT_CONFIG
        if args.json:
            print(json.dumps([e.as_dict() for e in report.entries], sort_keys=True, default=str))
        else:
            for line in report.lines():
                print(line)
        return report.exit_code
    space = COMMAND_SPACE[args.command]
    try:
        cfg = _config_from_args(args, space)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return C.EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        if space == "wu":
            cert = cmd_wu_verify(cfg, jobs=args.jobs)
        elif space == "wilking":
            cert = cmd_wilking_scan(cfg, jobs=args.jobs)
        else:
            cert = cmd_deform_verify(cfg, jobs=args.jobs, atlas_path=args.atlas, from_certificate=args.from_certificate)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return C.EXIT_CONFIG
    except Exception:
        traceback.print_exc()
        return C.EXIT_NUMERIC
    if args.timing:
        cert["wall_clock"] = time.perf_counter() - t0
    _emit(cert, args.out)
    for f in cert["failures"]:
        print(f"FAIL: {f}", file=sys.stderr)
    return cert["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
