"""Batch verification driver.

Reads a flat ``key = value`` config (grammar in the README), runs the chosen
suites on seeded chart points and writes a JSON report.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bending import (BendingError, associated_pair, bending_residual, hypersurface_tensors,
                      system_S_residual, variation_check)
from .flatforms import (FlatFormError, _real_minus_one_gap, build_theta, decompose_flat,
                        extend_isometry, flat_fixture, flatness_residual,
                        kernel_span_isotropic, nullity_residual, random_partial_isometry,
                        rigidity_check)
from .gallery import (ConformalKillingData, GalleryError, conformal_killing, instantiate,
                      list_gallery)
from .geometry import GeometryError, SearchConfig, conformal_s_nullity, evaluate_frame
from .lightcone import LightConeModel, hat_system_residual, lift_frame, psi_checks
from .triviality import TrivialityError, fit_triviality

REPORT_VERSION = 1
SUITES = ("bending", "system_S", "hypersurface", "triviality", "theta", "decompose",
          "lightcone", "nullity", "rigidity", "variation")
DEFAULT_TOLS = {
    "bending": 1e-9, "system_S": 1e-8, "hypersurface": 1e-8, "triviality": 1e-6,
    "theta": 1e-8, "decompose": 1e-8, "lightcone": 1e-8, "variation": 1e-7,
    "rigidity": 1e-8, "tau_rank": 1e-8, "tau_mult": 1e-6,
}
SEARCH_KEYS = ("grid_size", "draws", "refine_iters")
BENDING_KEYS = ("seed", "lam", "v", "w")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# -- config ------------------------------------------------------------------------

def parse_value(text: str):
    t = text.strip()
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    parts = t.replace(",", " ").split()
    if len(parts) > 1:
        return [parse_value(q) for q in parts]
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def parse_config(text: str, source: str = "<config>") -> dict:
    """Flat mapping of dotted keys to values, remembering the line of each key."""
    out, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or any(not part for part in key.split(".")) or " " in key:
            raise ConfigError(f"{source}:{no}: malformed key {key!r}")
        if not val:
            raise ConfigError(f"{source}:{no}: key {key!r} has an empty value")
        if key in out:
            raise ConfigError(f"{source}:{no}: duplicate key {key!r} (first set on line "
                              f"{lines[key]})")
        out[key] = parse_value(val)
        lines[key] = no
    out["__lines__"] = lines
    out["__source__"] = source
    return out


@dataclass
class RunConfig:
    gallery: str = ""
    gallery_params: dict = field(default_factory=dict)
    bending: str = ""
    bending_params: dict = field(default_factory=dict)
    suites: list = field(default_factory=list)
    points: int = 3
    seed: int = 0
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLS))
    search: dict = field(default_factory=dict)
    form: dict = field(default_factory=dict)
    isometry: dict = field(default_factory=dict)
    output: str = ""
    workers: int = 1
    origin: dict = field(default_factory=dict)   # config key -> "file:line"

    def as_dict(self) -> dict:
        return {"gallery": self.gallery, "gallery_params": self.gallery_params,
                "bending": self.bending, "bending_params": self.bending_params,
                "suites": list(self.suites), "points": self.points, "seed": self.seed,
                "tolerances": self.tolerances, "search": self.search}

    def search_config(self) -> SearchConfig:
        return SearchConfig(tau_rank=self.tolerances["tau_rank"],
                            tau_mult=self.tolerances["tau_mult"], seed=self.seed,
                            **{k: int(v) for k, v in self.search.items()})


def _where(raw: dict, key: str) -> str:
    no = raw.get("__lines__", {}).get(key)
    src = raw.get("__source__", "<config>")
    return f"{src}:{no}: {key}" if no else key


def _int_field(raw, key, value, low=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{_where(raw, key)}: expected an integer, got {value!r}")
    if low is not None and value < low:
        raise ConfigError(f"{_where(raw, key)}: must be >= {low}, got {value}")
    return value


def _tol(raw, key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
        raise ConfigError(f"{_where(raw, key)}: tolerance must be a positive number")
    return float(value)


def build_config(raw: dict) -> RunConfig:
    cfg = RunConfig()
    src = raw.get("__source__", "<config>")
    cfg.origin = {k: f"{src}:{no}" for k, no in raw.get("__lines__", {}).items()}
    for key, val in raw.items():
        if key.startswith("__"):
            continue
        head, _, rest = key.partition(".")
        if key == "gallery.name":
            cfg.gallery = str(val)
        elif head == "gallery" and rest:
            cfg.gallery_params[rest] = tuple(val) if isinstance(val, list) else val
        elif key == "bending.name":
            cfg.bending = str(val)
        elif head == "bending" and rest in BENDING_KEYS:
            cfg.bending_params[rest] = val
        elif key == "suites":
            names = val if isinstance(val, list) else [val]
            bad = [s for s in names if s not in SUITES]
            if bad:
                raise ConfigError(f"{_where(raw, key)}: unknown suite(s) {bad}; "
                                  f"choose from {list(SUITES)}")
            cfg.suites = list(dict.fromkeys(names))
        elif key == "points":
            cfg.points = _int_field(raw, key, val, 1)
        elif key == "seed":
            cfg.seed = _int_field(raw, key, val, 0)
        elif key == "workers":
            cfg.workers = _int_field(raw, key, val, 1)
        elif key == "output":
            cfg.output = str(val)
        elif head == "tol" and rest in DEFAULT_TOLS:
            cfg.tolerances[rest] = _tol(raw, key, val)
        elif head == "search" and rest in SEARCH_KEYS:
            cfg.search[rest] = _int_field(raw, key, val, 1)
        elif head == "form" and rest in ("p", "ell", "rank", "n", "seed"):
            cfg.form[rest] = _int_field(raw, key, val, 0)
        elif head == "isometry" and rest in ("N", "k", "seed"):
            cfg.isometry[rest] = _int_field(raw, key, val, 0)
        else:
            raise ConfigError(f"{_where(raw, key)}: unknown key")
    return cfg


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    raw = {"__source__": "command line"}
    if args.seed is not None:
        cfg.seed = _int_field(raw, "--seed", args.seed, 0)
    if args.points is not None:
        cfg.points = _int_field(raw, "--points", args.points, 1)
    if args.workers is not None:
        cfg.workers = _int_field(raw, "--workers", args.workers, 1)
    if args.suite:
        bad = [s for s in args.suite if s not in SUITES]
        if bad:
            raise ConfigError(f"--suite: unknown suite(s) {bad}; choose from {list(SUITES)}")
        cfg.suites = list(dict.fromkeys(args.suite))
    for item in args.tol or []:
        key, sep, val = item.partition("=")
        if not sep or key not in DEFAULT_TOLS:
            raise ConfigError(f"--tol {item!r}: expected KEY=VALUE with KEY in "
                              f"{sorted(DEFAULT_TOLS)}")
        cfg.tolerances[key] = _tol(raw, f"--tol {key}", parse_value(val))
    if args.output:
        cfg.output = args.output
    return cfg


# -- suites ------------------------------------------------------------------------

def _bending_for(entry, cfg: RunConfig):
    m = entry.chart.ambient.dim
    name = cfg.bending
    if name == "conformal_killing" and cfg.bending_params:
        bp = cfg.bending_params
        if set(bp) == {"seed"}:
            return conformal_killing(ConformalKillingData.random(m, int(bp["seed"])))
        seed = int(bp.get("seed", 0))
        rng = np.random.default_rng(seed)
        K = rng.standard_normal((m, m))
        vec = lambda key: None if key not in bp else np.atleast_1d(np.asarray(bp[key], float))  # noqa: E731
        try:
            data = ConformalKillingData.build(m, float(bp.get("lam", 0.0)), vec("v"), vec("w"),
                                              (K - K.T) / 2 if "seed" in bp else None)
        except GalleryError as exc:
            raise ConfigError(f"bending parameters: {exc}") from None
        return conformal_killing(data)
    if cfg.bending_params:
        raise ConfigError(f"bending.{next(iter(cfg.bending_params))}: parameters are only "
                          "accepted for bending.name = conformal_killing")
    if name not in entry.bendings:
        raise ConfigError(f"bending.name: unknown bending {name!r} for {entry.name}; "
                          f"known: {sorted(entry.bendings)}")
    return entry.bendings[name]


def _entry(cfg: RunConfig):
    if not cfg.gallery:
        raise ConfigError("gallery.name: missing")
    try:
        return instantiate(cfg.gallery, **cfg.gallery_params)
    except GalleryError as exc:
        msg = str(exc)
        cited = [k for k in cfg.gallery_params if re.search(rf"\b{re.escape(k)}\b", msg)]
        key = f"gallery.{cited[0]}" if cited else "gallery.name"
        where = cfg.origin.get(key)
        raise ConfigError(f"{where + ': ' if where else ''}{key}: {msg}") from None


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def _f(x) -> float:
    return float(x)


def _suite_point(name, cfg, entry, bend, frame, be, u):
    tol, sc = cfg.tolerances, be.scale
    if name == "bending":
        res, inferred = bending_residual(frame, bend)
        worst = max(res / sc, be.inf_residual / sc, be.tam_residual, be.symmetry_residual,
                    be.anti_residual)
        return {"bending_residual": _f(res), "rho_inferred": _f(inferred), "rho": be.rho,
                "inf_residual": be.inf_residual, "tam_residual": be.tam_residual,
                "symmetry_residual": be.symmetry_residual, "anti_residual": be.anti_residual,
                "scale": sc, "verdict": _verdict(worst <= tol["bending"])}
    if name == "system_S":
        g, c, r = system_S_residual(frame, be)
        return {"gauss": g, "codazzi": c, "ricci": r,
                "verdict": _verdict(max(g, c, r) <= tol["system_S"])}
    if name == "hypersurface":
        if frame.p != 1:
            return {"verdict": "not applicable", "reason": f"codimension {frame.p}"}
        B, rg, rc = hypersurface_tensors(frame, be)
        return {"B_eigenvalues": np.linalg.eigvalsh(B).round(12).tolist(), "gauss": rg,
                "codazzi": rc, "verdict": _verdict(max(rg, rc) <= tol["hypersurface"])}
    if name == "theta":
        th = build_theta(frame, be)
        fl, nl = flatness_residual(th), nullity_residual(th)
        ker = kernel_span_isotropic(th, tol["tau_rank"]).kernel.shape[1]
        return {"flatness": fl, "nullity": nl, "null": bool(nl <= tol["theta"] * sc),
                "kernel_dim": int(ker),
                "verdict": _verdict(fl <= tol["theta"] * sc and ker == 0)}
    if name == "decompose":
        th = build_theta(frame, be)
        try:
            d = decompose_flat(th, tol["decompose"])
        except FlatFormError as exc:
            msg = str(exc)
            return {"verdict": "fail" if msg.startswith("conclusion") else "not applicable",
                    "reason": msg}
        return {"ell": d.ell, "dims": d.dims, "checks": d.checks, "verdict": "pass"}
    if name == "lightcone":
        model = LightConeModel.standard(frame.m)
        lf = lift_frame(model, entry.chart, u, seed_order=frame.seed_order)
        pc = psi_checks(model, frame.f)
        hat = hat_system_residual(model, lf, associated_pair(lf.base, bend))
        names = ("gauss", "codazzi", "ricci_xi", "ricci_w", "ricci_F", "hess")
        ok = (max(pc.values()) <= 1e-12 and lf.dual_route_residual <= 1e-9
              and max(lf.shape_F_residual, lf.shape_w_residual) <= 1e-10
              and max(hat) <= tol["lightcone"])
        return {"psi": pc, "dual_route": lf.dual_route_residual,
                "shape_F_plus_identity": lf.shape_F_residual, "shape_w": lf.shape_w_residual,
                "hat": dict(zip(names, hat)), "verdict": _verdict(ok)}
    if name == "nullity":
        table = {}
        for s in range(1, frame.p + 1):
            r = conformal_s_nullity(frame, s, cfg.search_config())
            table[str(s)] = {"estimate": r.estimate, "unstable": r.unstable}
        ok = not any(v["unstable"] for v in table.values())
        truth = entry.ground_truth.get("nu1")
        if truth is not None and frame.p >= 1:
            ok = ok and table["1"]["estimate"] == truth[0]
            table["expected_nu1"] = truth[0]
        return {"table": table, "verdict": _verdict(ok)}
    if name == "rigidity":
        try:
            rv = rigidity_check(frame, be, cfg.search_config(), tol["rigidity"])
        except FlatFormError as exc:
            return {"verdict": "not applicable", "reason": str(exc)}
        out = rv.to_dict()
        out["rigidity_verdict"] = out.pop("verdict")
        out["verdict"] = _verdict(out["rigidity_verdict"] in ("trivial with certificate",
                                                              "hypotheses not met"))
        return out
    if name == "variation":
        r = variation_check(entry.chart, bend, [1e-2, 5e-3, 2.5e-3], [u])
        return {"residual": r, "verdict": _verdict(r <= tol["variation"])}
    raise ConfigError(f"unknown suite {name!r}")


def _run_point(cfg: RunConfig, index: int, u, seed_order):
    entry = _entry(cfg)
    bend = _bending_for(entry, cfg)
    out = {"index": index, "u": [float(x) for x in u], "suites": {}}
    frame = evaluate_frame(entry.chart, u, seed_order=seed_order)
    be = associated_pair(frame, bend)
    for name in cfg.suites:
        if name == "triviality":
            continue
        out["suites"][name] = _suite_point(name, cfg, entry, bend, frame, be, u)
    return out


def _job(args):
    return _run_point(*args)


def run(cfg: RunConfig, timestamp: bool = True) -> tuple:
    """(report, exit status)."""
    if not cfg.suites:
        raise ConfigError("suites: at least one suite is required")
    entry = _entry(cfg)
    bend = _bending_for(entry, cfg)
    pts = entry.chart.sample(cfg.points, cfg.seed)
    seed_order = evaluate_frame(entry.chart, pts[0]).seed_order
    jobs = [(cfg, i, u, seed_order) for i, u in enumerate(pts)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    results.sort(key=lambda r: r["index"])
    report = {"report_version": REPORT_VERSION, "tool": "cibend", "version": __version__,
              "config": cfg.as_dict(), "points": results, "global": {}}
    if "triviality" in cfg.suites:
        try:
            cert = fit_triviality(entry.chart, bend, pts, tau=cfg.tolerances["triviality"])
            d = cert.to_dict()
            d["suite_verdict"] = _verdict(cert.trivial)
        except TrivialityError as exc:
            d = {"verdict": "undetermined", "reason": str(exc), "suite_verdict": "fail"}
        report["global"]["triviality"] = d
    summary = {}
    for name in cfg.suites:
        if name == "triviality":
            summary[name] = report["global"]["triviality"]["suite_verdict"]
            continue
        verdicts = [r["suites"][name]["verdict"] for r in results]
        summary[name] = "fail" if "fail" in verdicts else (
            "pass" if "pass" in verdicts else "not applicable")
    status = EXIT_FAIL if "fail" in summary.values() else EXIT_PASS
    report["summary"] = {"suites": summary, "exit_status": status}
    if timestamp:
        report["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return report, status


# -- other verbs ---------------------------------------------------------------------

def run_nullity(cfg: RunConfig) -> tuple:
    entry = _entry(cfg)
    pts = entry.chart.sample(cfg.points, cfg.seed)
    rows, ok = [], True
    for i, u in enumerate(pts):
        fr = evaluate_frame(entry.chart, u)
        table = {}
        for s in range(1, fr.p + 1):
            r = conformal_s_nullity(fr, s, cfg.search_config())
            table[str(s)] = {"estimate": r.estimate, "unstable": r.unstable}
            ok = ok and not r.unstable
        rows.append({"index": i, "u": [float(x) for x in u], "nullities": table})
    truth = entry.ground_truth.get("nu1")
    if truth is not None:
        ok = ok and all(r["nullities"].get("1", {}).get("estimate") == truth[0] for r in rows)
    report = {"report_version": REPORT_VERSION, "verb": "nullity", "config": cfg.as_dict(),
              "points": rows, "expected_nu1": None if truth is None else truth[0]}
    return report, EXIT_PASS if ok else EXIT_FAIL


def run_decompose(cfg: RunConfig) -> tuple:
    f = cfg.form
    if cfg.gallery and not f:
        # theta of the configured bending at each point
        cfg.suites = ["decompose"]
        return run(cfg, timestamp=False)
    p, ell, rank = f.get("p", 3), f.get("ell", 1), f.get("rank", 1)
    n = f.get("n", 2 * p + 2)
    try:
        gamma = flat_fixture(p, ell, rank, n, f.get("seed", cfg.seed))
    except FlatFormError as exc:
        raise ConfigError(f"form: {exc}") from None
    report = {"report_version": REPORT_VERSION, "verb": "decompose",
              "form": {"p": p, "ell": ell, "rank": rank, "n": n},
              "flatness": flatness_residual(gamma), "nullity": nullity_residual(gamma)}
    try:
        d = decompose_flat(gamma, cfg.tolerances["decompose"])
    except FlatFormError as exc:
        report["error"] = str(exc)
        return report, EXIT_FAIL
    report.update({"ell": d.ell, "dims": d.dims, "checks": d.checks})
    return report, EXIT_PASS


def run_extend_isometry(cfg: RunConfig) -> tuple:
    iso = cfg.isometry
    N = iso.get("N", 4)
    k = iso.get("k", max(1, N // 2))
    try:
        T0 = random_partial_isometry(N, k, iso.get("seed", cfg.seed))
    except FlatFormError as exc:
        raise ConfigError(f"isometry: {exc}") from None
    T = extend_isometry(T0, seed=cfg.seed)
    checks = {"orthogonality": float(np.abs(T.T @ T - np.eye(N)).max()),
              "extension": float(np.abs(T @ T0.domain_basis - T0.images).max()),
              "minus_one_gap": _real_minus_one_gap(T)}
    ok = checks["orthogonality"] <= 1e-10 and checks["extension"] <= 1e-10 \
        and checks["minus_one_gap"] > 1e-6
    return ({"report_version": REPORT_VERSION, "verb": "extend-isometry", "N": N, "k": k,
             "T": np.round(T, 12).tolist(), "checks": checks}, EXIT_PASS if ok else EXIT_FAIL)


# -- entry point ------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    gallery_help = "gallery entries: " + "; ".join(
        f"{e['name']} ({e['params']})" for e in list_gallery())
    ap = argparse.ArgumentParser(prog="cibend", epilog=gallery_help,
                                 description="Verify conformal infinitesimal bendings "
                                             "on closed-form immersions.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("verify", "nullity", "decompose", "extend-isometry", "list-gallery"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--points", type=int)
        sp.add_argument("--suite", action="append", help="suite name (repeatable)")
        sp.add_argument("--tol", action="append", metavar="KEY=VAL",
                        help="tolerance override (repeatable)")
        sp.add_argument("--output", help="write the JSON report here instead of stdout")
        sp.add_argument("--no-timestamp", action="store_true")
        sp.add_argument("--workers", type=int, help="worker processes for per-point work")
    return ap


def _emit(report: dict, path: str) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = {}
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    raw = parse_config(fh.read(), args.config)
            except OSError as exc:
                raise ConfigError(f"{args.config}: {exc.strerror}") from None
        cfg = _apply_flags(build_config(raw), args)
        if args.verb == "list-gallery":
            report, status = {"report_version": REPORT_VERSION, "gallery": list_gallery()}, 0
        elif args.verb == "verify":
            report, status = run(cfg, timestamp=not args.no_timestamp)
        elif args.verb == "nullity":
            report, status = run_nullity(cfg)
        elif args.verb == "decompose":
            report, status = run_decompose(cfg)
        else:
            report, status = run_extend_isometry(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeometryError, BendingError, FlatFormError, TrivialityError,
            np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(report, cfg.output)
    return status


if __name__ == "__main__":
    sys.exit(main())
