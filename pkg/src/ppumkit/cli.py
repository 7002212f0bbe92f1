"""Command-line front end.

Subcommands: ``mesh make|info|refine``, ``solve``, ``converge``, ``ppum``
and ``verify``.  Every command is a pure function of its JSON config; the
config is echoed into each report.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cover as cov
from . import estimate as est
from . import fem
from . import io
from . import ppum
from .fem import FeSpace
from .mesh import MeshError, audit_conformity
from .problems import DOMAINS, REGISTRY, UnknownDomain, UnknownProblem, get_problem, make_domain

log = logging.getLogger("ppumkit")


class ConfigError(ValueError):
    pass


_STUDY_DEFAULTS = {"levels": 4, "refinement": "uniform", "theta": 0.5}
_PPUM_DEFAULTS = {k: v for k, v in asdict(ppum.PpumConfig()).items() if k != "eta_tol"}
_PPUM_DEFAULTS["eta_tol"] = None
_PPUM_DEFAULTS["goal"] = "integral"
_TOP_DEFAULTS = {
    "problem": "poisson_smooth",
    "domain": None,
    "initial_refines": 3,
    "study": _STUDY_DEFAULTS,
    "ppum": _PPUM_DEFAULTS,
    "output_dir": "out",
    "formats": ["csv", "json", "vtk"],
}
_FORMATS = {"csv", "json", "vtk"}

# goal functionals selectable by name; "integral" is psi = 1
GOALS = {
    "integral": lambda: est.GoalFunctional(lambda x: np.ones(np.shape(x)[:-1]), "integral"),
}


@dataclass
class RunConfig:
    """Validated run configuration; ``domain=None`` means the problem's default."""

    problem: str = "poisson_smooth"
    domain: str | None = None
    initial_refines: int = 3
    study: dict = field(default_factory=lambda: dict(_STUDY_DEFAULTS))
    ppum: dict = field(default_factory=lambda: dict(_PPUM_DEFAULTS))
    output_dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json", "vtk"])

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(doc, _TOP_DEFAULTS, "")
        merged = copy.deepcopy(_TOP_DEFAULTS)
        for key in ("study", "ppum"):
            sub = doc.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"key '{key}': expected an object")
            _reject_unknown(sub, _TOP_DEFAULTS[key], key + ".")
            merged[key].update(sub)
        for key in ("problem", "domain", "initial_refines", "output_dir", "formats"):
            if key in doc:
                merged[key] = doc[key]
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc)

    def validate(self) -> None:
        if self.problem not in REGISTRY:
            raise ConfigError(f"key 'problem': unknown problem {self.problem!r}; choose from {sorted(REGISTRY)}")
        if self.domain is not None and self.domain not in DOMAINS:
            raise ConfigError(f"key 'domain': unknown domain {self.domain!r}; choose from {sorted(DOMAINS)}")
        if not isinstance(self.initial_refines, int) or self.initial_refines < 0:
            raise ConfigError("key 'initial_refines': expected a nonnegative integer")
        if not isinstance(self.study["levels"], int) or self.study["levels"] < 1:
            raise ConfigError("key 'study.levels': expected a positive integer")
        if self.study["refinement"] not in ("uniform", "adaptive"):
            raise ConfigError("key 'study.refinement': expected 'uniform' or 'adaptive'")
        if not isinstance(self.formats, list) or not set(self.formats) <= _FORMATS:
            raise ConfigError(f"key 'formats': expected a list drawn from {sorted(_FORMATS)}")
        if self.ppum["goal"] not in GOALS:
            raise ConfigError(f"key 'ppum.goal': unknown goal {self.ppum['goal']!r}")
        try:
            self.ppum_config()
        except (ppum.ConfigError, TypeError) as exc:
            raise ConfigError(f"key 'ppum': {exc}") from None

    def ppum_config(self) -> ppum.PpumConfig:
        kw = {k: v for k, v in self.ppum.items() if k != "goal"}
        return ppum.PpumConfig(**kw).validate()

    def model(self):
        return get_problem(self.problem)

    def domain_name(self) -> str:
        return self.domain or self.model().domain

    def coarse_mesh(self):
        return make_domain(self.domain_name(), self.initial_refines)

    def as_dict(self) -> dict:
        return asdict(self)


def _reject_unknown(doc: dict, allowed: dict, prefix: str) -> None:
    extra = sorted(set(doc) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) {', '.join(repr(prefix + k) for k in extra)}; "
                          f"allowed: {sorted(allowed)}")


def _out_dir(cfg: RunConfig, out: str | None) -> Path:
    path = Path(out if out is not None else cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _f(x) -> str:
    return "" if x is None or (isinstance(x, float) and not math.isfinite(x)) else repr(float(x))


# ----------------------------------------------------------------------
# mesh


def mesh_summary(mesh) -> dict:
    T = mesh.triangles
    edges = {tuple(sorted(e)) for t in T.tolist() for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
    used = np.unique(T)
    return {
        "n_vertices": int(len(used)),
        "n_triangles": int(len(T)),
        "n_edges": len(edges),
        "euler": int(len(used) - len(edges) + len(T)),
        "h_max": mesh.h_max,
        "h_min": mesh.h_min,
        "quality_min": mesh.quality_min,
        "area": float(mesh.areas().sum()),
        "conformity_problems": audit_conformity(mesh),
    }


def _write_mesh(mesh, out: Path, stem: str, formats) -> list[Path]:
    paths = []
    if "json" in formats:
        paths.append(io.write_mesh_json(mesh, out / f"{stem}.json"))
    if "csv" in formats:
        paths.extend(io.write_triangle(mesh, out / stem))
    if "vtk" in formats:
        paths.append(io.write_vtk(out / f"{stem}.vtk", mesh))
    return paths


def cmd_mesh_make(cfg: RunConfig, out: str | None) -> dict:
    mesh = cfg.coarse_mesh()
    d = _out_dir(cfg, out)
    _write_mesh(mesh, d, "mesh", cfg.formats)
    info = {"config": cfg.as_dict(), "mesh": mesh_summary(mesh)}
    io.write_json(info, d / "mesh_info.json")
    return info


def cmd_mesh_refine(path, rounds: int, marked, out: Path) -> dict:
    mesh = io.read_mesh(path)
    if marked:
        live = mesh.live_ids()
        rep = mesh.bisect([int(live[i]) for i in marked])
    else:
        mesh.refine_uniform(rounds)
        rep = None
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".json":
        io.write_mesh_json(mesh, out)
    else:
        io.write_triangle(mesh, out)
    info = mesh_summary(mesh)
    if rep is not None:
        info["refinement"] = {"n_marked": rep.n_marked, "n_bisections": rep.n_bisections,
                              "n_closure": rep.n_closure, "warnings": list(rep.warnings)}
    return info


# ----------------------------------------------------------------------
# solve / converge


def cmd_solve(cfg: RunConfig, out: str | None) -> dict:
    mp = cfg.model()
    mesh = cfg.coarse_mesh()
    V = FeSpace(mesh, mp.problem.dirichlet_markers)
    u, trace = fem.solve_newton(mp.problem, ppum.initial_guess(mp.problem, V))
    ind = est.residual_indicator(mp.problem, u)
    report = {
        "config": cfg.as_dict(),
        "dofs": V.n_dofs,
        "newton_trace": trace,
        "eta_total": ind.total,
        "l2_err": None,
        "h1_err": None,
    }
    if mp.exact is not None:
        report["l2_err"], report["h1_err"] = fem.error_norms(u, mp.exact)
    d = _out_dir(cfg, out)
    if "csv" in cfg.formats:
        io.write_function_csv(u, d / "solution.csv")
        io.write_indicator_csv(ind, d / "indicator.csv")
    if "vtk" in cfg.formats:
        io.write_vtk(d / "solution.vtk", mesh, point_data={"u": u.values}, cell_data={"eta": ind.eta})
    io.write_json(report, d / "report.json")
    return report


CONVERGE_COLUMNS = ["level", "h_max", "dofs", "l2_err", "h1_err", "l2_rate", "h1_rate"]


def convergence_study(cfg: RunConfig) -> list[dict]:
    """Solve on a mesh sequence; uniform levels are two bisection rounds apart."""
    mp = cfg.model()
    prob = mp.problem
    mesh = cfg.coarse_mesh()
    rows = []
    u = None
    for level in range(cfg.study["levels"]):
        V = FeSpace(mesh, prob.dirichlet_markers)
        u0 = ppum.initial_guess(prob, V) if u is None else ppum._restart(prob, u, V)
        u, _ = fem.solve_newton(prob, u0)
        row = {"level": level, "h_max": mesh.h_max, "dofs": V.n_dofs,
               "l2_err": None, "h1_err": None, "l2_rate": None, "h1_rate": None}
        if mp.exact is not None:
            row["l2_err"], row["h1_err"] = fem.error_norms(u, mp.exact)
            if rows:
                prev = rows[-1]
                for k in ("l2", "h1"):
                    a, b = prev[f"{k}_err"], row[f"{k}_err"]
                    if a > 0 and b > 0:
                        row[f"{k}_rate"] = math.log2(a / b)
        rows.append(row)
        if level + 1 < cfg.study["levels"]:
            if cfg.study["refinement"] == "uniform":
                mesh.refine_uniform(2)
            else:
                ind = est.residual_indicator(prob, u)
                mesh.bisect(est.mark(ind, cfg.study["theta"]))
    return rows


def write_convergence_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONVERGE_COLUMNS)
        for r in rows:
            w.writerow([r["level"], _f(r["h_max"]), r["dofs"]] + [_f(r[k]) for k in CONVERGE_COLUMNS[3:]])
    return path


def cmd_converge(cfg: RunConfig, out: str | None) -> list[dict]:
    rows = convergence_study(cfg)
    d = _out_dir(cfg, out)
    write_convergence_csv(rows, d / "converge.csv")
    io.write_json({"config": cfg.as_dict(), "levels": rows}, d / "converge.json")
    return rows


# ----------------------------------------------------------------------
# ppum


def run_from_config(cfg: RunConfig, threads: int | None = None) -> ppum.PpumSolution:
    mp = cfg.model()
    pcfg = cfg.ppum_config()
    goal = GOALS[cfg.ppum["goal"]]() if pcfg.mode == "goal" else None
    return ppum.run_ppum(mp.problem, cfg.coarse_mesh(), pcfg, goal=goal, exact=mp.exact, threads=threads)


def ppum_report(cfg: RunConfig, sol: ppum.PpumSolution) -> dict:
    report = dict(sol.report)
    report["config"] = cfg.as_dict()
    return report


def cmd_ppum(cfg: RunConfig, out: str | None, threads: int | None = None, strict: bool = True):
    """Run PPUM and write all exports; returns ``(report, exit_code)``."""
    sol = run_from_config(cfg, threads)
    report = ppum_report(cfg, sol)
    d = _out_dir(cfg, out)
    if "csv" in cfg.formats:
        io.write_partition_csv(sol.partition, d / "partition.csv")
    io.write_json(sol.pu.report.as_dict(), d / "pu_report.json")
    for t in sol.tasks:
        if t.u is None:
            continue
        if "json" in cfg.formats:
            io.write_mesh_json(t.mesh, d / f"mesh_{t.index}.json")
        if "csv" in cfg.formats:
            io.write_function_csv(t.u, d / f"solution_{t.index}.csv")
        if "vtk" in cfg.formats:
            io.write_function_vtk(t.u, d / f"solution_{t.index}.vtk")
    if sol.config.mode == "goal":
        g = report["global"]
        io.write_json({"terms": g["terms"], "estimate": g["goal_estimate"],
                       "epsilon": sol.config.epsilon, "p": sol.config.p,
                       "pass": g["pass"], "global_guarantee": g["guarantee"]}, d / "goal_report.json")
    io.write_json(report, d / "report.json")
    # an unmet goal tolerance is governed by ``strict``; other failures always count
    failed = any(t.failure and t.failure != "MaxRoundsWithoutTolerance" for t in sol.tasks)
    code = 1 if failed else 0
    if sol.config.mode == "goal" and strict and not report["global"]["guarantee"]:
        code = 1
    return report, code


# ----------------------------------------------------------------------
# verify


def sample_points(mesh, n: int, seed: int = 0) -> np.ndarray:
    """Uniform random points in the meshed domain (area-weighted simplex choice)."""
    rng = np.random.default_rng(seed)
    P, T = mesh.points, mesh.triangles
    a = mesh.areas()
    rows = rng.choice(len(T), size=n, p=a / a.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    lam = np.column_stack([1 - s, s * (1 - r2), s * r2])
    return np.einsum("nk,nkd->nd", lam, P[T[rows]])


def brute_force_membership(mesh, part: cov.Partition, layers: int) -> np.ndarray:
    """Patch membership grown by explicit vertex rings, as a ``(p, n)`` boolean array."""
    T = mesh.triangles.tolist()
    p = part.p
    member = np.zeros((p, len(T)), dtype=bool)
    for i in range(p):
        inside = {r for r in range(len(T)) if part.subdomain[r] == i}
        for _ in range(layers):
            verts = {v for r in inside for v in T[r]}
            inside = {r for r in range(len(T)) if any(v in verts for v in T[r])}
        member[i, sorted(inside)] = True
    return member


def _check(name, ok, **detail):
    return {"name": name, "pass": bool(ok), **detail}


def verify_suite(cfg: RunConfig, corrupt_pu: bool = False, threads: int | None = None) -> dict:
    """PU certification, overlap inequalities, conformity, Jacobian and mark-locality checks."""
    mp = cfg.model()
    pcfg = cfg.ppum_config()
    mesh = cfg.coarse_mesh()
    checks = []

    coarse_u = ppum.coarse_solve(mp.problem, mesh)
    part, cover, pu = ppum.decompose(mp.problem, coarse_u, mesh, pcfg)
    if corrupt_pu:
        # negative control: break the sum-to-one property
        pu.coefficients = pu.coefficients.copy()
        pu.coefficients[0] *= 1.01
    pts = sample_points(mesh, 1000, seed=0)
    resid = cov.pu_sum_residual(pu, pts)
    checks.append(_check("pu_sum_to_one", resid <= 1e-12, max_residual=resid, n_points=1000))

    T = pu.space.T
    bad = 0
    for i in range(pu.p):
        nonzero = (pu.coefficients[i][T] != 0).any(axis=1)
        bad += int(np.count_nonzero(nonzero & ~cover.member[i]))
    checks.append(_check("pu_support_in_patch", bad == 0, violations=bad))

    brute = brute_force_membership(mesh, part, pcfg.overlap_layers)
    M_brute = int(brute.sum(axis=0).max())
    same = bool(np.array_equal(brute, cover.member))
    checks.append(_check("pu_overlap_count", same and pu.report.M == M_brute,
                         M=pu.report.M, M_brute_force=M_brute, membership_matches=same))
    cinf = float(np.abs(pu.coefficients).max())
    checks.append(_check("pu_sup_norm", cinf == 1.0 and pu.coefficients.min() >= 0, C_inf=cinf))

    lemma = cov.overlap_lemma_check(mesh, cover, pu.report.M, n_samples=50, seed=0)
    checks.append(_check("overlap_inequalities",
                         lemma["first_violations"] == 0 and lemma["second_violations"] == 0, **lemma))

    toy = get_problem("hamiltonian_toy").problem
    Vt = FeSpace(make_domain("unit_square", 4), toy.dirichlet_markers)
    ut = fem.interpolate(Vt, lambda x: 1 + 0.3 * np.sin(3 * x[:, 0]) * np.sin(2 * x[:, 1]))
    errs = fem.jacobian_fd_check(toy, ut, 20, 1e-6, seed=0)
    checks.append(_check("jacobian_finite_difference", errs.max() < 1e-5, max_rel_err=float(errs.max())))

    # short estimator-mode run for the locality and conformity audits
    run_cfg = ppum.PpumConfig(**{**asdict(pcfg), "mode": "estimator",
                                 "target_dofs": min(pcfg.target_dofs, 400), "max_rounds": min(pcfg.max_rounds, 6)})
    sol = ppum.run_ppum(mp.problem, mesh, run_cfg, threads=threads)
    outside = sum(t.marks_outside for t in sol.tasks)
    total = sum(t.marks_total for t in sol.tasks)
    checks.append(_check("mark_locality", outside == 0, marks_total=total, marks_outside=outside))
    problems = audit_conformity(mesh)
    for t in sol.tasks:
        problems += [f"task {t.index}: {m}" for m in audit_conformity(t.mesh)]
    checks.append(_check("mesh_conformity", not problems, problems=problems[:10]))

    return {
        "config": cfg.as_dict(),
        "pu_report": pu.report.as_dict(),
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
    }


# ----------------------------------------------------------------------
# argument parsing


def _load_config(args) -> RunConfig:
    if args.config is None:
        return RunConfig.from_dict({})
    return RunConfig.from_file(args.config)


_GLOBAL_DEFAULTS = {"config": None, "out": None, "threads": None, "strict": True,
                    "verbose": False, "corrupt_pu": False}


def build_parser() -> argparse.ArgumentParser:
    # defaults are suppressed so a flag given before or after the subcommand both count
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, help="task threads (speed only)")
    common.add_argument("--no-strict", dest="strict", action="store_false",
                        help="exit 0 even if the goal guarantee or a check fails")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ppumkit", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="mesh utilities", parents=[common])
    msub = mesh.add_subparsers(dest="mesh_command", required=True)
    msub.add_parser("make", help="write the configured coarse mesh", parents=[common])
    info = msub.add_parser("info", help="summarize a mesh file", parents=[common])
    info.add_argument("path", help=".json mesh or Triangle stem/.node file")
    ref = msub.add_parser("refine", help="bisect a mesh file", parents=[common])
    ref.add_argument("path")
    ref.add_argument("--rounds", type=int, default=1, help="uniform bisection rounds")
    ref.add_argument("--mark", type=int, nargs="*", default=None, help="rows of simplices to bisect")
    ref.add_argument("--output", required=True, help="output .json or Triangle stem")

    sub.add_parser("solve", help="single-mesh solve", parents=[common])
    sub.add_parser("converge", help="convergence study", parents=[common])
    sub.add_parser("ppum", help="PPUM run (estimator or goal mode)", parents=[common])
    ver = sub.add_parser("verify", help="invariant suite", parents=[common])
    ver.add_argument("--corrupt-pu", action="store_true", default=False, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mesh" and args.mesh_command == "info":
            print(io.dumps(mesh_summary(io.read_mesh(args.path))), end="")
            return 0
        if args.command == "mesh" and args.mesh_command == "refine":
            info = cmd_mesh_refine(args.path, args.rounds, args.mark, Path(args.output))
            print(io.dumps(info), end="")
            return 0
        cfg = _load_config(args)
        if args.command == "mesh":
            print(io.dumps(cmd_mesh_make(cfg, args.out)), end="")
            return 0
        if args.command == "solve":
            report = cmd_solve(cfg, args.out)
            print(io.dumps({k: report[k] for k in ("dofs", "eta_total", "l2_err", "h1_err")}), end="")
            return 0
        if args.command == "converge":
            rows = cmd_converge(cfg, args.out)
            w = csv.writer(sys.stdout)
            w.writerow(CONVERGE_COLUMNS)
            for r in rows:
                w.writerow([r["level"], _f(r["h_max"]), r["dofs"]] + [_f(r[k]) for k in CONVERGE_COLUMNS[3:]])
            return 0
        if args.command == "ppum":
            report, code = cmd_ppum(cfg, args.out, args.threads, args.strict)
            print(io.dumps(report["global"]), end="")
            return code
        if args.command == "verify":
            result = verify_suite(cfg, corrupt_pu=args.corrupt_pu, threads=args.threads)
            io.write_json(result, _out_dir(cfg, args.out) / "verify.json")
            print(io.dumps({c["name"]: c["pass"] for c in result["checks"]}), end="")
            return 0 if result["all_pass"] or not args.strict else 1
    except (ConfigError, UnknownProblem, UnknownDomain) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error("unknown command")
    return 2


if __name__ == "__main__":
    sys.exit(main())
