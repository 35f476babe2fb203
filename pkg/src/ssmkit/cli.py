"""Command-line front end: configuration, pipeline orchestration, reporting.

One declarative JSON config drives a run; command-line flags override
config fields.  All floating-point output is serialized with 17
significant digits, so identical config + seed reproduce byte-identical
CSV files (the manifest carries wall times and is exempt).

Exit codes: 0 success, 2 configuration/validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import models as builtin_models
from . import storage
from .analysis import (Observable, ReducedOde, StepControl, backbone_curve,
                       chart_validity_radius, frc_continuation, integrate_rom,
                       lift_to_physical, make_corr_provider)
from .composition import CompositionEngine
from .errors import ConfigError, SsmError
from .extern import ExternalNonlinearity
from .manifold import ParameterizationStyle, compute_ssm
from .model import ForcingSpec, SecondOrderModel, lift_to_first_order
from .spectral import solve_master_subspace
from .tensors import make_tensor_composer

FMT = "%.17g"


@dataclass
class RunConfig:
    """Declarative description of one pipeline run.

    Round-trips losslessly through JSON: ``RunConfig.from_dict(cfg.to_dict())``
    reproduces every field exactly.
    """

    model: dict
    analysis: str = "compute"          # compute | backbone | frc | simulate
    modes: int = 2
    shift: float | list = 0.0          # scalar, or [re, im] for a complex shift
    mode_select: dict | None = None
    order: int = 5
    rho_rel: float = 0.05
    conjugate_symmetry: bool | None = None
    forcing: dict | None = None        # {"dof": i, "value": v} | {"vector": [...]}; "epsilon"
    omega_range: list | None = None
    ratios: list | None = None
    response_mode: str = "TI"          # TI | TV
    convergence_check: bool = False    # also run the FRC two orders lower
    rho_grid: dict = field(default_factory=lambda: {"max": 0.1, "count": 20})
    observable: dict | None = None     # {"dof": i} | {"vector": [...]}
    simulate: dict | None = None       # {"p0": [[re, im], ...], "t_span": [0, T], "omega": w}
    step: dict | None = None
    output_dir: str = "out"
    seed: int = 0
    threads: int = 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        if "model" not in data:
            raise ConfigError("config field 'model' is required")
        return cls(**data)

    def validate(self):
        if self.analysis not in ("compute", "backbone", "frc", "simulate"):
            raise ConfigError(f"analysis: unknown kind {self.analysis!r}")
        if self.order < 1:
            raise ConfigError(f"order: must be >= 1, got {self.order}")
        if self.modes < 2 or self.modes % 2:
            raise ConfigError(f"modes: must be even and >= 2, got {self.modes}")
        if self.rho_rel <= 0:
            raise ConfigError(f"rho_rel: must be positive, got {self.rho_rel}")
        if isinstance(self.shift, (list, tuple)) and len(self.shift) != 2:
            raise ConfigError("shift: complex shift needs exactly [re, im]")
        if self.response_mode not in ("TI", "TV"):
            raise ConfigError(f"response_mode: must be TI or TV, got {self.response_mode!r}")
        if self.threads < 1:
            raise ConfigError(f"threads: must be >= 1, got {self.threads}")
        if self.analysis == "frc":
            if not self.omega_range or len(self.omega_range) != 2:
                raise ConfigError("omega_range: frc needs [start, end]")
            if self.forcing is None:
                raise ConfigError("forcing: frc needs a forcing block")
        if self.analysis == "simulate" and self.simulate is None:
            raise ConfigError("simulate: missing block with p0 and t_span")
        if not isinstance(self.model, dict) or \
                ("builtin" not in self.model and "matrices" not in self.model):
            raise ConfigError("model: needs 'builtin' or 'matrices'")


def _resolve_model(cfg):
    """Build (BuiltinModel-or-wrapper, SecondOrderModel) from the config."""
    spec = cfg.model
    if "builtin" in spec:
        built = builtin_models.make(spec["builtin"], **spec.get("params", {}))
        return built, built.model
    mats = spec["matrices"]
    M = storage.load_matrix(mats["M"])
    C = storage.load_matrix(mats["C"])
    K = storage.load_matrix(mats["K"])
    nl_spec = spec.get("nonlinearity")
    if nl_spec is None:
        def nl(x, xdot):
            return np.zeros(M.shape[0])
    elif "cmd" in nl_spec:
        nl = ExternalNonlinearity(cmd=nl_spec["cmd"])
    elif "host" in nl_spec:
        nl = ExternalNonlinearity(host=nl_spec["host"], port=nl_spec["port"])
    else:
        raise ConfigError("model.nonlinearity: needs 'cmd' or 'host'/'port'")
    model = SecondOrderModel(M, C, K, nl, seed=cfg.seed)
    built = builtin_models.BuiltinModel(identifier="external", params=spec,
                                        model=model)
    return built, model


def _forcing_vector(cfg, n):
    f = cfg.forcing or {}
    if "vector" in f:
        vec = np.asarray([complex(v[0], v[1]) if isinstance(v, (list, tuple))
                          else complex(v) for v in f["vector"]])
        if vec.shape[0] != n:
            raise ConfigError(f"forcing.vector: length {vec.shape[0]} != dofs {n}")
    elif "dof" in f:
        vec = np.zeros(n, dtype=complex)
        vec[int(f["dof"])] = complex(f.get("value", 1.0))
    else:
        vec = None
    eps = float(f.get("epsilon", 0.0))
    return vec, eps


def _observable(cfg, built, N):
    o = cfg.observable or {}
    if "vector" in o:
        return Observable(np.asarray(o["vector"], dtype=float))
    if "dof" in o:
        return Observable.dof(int(o["dof"]), N)
    if built.observable_vector is not None:
        return Observable(built.observable_vector)
    return Observable.dof(0, N)


def _csv_write(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, str):
                    cells.append(v)
                elif isinstance(v, (bool, np.bool_)):
                    cells.append("1" if v else "0")
                else:
                    cells.append(FMT % v)
            fh.write(",".join(cells) + "\n")


def _model_hash(model, params):
    h = hashlib.sha256()
    for mat in (model.M, model.C, model.K):
        h.update(np.ascontiguousarray(mat.toarray()).tobytes())
    h.update(json.dumps(params, sort_keys=True, default=str).encode())
    return h.hexdigest()


def run(cfg):
    """Execute the configured pipeline; returns the manifest dictionary."""
    cfg.validate()
    np.random.seed(cfg.seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "config_sha256": hashlib.sha256(
            json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest(),
        "versions": _versions(),
        "stages": {},
    }
    t_all = time.time()

    t0 = time.time()
    built, model = _resolve_model(cfg)
    fa, eps = _forcing_vector(cfg, model.n)
    if fa is None and built.forcing_amplitude is not None and cfg.forcing is not None:
        fa = built.forcing_amplitude
    if fa is not None:
        model.forcing = ForcingSpec(fa, epsilon=eps)
    sys_ = lift_to_first_order(model)
    manifest["model_sha256"] = _model_hash(model, built.params)
    manifest["stages"]["model"] = time.time() - t0

    t0 = time.time()
    shift = complex(*cfg.shift) if isinstance(cfg.shift, (list, tuple)) else cfg.shift
    subspace = solve_master_subspace(sys_, cfg.modes, shift=shift,
                                     select=cfg.mode_select)
    subspace.save(out / "subspace.npz")
    manifest["eigenvalues"] = [[v.real, v.imag] for v in subspace.values]
    manifest["stages"]["eig"] = time.time() - t0

    t0 = time.time()
    engine = CompositionEngine.for_system(sys_)
    style = ParameterizationStyle(rho_rel=cfg.rho_rel)
    table = compute_ssm(sys_, subspace, cfg.order, style=style, engine=engine,
                        conjugate_symmetry=cfg.conjugate_symmetry)
    manifest["stages"]["ssm"] = time.time() - t0
    manifest["evaluation"] = engine.counters.snapshot()
    manifest["resonances"] = [[list(m), list(map(int, r))] for m, r in table.resonances]

    obs = _observable(cfg, built, sys_.N)
    corr_provider = None
    designated = None
    if cfg.analysis in ("frc", "simulate") or (cfg.analysis == "compute" and eps):
        ratios = tuple(cfg.ratios) if cfg.ratios else None
        if ratios is None and cfg.omega_range:
            center = 0.5 * (cfg.omega_range[0] + cfg.omega_range[1])
            ratios = tuple(max(1, round(subspace.values[2 * a].imag / center))
                           for a in range(cfg.modes // 2))
        if ratios is not None:
            designated = [2 * a for a, r in enumerate(ratios) if r == 1]
        if fa is not None:
            corr_provider = make_corr_provider(sys_, subspace,
                                               tol_res=cfg.rho_rel,
                                               resonant_plus=designated)
    else:
        ratios = None

    t0 = time.time()
    if cfg.analysis == "backbone":
        grid = np.linspace(cfg.rho_grid.get("min", 1e-4), cfg.rho_grid["max"],
                           int(cfg.rho_grid["count"]))
        pts = backbone_curve(table, subspace, grid, obs)
        _csv_write(out / "backbone.csv", ["amplitude", "frequency", "rho"],
                   [(a, f, r) for (a, f), r in zip(pts, grid)])
        manifest["outputs"] = ["backbone.csv"]
    elif cfg.analysis == "frc":
        rom = ReducedOde(table, subspace, ratios=ratios, Fa=sys_.Fext, observable=obs)
        ctrl = StepControl(**(cfg.step or {}))
        radius = chart_validity_radius(table) if cfg.order >= 3 else None
        pts = frc_continuation(rom, cfg.omega_range, eps, ctrl,
                               mode=cfg.response_mode,
                               corr_provider=corr_provider, chart_radius=radius)
        header = (["Omega"] + [f"rho_{a+1}" for a in range(rom.pairs)]
                  + [f"theta_{a+1}" for a in range(rom.pairs)]
                  + ["out_amp", "stability", "flag", "chart_ok"])
        rows = [tuple([p.Omega] + list(p.rho) + list(p.theta)
                      + [p.out_amp, p.stability, p.flag, p.chart_ok]) for p in pts]
        _csv_write(out / "frc.csv", header, rows)
        manifest["outputs"] = ["frc.csv"]
        manifest["bifurcations"] = [[p.flag, p.Omega] for p in pts if p.flag != "regular"]
        manifest["chart_radius"] = radius
        if cfg.convergence_check and cfg.order >= 3:
            from .analysis import convergence_metric
            low = table.truncated(cfg.order - 2)
            rom_low = ReducedOde(low, subspace, ratios=ratios, Fa=sys_.Fext,
                                 observable=obs)
            pts_low = frc_continuation(rom_low, cfg.omega_range, eps, ctrl,
                                       mode=cfg.response_mode,
                                       corr_provider=corr_provider,
                                       chart_radius=radius)
            manifest["order_convergence"] = {
                "orders": [cfg.order - 2, cfg.order],
                "max_relative_gap": convergence_metric(pts, pts_low),
            }
    elif cfg.analysis == "simulate":
        sim = cfg.simulate
        p0 = np.asarray([complex(v[0], v[1]) for v in sim["p0"]])
        omega = sim.get("omega")
        rom = ReducedOde(table, subspace, ratios=ratios, Fa=sys_.Fext, observable=obs)
        corr = corr_provider(omega) if (corr_provider and omega and eps) else None
        traj = integrate_rom(rom, p0, tuple(sim["t_span"]), Omega=omega,
                             corr=corr, epsilon=eps,
                             rtol=sim.get("rtol", 1e-9), atol=sim.get("atol", 1e-12))
        rows = []
        for t, p in zip(traj.t, traj.p):
            phi = (omega or 0.0) * t
            y = lift_to_physical(table, corr, p, phi, eps, obs)
            rows.append(tuple([t] + [v for pi in p for v in (pi.real, pi.imag)] + [y]))
        header = ["t"] + [f"{nm}{i+1}" for i in range(table.M_dim)
                          for nm in ("re_p", "im_p")] + ["observable"]
        _csv_write(out / "trajectory.csv", header, rows)
        manifest["outputs"] = ["trajectory.csv"]
        manifest["truncated"] = traj.truncated
    else:
        manifest["outputs"] = []
    manifest["stages"]["analysis"] = time.time() - t0

    if corr_provider is not None:
        # persist the Omega-indexed forced corrections with the coefficients
        table.nonautonomous.update(
            {c.Omega: c for c in corr_provider.cache.values()})
    table.save(out / "coefficients.ssmtab")
    manifest["stages"]["total"] = time.time() - t_all
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    return manifest


def _versions():
    import scipy

    from . import __version__
    return {"ssmkit": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _verify(argv):
    """Oracle-equivalence suite: evaluation path vs tensor path on built-ins."""
    parser = argparse.ArgumentParser(prog="ssm verify")
    parser.add_argument("--order", type=int, default=5)
    parser.add_argument("--tol", type=float, default=1e-10)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    checks = [
        ("duffing", builtin_models.make_duffing(), 2, None),
        ("spring_chain", builtin_models.make_spring_chain(
            3, k_lin=1.0, k2=0.4, k3=0.6, damping=(0.002, 0.004), c2=0.1, c3=0.2), 2, None),
        ("resonant_chain", builtin_models.make_internally_resonant_chain(), 4, None),
        ("pipe", builtin_models.make_pipe_conveying_fluid(), 2, "flutter"),
    ]

    def check(item):
        name, built, m_dim, select = item
        sys_ = lift_to_first_order(built.model)
        if select == "flutter":
            pool = solve_master_subspace(sys_, sys_.N)
            idx = [i for i, l in enumerate(pool.values) if l.real > 0] or [0, 1]
            sub = solve_master_subspace(sys_, m_dim, select={"indices": idx})
        else:
            sub = solve_master_subspace(sys_, m_dim)
        t_eval = compute_ssm(sys_, sub, args.order)
        t_tensor = compute_ssm(sys_, sub, args.order,
                               compose=make_tensor_composer(built.lifted_tensors()),
                               conjugate_symmetry=False)
        worst = 0.0
        for m, w, r in t_tensor.items():
            scale = max(np.linalg.norm(w), np.linalg.norm(r), 1e-300)
            worst = max(worst, (np.linalg.norm(t_eval.manifold(m) - w)
                                + np.linalg.norm(t_eval.reduced(m) - r)) / scale)
        return name, worst

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(check, checks))
    else:
        results = [check(item) for item in checks]
    failed = False
    for name, worst in results:  # deterministic order regardless of workers
        ok = worst <= args.tol
        failed = failed or not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: max relative coefficient "
              f"difference {worst:.3e} (tol {args.tol:g}, order {args.order})")
    return 3 if failed else 0


def _model_cmd(argv):
    parser = argparse.ArgumentParser(prog="ssm model")
    sub = parser.add_subparsers(dest="action", required=True)
    sub.add_parser("list")
    p_desc = sub.add_parser("describe")
    p_desc.add_argument("name")
    p_desc.add_argument("--params", type=json.loads, default={})
    p_exp = sub.add_parser("export")
    p_exp.add_argument("name")
    p_exp.add_argument("--params", type=json.loads, default={})
    p_exp.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    if args.action == "list":
        for name in sorted(builtin_models.REGISTRY):
            print(name)
        return 0
    built = builtin_models.make(args.name, **args.params)
    if args.action == "describe":
        info = {"identifier": built.identifier, "dofs": built.n,
                "params": built.params, "has_tensors": built.tensors is not None,
                "notes": built.notes}
        print(json.dumps(info, indent=2, default=float))
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.save_matrix(out / "M.mtx", built.model.M)
    storage.save_matrix(out / "C.mtx", built.model.C)
    storage.save_matrix(out / "K.mtx", built.model.K)
    if built.forcing_amplitude is not None:
        storage.save_vector(out / "fa.txt", built.forcing_amplitude)
    with open(out / "model.json", "w") as fh:
        json.dump({"identifier": built.identifier, "dofs": built.n,
                   "params": built.params,
                   "matrices": {"M": "M.mtx", "C": "C.mtx", "K": "K.mtx"},
                   "forcing_vector": "fa.txt" if built.forcing_amplitude is not None else None},
                  fh, indent=2, default=float)
    print(f"exported {built.identifier} ({built.n} dofs) to {out}")
    return 0


def _analysis_cmd(kind, argv):
    parser = argparse.ArgumentParser(prog=f"ssm {kind}")
    parser.add_argument("--config", required=True)
    parser.add_argument("--order", type=int)
    parser.add_argument("--modes", type=int)
    parser.add_argument("--shift", type=float)
    parser.add_argument("--mode-select", type=json.loads, dest="mode_select")
    parser.add_argument("--rho-rel", type=float, dest="rho_rel")
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--omega-range", type=float, nargs=2, dest="omega_range")
    parser.add_argument("--response-mode", choices=["TI", "TV"], dest="response_mode")
    parser.add_argument("--out", dest="output_dir")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    args = parser.parse_args(argv)
    with open(args.config) as fh:
        data = json.load(fh)
    cfg = RunConfig.from_dict(data)
    if kind != "run":
        cfg.analysis = {"eig": "compute", "compute": "compute"}.get(kind, kind)
    for name in ("order", "modes", "shift", "mode_select", "rho_rel",
                 "omega_range", "response_mode", "output_dir", "seed", "threads"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if args.epsilon is not None:
        cfg.forcing = dict(cfg.forcing or {})
        cfg.forcing["epsilon"] = args.epsilon
    manifest = run(cfg)
    if kind == "eig":
        for re_, im_ in manifest["eigenvalues"]:
            print(FMT % re_, FMT % im_)
    else:
        print(json.dumps({"outputs": manifest["outputs"],
                          "output_dir": cfg.output_dir,
                          "evaluations": manifest["evaluation"]["black_box"]},
                         indent=2))
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    commands = ("model", "eig", "compute", "backbone", "frc", "simulate", "verify")
    parser = argparse.ArgumentParser(
        prog="ssm",
        description="Black-box spectral-submanifold reduced-order models")
    parser.add_argument("command", choices=commands)
    parser.add_argument("rest", nargs=argparse.REMAINDER)
    args = parser.parse_args(argv)
    try:
        if args.command == "model":
            return _model_cmd(args.rest)
        if args.command == "verify":
            return _verify(args.rest)
        return _analysis_cmd(args.command, args.rest)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except SsmError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
