"""``forgelight`` command line: JSON configs in, CSV/JSON/VTK artifacts out.

Exit codes: 0 success, 1 configuration error, 2 infeasible problem,
3 numerical failure. Every run writes ``manifest.json`` first (marked
incomplete) and finalizes it with the output list on success.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, fea, io, learn, mesh, orient, toposimp, uncertain

log = logging.getLogger("forgelight")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# schemas

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_frac = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}

_LOAD2D = {"type": "object", "additionalProperties": False,
           "required": ["x", "y", "fx", "fy"],
           "properties": {"x": {"type": "integer"}, "y": {"type": "integer"},
                          "fx": _num, "fy": _num}}

_TOPO_PROPS = {
    "nx": _int1, "ny": _int1, "volume_fraction": _frac, "penalty": _pos,
    "filter_radius": {"type": "number", "minimum": 0}, "max_iter": _int1, "tolerance": _pos,
    "bc": {"enum": list(toposimp.BC_TEMPLATES)}, "loads": {"type": "array", "items": _LOAD2D},
    "E": _pos, "nu": _num, "E_min": _pos, "move": _pos, "volume_tol": _pos,
}
_TOPO_KEYS = {"nx": "nx", "ny": "ny", "volume_fraction": "volfrac", "penalty": "penal",
              "filter_radius": "rmin", "max_iter": "max_iter", "tolerance": "tol", "bc": "bc",
              "E": "E", "nu": "nu", "E_min": "E_min", "move": "move", "volume_tol": "volume_tol"}

_BASE_TOPO = {"type": "object", "additionalProperties": False,
              "required": ["nx", "ny", "volume_fraction"], "properties": _TOPO_PROPS}

_RULE = {"type": "object", "additionalProperties": False, "required": ["axis"],
         "properties": {"axis": {"enum": ["x", "y", "z", 0, 1, 2]}, "min": _num, "max": _num}}
_SELECTOR = {"oneOf": [{"type": "array", "items": {"type": "integer", "minimum": 0}},
                       _RULE, {"type": "array", "items": _RULE, "minItems": 1},
                       {"type": "array", "minItems": 1,
                        "items": {"type": "array", "items": _RULE, "minItems": 1}}]}
_MESH = {"oneOf": [
    {"type": "object", "additionalProperties": False, "required": ["path"],
     "properties": {"path": {"type": "string"},
                    "format": {"enum": ["off", "tetgen", "grid"]}}},
    {"type": "object", "additionalProperties": False, "required": ["generator"],
     "properties": {"generator": {"enum": ["box", "two_neck_bar", "l_bracket", "icosphere"]},
                    "params": {"type": "object"}}},
]}
_MATERIAL = {"oneOf": [{"enum": ["printed_photopolymer"]},
                       {"type": "object", "required": ["path"], "additionalProperties": False,
                        "properties": {"path": {"type": "string"}}},
                       {"type": "object", "required": ["kind"]}]}


def _schema(props: dict, required: list) -> dict:
    props = dict(props)
    props["schema_version"] = {"const": SCHEMA_VERSION}
    props["seed"] = {"type": "integer", "minimum": 0}
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": required}


SCHEMAS = {
    "topo2d": _schema(_TOPO_PROPS, ["nx", "ny", "volume_fraction"]),
    "gen-dataset": _schema({
        "base": _BASE_TOPO, "count": _int1,
        "sampler": {"type": "object", "additionalProperties": False,
                    "properties": {"template": {"enum": list(toposimp.SAMPLER_TEMPLATES)},
                                   "min_magnitude": {"type": "number", "minimum": 0},
                                   "max_magnitude": {"type": "number", "minimum": 0}}},
    }, ["base", "count"]),
    "train-map": _schema({
        "dataset": {"type": "string"}, "kind": {"enum": ["linear", "quadratic", "neural"]},
        "n_components": _int1, "train_count": _int1, "hidden": _int1, "max_iter": _int1,
        "weight_decay": {"type": "number", "minimum": 0},
    }, ["dataset", "kind"]),
    "estimate": _schema({
        "model_dir": {"type": "string"}, "base": _BASE_TOPO,
        "cases": {"type": "array", "items": {"type": "array", "items": _LOAD2D, "minItems": 1}},
        "count": _int1,
        "sampler": {"type": "object", "additionalProperties": False,
                    "properties": {"template": {"enum": list(toposimp.SAMPLER_TEMPLATES)},
                                   "min_magnitude": {"type": "number", "minimum": 0},
                                   "max_magnitude": {"type": "number", "minimum": 0}}},
        "warmstart_compare": {"type": "boolean"},
    }, ["model_dir", "base"]),
    "orient": _schema({
        "mesh": _MESH, "fixed": _SELECTOR,
        "loads": {"type": "array", "minItems": 1, "items": {
            "type": "object", "additionalProperties": False, "required": ["nodes", "vector"],
            "properties": {"nodes": _SELECTOR,
                           "vector": {"type": "array", "items": _num, "minItems": 3,
                                      "maxItems": 3},
                           "magnitude": _pos}}},
        "material": _MATERIAL, "kappa": {"type": "number", "minimum": 1},
        "budget": _int1, "init_count": {"type": "integer", "minimum": 4},
        "mode": {"enum": ["faithful", "fast"]}, "stall": _int1,
    }, ["mesh", "fixed", "loads", "material"]),
}
_UNCERTAIN_PROPS = {
    "mesh": _MESH, "shell_thickness": _pos, "contact": _SELECTOR, "fixed": _SELECTOR,
    "force_budget": _pos, "sigma_y": _pos, "material": _MATERIAL, "k": _int1,
    "kappa_log": _pos, "p_norm": {"type": "number", "minimum": 1}, "top_fraction": _frac,
    "sample_fraction": _frac, "max_iter": _int1, "spread_radius": {"type": "number",
                                                                   "minimum": 0},
    "weak_modes": _int1, "stressed_fraction": _frac,
}
SCHEMAS["lightweight"] = _schema(_UNCERTAIN_PROPS, ["mesh", "shell_thickness", "contact", "fixed",
                                                    "force_budget", "sigma_y", "material"])
SCHEMAS["analyze-critical"] = _schema(_UNCERTAIN_PROPS, ["mesh", "shell_thickness", "contact",
                                                         "fixed", "force_budget", "sigma_y",
                                                         "material"])


def validate(kind: str, cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    return cfg


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# --------------------------------------------------------------------------
# manifest


class Run:
    """Output directory bookkeeping with an early, then finalized, manifest."""

    def __init__(self, sub: str, cfg: dict, seed: int, out_dir: Path, threads: int):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.t0 = time.perf_counter()
        self.outputs: list[str] = []
        self.manifest = {"subcommand": sub, "config_digest": config_digest(cfg), "seed": seed,
                         "version": __version__, "threads": threads, "status": "incomplete",
                         "config": cfg, "outputs": []}
        self._write()

    def _write(self):
        (self.out / "manifest.json").write_text(json.dumps(self.manifest, indent=2,
                                                           sort_keys=True) + "\n")

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def json(self, name: str, data) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        return p

    def finish(self, status="complete", error=None):
        self.manifest.update(status=status, outputs=sorted(set(self.outputs)),
                             wall_clock=time.perf_counter() - self.t0)
        if error:
            self.manifest["error"] = error
        self._write()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# shared builders


def topo_config(cfg: dict) -> toposimp.TopoConfig:
    kw = {_TOPO_KEYS[k]: v for k, v in cfg.items() if k in _TOPO_KEYS}
    if "loads" in cfg:
        kw["loads"] = tuple(toposimp.Load(**ld) for ld in cfg["loads"])
    try:
        return toposimp.TopoConfig(**kw)
    except (TypeError, toposimp.TopologyError) as exc:
        raise ConfigError(str(exc)) from exc


def sampler_spec(cfg: dict | None) -> toposimp.SamplerSpec:
    return toposimp.SamplerSpec(**(cfg or {}))


def build_mesh(spec: dict, base: Path) -> mesh.Mesh:
    if "path" in spec:
        p = Path(spec["path"])
        return mesh.load_mesh(p if p.is_absolute() else base / p, spec.get("format"))
    gen = {"box": mesh.box_mesh, "two_neck_bar": mesh.two_neck_bar,
           "l_bracket": mesh.l_bracket, "icosphere": mesh.icosphere}[spec["generator"]]
    params = {k: (tuple(v) if isinstance(v, list) else v)
              for k, v in spec.get("params", {}).items()}
    if spec["generator"] == "two_neck_bar" and "necks" in params:
        params["necks"] = tuple(tuple(n) for n in params["necks"])
    try:
        return gen(**params)
    except TypeError as exc:
        raise ConfigError(f"bad mesh generator parameters: {exc}") from exc


def build_material(spec, base: Path) -> fea.Material:
    if spec == "printed_photopolymer":
        return fea.printed_photopolymer()
    if "path" in spec and len(spec) == 1:
        p = Path(spec["path"])
        return fea.Material.load(p if p.is_absolute() else base / p)
    return fea.Material.from_dict(spec)


def select(m: mesh.Mesh, selector, boundary_only=True) -> np.ndarray:
    """Node ids for a selector; a list of rule lists is the union of its parts."""
    if isinstance(selector, list) and selector and all(isinstance(s, list) for s in selector):
        ids = np.unique(np.concatenate([mesh.select_nodes(m, s, boundary_only)
                                        for s in selector]))
    else:
        ids = mesh.select_nodes(m, selector, boundary_only)
    if len(ids) == 0:
        raise ConfigError(f"selector {selector!r} matched no nodes")
    if ids.max() >= m.n_nodes:
        raise ConfigError("selector references nodes outside the mesh")
    return ids


def lightweight_problem(cfg: dict, base: Path) -> uncertain.LightweightProblem:
    m = build_mesh(cfg["mesh"], base)
    shell = mesh.mark_shell(m, cfg["shell_thickness"])
    contact = select(m, cfg["contact"])
    fixed = select(m, cfg["fixed"])
    mat = build_material(cfg["material"], base)
    kw = {k: cfg[k] for k in ("k", "p_norm", "top_fraction", "sample_fraction", "max_iter",
                              "spread_radius", "weak_modes", "stressed_fraction") if k in cfg}
    if "kappa_log" in cfg:
        kw["logistic"] = uncertain.LogisticParams(kappa=cfg["kappa_log"])
    return uncertain.LightweightProblem(m, shell, contact, fixed, cfg["force_budget"],
                                        cfg["sigma_y"], mat, **kw)


# --------------------------------------------------------------------------
# subcommands


def cmd_topo2d(cfg, run: Run, args):
    config = topo_config(cfg)
    res = toposimp.optimize_topology(config)
    np.savetxt(run.path("densities.csv"), res.densities, delimiter=",", fmt="%.17g")
    toposimp.write_pgm(run.path("preview.pgm"), res.densities)
    io.write_csv(run.path("history.csv"), ["iteration", "compliance", "volume"],
                 ([i, c, v] for i, (c, v) in enumerate(zip(res.history, res.volume_history))))
    run.json("result.json", {"compliance": res.compliance, "iterations": res.iterations,
                             "status": res.status, "mean_density": float(res.densities.mean()),
                             "config": config.to_dict()})
    print(f"compliance {res.compliance:.6g} after {res.iterations} iterations ({res.status})")


def cmd_gen_dataset(cfg, run: Run, args):
    base = topo_config(cfg["base"])
    sampler = sampler_spec(cfg.get("sampler"))
    samples = toposimp.generate_dataset(base, cfg["count"], run.manifest["seed"], sampler,
                                        workers=max(1, args.threads))
    path = toposimp.write_dataset(samples, run.out / "dataset", sampler, run.manifest["seed"])
    run.outputs.append(str(path.relative_to(run.out)))
    print(f"wrote {len(samples)} samples to {path.parent}")


def cmd_train_map(cfg, run: Run, args):
    ds = Path(cfg["dataset"])
    F, I, configs, manifest = toposimp.load_dataset(ds)
    if len(configs) < 2:
        raise ConfigError("dataset needs at least 2 samples")
    n_train = min(cfg.get("train_count", len(configs)), len(configs))
    Ftr, Itr = F[:n_train], I[:n_train]
    pca = learn.pca_fit(Itr, cfg.get("n_components"))
    W = learn.pca_project(pca, Itr)
    kind = cfg["kind"]
    if kind == "linear":
        mapping = learn.fit_linear(Ftr, W)
    elif kind == "quadratic":
        mapping = learn.fit_quadratic(Ftr, W)
    else:
        mapping = learn.fit_neural(Ftr, W, hidden=cfg.get("hidden", 80), seed=run.manifest["seed"],
                                   max_iter=cfg.get("max_iter", 2000),
                                   weight_decay=cfg.get("weight_decay", 1e-4))
    learn.save_pca(pca, run.path("pca.json"))
    learn.save_mapping(mapping, run.path("mapping.json"))
    run.outputs += ["pca.bin", "mapping.bin"]
    shape = (configs[0].ny, configs[0].nx)
    rows = []
    for i in range(n_train, len(configs)):
        est = learn.estimate_topology(mapping, pca, F[i], shape)
        system = toposimp.GridSystem(configs[i])
        comp, _ = toposimp.compliance_and_sensitivity(system, system.to_elements(est))
        rows.append([i, learn.l1_distance(est, I[i].reshape(shape)), comp])
    io.write_csv(run.path("evaluation.csv"), ["sample", "l1_distance", "estimate_compliance"], rows)
    summary = {"kind": kind, "n_train": n_train, "n_test": len(rows),
               "n_components": pca.n_components,
               "mean_l1": float(np.mean([r[1] for r in rows])) if rows else None}
    run.json("training.json", summary)
    print(json.dumps(_jsonable(summary)))


def cmd_estimate(cfg, run: Run, args):
    mdir = Path(cfg["model_dir"])
    pca = learn.load_pca(mdir / "pca.json")
    mapping = learn.load_mapping(mdir / "mapping.json")
    base = topo_config(cfg["base"])
    if len(pca.mean) != base.nx * base.ny:
        raise ConfigError(f"model images have {len(pca.mean)} pixels, grid {base.nx}x{base.ny} "
                          f"has {base.nx * base.ny}")
    if "cases" in cfg:
        cases = [tuple(toposimp.Load(**ld) for ld in case) for case in cfg["cases"]]
    else:
        sampler = sampler_spec(cfg.get("sampler"))
        rng = np.random.default_rng(run.manifest["seed"])
        cases = [sampler.sample(base, rng) for _ in range(cfg.get("count", 1))]
    shape = (base.ny, base.nx)
    rows = []
    for i, loads in enumerate(cases):
        conf = replace(base, loads=loads)
        feats = toposimp.encode_loads(loads, base.nx, base.ny)
        if len(feats) != mapping.n_inputs:
            raise ConfigError(f"case {i} has {len(feats)} load features, model expects "
                              f"{mapping.n_inputs}")
        est = learn.estimate_topology(mapping, pca, feats, shape)
        ws = learn.warm_start(est, base.volfrac)
        np.savetxt(run.path(f"estimate_{i:03d}.csv"), est, delimiter=",", fmt="%.17g")
        np.savetxt(run.path(f"warmstart_{i:03d}.csv"), ws, delimiter=",", fmt="%.17g")
        if cfg.get("warmstart_compare"):
            cold = toposimp.optimize_topology(conf)
            warm = toposimp.optimize_topology(conf, initial=ws)
            rows.append([i, cold.iterations, warm.iterations, cold.compliance, warm.compliance])
    if cfg.get("warmstart_compare"):
        io.write_csv(run.path("warmstart.csv"), ["case", "cold_iterations", "warm_iterations",
                                                 "cold_compliance", "warm_compliance"], rows)
        wins = sum(r[2] < r[1] for r in rows)
        print(f"warm start faster on {wins} of {len(rows)} cases")
    else:
        print(f"wrote {len(cases)} estimates")


def cmd_orient(cfg, run: Run, args):
    base = Path(args.config).parent
    m = build_mesh(cfg["mesh"], base)
    fixed = fea.node_dofs(select(m, cfg["fixed"], boundary_only=False), 3)
    f = np.zeros(3 * m.n_nodes)
    for ld in cfg["loads"]:
        nodes = select(m, ld["nodes"], boundary_only=False)
        vec = np.asarray(ld["vector"], dtype=float)
        if np.linalg.norm(vec) == 0:
            raise ConfigError("load vector must be non-zero")
        vec = vec / np.linalg.norm(vec) * ld.get("magnitude", np.linalg.norm(vec))
        for n in nodes:
            f[3 * n:3 * n + 3] += vec / len(nodes)
    mat = build_material(cfg["material"], base)
    params = orient.OrientParams(kappa=cfg.get("kappa", 6.0), mode=cfg.get("mode", "faithful"))
    prob = orient.OrientationProblem(m, fixed, f, mat, params)
    init = cfg.get("init_count", 20)
    budget = cfg.get("budget", 215)
    if budget < init:
        raise ConfigError("budget must be at least init_count")
    res = orient.optimize_orientation(prob, budget, init, seed=run.manifest["seed"],
                                      stall=cfg.get("stall", 50))
    fs = [h["f"] for h in res.history]
    flat = mat.is_isotropic or (max(fs) - min(fs)) <= 1e-12 * max(abs(max(fs)), 1e-300)
    io.write_records(run.path("history.csv"), res.history,
                     ["eval", "alpha", "beta", "gamma", "f", "best_f", "source"])
    report = {"best_angles_deg": res.degrees, "best_f": res.f, "min_fs_before": res.min_fs_initial,
              "min_fs_after": res.min_fs_best, "evaluations": res.n_evals, "status": res.status,
              "mode": "DOE-only" if budget == init else "surrogate", "flat_objective": bool(flat),
              "loocv": res.loocv, "kappa": params.kappa, "fea_mode": params.mode}
    run.json("report.json", report)
    print(f"best angles {np.round(res.degrees, 3).tolist()} deg, f = {res.f:.6g}"
          + (" (flat objective)" if flat else ""))


def cmd_lightweight(cfg, run: Run, args):
    prob = lightweight_problem(cfg, Path(args.config).parent)
    res = uncertain.optimize_lightweight(prob, seed=run.manifest["seed"], verify=True)
    hist_cols = ["iteration", "mass", "mass_fraction", "sigma_cr", "H", "critical_node",
                 "fea_solves", "accepted", "incumbent_mass", "weak_size", "islands"]
    io.write_records(run.path("history.csv"), res.history, hist_cols)
    io.write_element_values(run.path("densities.csv"), {"rho": res.rho,
                                                        "rho_binary": res.rho_binary})
    io.write_element_values(run.path("mask.csv"), {"solid": res.rho_binary.astype(int)})
    io.write_vtk(prob.mesh, run.path("design.vtk"),
                 cell_data={"rho": res.rho, "rho_binary": res.rho_binary,
                            "shell": prob.shell.mask.astype(float)})
    ver = dict(res.verification)
    ver.pop("wall_time", None)
    ver.update(status=res.status, solid_mass=res.solid_mass, solid_sigma=res.solid_sigma,
               mass_reduction=res.mass_reduction, alpha=res.alpha, sigma_y=prob.sigma_y)
    run.json("verification.json", ver)
    print(f"{res.status}: binarized mass reduction {100 * res.mass_reduction:.1f}%, "
          f"verified sigma_cr {ver['sigma_cr']:.6g} (yield {prob.sigma_y:.6g})")
    if ver.get("verified") is False:
        raise uncertain.LightweightError("no design passed the full verification sweep")


def cmd_analyze_critical(cfg, run: Run, args):
    prob = lightweight_problem(cfg, Path(args.config).parent)
    rho = np.ones(prob.mesh.n_elements)
    system = prob.structure.factorize(rho)
    rep = uncertain.critical_instant_analysis(prob, system, seed=run.manifest["seed"])
    report = {"critical_node": rep.node, "sigma_cr": rep.sigma, "fea_solves": rep.n_solves,
              "weak_region_size": len(rep.weak), "force_regions": [len(i) for i in rep.islands],
              "contact_nodes": len(prob.contact), "q": rep.model.q,
              "training_samples": rep.model.n_samples, "exceeds_yield": rep.sigma > prob.sigma_y}
    cols = {"node": prob.contact, "predicted": rep.criticality}
    if args.verify:
        bf = uncertain.brute_force_critical(prob, system)
        report.update(brute_force_node=bf.node, brute_force_sigma=bf.sigma,
                      brute_force_solves=bf.n_solves, sigma_ratio=rep.sigma / bf.sigma,
                      solve_ratio=rep.n_solves / bf.n_solves)
        cols["brute_force"] = bf.per_node
    io.write_csv(run.path("criticality.csv"), list(cols),
                 zip(*[np.asarray(v).tolist() for v in cols.values()]))
    run.json("report.json", report)
    msg = f"critical node {rep.node}, sigma_cr {rep.sigma:.6g} ({rep.n_solves} solves)"
    if args.verify:
        msg += f"; brute force node {bf.node}, sigma_cr {bf.sigma:.6g} ({bf.n_solves} solves)"
    print(msg)


COMMANDS = {"topo2d": cmd_topo2d, "gen-dataset": cmd_gen_dataset, "train-map": cmd_train_map,
            "estimate": cmd_estimate, "orient": cmd_orient, "lightweight": cmd_lightweight,
            "analyze-critical": cmd_analyze_critical}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forgelight", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"forgelight {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", required=True, help="JSON config file")
        sp_.add_argument("--out-dir", default=None, help="output directory (default: runs/<command>)")
        sp_.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp_.add_argument("--threads", type=int, default=1, help="worker processes where supported")
        sp_.add_argument("--verify", action="store_true", help="add a brute-force check")
    return p


def _exit_code(exc: BaseException) -> int:
    from scipy.sparse.linalg import ArpackNoConvergence
    if isinstance(exc, (uncertain.InfeasibleStartError, mesh.NoDesignSpaceError,
                        uncertain.LightweightError)):
        return EXIT_INFEASIBLE
    if isinstance(exc, (fea.SolverError, fea.StaleFactorizationError, toposimp.BisectionError,
                        ArpackNoConvergence, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigError, ValueError, KeyError, TypeError, OSError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FORGELIGHT_LOG", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    run = None
    try:
        cfg = validate(args.command, load_config(args.config))
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out = Path(args.out_dir) if args.out_dir else Path("runs") / args.command
        run = Run(args.command, cfg, seed, out, args.threads)
        COMMANDS[args.command](cfg, run, args)
        run.finish()
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = _exit_code(exc)
        if code == EXIT_NUMERICAL and not isinstance(exc, (fea.SolverError, ArithmeticError,
                                                           np.linalg.LinAlgError,
                                                           toposimp.BisectionError)):
            log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        if run is not None:
            run.finish("failed", error=str(exc))
        return code


if __name__ == "__main__":
    sys.exit(main())
