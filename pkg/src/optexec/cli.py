"""Command-line entry point: exact solutions, solver training, policy comparison.

Every subcommand reads one TOML experiment file. Exit status is 0 on
success, 2 when the configuration is invalid and 3 on a numerical failure.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import re
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .adp import SolverArtifacts, SolverSettings, StateSpace, TrainingDomain, backward_solve
from .closed_form import (DegenerateParametersError, backward_coeffs, deterministic_solution)
from .evaluation import (compare_policies, linear_feedback, profile_from_trades,
                         sensitivity_surface, unconstrained_linear, vwap, write_comparison_csv,
                         write_csv, write_path_diffs_csv, write_profile_csv,
                         write_surface_csv)
from .market import AdmissibilityError, ModelParams, NoisePath, simulate_paths

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("optexec")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
EXPERIMENTS = ("table1", "table2", "table3", "fig1", "fig2", "fig3", "fig4", "fig5", "fig6",
               "fig7", "fig8")
_MODEL_KEYS = {"kappa", "kappa_list", "zeta", "zeta_list", "eta", "alpha", "nu", "sigma",
               "n_steps", "x0", "d0"}
_TRAIN_KEYS = {"m_points", "epochs", "policy_epochs", "hidden_layers", "hidden_width",
               "batch_size", "learning_rate", "n_knots", "warm_start", "passes",
               "fresh_per_step", "fresh_per_pass", "seed", "domain"}
_EVAL_KEYS = {"m_paths", "seed", "baselines", "tests", "surface", "profiles"}
_TOP_KEYS = {"name", "description", "kind", "model", "training", "evaluation", "exact",
             "variants"}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class TestCase:
    label: str
    params: ModelParams


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str
    model: ModelParams
    space: StateSpace | None
    settings: SolverSettings | None
    tests: tuple
    m_paths: int
    eval_seed: int
    baselines: tuple
    exact: dict
    surface: dict | None
    profiles: bool
    raw: dict = field(repr=False)


def _params(block: dict, base: ModelParams | None, where: str, problems: list) -> ModelParams | None:
    unknown = set(block) - _MODEL_KEYS - {"label"}
    if unknown:
        problems.append(f"{where}: unknown keys {sorted(unknown)}")
    b = dict(block)
    b.pop("label", None)
    try:
        if base is None:
            if "kappa_list" in b:
                kappas = tuple(b.pop("kappa_list"))
                zetas = b.pop("zeta_list", None)
                if zetas is None and "zeta" in b and len(kappas) == 2:
                    z = b.pop("zeta")
                    zetas = (z, 1.0 - z)
                if zetas is None:
                    raise ValueError("kappa_list needs zeta_list (or zeta for two kernels)")
            else:
                kappas, zetas = (b.pop("kappa"),), (1.0,)
            return ModelParams(kappas, tuple(zetas), b.pop("eta"), b.pop("alpha", 1.0),
                               b.pop("nu", 0.0), b.pop("sigma", 0.0), b.pop("n_steps", 10),
                               b.pop("x0", 1e5), b.pop("d0", 0.0))
        changes = {}
        if "kappa" in b:
            if not base.is_single:
                raise ValueError("use kappa_list for a multi-kernel model")
            changes["kappa_list"] = (b.pop("kappa"),)
        if "kappa_list" in b:
            changes["kappa_list"] = tuple(b.pop("kappa_list"))
        if "zeta" in b:
            z = b.pop("zeta")
            changes["zeta_list"] = (z, 1.0 - z)
        if "zeta_list" in b:
            changes["zeta_list"] = tuple(b.pop("zeta_list"))
        changes.update(b)
        return replace(base, **changes)
    except (KeyError, TypeError, ValueError) as exc:
        msg = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
        problems.append(f"{where}: {msg}")
        return None


def _label(params_block: dict, i: int) -> str:
    if "label" in params_block:
        return str(params_block["label"])
    parts = [f"{k}={v}" for k, v in params_block.items()]
    return ",".join(parts) if parts else f"test{i}"


def _valid_baseline(name: str, model: ModelParams) -> str | None:
    if name in ("nn", "vwap"):
        return None
    if name == "lf":
        return None if model.is_single else "baseline 'lf' needs a kappa for a multi-kernel model (lf@<kappa> or lf@mix)"
    if name == "unconstrained":
        if model.alpha != 1.0 or not model.is_single:
            return "baseline 'unconstrained' requires alpha = 1 and a single kernel"
        return None
    m = re.fullmatch(r"lf@(mix|[0-9.eE+-]+)", name)
    if not m:
        return f"unknown policy {name!r}"
    if m.group(1) != "mix":
        try:
            k = float(m.group(1))
        except ValueError:
            return f"cannot parse kappa in {name!r}"
        if not 0 < k <= 1:
            return f"{name}: kappa must lie in (0, 1]"
    return None


def parse_config(raw: dict, seed: int | None = None) -> ExperimentConfig:
    """Validate a parsed TOML document; raises ConfigError listing every problem."""
    problems: list[str] = []
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        problems.append(f"unknown top-level keys {sorted(unknown)}")
    kind = raw.get("kind", "solver")
    if kind not in ("solver", "exact"):
        problems.append(f"kind must be 'solver' or 'exact', got {kind!r}")
    ev = raw.get("evaluation", {})
    tr = dict(raw.get("training", {}))
    for section, block, keys in (("evaluation", ev, _EVAL_KEYS), ("training", tr, _TRAIN_KEYS)):
        unknown = set(block) - keys
        if unknown:
            problems.append(f"{section}: unknown keys {sorted(unknown)}")
    if "model" not in raw:
        raise ConfigError(problems + ["missing [model] block"])
    model = _params(raw["model"], None, "model", problems)
    if model is None:
        raise ConfigError(problems)

    eval_seed = ev.get("seed", seed)
    if seed is not None:
        eval_seed = seed
    m_paths = int(ev.get("m_paths", 10_000))
    if m_paths < 1:
        problems.append("evaluation.m_paths must be >= 1")
    tests = []
    for i, block in enumerate(ev.get("tests", [{}])):
        p = _params(block, model, f"test {_label(block, i)!r}", problems)
        if p is not None:
            tests.append(TestCase(_label(block, i), p))

    space = settings = None
    if kind == "solver":
        if seed is not None:
            tr["seed"] = seed
        if "seed" not in tr:
            problems.append("training.seed is required")
        if eval_seed is None:
            problems.append("evaluation.seed is required")
        bounds = tr.get("domain")
        if not bounds:
            problems.append("training.domain is required for a solver experiment")
        else:
            try:
                dom = TrainingDomain.from_bounds({k: tuple(v) for k, v in bounds.items()},
                                                 tr.get("m_points", 2000),
                                                 tr.get("fresh_per_step", True))
                space = StateSpace(model, dom)
            except (ValueError, TypeError) as exc:
                problems.append(f"training.domain: {exc}")
        try:
            settings = SolverSettings(**{k: v for k, v in tr.items()
                                         if k in SolverSettings.__dataclass_fields__})
        except (ValueError, TypeError) as exc:
            problems.append(f"training: {exc}")
        if space is not None:
            for t in tests:
                problems += [f"test {t.label!r}: {msg}" for msg in space.violations(t.params)]
        baselines = tuple(ev.get("baselines", ["lf"]))
    else:
        baselines = tuple(ev.get("baselines", []))
        if eval_seed is None:
            eval_seed = 0
    for b in baselines:
        for t in tests:
            msg = _valid_baseline(b, t.params)
            if msg:
                problems.append(f"test {t.label!r}: {msg}")
                break
    exact = raw.get("exact", {})
    surface = ev.get("surface")
    if surface is not None and space is not None:
        for a in surface.get("axes", ["kappa", "eta"]):
            if a not in space.names:
                problems.append(f"evaluation.surface: {a!r} is not a solver coordinate")
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(raw.get("name", "experiment"), kind, model, space, settings,
                            tuple(tests), m_paths, int(eval_seed), baselines, exact, surface,
                            bool(ev.get("profiles", True)), raw)


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file {path} not found"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return parse_config(raw, seed)


def experiment_path(name: str) -> Path:
    if name not in EXPERIMENTS:
        raise ConfigError([f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}"])
    return Path(str(resources.files("optexec") / "experiments" / f"{name}.toml"))


def quick_raw(raw: dict) -> dict:
    """Shrink training and evaluation effort for smoke runs."""
    raw = json.loads(json.dumps(raw))
    tr = raw.get("training")
    if tr:
        tr["m_points"] = min(tr.get("m_points", 2000), 200)
        tr["epochs"] = min(tr.get("epochs", 2000), 20)
        tr["n_knots"] = min(tr.get("n_knots", 50), 10)
        tr["passes"] = 1
    for v in raw.get("variants", []):
        v.get("training", {}).pop("m_points", None)
        v.get("training", {}).pop("epochs", None)
    ev = raw.setdefault("evaluation", {})
    ev["m_paths"] = min(ev.get("m_paths", 10_000), 500)
    return raw


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", text).strip("_") or "test"


def build_policy(name: str, p: ModelParams, artifacts: SolverArtifacts | None):
    if name == "nn":
        if artifacts is None:
            raise ConfigError(["policy 'nn' needs a trained solver"])
        return artifacts.policy(p)
    if name == "vwap":
        return vwap(p)
    if name == "lf":
        return linear_feedback(p)
    if name == "unconstrained":
        return unconstrained_linear(p)
    k = name.split("@", 1)[1]
    kappa = float(np.dot(p.zetas, p.kappas)) if k == "mix" else float(k)
    return linear_feedback(p, kappa)


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, default=str))


def _snapshot(cfg: ExperimentConfig, out: Path, extra: dict | None = None) -> None:
    data = {"name": cfg.name, "kind": cfg.kind, "model": asdict(cfg.model),
            "tests": [{"label": t.label, "params": asdict(t.params)} for t in cfg.tests],
            "evaluation": {"m_paths": cfg.m_paths, "seed": cfg.eval_seed,
                           "baselines": list(cfg.baselines)},
            "raw": cfg.raw}
    if cfg.space is not None:
        data["space"] = cfg.space.to_dict()
        data["settings"] = asdict(cfg.settings)
    data.update(extra or {})
    _write_json(out / "resolved_config.json", data)


def run_exact(cfg: ExperimentConfig, out: Path) -> list[dict]:
    """Closed-form schedules and coefficient tables over the configured grid."""
    grid = cfg.exact
    base = cfg.model
    if "cases" in grid:
        cases = [(c.get("kappa", base.kappa), c.get("eta", base.eta), c.get("nu", base.nu))
                 for c in grid["cases"]]
    else:
        cases = list(itertools.product(grid.get("kappas", [base.kappa]),
                                       grid.get("etas", [base.eta]), grid.get("nus", [base.nu])))
    sched_rows, coeff_rows, prof_rows = [], [], []
    for kappa, eta, nu in cases:
        p = base.with_(kappa=kappa, eta=eta, nu=nu)
        det = deterministic_solution(p.with_(sigma=0.0))
        coeffs = backward_coeffs(p)
        for n in range(p.n_steps):
            sched_rows.append((kappa, eta, nu, n + 1, det.u[n], det.x_path[n], det.d_path[n]))
            coeff_rows.append((kappa, eta, nu, n + 1, coeffs.a[n], coeffs.b[n], coeffs.c[n],
                               coeffs.e_const[n], coeffs.delta[n]))
        if p.sigma > 0:
            noise = NoisePath.generate(p.sigma, p.n_steps, cfg.m_paths, cfg.eval_seed)
            batch = simulate_paths(p, unconstrained_linear(p), noise, constrained=False)
            prof = profile_from_trades(batch.trades)
            for n in range(p.n_steps):
                z = (prof.mean[n] - det.u[n]) / prof.se[n] if prof.se[n] > 0 else 0.0
                prof_rows.append((kappa, eta, nu, n + 1, prof.mean[n], prof.se[n], prof.q25[n],
                                  prof.q50[n], prof.q75[n], det.u[n], z))
    write_csv(out / "exact_schedules.csv",
              ["kappa", "eta", "nu", "step", "trade", "inventory_before", "deviation_before"], sched_rows)
    write_csv(out / "coefficients.csv", ["kappa", "eta", "nu", "step", "a", "b", "c", "e", "delta"],
              coeff_rows)
    if prof_rows:
        write_csv(out / "distribution_profile.csv",
                  ["kappa", "eta", "nu", "step", "mean_trade", "se", "q25", "q50", "q75",
                   "deterministic_trade", "z_score"], prof_rows)
    log.info("wrote closed-form outputs for %d configurations to %s", len(cases), out)
    return [{"kappa": r[0], "eta": r[1], "nu": r[2], "step": r[3], "trade": r[4]} for r in sched_rows]


def run_train(cfg: ExperimentConfig, out: Path) -> SolverArtifacts:
    def progress(dg):
        print(f"  step {dg.step:3d} pass {dg.pass_index}: stage {dg.stage_seconds:6.1f}s  "
              f"value fit {dg.value_fit_seconds:6.1f}s (loss {dg.value_loss:.2e})  "
              f"policy fit {dg.policy_fit_seconds:6.1f}s (loss {dg.policy_loss:.2e})", flush=True)

    t0 = time.perf_counter()
    art = backward_solve(cfg.space, cfg.settings, progress=progress)
    seconds = time.perf_counter() - t0
    art.save(out / "solver")
    write_csv(out / "training_log.csv",
              ["step", "pass", "stage_seconds", "value_fit_seconds", "policy_fit_seconds",
               "value_loss", "policy_loss", "value_lo", "value_hi", "mean_fraction", "n_capped",
               "frac_next_outside"],
              [tuple(asdict(d).values()) for d in art.diagnostics])
    print(f"trained {cfg.space.dim}D solver in {seconds:.1f}s -> {out / 'solver'}")
    return art


def run_evaluate(cfg: ExperimentConfig, out: Path, artifacts: SolverArtifacts | None) -> list[dict]:
    """Compare the configured policies on every test case; returns summary rows."""
    names = (["nn"] if artifacts is not None else []) + [b for b in cfg.baselines if b != "nn"]
    if not names:
        raise ConfigError(["nothing to evaluate: no solver and no baselines"])
    summary = []
    for t in cfg.tests:
        policies = {n: build_policy(n, t.params, artifacts) for n in names}
        baseline = names[1] if len(names) > 1 else names[0]
        report = compare_policies(t.params, policies, cfg.m_paths, cfg.eval_seed, baseline,
                                  unconstrained=("unconstrained",))
        slug = _slug(t.label)
        write_comparison_csv(report, out / f"comparison_{slug}.csv")
        if cfg.profiles:
            for n in names:
                write_profile_csv(profile_from_trades(report.trades[n]),
                                  out / f"profile_{slug}_{_slug(n)}.csv")
        if len(names) > 1:
            write_path_diffs_csv(report, names[0], out / f"path_diffs_{slug}.csv")
        for b in names[1:]:
            better, _, _ = report.outcome_fractions(names[0], b)
            summary.append({"test": t.label, "policy": names[0], "baseline": b,
                            "rel_diff_pct": report.rel_diff(names[0], b),
                            "mean_cost": report.mean_cost(names[0]), "se": report.se(names[0]),
                            "baseline_cost": report.mean_cost(b), "frac_paths_better": float(better)})
    if cfg.surface is not None and artifacts is not None:
        s = cfg.surface
        axes = tuple(s.get("axes", ["kappa", "eta"]))
        g0 = np.linspace(*s["range0"], int(s.get("points", 21)))
        g1 = np.linspace(*s["range1"], int(s.get("points", 21)))
        surf = sensitivity_surface(artifacts, int(s["step"]), float(s["x"]), s.get("d", 0.0),
                                   g0, g1, axes)
        write_surface_csv(surf, out / "surface.csv")
    if summary:
        write_csv(out / "summary.csv", list(summary[0]), [tuple(r.values()) for r in summary])
        print(f"{'test':28s} {'policy':8s} {'baseline':12s} {'gain %':>9s}")
        for r in summary:
            print(f"{r['test']:28s} {r['policy']:8s} {r['baseline']:12s} {r['rel_diff_pct']:9.3f}")
    return summary


def _variant_config(cfg: ExperimentConfig, variant: dict, seed: int | None) -> ExperimentConfig:
    """Apply one ``[[variants]]`` entry: training and model overrides, test selection.

    A ``training.domain`` table replaces the base domain as a whole.
    """
    unknown = set(variant) - {"label", "training", "model", "tests"}
    if unknown:
        raise ConfigError([f"variant {variant.get('label')!r}: unknown keys {sorted(unknown)}"])
    raw = json.loads(json.dumps(cfg.raw))
    raw.pop("variants", None)
    raw.setdefault("training", {}).update(variant.get("training", {}))
    raw["model"].update(variant.get("model", {}))
    ev = raw.setdefault("evaluation", {})
    if "tests" in variant:
        chosen = variant["tests"]
        if all(isinstance(t, dict) for t in chosen):
            ev["tests"] = chosen
        else:
            wanted = set(chosen)
            ev["tests"] = [t for i, t in enumerate(ev.get("tests", [])) if _label(t, i) in wanted]
            if not ev["tests"]:
                raise ConfigError([f"variant {variant.get('label')!r}: no test matches {sorted(wanted)}"])
    surface = ev.get("surface")
    domain = raw["training"].get("domain", {})
    if surface and not set(surface.get("axes", ["kappa", "eta"])) <= set(domain):
        ev.pop("surface")
    return parse_config(raw, seed)


def run_reproduce(cfg: ExperimentConfig, out: Path, seed: int | None) -> None:
    if cfg.kind == "exact":
        run_exact(cfg, out)
        return
    variants = cfg.raw.get("variants") or [{"label": "default"}]
    rows = []
    for v in variants:
        label = str(v.get("label", "default"))
        vcfg = _variant_config(cfg, v, seed) if set(v) - {"label"} else cfg
        vout = out / _slug(label) if len(variants) > 1 else out
        print(f"== {cfg.name} / {label}")
        t0 = time.perf_counter()
        art = run_train(vcfg, vout)
        minutes = (time.perf_counter() - t0) / 60.0
        for r in run_evaluate(vcfg, vout, art):
            rows.append({"variant": label, **r, "train_minutes": minutes})
    if rows:
        write_csv(out / f"{cfg.name}.csv", list(rows[0]), [tuple(r.values()) for r in rows])


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optexec", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override every configured seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads for network kernels")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("exact", help="closed-form linear-impact schedules and coefficients"))
    common(sub.add_parser("train", help="fit a solver and save its networks"))
    p = sub.add_parser("evaluate", help="evaluate saved networks against baselines")
    common(p)
    p.add_argument("--artifacts", default=None, help="solver directory (default: OUT/solver)")
    p = sub.add_parser("compare", help="train (unless --artifacts is given) and tabulate gains")
    common(p)
    p.add_argument("--artifacts", default=None)
    p = sub.add_parser("reproduce", help="run a packaged experiment")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--quick", action="store_true", help="tiny training and path budgets (smoke run)")
    common(p, config=False)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    out = Path(args.out)
    try:
        if args.threads is not None:
            import numba
            if not 1 <= args.threads <= numba.config.NUMBA_NUM_THREADS:
                raise ConfigError([f"--threads must lie in 1..{numba.config.NUMBA_NUM_THREADS}"])
            numba.set_num_threads(args.threads)
        if args.command == "reproduce":
            raw = tomllib.loads(experiment_path(args.experiment).read_text())
            if args.quick:
                raw = quick_raw(raw)
            cfg = parse_config(raw, args.seed)
        else:
            cfg = load_config(args.config, args.seed)
        out.mkdir(parents=True, exist_ok=True)
        _snapshot(cfg, out, {"command": args.command})

        if args.command == "exact" or (args.command == "reproduce" and cfg.kind == "exact"):
            run_exact(cfg, out)
        elif cfg.kind == "exact":
            raise ConfigError([f"'{args.command}' needs a solver experiment (kind = 'solver')"])
        elif args.command == "train":
            run_train(cfg, out)
        elif args.command == "evaluate":
            art = SolverArtifacts.load(Path(args.artifacts) if args.artifacts else out / "solver")
            _check_artifacts(cfg, art)
            run_evaluate(cfg, out, art)
        elif args.command == "compare":
            if args.artifacts:
                art = SolverArtifacts.load(args.artifacts)
                _check_artifacts(cfg, art)
            else:
                art = run_train(cfg, out)
            run_evaluate(cfg, out, art)
        else:
            run_reproduce(cfg, out, args.seed)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for msg in exc.problems:
            print(f"  - {msg}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FloatingPointError, DegenerateParametersError, AdmissibilityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _check_artifacts(cfg: ExperimentConfig, art: SolverArtifacts) -> None:
    problems = []
    for t in cfg.tests:
        problems += [f"test {t.label!r}: {m}" for m in art.space.violations(t.params)]
    if problems:
        raise ConfigError(problems)


if __name__ == "__main__":
    sys.exit(main())
