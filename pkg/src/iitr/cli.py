"""Command-line interface: ``iitr {fit,evaluate,complementary,simulate}``.

Exit status is 0 on success, 1 for invalid input (config, data, paths) and 2
when a computation fails. Results go to files; logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dataset import DataError, load_table, normalize
from .nuisance import GLMNuisance, confidence_interval, estimate_value_aipw
from .pipeline import Policy, PipelineConfig, complementary_analysis, predict, run_pipeline
from .sim import DGPConfig, run_benchmark
from .solvers import SolverConfig

log = logging.getLogger("iitr")


class ConfigError(ValueError):
    pass


_DATA_KEYS = {"outcome", "treatment", "drop", "delimiter"}
_SIM_KEYS = {"reps", "n_train", "n_eval", "n_jobs"}
_PIPE_KEYS = {f.name for f in fields(PipelineConfig)} - {"solver"}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
_DGP_KEYS = {f.name for f in fields(DGPConfig)} - {"n"}
_SECTIONS = {"data": _DATA_KEYS, "pipeline": _PIPE_KEYS, "solver": _SOLVER_KEYS,
             "simulate": _SIM_KEYS, "dgp": _DGP_KEYS}


@dataclass
class RunConfig:
    """Validated settings for one command invocation."""

    outcome: str = "y"
    treatment: str = "a"
    drop: tuple[str, ...] = ()
    delimiter: str = ","
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    dgp: DGPConfig = field(default_factory=DGPConfig)
    reps: int = 50
    n_train: int = 3000
    n_eval: int = 1000
    n_jobs: int = 1

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        for name, allowed in _SECTIONS.items():
            section = raw.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"config section [{name}] must be a table")
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
        data = raw.get("data", {})
        sim = raw.get("simulate", {})
        pipe = dict(raw.get("pipeline", {}))
        for key in ("clip", "exclude"):
            if key in pipe:
                pipe[key] = tuple(pipe[key])
        try:
            solver = SolverConfig(**raw.get("solver", {}))
            pipeline = PipelineConfig(solver=solver, **pipe)
            dgp_raw = dict(raw.get("dgp", {}))
            for key in ("propensity_coef", "mu0_coef"):
                if key in dgp_raw:
                    dgp_raw[key] = tuple(dgp_raw[key])
            dgp = DGPConfig(**dgp_raw)
            cfg = cls(
                outcome=str(data.get("outcome", "y")),
                treatment=str(data.get("treatment", "a")),
                drop=tuple(data.get("drop", ())),
                delimiter=str(data.get("delimiter", ",")),
                pipeline=pipeline,
                dgp=dgp,
                reps=int(sim.get("reps", 50)),
                n_train=int(sim.get("n_train", 3000)),
                n_eval=int(sim.get("n_eval", 1000)),
                n_jobs=int(sim.get("n_jobs", 1)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        if cfg.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {cfg.reps}")
        if cfg.n_train < 2 * pipeline.K or cfg.n_eval < 1 or cfg.n_jobs < 1:
            raise ConfigError("n_train must be >= 2K and n_eval, n_jobs >= 1")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls.from_mapping(raw)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, pipeline=replace(self.pipeline, seed=seed),
                       dgp=replace(self.dgp, seed=seed))


def _load_data(path, cfg: RunConfig):
    return load_table(path, cfg.outcome, cfg.treatment, cfg.drop, cfg.delimiter)


def _load_policy(path) -> Policy:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"policy file not found: {path}")
    try:
        return Policy.from_json(path.read_text(encoding="utf-8"))
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed policy file {path}: {exc}") from None


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(args) -> int:
    cfg = RunConfig.load(args.config).with_seed(args.seed)
    data = _load_data(args.data, cfg)
    out = _outdir(args.out)
    handler = logging.FileHandler(out / "fit.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    try:
        log.info("fitting %d units, %d covariates", data.n, data.p)
        policy, cv, _ = run_pipeline(data, cfg.pipeline)
        (out / "policy.json").write_text(policy.to_json() + "\n")
        cv.to_csv(out / "cv_path.csv")
        log.info("lambda_min=%g lambda_1se=%g; selected %s", cv.lambda_min, cv.lambda_1se,
                 [policy.names[j] for j in policy.selected])
    finally:
        log.removeHandler(handler)
        handler.close()
    return 0


def cmd_evaluate(args) -> int:
    cfg = RunConfig.load(args.config)
    data = _load_data(args.data, cfg)
    policy = _load_policy(args.policy)
    d = predict(policy, data.covariates, data.names)
    nd = normalize(data)
    nf = GLMNuisance(cfg.pipeline.clip).fit(nd.design, data.treatment, data.outcome) \
        .predict(nd.design)
    value, var = estimate_value_aipw(data.treatment, data.outcome, nf, d)
    lo, hi = confidence_interval(value, var)
    print(json.dumps({"value": value, "variance": var, "se": var ** 0.5,
                      "ci_lo": lo, "ci_hi": hi, "n": data.n,
                      "treated_fraction": float(d.mean())}, indent=2))
    return 0


def cmd_complementary(args) -> int:
    cfg = RunConfig.load(args.config)
    data = _load_data(args.data, cfg)
    policy = _load_policy(args.policy)
    if tuple(policy.names) != data.names:
        raise DataError("policy was fit on a different covariate set: "
                        f"{list(policy.names)} vs {list(data.names)}")
    if policy.eta_full is None:
        raise DataError("policy file lacks eta_full (the pre-pruning fit) needed for ranking")
    nd = normalize(data)
    nf = GLMNuisance(cfg.pipeline.clip).fit(nd.design, data.treatment, data.outcome) \
        .predict(nd.design)
    curve = complementary_analysis(nd, nf, policy.eta_full, cfg.pipeline.exclude,
                                   policy.loss_kind, cfg.pipeline)
    curve.to_csv(_outdir(args.out) / "value_curve.csv")
    return 0


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config).with_seed(args.seed)
    out = _outdir(args.out)
    res = run_benchmark(cfg.reps, cfg.dgp, cfg.pipeline, cfg.n_train, cfg.n_eval, cfg.n_jobs)
    (out / "benchmark.csv").write_text(res.to_csv())
    (out / "summary.json").write_text(res.summary_json() + "\n")
    log.info("%d replications (%d failed) in %.1fs", cfg.reps, len(res.failures), res.elapsed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iitr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="cross-validated fit; writes policy.json and cv_path.csv")
    f.add_argument("--data", required=True)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="AIPW value of a stored policy, printed as JSON")
    e.add_argument("--data", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--config")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("complementary", help="value curve over the top-k variables")
    c.add_argument("--data", required=True)
    c.add_argument("--policy", required=True)
    c.add_argument("--config")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_complementary)

    s = sub.add_parser("simulate", help="synthetic benchmark; writes benchmark.csv, summary.json")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        log.addHandler(handler)
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: computation failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
