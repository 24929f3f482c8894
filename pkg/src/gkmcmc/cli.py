"""Command-line experiment runner.

Subcommands::

    gkmcmc run --config PATH [--resume]
    gkmcmc diagnose --chain PATH [--burn-in FRAC] [--out DIR]
    gkmcmc oracle-compare --config PATH

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure
(non-convergence, degenerate chain), 4 incompatible checkpoint.
Relative output directories are resolved against ``$GKMCMC_OUTPUT_ROOT``
when it is set.
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
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .diagnostics import DegenerateChainError, ess, summarize
from .krylov import ConvergenceWarning, LanczosConfig, gengk_bidiagonalize
from .operators import write_matrix_market
from .posterior import DENSE_N_CAP, HyperParams
from .problems import (
    DYNAMIC_DT,
    initial_hyperparameters,
    laplacian_preconditioner,
    make_dynamic_problem,
    make_tomography_problem,
    matern_shift,
)
from .samplers import (
    Chain,
    Checkpoint,
    CheckpointMismatch,
    SamplerConfig,
    block_gibbs,
    gengk_factors,
    load_checkpoint,
    mh_gibbs_gengk,
    mh_gibbs_precond,
    mh_gibbs_svd,
    rsvd_proposal_factors,
    tsvd_proposal_factors,
)

log = logging.getLogger("gkmcmc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "GKMCMC_OUTPUT_ROOT"
SAMPLER_KINDS = ("gengk", "precond", "tsvd", "rsvd", "block-gibbs")
PROBLEM_KINDS = ("tomography", "dynamic")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration schema


_PROBLEM_DEFAULTS = {
    "tomography": {"nx": 16, "n_angles": 12, "noise_level": 0.02, "nu": 2.5, "ell": 0.25, "seed": 0},
    "dynamic": {"nx": 16, "nt": 5, "angles_per_step": 6, "span": 340.0, "noise_level": 0.02,
                "qt": [2.5, 0.1], "qs": [0.5, 0.25], "dt": DYNAMIC_DT, "seed": 0},
}


def _strict(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(
            f"{where}: unknown key {unknown[0]!r} (allowed: {', '.join(sorted(allowed))})"
        )


def _typed(value, kind, where):
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is bool:
        ok = isinstance(value, bool)
    elif kind is str:
        ok = isinstance(value, str)
    elif kind is list:
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) for v in value)
        value = [float(v) for v in value] if ok else value
    else:  # pragma: no cover
        raise TypeError(kind)
    if not ok:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")
    return value


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "tomography"
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, where="problem"):
        _strict(d, {"kind", "params"}, where)
        kind = _typed(d.get("kind", "tomography"), str, f"{where}.kind")
        if kind not in PROBLEM_KINDS:
            raise ConfigError(f"{where}.kind: must be one of {PROBLEM_KINDS}, got {kind!r}")
        defaults = _PROBLEM_DEFAULTS[kind]
        raw = d.get("params", {})
        _strict(raw, defaults, f"{where}.params")
        params = {}
        for key, dv in defaults.items():
            kind_t = list if isinstance(dv, list) else type(dv)
            params[key] = _typed(raw.get(key, dv), kind_t, f"{where}.params.{key}")
        return cls(kind, params)


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "gengk"
    samples: int = 500
    burn_in: float = 0.10
    rank: int = 10
    oversampling: int = 5
    lanczos_tol: float = 1e-6
    lanczos_maxiter: int = 500
    seed: int = 0
    store_x: bool = False
    init: str = "heuristic"
    alpha_lambda: float = 1.0
    beta_lambda: float = 1e-4
    alpha_delta: float = 1.0
    beta_delta: float = 1e-4
    gamma: float = 1.0
    shift: float | None = None

    @classmethod
    def from_dict(cls, d, where="sampler"):
        names = {f.name: f for f in fields(cls)}
        _strict(d, names, where)
        vals = {}
        for name, f in names.items():
            if name not in d:
                continue
            if name == "shift" and d[name] is None:
                vals[name] = None
                continue
            t = {"int": int, "float": float, "bool": bool, "str": str,
                 "float | None": float}[f.type]
            vals[name] = _typed(d[name], t, f"{where}.{name}")
        spec = cls(**vals)
        if spec.kind not in SAMPLER_KINDS:
            raise ConfigError(f"{where}.kind: must be one of {SAMPLER_KINDS}, got {spec.kind!r}")
        if spec.init not in ("heuristic", "unit"):
            raise ConfigError(f"{where}.init: must be 'heuristic' or 'unit'")
        try:
            spec.sampler_config()
            LanczosConfig(maxiter=spec.lanczos_maxiter, tol=spec.lanczos_tol)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        for name in ("alpha_lambda", "beta_lambda", "alpha_delta", "beta_delta", "gamma"):
            if not getattr(spec, name) > 0:
                raise ConfigError(f"{where}.{name}: must be positive")
        return spec

    def sampler_config(self, init: HyperParams | None = None) -> SamplerConfig:
        return SamplerConfig(
            samples=self.samples, burn_in=self.burn_in, rank=self.rank,
            proposal="exact-dense" if self.kind == "block-gibbs" else self.kind,
            lanczos=LanczosConfig(maxiter=self.lanczos_maxiter, tol=self.lanczos_tol),
            store_x=self.store_x, seed=self.seed, oversampling=self.oversampling, init=init,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    output: str = "out"
    checkpoint_interval: int = 100
    chains: int = 1

    @classmethod
    def from_dict(cls, d) -> ExperimentConfig:
        _strict(d, {"problem", "sampler", "output", "checkpoint_interval", "chains"}, "config")
        problem = ProblemSpec.from_dict(d.get("problem", {}))
        sampler = SamplerSpec.from_dict(d.get("sampler", {}))
        output = _typed(d.get("output", "out"), str, "config.output")
        every = _typed(d.get("checkpoint_interval", 100), int, "config.checkpoint_interval")
        chains = _typed(d.get("chains", 1), int, "config.chains")
        if every < 1:
            raise ConfigError("config.checkpoint_interval: must be at least 1")
        if chains < 1:
            raise ConfigError("config.chains: must be at least 1")
        return cls(problem, sampler, output, every, chains)

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def to_dict(self) -> dict:
        return {
            "problem": {"kind": self.problem.kind, "params": dict(self.problem.params)},
            "sampler": asdict(self.sampler),
            "output": self.output,
            "checkpoint_interval": self.checkpoint_interval,
            "chains": self.chains,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        """Hash of everything that affects the numbers (the output location is excluded)."""
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def output_dir(self) -> Path:
        p = Path(self.output)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not p.is_absolute():
            p = Path(root) / p
        return p


# --------------------------------------------------------------------------
# experiment assembly


def build_problem(spec: ProblemSpec):
    p = dict(spec.params)
    rng = np.random.default_rng(int(p.pop("seed")))
    if spec.kind == "tomography":
        return make_tomography_problem(rng=rng, **p)
    p["qt"], p["qs"] = tuple(p["qt"]), tuple(p["qs"])
    return make_dynamic_problem(rng=rng, **p)


def _init_hyper(problem, spec: SamplerSpec) -> HyperParams:
    if spec.init == "unit":
        return HyperParams(1.0, 1.0)
    return initial_hyperparameters(problem)


def _preconditioner(problem, spec: SamplerSpec):
    meta = problem.metadata
    if meta["kind"] != "dynamic":
        raise ConfigError("sampler.kind 'precond' needs the dynamic problem")
    nu, ell = meta["prior_s"]
    shift = matern_shift(nu, ell, meta["nx"]) if spec.shift is None else spec.shift
    return laplacian_preconditioner(meta["nx"], meta["nt"], spec.gamma,
                                    problem.components["Q_t"], shift=shift)


def prepare_sampler(problem, spec: SamplerSpec, cfg: SamplerConfig):
    """Build the (shared, read-only) proposal factors once; return a chain runner."""
    M = problem.model
    model = replace(
        M, alpha_lambda=spec.alpha_lambda, beta_lambda=spec.beta_lambda,
        alpha_delta=spec.alpha_delta, beta_delta=spec.beta_delta,
    )
    if spec.kind == "gengk":
        if cfg.rank > min(M.m, M.n):
            raise ConfigError("sampler.rank: exceeds min(m, n)")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            f = gengk_factors(model, cfg.rank, cfg)
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            raise FloatingPointError("Lanczos square root did not converge while building factors")
        return lambda c, rng, **kw: mh_gibbs_gengk(model, c, rng=rng, factors=f, **kw)
    if spec.kind in ("tsvd", "rsvd"):
        if spec.kind == "tsvd":
            f = tsvd_proposal_factors(model, k=cfg.rank)
        else:
            f = rsvd_proposal_factors(model, k=cfg.rank, p=cfg.oversampling,
                                      rng=np.random.default_rng([spec.seed, 1]))
        return lambda c, rng, **kw: mh_gibbs_svd(model, c, f, rng=rng, **kw)
    if spec.kind == "precond":
        G = _preconditioner(problem, spec)
        state = gengk_bidiagonalize(M.A, M.R_inv, M.Q, M.b, M.mu, cfg.rank)
        return lambda c, rng, **kw: mh_gibbs_precond(model, c, G, rng=rng, state=state, **kw)
    return lambda c, rng, **kw: block_gibbs(model, c, rng=rng, **kw)


def chain_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_diagnostics(chain: Chain, directory: Path) -> dict:
    stats = summarize(chain)
    report = stats.report()
    (directory / "diagnostics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    lags = len(stats.acf["lambda"])
    rows = ["lag,lambda,delta"] + [
        f"{i},{float(stats.acf['lambda'][i])!r},{float(stats.acf['delta'][i])!r}" for i in range(lags)
    ]
    (directory / "acf.csv").write_text("\n".join(rows) + "\n")
    if stats.mean is not None:
        write_matrix_market(directory / "mean.mtx", stats.mean)
        write_matrix_market(directory / "variance.mtx", stats.variance)
    return report


# --------------------------------------------------------------------------
# subcommands


def cmd_run(cfg: ExperimentConfig, resume: bool = False) -> int:
    t0 = time.perf_counter()
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.hash()
    problem = build_problem(cfg.problem)
    init = _init_hyper(problem, cfg.sampler)
    scfg = cfg.sampler.sampler_config(init)
    runner = prepare_sampler(problem, cfg.sampler, scfg)
    rngs = chain_rngs(cfg.sampler.seed, cfg.chains)
    dirs = [out] if cfg.chains == 1 else [out / f"chain_{i}" for i in range(cfg.chains)]

    resumes = []
    for d in dirs:
        d.mkdir(parents=True, exist_ok=True)
        ck = d / "checkpoint.npz"
        resumes.append(load_checkpoint(ck, chash) if resume and ck.exists() else None)

    def one(i):
        ck = Checkpoint(dirs[i] / "checkpoint.npz", cfg.checkpoint_interval, chash)
        return runner(scfg, rngs[i], checkpoint=ck, resume=resumes[i])

    if cfg.chains == 1:
        chains = [one(0)]
    else:
        with ThreadPoolExecutor(max_workers=min(cfg.chains, os.cpu_count() or 1)) as ex:
            chains = list(ex.map(one, range(cfg.chains)))

    nonconv = 0
    files, per_chain = [], []
    for d, ch in zip(dirs, chains):
        ch.to_csv(d / "chain.csv")
        try:
            report = write_diagnostics(ch, d)
        except ValueError as exc:  # too short or degenerate; the chain itself is still valid
            log.warning("diagnostics skipped for %s: %s", d, exc)
            report = {"error": str(exc), "ess": None}
            (d / "diagnostics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        nonconv += int(ch.meta.get("lanczos_nonconverged", 0))
        per_chain.append({"dir": str(d.relative_to(out)), "acceptance_rate": ch.acceptance_rate(),
                          "rank": ch.meta.get("rank"), "ess": report["ess"]})
        (d / "checkpoint.npz").unlink(missing_ok=True)
        files += [p for p in sorted(d.iterdir()) if p.is_file() and p.name != "manifest.json"]

    (out / "config.json").write_text(cfg.to_json())
    files.append(out / "config.json")
    manifest = {
        "config_hash": chash,
        "seed": cfg.sampler.seed,
        "sampler": cfg.sampler.kind,
        "problem": cfg.problem.kind,
        "m": problem.model.m,
        "n": problem.model.n,
        "lambda_true": problem.lambda_true,
        "init": {"lambda": init.lam, "delta": init.delta},
        "acceptance_rate": float(np.mean([c.acceptance_rate() for c in chains])),
        "chains": per_chain,
        "lanczos_nonconverged": nonconv,
        "wall_time_s": time.perf_counter() - t0,
        "files": {str(p.relative_to(out)): _sha256(p) for p in sorted(set(files))},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if nonconv:
        log.error("%d Lanczos solves did not converge", nonconv)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_diagnose(chain_path, burn_in: float = 0.10, out_dir=None) -> int:
    chain = Chain.from_csv(chain_path)
    chain.burn_in = int(math.floor(burn_in * len(chain)))
    out = Path(out_dir) if out_dir else Path(chain_path).parent
    out.mkdir(parents=True, exist_ok=True)
    report = write_diagnostics(chain, out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def oracle_compare(cfg: ExperimentConfig) -> dict:
    """Dense block Gibbs versus the configured sampler on the same fixture."""
    problem = build_problem(cfg.problem)
    M = problem.model
    if M.n > DENSE_N_CAP:
        raise ConfigError(f"problem: n={M.n} exceeds the dense oracle cap {DENSE_N_CAP}")
    spec = replace(cfg.sampler, store_x=True)
    init = _init_hyper(problem, spec)
    scfg = spec.sampler_config(init)
    rng_dense, rng_approx = chain_rngs(spec.seed, 2)
    approx = prepare_sampler(problem, spec, scfg)(scfg, rng_approx)
    dense = prepare_sampler(problem, replace(spec, kind="block-gibbs"),
                            replace(scfg, proposal="exact-dense"))(scfg, rng_dense)
    nb = scfg.burn_in_count
    xa, xd = approx.x[nb:], dense.x[nb:]
    ma, md = xa.mean(0), xd.mean(0)
    va, vd = xa.var(0, ddof=1), xd.var(0, ddof=1)

    def _se2(x, v):
        out = np.empty(x.shape[1])
        for j in range(x.shape[1]):
            try:
                out[j] = v[j] / ess(x[:, j])
            except DegenerateChainError:
                out[j] = v[j]
        return out

    se = np.sqrt(_se2(xa, va) + _se2(xd, vd))
    zs = np.abs(ma - md) / np.where(se > 0, se, np.inf)
    return {
        "sampler": spec.kind,
        "rank": approx.meta.get("rank"),
        "n": M.n,
        "samples": scfg.samples,
        "mean_rel_discrepancy": float(np.linalg.norm(ma - md) / np.linalg.norm(md)),
        "mean_rel_noise_floor": float(4 * np.linalg.norm(se) / np.linalg.norm(md)),
        "var_rel_discrepancy": float(np.linalg.norm(va - vd) / np.linalg.norm(vd)),
        "max_abs_z": float(zs.max()),
        "frac_within_4se": float(np.mean(zs <= 4.0)),
        "acceptance_rate": approx.acceptance_rate(),
        "dense_acceptance_rate": dense.acceptance_rate(),
    }


def cmd_oracle_compare(cfg: ExperimentConfig) -> int:
    report = oracle_compare(cfg)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "oracle_compare.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gkmcmc", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a sampler experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--resume", action="store_true",
                   help="continue from checkpoint.npz in the output directory if present")
    d = sub.add_parser(
        "diagnose",
        help="ESS, Geweke and credible intervals for a chain CSV; the burn-in drops "
             "floor(fraction * T) leading samples",
    )
    d.add_argument("--chain", required=True)
    d.add_argument("--burn-in", type=float, default=0.10)
    d.add_argument("--out", default=None)
    o = sub.add_parser("oracle-compare", help="compare a sampler against dense block Gibbs")
    o.add_argument("--config", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "diagnose":
            if not 0 <= args.burn_in < 1:
                raise ConfigError("--burn-in must lie in [0, 1)")
            return cmd_diagnose(args.chain, args.burn_in, args.out)
        cfg = ExperimentConfig.load(args.config)
        if args.command == "run":
            return cmd_run(cfg, resume=args.resume)
        return cmd_oracle_compare(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatch as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DegenerateChainError as exc:
        print(f"degenerate chain: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, FloatingPointError, MemoryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
