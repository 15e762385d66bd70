"""Experiment orchestration: seeding, configuration, the lockstep loop, evaluation and output.

Step accounting counts environment steps summed over all rollouts: with N
rollouts a budget of ``total_steps`` means ``total_steps / N`` global
timesteps, and evaluation happens whenever the summed count hits a multiple
of ``eval_every``.

Each global timestep runs three phases:

1. every rollout acts once and appends its transition, in index order;
2. every learner performs its updates (threads may run distinct learners
   concurrently; each reads the buffer and uses only its own RNG);
3. the scheme's coordinator (chief sync, reset, center update) and
   evaluation, when due.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .envsuite import make_env
from .numcore import ConfigError
from .popsearch import P3SHyper
from .replay import ReplayBuffer
from .td3core import Learner, Rollout, TD3Hyper, act_eval, interact, learner_update, save_checkpoint

log = logging.getLogger(__name__)

# Stream derivation: Generator(PCG64(SeedSequence(master_seed, spawn_key=(code, *indices)))).
ROLE_CODES = {"init": 1, "env": 2, "noise": 3, "sample": 4, "chief": 5, "eval": 6}
SCHEMES = ("single", "drl", "eso", "resetting", "p3s", "center")


def seed_sequence(seed: int, role) -> np.random.SeedSequence:
    name, *idx = role if isinstance(role, tuple) else (role,)
    if name not in ROLE_CODES:
        raise ConfigError(f"unknown RNG role {name!r}")
    return np.random.SeedSequence(int(seed), spawn_key=(ROLE_CODES[name], *map(int, idx)))


def master_seed_split(seed: int, roles) -> dict:
    """One independent Generator per role label, e.g. ``("noise", 2)`` or ``"chief"``."""
    return {role: np.random.Generator(np.random.PCG64(seed_sequence(seed, role))) for role in roles}


@dataclass
class RunSettings:
    env: str = "delayed:pointmass-sparse:20"
    total_steps: int = 100_000
    eval_every: int = 4000
    eval_episodes: int = 10
    seed: int = 0
    workers: int = 1
    checkpoint: bool = True


@dataclass
class SchemeConfig:
    name: str = "p3s"
    n_learners: int = 4
    reset_period: float = 5000.0
    center_period: int = 40
    center_beta: float = 1.0
    center_steps: int = 10
    center_batch: int = 1000
    shared_init: bool = True

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.name!r}; choose from {SCHEMES}")
        if self.n_learners < 1:
            raise ConfigError("n_learners must be >= 1")
        if self.name == "single" and self.n_learners != 1:
            raise ConfigError("scheme 'single' runs exactly one learner")
        if self.name == "drl" and self.n_learners < 2:
            raise ConfigError("scheme 'drl' needs n_learners >= 2")
        if self.reset_period < 1 or self.center_period < 1 or self.center_steps < 1:
            raise ConfigError("periods and center_steps must be >= 1")


@dataclass
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    td3: TD3Hyper = field(default_factory=TD3Hyper)
    p3s: P3SHyper = field(default_factory=P3SHyper)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)

    def validate(self) -> None:
        n = self.scheme.n_learners
        if self.run.total_steps % n or self.run.eval_every % n:
            raise ConfigError(f"total_steps and eval_every must be multiples of n_learners={n}")
        if self.run.eval_every < 1 or self.run.eval_episodes < 1 or self.run.total_steps < 1:
            raise ConfigError("total_steps, eval_every and eval_episodes must be >= 1")
        make_env(self.run.env)


_SECTIONS = {"run": RunSettings, "td3": TD3Hyper, "p3s": P3SHyper, "scheme": SchemeConfig}


def _parse_value(kind, text: str):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return math.inf if text.lower() in ("inf", "infinity", "never") else float(text)
    if kind is tuple:
        return tuple(int(x) for x in text.replace("(", "").replace(")", "").split(",") if x.strip())
    return text


def _field_kinds(cls):
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


def config_from_mapping(data: dict) -> RunConfig:
    """Build a RunConfig from ``{section: {key: text}}``; unknown sections or keys are errors."""
    parts = {}
    for section, cls in _SECTIONS.items():
        kinds = _field_kinds(cls)
        values = {}
        for key, text in data.get(section, {}).items():
            if key not in kinds:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                values[key] = _parse_value(kinds[key], str(text))
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {text!r}") from exc
        parts[section] = cls(**values)
    extra = set(data) - set(_SECTIONS)
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    cfg = RunConfig(**parts)
    cfg.validate()
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    """Read an INI-style config file and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    if path is not None:
        text = Path(path).read_text()
        parser.read_string(text, source=str(path))
    data = {s: dict(parser[s]) for s in parser.sections()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        data.setdefault(section, {})[name] = value
    return config_from_mapping(data)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {}
        for f in fields(obj):
            v = getattr(obj, f.name)
            parser[section][f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


@dataclass
class EvalRecord:
    total_env_steps: int
    returns: list
    max_return: float
    best_index: int | None = None
    beta: float | None = None
    d_spread: float | None = None
    d_change: float | None = None


def eval_seeds(seed: int, eval_index: int, episodes: int) -> list:
    """Episode seeds of one evaluation round; every learner and every scheme sees the same ones."""
    ss = seed_sequence(seed, ("eval", eval_index))
    return [int(x) for x in ss.generate_state(episodes, np.uint64)]


def policy_return(learner: Learner, env_id: str, seeds) -> list:
    """Deterministic-policy returns, one episode per seed, episodes stepped side by side."""
    envs = [make_env(env_id) for _ in seeds]
    obs = [env.reset(s) for env, s in zip(envs, seeds)]
    totals = [0.0] * len(envs)
    live = list(range(len(envs)))
    while live:
        actions = act_eval(learner, np.stack([obs[k] for k in live]))
        still = []
        for k, a in zip(live, actions):
            res = envs[k].step(a)
            totals[k] += res.reward
            obs[k] = res.observation
            if not res.finished:
                still.append(k)
        live = still
    return totals


def evaluate(learners, env_id: str, episodes: int = 10, seed: int = 0, eval_index: int = 0,
             total_env_steps: int = 0) -> EvalRecord:
    """Mean return of each learner over `episodes` fresh evaluation episodes; max across learners."""
    seeds = eval_seeds(seed, eval_index, episodes)
    means = [float(np.mean(policy_return(lr, env_id, seeds))) for lr in learners]
    return EvalRecord(total_env_steps, means, max(means))


@dataclass(eq=False)
class RunResult:
    config: RunConfig
    evals: list
    syncs: list
    learners: list
    rollouts: list
    buffer: ReplayBuffer
    scheme: object
    wall_time: float = 0.0

    @property
    def final_score(self) -> float:
        return final_score([e.max_return for e in self.evals])


def final_score(maxima, last: int = 10) -> float:
    """Steady-state score: mean of the last `last` evaluation maxima."""
    if not len(maxima):
        return math.nan
    return float(np.mean(list(maxima)[-last:]))


def _init_key(cfg: RunConfig, j: int):
    ss = seed_sequence(cfg.run.seed, ("init", 0 if cfg.scheme.shared_init else j))
    return ss.generate_state(4)


def build(cfg: RunConfig):
    """Create learners, rollouts and the shared buffer for a config."""
    from .baselines import make_scheme

    scheme = make_scheme(cfg)
    seed = cfg.run.seed
    spec = make_env(cfg.run.env).spec
    learners = []
    for j in range(scheme.n_learners):
        rng = master_seed_split(seed, [("sample", j)])[("sample", j)]
        learners.append(Learner.create(spec, cfg.td3, _init_key(cfg, j), rng))
    rollouts = []
    history = max(cfg.p3s.recent_episodes, 100)
    for i in range(cfg.scheme.n_learners):
        streams = master_seed_split(seed, [("noise", i), ("env", i)])
        rollouts.append(Rollout(make_env(cfg.run.env), streams[("noise", i)], streams[("env", i)], history))
    buffer = ReplayBuffer(spec.obs_dim, spec.act_dim, cfg.td3.buffer_size)
    scheme.setup(learners, rollouts, buffer, master_seed_split(seed, ["chief"])["chief"])
    return scheme, learners, rollouts, buffer


def run(cfg: RunConfig, out=None, workers: int | None = None, progress: bool = False) -> RunResult:
    """Execute one training run; write CSVs, summary and checkpoints to `out` when given."""
    cfg.validate()
    workers = cfg.run.workers if workers is None else workers
    scheme, learners, rollouts, buffer = build(cfg)
    n = cfg.scheme.n_learners
    horizon = cfg.run.total_steps // n
    t_initial = cfg.td3.t_initial
    evals, syncs = [], []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    start = time.perf_counter()
    try:
        for t in range(horizon):
            for i, ro in enumerate(rollouts):
                interact(learners[scheme.learner_of(i)], ro, buffer, t)
            if t >= t_initial:
                plan = scheme.update_plan()
                if pool is not None and scheme.parallel_updates:
                    list(pool.map(lambda job: learner_update(learners[job[0]], buffer, job[1]), plan))
                else:
                    for j, aug in plan:
                        learner_update(learners[j], buffer, aug)
                record = scheme.after_updates(t)
                if record is not None:
                    record["total_env_steps"] = (t + 1) * n
                    syncs.append(record)
            total = (t + 1) * n
            if total % cfg.run.eval_every == 0:
                rec = evaluate(learners, cfg.run.env, cfg.run.eval_episodes, cfg.run.seed,
                               len(evals), total)
                for k, v in scheme.status().items():
                    setattr(rec, k, v)
                evals.append(rec)
                if progress:
                    log.info("%s steps=%d max_return=%.3f", cfg.scheme.name, total, rec.max_return)
    finally:
        if pool is not None:
            pool.shutdown()
    result = RunResult(cfg, evals, syncs, learners, rollouts, buffer, scheme,
                       time.perf_counter() - start)
    if out is not None:
        write_artifacts(result, out)
    return result


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def eval_rows(result: RunResult):
    n = len(result.learners)
    header = ["total_env_steps", *[f"learner_{j}_return" for j in range(n)],
              "max_return", "best_index", "beta", "d_spread", "d_change"]
    rows = [[str(e.total_env_steps), *map(_fmt, e.returns), _fmt(e.max_return), _fmt(e.best_index),
             _fmt(e.beta), _fmt(e.d_spread), _fmt(e.d_change)] for e in result.evals]
    return header, rows


def sync_rows(result: RunResult):
    n = result.config.scheme.n_learners
    header = ["total_env_steps", "best_index", "beta", "d_spread", "d_change",
              *[f"learner_{j}_recent" for j in range(n)]]
    rows = [[str(r["total_env_steps"]), _fmt(r.get("best_index")), _fmt(r.get("beta")),
             _fmt(r.get("d_spread")), _fmt(r.get("d_change")), *map(_fmt, r.get("recent", [None] * n))]
            for r in result.syncs]
    return header, rows


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_artifacts(result: RunResult, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    _write_csv(out / "eval.csv", *eval_rows(result))
    _write_csv(out / "sync.csv", *sync_rows(result))
    (out / "config.ini").write_text(dump_config(cfg))
    summary = {
        "scheme": cfg.scheme.name,
        "env": cfg.run.env,
        "seed": cfg.run.seed,
        "n_learners": cfg.scheme.n_learners,
        "total_env_steps": cfg.run.total_steps,
        "eval_points": len(result.evals),
        "final_score": result.final_score,
        "buffer_appends": result.buffer.appends,
        "updates": [lr.updates for lr in result.learners],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    if cfg.run.checkpoint:
        for j, lr in enumerate(result.learners):
            save_checkpoint(lr, out / "checkpoints" / f"learner_{j}",
                            {"scheme": cfg.scheme.name, "total_env_steps": cfg.run.total_steps})
    return out


def read_eval_csv(path) -> dict:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {"steps": [int(r["total_env_steps"]) for r in rows],
            "max_return": [float(r["max_return"]) for r in rows]}


def export_summary(run_dirs, output=None):
    """Per-run steady-state scores and across-seed mean/std grouped by (scheme, env).

    Writes ``<output>`` as CSV and ``<output>.txt`` as a plain-text table when
    `output` is given; returns ``(per_run_rows, grouped_rows)``.
    """
    per_run = []
    for d in run_dirs:
        d = Path(d)
        eval_path, summary_path = d / "eval.csv", d / "summary.json"
        for p in (eval_path, summary_path):
            if not p.exists():
                raise FileNotFoundError(f"run directory {d} is missing {p.name}")
        meta = json.loads(summary_path.read_text())
        score = final_score(read_eval_csv(eval_path)["max_return"])
        per_run.append({"run": str(d), "scheme": meta["scheme"], "env": meta["env"],
                        "seed": meta["seed"], "final_score": score})
    groups = {}
    for r in per_run:
        groups.setdefault((r["scheme"], r["env"]), []).append(r["final_score"])
    grouped = [{"scheme": s, "env": e, "runs": len(v), "mean": float(np.mean(v)),
                "std": float(np.std(v))} for (s, e), v in groups.items()]
    if output is not None:
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        with output.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scheme", "env", "runs", "mean", "std"])
            for g in grouped:
                w.writerow([g["scheme"], g["env"], g["runs"], repr(g["mean"]), repr(g["std"])])
        lines = [f"{'scheme':<10} {'env':<32} {'runs':>4} {'mean':>10} {'std':>10}"]
        lines += [f"{g['scheme']:<10} {g['env']:<32} {g['runs']:>4} {g['mean']:>10.4f} {g['std']:>10.4f}"
                  for g in grouped]
        output.with_name(output.name + ".txt").write_text("\n".join(lines) + "\n")
    return per_run, grouped
