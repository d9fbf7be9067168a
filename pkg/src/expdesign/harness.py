"""The round loop, seeded multi-run execution, aggregation, and reporting.

Reproducibility contract: every stochastic choice in a run draws from one
numpy PCG64 generator seeded with the run seed; run seeds are base seed +
run index; the feedback-randomization ablation draws from a separate
generator seeded with (run seed, round number) so it never perturbs the
selection stream.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .agents import AGENT_KINDS, LLM_AGENT_KINDS, make_agent
from .backends import (
    HttpBackend,
    LlmBackend,
    RetryPolicy,
    SamplingParams,
    ScriptedBackend,
)
from .errors import BackendError, ConfigError
from .feedback import Feedback, FeedbackRecord, randomize_feedback
from .memory import CandidateMemory
from .pool import (
    CandidatePool,
    HIT_MODES,
    IngestOptions,
    METRIC_L2_SQUARED,
    METRICS,
    load_pool,
)
from .prompts import DATASET_DESCRIPTORS, DOMAINS

logger = logging.getLogger(__name__)

FEEDBACK_TRUE = "true"
FEEDBACK_RANDOMIZED = "randomized"

REPORT_SCHEMA_VERSION = 1
RUNS_CSV = "runs.csv"
SUMMARY_JSON = "summary.json"


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; JSON-loadable, CLI-overridable."""

    agent: str = "random"
    dataset: str | None = None
    embeddings: str | None = None
    out: str | None = None
    rounds: int = 5
    batch_size: int = 128
    num_centers: int = 5
    runs: int = 5
    seed: int = 0
    feedback: str = FEEDBACK_TRUE
    randomize_level1: bool = True
    randomize_level2: bool = True
    randomize_fresh_each_round: bool = True
    metric: str = METRIC_L2_SQUARED
    expected_dim: int | None = None
    hit_mode: str | None = None
    percentile: float = 90.0
    element_filter: tuple[str, ...] | None = None
    score_range: tuple[float, float] | None = None
    domain: str | None = None
    dataset_key: str | None = None
    func_desc: str | None = None
    score_desc: str | None = None
    candidate_space_info: str | None = None
    linucb_ridge: float = 1.0
    linucb_alpha: float = 1.0
    linucb_standardize: bool = True
    gp_beta: float = 2.0
    gp_length_scale: float | None = None
    gp_signal_var: float | None = None
    gp_noise_var: float | None = None
    gp_standardize: bool = True
    gp_subsample: int = 512
    llm_endpoint: str | None = None
    llm_model: str | None = None
    llm_temperature: float = 1.0
    llm_max_tokens: int = 4096
    llm_max_attempts: int = 3
    llm_fixtures: str | None = None
    bda_retries: int = 5

    _NESTED = {"llm", "linucb", "gp"}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a JSON-style dict; group keys like ``llm.endpoint`` live
        in nested objects (``{"llm": {"endpoint": ...}}``)."""
        flat: dict = {}
        fields = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key in cls._NESTED:
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {key!r} must be an object")
                for sub, subval in value.items():
                    flat[f"{key}_{sub}"] = subval
            else:
                flat[key] = value
        unknown = sorted(set(flat) - fields)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key in ("element_filter",):
            if flat.get(key) is not None:
                flat[key] = tuple(flat[key])
        for key in ("score_range",):
            if flat.get(key) is not None:
                pair = flat[key]
                if len(pair) != 2:
                    raise ConfigError("score_range must be a [low, high] pair")
                flat[key] = (float(pair[0]), float(pair[1]))
        return cls(**flat)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        """Nested-form dict mirroring the config file format."""
        out: dict = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            head, _, tail = f.name.partition("_")
            if head in self._NESTED:
                out.setdefault(head, {})[tail] = value
            else:
                out[f.name] = value
        return out

    def validate(self, pool_size: int | None = None) -> None:
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {self.agent!r}")
        if min(self.rounds, self.batch_size, self.num_centers, self.runs) < 1:
            raise ConfigError("rounds, batch, centers, and runs must all be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.feedback not in (FEEDBACK_TRUE, FEEDBACK_RANDOMIZED):
            raise ConfigError("feedback mode must be 'true' or 'randomized'")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.hit_mode is not None and self.hit_mode not in HIT_MODES:
            raise ConfigError(f"unknown hit mode {self.hit_mode!r}")
        if self.domain is not None and self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.dataset_key is not None and self.dataset_key not in DATASET_DESCRIPTORS:
            raise ConfigError(f"unknown dataset key {self.dataset_key!r}")
        if self.agent in LLM_AGENT_KINDS:
            if self.descriptor_args()["func_desc"] is None:
                raise ConfigError(
                    f"agent {self.agent!r} needs dataset_key or explicit descriptors"
                )
        if pool_size is not None and self.rounds * self.batch_size > pool_size:
            warnings.warn(
                f"budget {self.rounds}x{self.batch_size} exceeds pool size "
                f"{pool_size}; later rounds will select fewer candidates",
                stacklevel=2,
            )

    def descriptor_args(self) -> dict:
        """Resolved prompt descriptors (registry entry or explicit strings)."""
        if self.dataset_key is not None:
            desc = DATASET_DESCRIPTORS[self.dataset_key]
            return {
                "domain": self.domain or desc.domain,
                "func_desc": self.func_desc or desc.func_desc,
                "score_desc": self.score_desc or desc.score_desc,
                "candidate_space_info": self.candidate_space_info
                or desc.candidate_space_info,
            }
        return {
            "domain": self.domain,
            "func_desc": self.func_desc,
            "score_desc": self.score_desc,
            "candidate_space_info": self.candidate_space_info,
        }

    def ingest_options(self) -> IngestOptions:
        return IngestOptions(
            metric=self.metric,
            expected_dim=self.expected_dim,
            hit_mode=self.hit_mode,
            percentile=self.percentile,
            element_filter=self.element_filter,
            score_range=self.score_range,
        )

    def load_pool(self) -> CandidatePool:
        if self.dataset is None or self.embeddings is None:
            raise ConfigError("config needs dataset and embeddings paths")
        return load_pool(self.dataset, self.embeddings, self.ingest_options())

    def make_backend(self) -> LlmBackend | None:
        """Fresh backend for one run (scripted call counters are per-run)."""
        if self.agent not in LLM_AGENT_KINDS:
            return None
        if self.llm_fixtures is not None:
            return ScriptedBackend.from_dir(self.llm_fixtures)
        if self.llm_endpoint is None:
            raise ConfigError(
                f"agent {self.agent!r} needs llm.fixtures or llm.endpoint"
            )
        return HttpBackend(self.llm_endpoint, self.llm_model or "")


@dataclass
class RunResult:
    """One run's trajectory: selections, hits, and cumulative hit counts."""

    seed: int
    selections: list[list[str]] = field(default_factory=list)
    hits: list[list[str]] = field(default_factory=list)
    cumulative_hits: list[int] = field(default_factory=list)
    complete: bool = True
    error: str | None = None
    trace_path: str | None = None

    @property
    def final_hits(self) -> int:
        return self.cumulative_hits[-1] if self.cumulative_hits else 0

    @property
    def total_selected(self) -> int:
        return sum(len(s) for s in self.selections)


class _TraceWriter:
    """JSON-lines event log for one run."""

    def __init__(self, path: str | Path | None):
        self.path = str(path) if path is not None else None
        self._fh = open(path, "w", encoding="utf-8") if path is not None else None

    def __call__(self, event: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(event, sort_keys=True) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _feedback_rng(seed: int, round_num: int) -> np.random.Generator:
    # Separate stream per (run, round): ablation shuffles never consume
    # draws from the agent's generator.
    return np.random.default_rng([seed, round_num])


def run_experiment(
    config: ExperimentConfig,
    seed: int,
    pool: CandidatePool | None = None,
    backend: LlmBackend | None = None,
    trace_path: str | Path | None = None,
) -> RunResult:
    """Execute one seeded run of the closed loop.

    Round 1 sees no feedback; round i > 1 sees every candidate selected in
    rounds 1..i-1 with its measurement and hit flag (randomized when the
    ablation is on). A permanent LLM-backend failure aborts the run and
    returns a partial result flagged incomplete.
    """
    if pool is None:
        pool = config.load_pool()
    config.validate(pool_size=len(pool))
    if backend is None:
        backend = config.make_backend()
    trace = _TraceWriter(trace_path)
    memory = CandidateMemory(pool)
    agent = make_agent(
        config.agent,
        pool,
        batch_size=config.batch_size,
        num_centers=config.num_centers,
        backend=backend,
        retry_policy=RetryPolicy(max_attempts=config.llm_max_attempts),
        sampling=SamplingParams(
            temperature=config.llm_temperature, max_tokens=config.llm_max_tokens
        ),
        num_rounds=config.rounds,
        linucb_ridge=config.linucb_ridge,
        linucb_alpha=config.linucb_alpha,
        linucb_standardize=config.linucb_standardize,
        gp_beta=config.gp_beta,
        gp_length_scale=config.gp_length_scale,
        gp_signal_var=config.gp_signal_var,
        gp_noise_var=config.gp_noise_var,
        gp_standardize=config.gp_standardize,
        gp_subsample=config.gp_subsample,
        bda_max_replacement_prompts=config.bda_retries,
        trace=trace,
        **config.descriptor_args(),
    )
    rng = np.random.default_rng(seed)
    result = RunResult(seed=seed, trace_path=trace.path)
    records: list[FeedbackRecord] = []
    frozen_randomized: list[FeedbackRecord] = []
    total_hits = 0
    try:
        for round_num in range(1, config.rounds + 1):
            if memory.num_unexplored == 0:
                logger.warning(
                    "pool exhausted before round %d; selecting nothing", round_num
                )
                result.selections.append([])
                result.hits.append([])
                result.cumulative_hits.append(total_hits)
                continue
            feedback: Feedback | None = None
            if round_num > 1 and records:
                if config.feedback == FEEDBACK_RANDOMIZED:
                    fb_rng = _feedback_rng(seed, round_num)
                    if config.randomize_fresh_each_round:
                        feedback = randomize_feedback(
                            Feedback(tuple(records)),
                            config.randomize_level1,
                            config.randomize_level2,
                            fb_rng,
                        )
                    else:
                        # Randomize each round's records once, on arrival.
                        tail = records[len(frozen_randomized) :]
                        shuffled = randomize_feedback(
                            Feedback(tuple(tail)),
                            config.randomize_level1,
                            config.randomize_level2,
                            fb_rng,
                        )
                        frozen_randomized.extend(shuffled.records)
                        feedback = Feedback(tuple(frozen_randomized))
                else:
                    feedback = Feedback(tuple(records))
            try:
                names = agent.select(round_num, memory, feedback, rng)
            except BackendError as exc:
                logger.error("run aborted in round %d: %s", round_num, exc)
                result.complete = False
                result.error = str(exc)
                break
            round_hits = [n for n in names if pool.is_hit(n)]
            total_hits += len(round_hits)
            records.extend(
                FeedbackRecord(n, pool.score_of(n), pool.is_hit(n)) for n in names
            )
            result.selections.append(names)
            result.hits.append(round_hits)
            result.cumulative_hits.append(total_hits)
            trace(
                {
                    "event": "round_complete",
                    "round": round_num,
                    "selected": len(names),
                    "hits": len(round_hits),
                    "cumulative_hits": total_hits,
                }
            )
    finally:
        trace.close()
    return result


def run_many(
    config: ExperimentConfig,
    pool: CandidatePool | None = None,
    backend_factory: Callable[[int], LlmBackend] | None = None,
) -> list[RunResult]:
    """Execute ``config.runs`` independent runs with seeds base+0..base+R-1."""
    if pool is None:
        pool = config.load_pool()
    out_dir = Path(config.out) if config.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for run_index in range(config.runs):
        seed = config.seed + run_index
        backend = backend_factory(run_index) if backend_factory else config.make_backend()
        trace_path = (
            out_dir / f"trace-run{run_index}.jsonl" if out_dir is not None else None
        )
        results.append(
            run_experiment(config, seed, pool=pool, backend=backend, trace_path=trace_path)
        )
    return results


@dataclass(frozen=True)
class RunSummary:
    """Mean/std of final cumulative hits plus the per-round mean trajectory."""

    num_runs: int
    final_hits: tuple[int, ...]
    mean_final_hits: float
    std_final_hits: float
    mean_trajectory: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "num_runs": self.num_runs,
            "final_hits": list(self.final_hits),
            "mean_final_hits": self.mean_final_hits,
            "std_final_hits": self.std_final_hits,
            "mean_trajectory": list(self.mean_trajectory),
        }


def aggregate_runs(
    results: Iterable[RunResult], include_incomplete: bool = False
) -> RunSummary:
    """Average the final and per-round cumulative hits across runs.

    Incomplete (aborted) runs are excluded unless asked for; the standard
    deviation is the population one, matching averaging over a fixed run set.
    """
    used = [r for r in results if r.complete or include_incomplete]
    if not used:
        raise ValueError("no completed runs to aggregate")
    lengths = {len(r.cumulative_hits) for r in used}
    if len(lengths) != 1:
        raise ValueError(f"mixed run shapes (rounds: {sorted(lengths)})")
    finals = [r.final_hits for r in used]
    trajectory = np.array([r.cumulative_hits for r in used], dtype=np.float64)
    return RunSummary(
        num_runs=len(used),
        final_hits=tuple(finals),
        mean_final_hits=float(np.mean(finals)),
        std_final_hits=float(np.std(finals)),
        mean_trajectory=tuple(float(v) for v in trajectory.mean(axis=0)),
    )


def write_report(
    summary: RunSummary,
    results: list[RunResult],
    out_dir: str | Path,
    *,
    agent: str,
    dataset: str,
    config: ExperimentConfig | None = None,
) -> tuple[Path, Path]:
    """Write runs.csv (one row per run) and summary.json.

    Output bytes are a pure function of the inputs: rerunning an identical
    experiment overwrites both files with identical content.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rounds = max((len(r.cumulative_hits) for r in results), default=0)
    csv_path = out_dir / RUNS_CSV
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["agent", "dataset", "run", "seed", "complete", "final_hits"]
            + [f"hits_r{i}" for i in range(1, rounds + 1)]
        )
        for run_index, r in enumerate(results):
            cells = [agent, dataset, run_index, r.seed, int(r.complete), r.final_hits]
            cells += list(r.cumulative_hits) + [""] * (rounds - len(r.cumulative_hits))
            writer.writerow(cells)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "agent": agent,
        "dataset": dataset,
        "summary": summary.to_dict(),
    }
    if config is not None:
        doc["config"] = config.to_dict()
    json_path = out_dir / SUMMARY_JSON
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_runs_csv(path: str | Path) -> list[RunResult]:
    """Rebuild per-run trajectories from a runs.csv (for re-aggregation)."""
    results: list[RunResult] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "final_hits" not in reader.fieldnames:
            raise ConfigError(f"{path}: not a runs.csv report")
        round_cols = [c for c in reader.fieldnames if c.startswith("hits_r")]
        round_cols.sort(key=lambda c: int(c[len("hits_r") :]))
        for row in reader:
            cumulative = [int(row[c]) for c in round_cols if row[c] != ""]
            results.append(
                RunResult(
                    seed=int(row["seed"]),
                    cumulative_hits=cumulative,
                    complete=row["complete"] == "1",
                )
            )
    return results
