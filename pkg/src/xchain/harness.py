"""Scenario files, seeded batch execution and run records.

Scenario files are JSON documents validated against the bundled schema
before anything runs. A run record pairs a scenario digest and seed with
the serialized outcome; records of one batch are produced in seed order no
matter how many worker processes execute them.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import jsonschema

from .analysis import FeeSchedule, SecurityParams
from .chain_sim import ChainParams
from .encoding import sha256_hex
from .protocols import AdversaryPlan, RunOutcome, Scenario, ScenarioInvalid, execute
from .swap_graph import Behavior, GraphError, SwapGraph

log = logging.getLogger(__name__)

LOG_LEVELS = {"off": logging.CRITICAL + 10, "info": logging.INFO, "trace": logging.DEBUG}


class ScenarioFileError(ValueError):
    """Schema or semantic failure while loading a scenario file."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def configure_logging(env: Mapping[str, str] | None = None) -> None:
    value = (env if env is not None else os.environ).get("XCHAIN_LOG", "off").lower()
    level = LOG_LEVELS.get(value, logging.CRITICAL + 10)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("xchain").setLevel(level)


def _schema(name: str) -> dict:
    return json.loads(resources.files("xchain.schemas").joinpath(name).read_text())


def scenario_schema() -> dict:
    return _schema("scenario.schema.json")


def run_record_schema() -> dict:
    return _schema("run_record.schema.json")


def bundled_scenarios() -> list[str]:
    return sorted(p.name for p in resources.files("xchain.scenarios").iterdir() if p.name.endswith(".json"))


def read_scenario_text(ref: str | os.PathLike) -> str:
    """Read a scenario from a path, falling back to a bundled file of that name."""
    path = Path(ref)
    if path.exists():
        return path.read_text()
    name = path.name if path.name.endswith(".json") else path.name + ".json"
    bundled = resources.files("xchain.scenarios").joinpath(name)
    if bundled.is_file():
        return bundled.read_text()
    raise FileNotFoundError(f"no scenario file {str(ref)!r} (bundled: {', '.join(bundled_scenarios())})")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def scenario_digest(raw: Mapping) -> str:
    return sha256_hex(canonical_json(raw).encode())


def _rational(value) -> Fraction:
    return Fraction(value)  # ints and "p/q" strings alike


def _error_key(err: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        if extra:
            return "/".join(filter(None, [path, extra[0]]))
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            return "/".join(filter(None, [path, missing[0]]))
    return path or "<root>"


def validate_scenario_obj(raw: Any) -> None:
    validator = jsonschema.Draft202012Validator(scenario_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        key = _error_key(err)
        raise ScenarioFileError(f"scenario key {key!r}: {err.message}", key)


def _chain(obj: Mapping, d: int) -> ChainParams:
    fp = obj.get("fork_probability", 0)
    return ChainParams(
        chain_id=obj["chain_id"],
        block_interval=obj.get("block_interval", 1),
        fork_probability=float(Fraction(fp)),
        pow_difficulty=obj.get("pow_difficulty", 8),
        default_confirm_depth=obj.get("default_confirm_depth", d),
        tps=_rational(obj.get("tps", 0)),
        unit=obj.get("unit", "coin"),
    )


def _range(value):
    return value if isinstance(value, int) else (value[0], value[1])


def seeds_of(raw: Mapping) -> tuple[int, ...]:
    if "seeds" in raw:
        return tuple(raw["seeds"])
    if "seed_range" in raw:
        lo, hi = raw["seed_range"]
        if hi <= lo:
            raise ScenarioFileError("seed_range must be [lo, hi) with hi > lo", "seed_range")
        return tuple(range(lo, hi))
    return (0,)


def scenario_from_obj(raw: Mapping) -> Scenario:
    """Validate ``raw`` and build the runnable scenario."""
    validate_scenario_obj(raw)
    d = raw["d"]
    try:
        graph = SwapGraph.from_json(raw["graph"])
        chains = tuple(_chain(c, d) for c in raw["chains"])
        by_id = {c.chain_id: c for c in chains}
        wc = raw.get("witness_chain")
        if isinstance(wc, str):
            if wc not in by_id:
                raise ScenarioFileError(f"witness_chain {wc!r} is not one of the listed chains", "witness_chain")
            witness = by_id[wc]
        else:
            witness = _chain(wc, d) if wc is not None else None
        fees = raw.get("fees", {})
        security = raw.get("security")
        faults = {}
        for f in raw.get("faults", []):
            if f["participant"] in faults:
                raise ScenarioFileError(f"participant {f['participant']!r} has two faults", "faults")
            faults[f["participant"]] = Behavior.parse(f["behavior"])
        adv = raw.get("adversary")
        adversary = None
        if adv is not None:
            adversary = AdversaryPlan(adv["chain"], _range(adv["after_confirmations"]), _range(adv["branch_len"]),
                                      adv.get("trigger", "decision"), adv.get("tx", "authorize_refund"))
        return Scenario(
            graph=graph,
            protocol=raw["protocol"],
            chains=chains,
            d=d,
            delta=raw["delta_ticks"],
            witness_chain=witness,
            fees=FeeSchedule(_rational(fees.get("f_d", 1)), _rational(fees.get("f_fc", 1))),
            security=None if security is None else SecurityParams(
                _rational(security["V_a"]), _rational(security["C_h"]), _rational(security["d_h"])),
            faults=faults,
            adversary=adversary,
            seeds=seeds_of(raw),
            horizon_ticks=raw.get("horizon_ticks"),
            patience=raw.get("patience", 2),
            name=raw.get("name", ""),
        )
    except ScenarioFileError:
        raise
    except (ScenarioInvalid, GraphError, ValueError) as exc:
        raise ScenarioFileError(f"invalid scenario: {exc}") from exc


@dataclass
class LoadedScenario:
    raw: dict
    scenario: Scenario
    digest: str
    source: str = ""

    @property
    def name(self) -> str:
        return self.scenario.name or Path(self.source).stem


def load_scenario(ref: str | os.PathLike) -> LoadedScenario:
    text = read_scenario_text(ref)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"not valid JSON: {exc}") from exc
    return LoadedScenario(raw, scenario_from_obj(raw), scenario_digest(raw), str(ref))


def load_scenario_obj(raw: Mapping, source: str = "<inline>") -> LoadedScenario:
    raw = json.loads(json.dumps(raw))  # detach and normalize tuples to lists
    return LoadedScenario(raw, scenario_from_obj(raw), scenario_digest(raw), source)


@dataclass
class RunRecord:
    scenario: str
    seed: int
    outcome: RunOutcome
    name: str = ""
    wall_time_ms: int | None = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"scenario": self.scenario, "seed": self.seed, "outcome": self.outcome.to_json()}
        if self.name:
            out["name"] = self.name
        if self.wall_time_ms is not None:
            out["wall_time_ms"] = self.wall_time_ms
        return out

    def line(self) -> str:
        return canonical_json(self.to_json())


def validate_record(obj: Mapping) -> None:
    jsonschema.Draft202012Validator(run_record_schema()).validate(obj)


def _run_one(args) -> tuple[int, RunOutcome, int]:
    scenario, seed = args
    t0 = time.perf_counter()
    _, outcome = execute(scenario, seed)
    return seed, outcome, int((time.perf_counter() - t0) * 1000)


def run_seeds(loaded: LoadedScenario, seeds: Iterable[int] | None = None, jobs: int = 1,
              timing: bool = False) -> list[RunRecord]:
    """Execute every seed; results come back in the order the seeds were given."""
    seeds = list(loaded.scenario.seeds if seeds is None else seeds)
    work = [(loaded.scenario, s) for s in seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_run_one(w) for w in work]
    return [
        RunRecord(loaded.digest, seed, outcome, loaded.scenario.name, ms if timing else None)
        for seed, outcome, ms in results
    ]


@dataclass
class BatchSummary:
    runs: int = 0
    verdicts: dict[str, int] = field(default_factory=dict)

    def add(self, outcome: RunOutcome) -> None:
        self.runs += 1
        self.verdicts[outcome.verdict.kind] = self.verdicts.get(outcome.verdict.kind, 0) + 1

    def exit_code(self, allow_stuck: bool = False) -> int:
        if self.verdicts.get("AtomicityViolated"):
            return 1
        if self.verdicts.get("Stuck") and not allow_stuck:
            return 1
        return 0
