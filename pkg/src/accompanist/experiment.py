"""Blind pairwise listening experiment: pairing, blinding, tallies, statistics.

Each trial pairs one fine-tuned-model sample with one baseline sample for the
same melody; the slot holding the fine-tuned sample is a seeded coin flip.
Responses are append-only; aggregation replays them. Preference significance
uses an exact two-sided binomial test against 0.5.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

MELODY_TYPES = ("price", "popular")
MODEL_TAGS = ("fp", "baseline")


class ProtocolError(ValueError):
    """Sample inventory that cannot form the pairing protocol."""


class DuplicateResponseError(ValueError):
    """A second response for a trial that already has one."""


class UnknownTrialError(KeyError):
    """Response for a trial id that does not exist."""


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    melody_id: str
    melody_type: str  # price | popular
    model_tag: str  # fp | baseline
    generation_seed: int
    midi_ref: str  # opaque reference to the rendered accompaniment

    def __post_init__(self):
        if self.melody_type not in MELODY_TYPES:
            raise ValueError(f"melody_type must be one of {MELODY_TYPES}")
        if self.model_tag not in MODEL_TAGS:
            raise ValueError(f"model_tag must be one of {MODEL_TAGS}")


@dataclass(frozen=True)
class Trial:
    trial_id: str
    melody_id: str
    slot_a: str  # sample id
    slot_b: str
    fp_in_slot_a: bool  # blinding bit, never exposed on the response path
    evaluator_id: str


@dataclass(frozen=True)
class Response:
    trial_id: str
    choice: str  # A | B | missing
    hard_errors_a: int = 0
    soft_errors_a: int = 0
    hard_errors_b: int = 0
    soft_errors_b: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        if self.choice not in ("A", "B", "missing"):
            raise ValueError(f"choice must be A, B, or missing, not {self.choice!r}")
        for name in ("hard_errors_a", "soft_errors_a", "hard_errors_b", "soft_errors_b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class TypeResult:
    melody_type: str
    n: int  # non-missing responses
    fp_wins: int
    missing: int
    p_value: float | None  # None when n == 0


@dataclass(frozen=True)
class ModelErrorTally:
    model_tag: str
    hard_errors: int
    soft_errors: int
    error_free_count: int
    total_samples: int
    percent_error_free: float
    no_responses: bool = False


@dataclass(frozen=True)
class ExperimentResult:
    per_type: tuple[TypeResult, ...]
    errors: tuple[ModelErrorTally, ...]
    total_trials: int
    total_responses: int


def binomial_test(n: int, k: int) -> float:
    """Exact two-sided binomial test of k successes in n trials against 0.5.

    p = min(1, 2 * min(P(X <= k), P(X >= k))), evaluated by exact summation of
    log-space pmf terms.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= k <= n:
        raise ValueError(f"k {k} outside 0..{n}")
    log_half_n = n * math.log(0.5)

    def log_pmf(i: int) -> float:
        # grouped so pmf(i) and pmf(n - i) are bit-identical, which makes the
        # two-sided test exactly symmetric in k <-> n - k
        return math.lgamma(n + 1) - (math.lgamma(i + 1) + math.lgamma(n - i + 1)) + log_half_n

    lower = math.fsum(math.exp(log_pmf(i)) for i in range(0, k + 1))
    upper = math.fsum(math.exp(log_pmf(i)) for i in range(k, n + 1))
    return min(1.0, 2.0 * min(lower, upper))


def build_pairs(
    samples: Sequence[SampleRecord],
    evaluators: Sequence[str],
    seed: int,
) -> list[Trial]:
    """Per evaluator and melody, a seeded random perfect matching of fp vs baseline.

    Every melody must have equally many samples from both models. Evaluators
    get independently derived seeds, so their matchings (and slot coin flips)
    differ.
    """
    by_melody: dict[str, dict[str, list[SampleRecord]]] = {}
    for sample in samples:
        by_melody.setdefault(sample.melody_id, {"fp": [], "baseline": []})[
            sample.model_tag
        ].append(sample)
    for melody_id, groups in by_melody.items():
        if len(groups["fp"]) != len(groups["baseline"]):
            raise ProtocolError(
                f"melody {melody_id}: {len(groups['fp'])} fp vs "
                f"{len(groups['baseline'])} baseline samples"
            )
        if not groups["fp"]:
            raise ProtocolError(f"melody {melody_id} has no samples")

    trials: list[Trial] = []
    for evaluator in sorted(evaluators):
        derived = hashlib.sha256(f"{seed}:{evaluator}".encode()).digest()
        rng = random.Random(int.from_bytes(derived[:8], "big"))  # per-evaluator seed
        for melody_id in sorted(by_melody):
            groups = by_melody[melody_id]
            fp_samples = sorted(groups["fp"], key=lambda s: s.sample_id)
            baseline_samples = sorted(groups["baseline"], key=lambda s: s.sample_id)
            matching = list(range(len(baseline_samples)))
            rng.shuffle(matching)
            for pair_index, (fp_sample, baseline_index) in enumerate(zip(fp_samples, matching)):
                baseline_sample = baseline_samples[baseline_index]
                fp_in_slot_a = rng.random() < 0.5
                slot_a, slot_b = (
                    (fp_sample.sample_id, baseline_sample.sample_id)
                    if fp_in_slot_a
                    else (baseline_sample.sample_id, fp_sample.sample_id)
                )
                trials.append(
                    Trial(
                        trial_id=f"{evaluator}:{melody_id}:{pair_index}",
                        melody_id=melody_id,
                        slot_a=slot_a,
                        slot_b=slot_b,
                        fp_in_slot_a=fp_in_slot_a,
                        evaluator_id=evaluator,
                    )
                )
    return trials


class ExperimentStore:
    """Samples, trials, and append-only responses for one experiment."""

    def __init__(
        self,
        samples: Iterable[SampleRecord] = (),
        trials: Iterable[Trial] = (),
    ):
        self.samples: dict[str, SampleRecord] = {}
        self.trials: dict[str, Trial] = {}
        self.responses: dict[str, Response] = {}
        for sample in samples:
            self.add_sample(sample)
        for trial in trials:
            self.add_trial(trial)

    def add_sample(self, sample: SampleRecord) -> None:
        if sample.sample_id in self.samples:
            raise ValueError(f"duplicate sample id {sample.sample_id}")
        self.samples[sample.sample_id] = sample

    def add_trial(self, trial: Trial) -> None:
        if trial.trial_id in self.trials:
            raise ValueError(f"duplicate trial id {trial.trial_id}")
        for slot in (trial.slot_a, trial.slot_b):
            if slot not in self.samples:
                raise KeyError(f"trial {trial.trial_id} references unknown sample {slot}")
        self.trials[trial.trial_id] = trial

    def record_response(self, response: Response) -> None:
        if response.trial_id not in self.trials:
            raise UnknownTrialError(response.trial_id)
        if response.trial_id in self.responses:
            raise DuplicateResponseError(response.trial_id)
        self.responses[response.trial_id] = response

    def trials_for(self, evaluator_id: str) -> list[Trial]:
        return [t for t in self.trials.values() if t.evaluator_id == evaluator_id]

    # --- raw dump: one self-describing JSON object per line ---

    def to_jsonl(self) -> str:
        lines = []
        for sample in sorted(self.samples.values(), key=lambda s: s.sample_id):
            lines.append(json.dumps({"kind": "sample", **asdict(sample)}, sort_keys=True))
        for trial in sorted(self.trials.values(), key=lambda t: t.trial_id):
            lines.append(json.dumps({"kind": "trial", **asdict(trial)}, sort_keys=True))
        for response in sorted(self.responses.values(), key=lambda r: r.trial_id):
            lines.append(json.dumps({"kind": "response", **asdict(response)}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "ExperimentStore":
        store = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            kind = record.pop("kind")
            if kind == "sample":
                store.add_sample(SampleRecord(**record))
            elif kind == "trial":
                store.add_trial(Trial(**record))
            elif kind == "response":
                store.record_response(Response(**record))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        return store


def tally_errors(
    responses: Iterable[Response],
    store: ExperimentStore,
) -> tuple[ModelErrorTally, ...]:
    """Per model: total hard/soft errors and the share of error-free samples.

    A sample is error-free iff every listener who heard it reported zero hard
    and zero soft errors for it; unheard samples never count as error-free.
    """
    hard = {tag: 0 for tag in MODEL_TAGS}
    soft = {tag: 0 for tag in MODEL_TAGS}
    clean: dict[str, bool] = {}  # sample id -> all listeners reported 0/0
    any_responses = False
    for response in responses:
        any_responses = True
        trial = store.trials[response.trial_id]
        for sample_id, h, s in (
            (trial.slot_a, response.hard_errors_a, response.soft_errors_a),
            (trial.slot_b, response.hard_errors_b, response.soft_errors_b),
        ):
            tag = store.samples[sample_id].model_tag
            hard[tag] += h
            soft[tag] += s
            clean[sample_id] = clean.get(sample_id, True) and h == 0 and s == 0

    tallies = []
    for tag in MODEL_TAGS:
        total = sum(1 for s in store.samples.values() if s.model_tag == tag)
        error_free = sum(
            1
            for sample_id, is_clean in clean.items()
            if is_clean and store.samples[sample_id].model_tag == tag
        )
        percent = 100.0 * error_free / total if total else 0.0
        tallies.append(
            ModelErrorTally(
                model_tag=tag,
                hard_errors=hard[tag],
                soft_errors=soft[tag],
                error_free_count=error_free,
                total_samples=total,
                percent_error_free=percent,
                no_responses=not any_responses,
            )
        )
    return tuple(tallies)


def export_results(store: ExperimentStore) -> ExperimentResult:
    """Aggregate preferences and error tallies; deterministic replay of the store."""
    per_type = []
    for melody_type in MELODY_TYPES:
        n = 0
        wins = 0
        missing = 0
        for trial in store.trials.values():
            sample = store.samples[trial.slot_a]
            if sample.melody_type != melody_type:
                continue
            response = store.responses.get(trial.trial_id)
            if response is None:
                continue
            if response.choice == "missing":
                missing += 1
                continue
            n += 1
            chose_a = response.choice == "A"
            if chose_a == trial.fp_in_slot_a:
                wins += 1
        p_value = binomial_test(n, wins) if n > 0 else None
        per_type.append(TypeResult(melody_type, n, wins, missing, p_value))

    errors = tally_errors(store.responses.values(), store)
    return ExperimentResult(
        per_type=tuple(per_type),
        errors=errors,
        total_trials=len(store.trials),
        total_responses=len(store.responses),
    )


def results_csv(result: ExperimentResult) -> str:
    """Preference and error tables as comma-separated values."""
    lines = ["melody_type,n,fp_wins,missing,p_value"]
    for row in result.per_type:
        p = "" if row.p_value is None else f"{row.p_value:.6g}"
        lines.append(f"{row.melody_type},{row.n},{row.fp_wins},{row.missing},{p}")
    lines.append("")
    lines.append("model,hard_errors,soft_errors,error_free,total,percent_error_free")
    for tally in result.errors:
        lines.append(
            f"{tally.model_tag},{tally.hard_errors},{tally.soft_errors},"
            f"{tally.error_free_count},{tally.total_samples},{tally.percent_error_free:.2f}"
        )
    return "\n".join(lines) + "\n"
