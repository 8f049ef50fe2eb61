"""Shared synthetic experiment data with known aggregate results."""

from fractions import Fraction
from math import comb

from accompanist.experiment import (
    ExperimentStore,
    Response,
    SampleRecord,
    build_pairs,
)


def exact_binomial_oracle(n: int, k: int) -> float:
    """Two-sided doubling-rule p-value in exact rational arithmetic."""
    lower = Fraction(sum(comb(n, i) for i in range(0, k + 1)), 2**n)
    upper = Fraction(sum(comb(n, i) for i in range(k, n + 1)), 2**n)
    return float(min(Fraction(1), 2 * min(lower, upper)))


def make_samples(n_melodies_per_type: int = 10, per_model: int = 7) -> list[SampleRecord]:
    samples = []
    for melody_type in ("price", "popular"):
        for m in range(n_melodies_per_type):
            melody_id = f"{melody_type}-{m:02d}"
            for tag in ("fp", "baseline"):
                for g in range(per_model):
                    sample_id = f"{melody_id}:{tag}:{g}"
                    samples.append(
                        SampleRecord(
                            sample_id=sample_id,
                            melody_id=melody_id,
                            melody_type=melody_type,
                            model_tag=tag,
                            generation_seed=g,
                            midi_ref=f"midi/{sample_id}.mid",
                        )
                    )
    return samples


def study_shaped_store(seed: int = 11) -> ExperimentStore:
    """A full 280-trial store with fixed, hand-checkable aggregates.

    Wins: 82/137 for price melodies, 99/137 for popular, 3 missing per type.
    Errors: fp 67 hard / 68 soft with 64 of 140 samples error-free; baseline
    47 hard / 57 soft with 80 of 140 error-free.
    """
    samples = make_samples()
    trials = build_pairs(samples, ["listener-1", "listener-2"], seed=seed)
    store = ExperimentStore(samples, trials)

    # per-sample error plan, attached to listener-1's responses only
    def plan(tag: str, dirty: int, n_hard: int, n_soft: int) -> dict[str, tuple[int, int]]:
        ids = sorted(s.sample_id for s in samples if s.model_tag == tag)
        assert n_hard <= dirty and n_soft <= dirty and dirty <= len(ids)
        table = {}
        for index, sample_id in enumerate(ids[:dirty]):
            hard = 1 if index < n_hard else 0
            soft = 1 if index >= dirty - n_soft else 0
            table[sample_id] = (hard, soft)
        return table

    errors = {**plan("fp", dirty=76, n_hard=67, n_soft=68),
              **plan("baseline", dirty=60, n_hard=47, n_soft=57)}

    wins_wanted = {"price": 82, "popular": 99}
    missing_wanted = {"price": 3, "popular": 3}
    ordered = sorted(store.trials.values(), key=lambda t: t.trial_id)
    for trial in ordered:
        melody_type = store.samples[trial.slot_a].melody_type
        hard_a, soft_a = errors.get(trial.slot_a, (0, 0)) if trial.evaluator_id == "listener-1" else (0, 0)
        hard_b, soft_b = errors.get(trial.slot_b, (0, 0)) if trial.evaluator_id == "listener-1" else (0, 0)
        if trial.evaluator_id == "listener-2" and missing_wanted[melody_type] > 0:
            missing_wanted[melody_type] -= 1
            choice = "missing"
        elif wins_wanted[melody_type] > 0:
            wins_wanted[melody_type] -= 1
            choice = "A" if trial.fp_in_slot_a else "B"
        else:
            choice = "B" if trial.fp_in_slot_a else "A"
        store.record_response(
            Response(
                trial_id=trial.trial_id,
                choice=choice,
                hard_errors_a=hard_a,
                soft_errors_a=soft_a,
                hard_errors_b=hard_b,
                soft_errors_b=soft_b,
                timestamp=float(len(store.responses)),
            )
        )
    return store
