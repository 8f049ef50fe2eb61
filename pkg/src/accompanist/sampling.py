"""Constrained autoregressive generation with nucleus sampling.

Completions are built under the completion grammar, so every emitted sequence
decodes: sentinels appear in order, triples stay complete and sorted, and
positions never leave their measure. A separate rhythmic temperature applies
to position and duration tokens; pitch and structural tokens use the base
temperature.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from random import Random
from typing import Mapping, Sequence

import numpy as np

from .codec import (
    MAX_DURATION_TICKS,
    VOCAB,
    MaskSpec,
    PromptStructure,
    TokenSequence,
    Vocabulary,
    decode,
    encode_prompt,
    make_accompaniment_prompt,
    parse_prompt,
)
from .model import Checkpoint, SeqModel
from .score import Note, Score, Track, slice_measures

RHYTHMIC_CLASSES = ("pos", "dur")


@dataclass(frozen=True)
class SamplerConfig:
    nucleus_p: float = 0.95
    temperature: float = 1.0
    rhythmic_temperature: float = 1.5
    seed: int = 0
    max_tokens: int = 4096

    def __post_init__(self):
        if not 0 < self.nucleus_p <= 1:
            raise ValueError(f"nucleus_p {self.nucleus_p} outside (0, 1]")
        if self.temperature <= 0 or self.rhythmic_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class StepTrace:
    step: int
    token_class: str  # sentinel | pos | pitch | dur | eos
    applied_temperature: float
    support_size: int
    token: int


def traces_to_csv(traces: Sequence[StepTrace]) -> str:
    lines = ["step,class,temperature,support_size,token"]
    lines += [
        f"{t.step},{t.token_class},{t.applied_temperature},{t.support_size},{t.token}"
        for t in traces
    ]
    return "\n".join(lines) + "\n"


class CompletionState:
    """Grammar cursor over a partial completion for one prompt."""

    def __init__(self, structure: PromptStructure, vocab: Vocabulary = VOCAB):
        self.vocab = vocab
        self.measure_lengths = structure.sentinel_measure_lengths()
        self.n_sentinels = len(self.measure_lengths)
        self.sentinel = -1  # index of the open cell
        self.phase = "start"  # start | cell | want_pitch | want_dur
        self.last_pos: int | None = None
        self.last_pitch: int | None = None
        self.pending_pos: int | None = None
        self.done = False

    def allowed(self) -> tuple[list[int], list[str]]:
        """Legal next tokens and their classes, aligned."""
        v = self.vocab
        if self.done:
            raise RuntimeError("completion already closed")
        if self.phase == "want_pitch":
            lo = 0
            if self.pending_pos == self.last_pos and self.last_pitch is not None:
                lo = self.last_pitch + 1  # keep (pos, pitch) strictly increasing
            ids = [v.pitch(p) for p in range(lo, 128)]
            return ids, ["pitch"] * len(ids)
        if self.phase == "want_dur":
            ids = [v.dur(d) for d in range(1, MAX_DURATION_TICKS + 1)]
            return ids, ["dur"] * len(ids)
        if self.phase == "start":
            if self.n_sentinels == 0:
                return [v.eos], ["eos"]
            return [v.mask(0)], ["sentinel"]
        # phase == "cell": open a triple, move to the next sentinel, or finish
        length = self.measure_lengths[self.sentinel]
        start_pos = 0
        if self.last_pos is not None:
            # at the same position, pitches are exhausted above last_pitch
            start_pos = self.last_pos if self.last_pitch < 127 else self.last_pos + 1
        ids = [v.pos(t) for t in range(start_pos, length)]
        classes = ["pos"] * len(ids)
        if self.sentinel + 1 < self.n_sentinels:
            ids.append(v.mask(self.sentinel + 1))
            classes.append("sentinel")
        else:
            ids.append(v.eos)
            classes.append("eos")
        return ids, classes

    def advance(self, token: int) -> None:
        v = self.vocab
        cls = v.token_class(token)
        if cls == "mask":
            self.sentinel = v.value(token)
            self.phase = "cell"
            self.last_pos = None
            self.last_pitch = None
        elif cls == "pos":
            self.pending_pos = v.value(token)
            self.phase = "want_pitch"
        elif cls == "pitch":
            self.last_pos = self.pending_pos
            self.last_pitch = v.value(token)
            self.phase = "want_dur"
        elif cls == "dur":
            self.phase = "cell"
        elif cls == "eos":
            self.done = True
        else:
            raise ValueError(f"token class {cls} cannot appear in a completion")


def classify_next_token(
    partial: Sequence[int],
    structure: PromptStructure,
    vocab: Vocabulary = VOCAB,
) -> tuple[list[int], list[str]]:
    """Replay a partial completion and return the legal next tokens."""
    state = CompletionState(structure, vocab)
    for token in partial:
        state.advance(token)
    return state.allowed()


def step_distribution(
    logits: np.ndarray,
    allowed_ids: Sequence[int],
    classes: Sequence[str],
    config: SamplerConfig,
) -> tuple[np.ndarray, np.ndarray, int, bool]:
    """Per-class tempered softmax over the legal set, then the nucleus filter.

    Returns (ids sorted by descending probability, renormalized probabilities
    over the nucleus support, support size, fallback flag). The fallback flag
    is set when no legal token has finite mass and the distribution degrades
    to uniform over the legal set.
    """
    ids = np.asarray(allowed_ids, dtype=np.int64)
    temps = np.array(
        [config.rhythmic_temperature if c in RHYTHMIC_CLASSES else config.temperature
         for c in classes],
        dtype=np.float64,
    )
    scaled = logits[ids].astype(np.float64) / temps
    finite = np.isfinite(scaled)
    if not finite.any():
        return ids, np.full(len(ids), 1.0 / len(ids)), len(ids), True
    scaled = np.where(finite, scaled, -np.inf)
    scaled -= scaled.max()
    weights = np.exp(scaled)
    probs = weights / weights.sum()
    order = np.lexsort((ids, -probs))
    sorted_probs = probs[order]
    cumulative = np.cumsum(sorted_probs)
    cut = int(np.searchsorted(cumulative, config.nucleus_p - 1e-12)) + 1
    cut = min(cut, len(ids))
    support_ids = ids[order[:cut]]
    support_probs = sorted_probs[:cut] / sorted_probs[:cut].sum()
    return support_ids, support_probs, cut, False


def sample_step(
    logits: np.ndarray,
    allowed_ids: Sequence[int],
    classes: Sequence[str],
    config: SamplerConfig,
    rng: Random,
    step_index: int = 0,
    vocab: Vocabulary = VOCAB,
) -> tuple[int, StepTrace, bool]:
    """Sample one token from the legal set; returns (token, trace, fallback)."""
    support_ids, support_probs, support_size, fallback = step_distribution(
        logits, allowed_ids, classes, config
    )
    u = rng.random()
    cumulative = 0.0
    chosen = int(support_ids[-1])
    for token, p in zip(support_ids, support_probs):
        cumulative += p
        if u < cumulative:
            chosen = int(token)
            break
    cls = vocab.token_class(chosen)
    trace_class = "sentinel" if cls == "mask" else cls
    applied = config.rhythmic_temperature if trace_class in RHYTHMIC_CLASSES else config.temperature
    return chosen, StepTrace(step_index, trace_class, applied, support_size, chosen), fallback


@dataclass
class GenerationResult:
    completion: TokenSequence
    score: Score
    traces: list[StepTrace]
    seed: int
    truncated: bool = False
    warnings: tuple[str, ...] = ()


def _as_model(model_or_checkpoint) -> SeqModel:
    if isinstance(model_or_checkpoint, SeqModel):
        return model_or_checkpoint
    if isinstance(model_or_checkpoint, Checkpoint):
        return SeqModel(model_or_checkpoint)
    raise TypeError(f"expected SeqModel or Checkpoint, got {type(model_or_checkpoint)!r}")


def generate(
    model_or_checkpoint,
    prompt: TokenSequence,
    mask_spec: MaskSpec | None,
    config: SamplerConfig,
    vocab: Vocabulary = VOCAB,
) -> GenerationResult:
    """Generate a grammar-valid completion for `prompt` and decode it.

    Stops at [eos]; at the token budget the completion is force-closed (any
    dangling partial triple dropped, [eos] appended) and flagged truncated.
    """
    model = _as_model(model_or_checkpoint)
    structure = parse_prompt(prompt, vocab)
    if mask_spec is not None and len(mask_spec) != len(structure.sentinel_cells):
        raise ValueError(
            f"mask spec lists {len(mask_spec)} cells but the prompt has "
            f"{len(structure.sentinel_cells)} sentinels"
        )
    state = CompletionState(structure, vocab)
    rng = Random(config.seed)
    cursor = model.begin(prompt.ids)

    tokens: list[int] = []
    traces: list[StepTrace] = []
    warnings: list[str] = []
    truncated = False
    previous = vocab.pad
    while True:
        if len(tokens) >= config.max_tokens - 1:
            truncated = True
            while tokens and vocab.token_class(tokens[-1]) in ("pos", "pitch"):
                tokens.pop()
            tokens.append(vocab.eos)
            break
        logits = cursor.step(previous)
        allowed_ids, classes = state.allowed()
        token, trace, fallback = sample_step(
            logits, allowed_ids, classes, config, rng, step_index=len(tokens), vocab=vocab
        )
        if fallback:
            warnings.append(f"step {len(tokens)}: no finite logits over the legal set, sampled uniformly")
        tokens.append(token)
        traces.append(trace)
        state.advance(token)
        previous = token
        if state.done:
            break

    completion = TokenSequence(tuple(tokens), "generated")
    merged = decode(prompt, completion, vocab)
    return GenerationResult(
        completion=completion,
        score=merged,
        traces=traces,
        seed=config.seed,
        truncated=truncated,
        warnings=tuple(warnings) + merged.warnings,
    )


def generate_many(
    model_or_checkpoint,
    prompt: TokenSequence,
    mask_spec: MaskSpec | None,
    config: SamplerConfig,
    n: int,
    vocab: Vocabulary = VOCAB,
) -> list[GenerationResult]:
    """n generations with per-generation seeds config.seed + 0..n-1."""
    model = _as_model(model_or_checkpoint)
    return [
        generate(model, prompt, mask_spec, replace(config, seed=config.seed + i), vocab)
        for i in range(n)
    ]


@dataclass
class AccompanimentResult:
    score: Score  # full-length melody + generated piano
    window_results: list[GenerationResult]
    truncated: bool
    warnings: tuple[str, ...]


def generate_accompaniment(
    model_or_checkpoint,
    melody_score: Score,
    config: SamplerConfig,
    melody_track: int = 0,
    controls: Mapping[tuple[int, int], str] | None = None,
    window_bars: int = 64,
    context_bars: int = 4,
    vocab: Vocabulary = VOCAB,
) -> AccompanimentResult:
    """Write a piano accompaniment for the melody track of `melody_score`.

    Songs longer than `window_bars` are generated in consecutive windows; each
    window past the first carries the previous window's last `context_bars` of
    generated piano as unmasked context. Output bar count equals input.
    """
    model = _as_model(model_or_checkpoint)
    melody = melody_score.tracks[melody_track]
    if not melody.notes:
        raise ValueError("melody track is empty")
    measure_map = melody_score.measure_map
    n_bars = len(measure_map)

    if n_bars <= window_bars:
        prompt, masks = make_accompaniment_prompt(melody, measure_map, controls=controls, vocab=vocab)
        result = generate(model, prompt, masks, config, vocab)
        return AccompanimentResult(result.score, [result], result.truncated, result.warnings)

    piano_notes: list[Note] = []
    results: list[GenerationResult] = []
    for window_index, start in enumerate(range(0, n_bars, window_bars)):
        end = min(start + window_bars, n_bars)
        context_start = max(0, start - context_bars) if window_index else 0
        working = Score(
            measure_map,
            (melody, Track(1, tuple(sorted(piano_notes, key=lambda n: (n.onset_tick, n.pitch))))),
        )
        window = slice_measures(working, context_start, end)
        masked = MaskSpec.of((1, mi) for mi in range(start - context_start, end - context_start))
        window_controls = None
        if controls:
            window_controls = {
                (1, mi - context_start): bucket
                for (ti, mi), bucket in controls.items()
                if ti == 1 and start <= mi < end
            }
        prompt = encode_prompt(window, masked, controls=window_controls, vocab=vocab)
        window_config = replace(config, seed=config.seed + 1_000_003 * window_index)
        result = generate(model, prompt, masked, window_config, vocab)
        results.append(result)
        offset = measure_map[context_start].start_tick
        window_start_tick = measure_map[start].start_tick
        for note in result.score.tracks[1].notes:
            absolute = note.onset_tick + offset
            if absolute >= window_start_tick:
                piano_notes.append(Note(absolute, note.duration_ticks, note.pitch))

    piano = Track(1, tuple(sorted(piano_notes, key=lambda n: (n.onset_tick, n.pitch))))
    full = Score(measure_map, (melody, piano))
    return AccompanimentResult(
        full,
        results,
        any(r.truncated for r in results),
        tuple(w for r in results for w in r.warnings),
    )
