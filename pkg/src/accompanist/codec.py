"""The measure-sliced masked token language.

A prompt walks a slice measure by measure: each measure opens with its length
token, then every track appears with its instrument token followed by either
the cell's note triples ([pos][pitch][dur], sorted by (pos, pitch)) or a mask
sentinel (optionally preceded by a density control). Targets list each
sentinel's triples in sentinel order and end with [eos]. Encoding is lossless:
decode(prompt, target) reproduces the slice exactly.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Iterable, Mapping

from .score import (
    ALLOWED_MEASURE_TICKS,
    MAX_DURATION_TICKS,
    MeasureMap,
    Note,
    Score,
    Track,
    slice_measures,
)

MAX_MASKS = 64
MAX_INSTRUMENTS = 16
MAX_POSITION = 144  # longest representable measure
DENSITY_BUCKETS = ("low", "med", "high")
MELODY_INSTRUMENT = 0
PIANO_INSTRUMENT = 1

VOCAB_VERSION = 1


class CapacityError(ValueError):
    """More masked cells or measures than the sentinel space allows."""


class VocabularyError(ValueError):
    """A value with no token: unknown instrument, bucket, or measure length."""


class GrammarError(ValueError):
    """A token sequence that violates the prompt or completion grammar."""


def density_bucket(note_count: int) -> str:
    """Bucket a cell's note count: low < 3, med 3..8, high > 8."""
    if note_count < 3:
        return "low"
    if note_count <= 8:
        return "med"
    return "high"


class Vocabulary:
    """Dense, stable token-id table for the measure-masked language."""

    def __init__(self):
        tokens: list[str] = ["pad", "eos"]
        tokens += [f"measure:{length}" for length in ALLOWED_MEASURE_TICKS]
        tokens += [f"instrument:{k}" for k in range(MAX_INSTRUMENTS)]
        tokens += [f"MASK:{i}" for i in range(MAX_MASKS)]
        tokens += [f"pos:{t}" for t in range(MAX_POSITION)]
        tokens += [f"pitch:{p}" for p in range(128)]
        tokens += [f"dur:{d}" for d in range(1, MAX_DURATION_TICKS + 1)]
        tokens += [f"density:{b}" for b in DENSITY_BUCKETS]
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

        self.pad = 0
        self.eos = 1
        self._measure_base = 2
        self._instrument_base = self._measure_base + len(ALLOWED_MEASURE_TICKS)
        self._mask_base = self._instrument_base + MAX_INSTRUMENTS
        self._pos_base = self._mask_base + MAX_MASKS
        self._pitch_base = self._pos_base + MAX_POSITION
        self._dur_base = self._pitch_base + 128
        self._density_base = self._dur_base + MAX_DURATION_TICKS
        self._measure_ids = {
            length: self._measure_base + i for i, length in enumerate(ALLOWED_MEASURE_TICKS)
        }

    def __len__(self) -> int:
        return len(self._tokens)

    def measure(self, length_ticks: int) -> int:
        try:
            return self._measure_ids[length_ticks]
        except KeyError:
            raise VocabularyError(f"no token for measure length {length_ticks}") from None

    def instrument(self, instrument_id: int) -> int:
        if not 0 <= instrument_id < MAX_INSTRUMENTS:
            raise VocabularyError(f"no token for instrument id {instrument_id}")
        return self._instrument_base + instrument_id

    def mask(self, sentinel: int) -> int:
        if not 0 <= sentinel < MAX_MASKS:
            raise CapacityError(f"sentinel {sentinel} outside 0..{MAX_MASKS - 1}")
        return self._mask_base + sentinel

    def pos(self, tick: int) -> int:
        if not 0 <= tick < MAX_POSITION:
            raise VocabularyError(f"no token for position {tick}")
        return self._pos_base + tick

    def pitch(self, pitch: int) -> int:
        if not 0 <= pitch <= 127:
            raise VocabularyError(f"no token for pitch {pitch}")
        return self._pitch_base + pitch

    def dur(self, duration: int) -> int:
        if not 1 <= duration <= MAX_DURATION_TICKS:
            raise VocabularyError(f"no token for duration {duration}")
        return self._dur_base + duration - 1

    def density(self, bucket: str) -> int:
        try:
            return self._density_base + DENSITY_BUCKETS.index(bucket)
        except ValueError:
            raise VocabularyError(f"unknown density bucket {bucket!r}") from None

    def token_class(self, token_id: int) -> str:
        if token_id == self.pad:
            return "pad"
        if token_id == self.eos:
            return "eos"
        if token_id < self._instrument_base:
            return "measure"
        if token_id < self._mask_base:
            return "instrument"
        if token_id < self._pos_base:
            return "mask"
        if token_id < self._pitch_base:
            return "pos"
        if token_id < self._dur_base:
            return "pitch"
        if token_id < self._density_base:
            return "dur"
        if token_id < len(self._tokens):
            return "density"
        raise VocabularyError(f"token id {token_id} outside vocabulary")

    def value(self, token_id: int) -> int:
        """The numeric payload of a measure/instrument/mask/pos/pitch/dur token."""
        cls = self.token_class(token_id)
        if cls == "measure":
            return ALLOWED_MEASURE_TICKS[token_id - self._measure_base]
        if cls == "instrument":
            return token_id - self._instrument_base
        if cls == "mask":
            return token_id - self._mask_base
        if cls == "pos":
            return token_id - self._pos_base
        if cls == "pitch":
            return token_id - self._pitch_base
        if cls == "dur":
            return token_id - self._dur_base + 1
        raise VocabularyError(f"token {self.token_string(token_id)} has no numeric value")

    def token_string(self, token_id: int) -> str:
        return self._tokens[token_id]

    def token_id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"unknown token {token!r}") from None

    # --- class id ranges, used by the sampler for fast legality masks ---

    def class_range(self, cls: str) -> range:
        bounds = {
            "pad": (0, 1),
            "eos": (1, 2),
            "measure": (self._measure_base, self._instrument_base),
            "instrument": (self._instrument_base, self._mask_base),
            "mask": (self._mask_base, self._pos_base),
            "pos": (self._pos_base, self._pitch_base),
            "pitch": (self._pitch_base, self._dur_base),
            "dur": (self._dur_base, self._density_base),
            "density": (self._density_base, len(self._tokens)),
        }
        lo, hi = bounds[cls]
        return range(lo, hi)

    # --- manifest ---

    def manifest(self) -> str:
        lines = [f"# accompanist vocabulary v{VOCAB_VERSION} ({len(self._tokens)} tokens)"]
        lines += [f"{i}\t{tok}" for i, tok in enumerate(self._tokens)]
        return "\n".join(lines) + "\n"

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest().encode()).hexdigest()

    @classmethod
    def from_manifest(cls, text: str) -> "Vocabulary":
        vocab = cls()
        lines = [line for line in text.splitlines() if line and not line.startswith("#")]
        if len(lines) != len(vocab):
            raise VocabularyError(f"manifest has {len(lines)} tokens, expected {len(vocab)}")
        for line in lines:
            ident, token = line.split("\t")
            if vocab.token_string(int(ident)) != token:
                raise VocabularyError(f"manifest mismatch at id {ident}: {token!r}")
        return vocab


VOCAB = Vocabulary()


@dataclass(frozen=True)
class MaskSpec:
    """Masked (track_index, measure_index) cells in reading order.

    Reading order is measure-major, then track order within the measure;
    sentinel i is the i-th cell in that order.
    """

    cells: tuple[tuple[int, int], ...]

    def __post_init__(self):
        keys = [(measure, track) for track, measure in self.cells]
        if keys != sorted(keys):
            raise ValueError("cells must be in reading order (measure-major)")
        if len(set(self.cells)) != len(self.cells):
            raise ValueError("duplicate masked cell")
        if len(self.cells) > MAX_MASKS:
            raise CapacityError(f"{len(self.cells)} masked cells exceed the {MAX_MASKS} sentinel capacity")

    @classmethod
    def of(cls, cells: Iterable[tuple[int, int]]) -> "MaskSpec":
        ordered = sorted(set(cells), key=lambda c: (c[1], c[0]))
        return cls(tuple(ordered))

    def __len__(self) -> int:
        return len(self.cells)

    def sentinel_of(self, cell: tuple[int, int]) -> int:
        return self.cells.index(cell)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    role: str = "prompt"  # prompt | target | generated

    def __post_init__(self):
        if self.role not in ("prompt", "target", "generated"):
            raise ValueError(f"unknown role {self.role!r}")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class TrainingExample:
    input: TokenSequence
    target: TokenSequence
    provenance: str | None = None


def tokens_to_text(seq: TokenSequence, vocab: Vocabulary = VOCAB) -> str:
    return " ".join(vocab.token_string(i) for i in seq.ids)


def text_to_tokens(text: str, role: str = "prompt", vocab: Vocabulary = VOCAB) -> TokenSequence:
    return TokenSequence(tuple(vocab.token_id(tok) for tok in text.split()), role)


def _cell_notes(slice_score: Score) -> dict[tuple[int, int], list[Note]]:
    """Notes per (track_index, measure_index); every cell present, maybe empty."""
    cells: dict[tuple[int, int], list[Note]] = {
        (ti, mi): []
        for ti in range(len(slice_score.tracks))
        for mi in range(slice_score.n_measures)
    }
    for ti, track in enumerate(slice_score.tracks):
        for note in track.notes:
            mi = slice_score.measure_map.measure_of_tick(note.onset_tick)
            cells[(ti, mi)].append(note)
    return cells


def _check_masks(slice_score: Score, masks: MaskSpec) -> None:
    for track, measure in masks.cells:
        if not 0 <= track < len(slice_score.tracks):
            raise ValueError(f"masked cell references track {track}, slice has {len(slice_score.tracks)}")
        if not 0 <= measure < slice_score.n_measures:
            raise ValueError(f"masked cell references measure {measure}, slice has {slice_score.n_measures}")


def encode_prompt(
    slice_score: Score,
    masks: MaskSpec,
    controls: Mapping[tuple[int, int], str] | None = None,
    vocab: Vocabulary = VOCAB,
) -> TokenSequence:
    """Encode a slice with bar-level masks as a grammar-valid prompt."""
    _check_masks(slice_score, masks)
    controls = dict(controls or {})
    for cell in controls:
        if cell not in masks.cells:
            raise ValueError(f"density control on unmasked cell {cell}")
    cells = _cell_notes(slice_score)
    masked = set(masks.cells)

    ids: list[int] = []
    for mi, measure in enumerate(slice_score.measure_map.measures):
        ids.append(vocab.measure(measure.length_ticks))
        for ti, track in enumerate(slice_score.tracks):
            ids.append(vocab.instrument(track.instrument_id))
            cell = (ti, mi)
            if cell in masked:
                if cell in controls:
                    ids.append(vocab.density(controls[cell]))
                ids.append(vocab.mask(masks.sentinel_of(cell)))
            else:
                for note in cells[cell]:
                    ids.append(vocab.pos(note.onset_tick - measure.start_tick))
                    ids.append(vocab.pitch(note.pitch))
                    ids.append(vocab.dur(note.duration_ticks))
    return TokenSequence(tuple(ids), "prompt")


def build_target(slice_score: Score, masks: MaskSpec, vocab: Vocabulary = VOCAB) -> TokenSequence:
    """The denoising target: each sentinel followed by its cell's triples, then [eos]."""
    _check_masks(slice_score, masks)
    cells = _cell_notes(slice_score)
    ids: list[int] = []
    for sentinel, (ti, mi) in enumerate(masks.cells):
        ids.append(vocab.mask(sentinel))
        start = slice_score.measure_map[mi].start_tick
        for note in cells[(ti, mi)]:
            ids.append(vocab.pos(note.onset_tick - start))
            ids.append(vocab.pitch(note.pitch))
            ids.append(vocab.dur(note.duration_ticks))
    ids.append(vocab.eos)
    return TokenSequence(tuple(ids), "target")


def prompt_token_count(slice_score: Score, masks: MaskSpec, n_controls: int = 0) -> int:
    """Exact prompt length without encoding: structure + triples + sentinels."""
    n_measures = slice_score.n_measures
    n_tracks = len(slice_score.tracks)
    masked = set(masks.cells)
    unmasked_notes = 0
    for ti, track in enumerate(slice_score.tracks):
        for note in track.notes:
            mi = slice_score.measure_map.measure_of_tick(note.onset_tick)
            if (ti, mi) not in masked:
                unmasked_notes += 1
    return n_measures + n_measures * n_tracks + 3 * unmasked_notes + len(masked) + n_controls


@dataclass(frozen=True)
class PromptCell:
    track_index: int
    measure_index: int
    instrument_id: int
    sentinel: int | None  # None = unmasked
    density: str | None
    notes: tuple[Note, ...]  # onset in slice ticks; empty for masked cells


@dataclass(frozen=True)
class PromptStructure:
    """Parsed view of a prompt: measure lengths, track layout, sentinel cells."""

    measure_map: MeasureMap
    instruments: tuple[int, ...]  # per track, in prompt order
    cells: tuple[PromptCell, ...]

    @property
    def sentinel_cells(self) -> tuple[PromptCell, ...]:
        return tuple(c for c in self.cells if c.sentinel is not None)

    def sentinel_measure_lengths(self) -> tuple[int, ...]:
        return tuple(
            self.measure_map[c.measure_index].length_ticks for c in self.sentinel_cells
        )


def parse_prompt(seq: TokenSequence, vocab: Vocabulary = VOCAB) -> PromptStructure:
    """Strictly parse a prompt; raises GrammarError on any violation."""
    ids = seq.ids
    if not ids:
        raise GrammarError("empty prompt")
    lengths: list[int] = []
    rows: list[list[tuple[int, int | None, str | None, list[tuple[int, int, int]]]]] = []
    i = 0
    n = len(ids)
    while i < n:
        if vocab.token_class(ids[i]) != "measure":
            raise GrammarError(f"expected measure token at position {i}")
        length = vocab.value(ids[i])
        i += 1
        row: list[tuple[int, int | None, str | None, list[tuple[int, int, int]]]] = []
        if i >= n or vocab.token_class(ids[i]) != "instrument":
            raise GrammarError(f"measure at position {i - 1} declares no tracks")
        while i < n and vocab.token_class(ids[i]) == "instrument":
            instrument = vocab.value(ids[i])
            i += 1
            density = None
            sentinel = None
            triples: list[tuple[int, int, int]] = []
            if i < n and vocab.token_class(ids[i]) == "density":
                density = vocab.token_string(ids[i]).split(":")[1]
                i += 1
                if i >= n or vocab.token_class(ids[i]) != "mask":
                    raise GrammarError(f"density token at position {i - 1} not followed by a mask")
            if i < n and vocab.token_class(ids[i]) == "mask":
                sentinel = vocab.value(ids[i])
                i += 1
            else:
                while i < n and vocab.token_class(ids[i]) == "pos":
                    pos = vocab.value(ids[i])
                    if pos >= length:
                        raise GrammarError(f"position {pos} outside measure of {length} ticks")
                    if i + 2 >= n or vocab.token_class(ids[i + 1]) != "pitch" or vocab.token_class(ids[i + 2]) != "dur":
                        raise GrammarError(f"incomplete note triple at position {i}")
                    triples.append((pos, vocab.value(ids[i + 1]), vocab.value(ids[i + 2])))
                    i += 3
                if [(p, q) for p, q, _ in triples] != sorted((p, q) for p, q, _ in triples):
                    raise GrammarError("note triples not sorted by (pos, pitch)")
            row.append((instrument, sentinel, density, triples))
        lengths.append(length)
        rows.append(row)

    layout = tuple(inst for inst, _, _, _ in rows[0])
    for mi, row in enumerate(rows):
        if tuple(inst for inst, _, _, _ in row) != layout:
            raise GrammarError(f"measure {mi} track layout differs from measure 0")

    measure_map = MeasureMap.from_lengths(lengths)
    cells = []
    expected_sentinel = 0
    for mi, row in enumerate(rows):
        for ti, (instrument, sentinel, density, triples) in enumerate(row):
            if sentinel is not None:
                if sentinel != expected_sentinel:
                    raise GrammarError(
                        f"sentinel {sentinel} out of reading order (expected {expected_sentinel})"
                    )
                expected_sentinel += 1
            start = measure_map[mi].start_tick
            notes = tuple(Note(start + p, d, q) for p, q, d in triples)
            cells.append(PromptCell(ti, mi, instrument, sentinel, density, notes))
    return PromptStructure(measure_map, layout, tuple(cells))


def validate_prompt(seq: TokenSequence, vocab: Vocabulary = VOCAB) -> None:
    parse_prompt(seq, vocab)


def parse_completion_strict(
    seq: TokenSequence, vocab: Vocabulary = VOCAB
) -> list[tuple[int, list[tuple[int, int, int]]]]:
    """Parse ([MASK_i] triples)* [eos]; sentinels contiguous from 0, triples sorted.

    Raises GrammarError on out-of-order sentinels, missing/extra [eos], a
    [dur]/[pitch] outside a triple, or unsorted/duplicate (pos, pitch) pairs.
    """
    ids = seq.ids
    if not ids:
        raise GrammarError("empty completion")
    if ids[-1] != vocab.eos:
        raise GrammarError("completion does not end with [eos]")
    spans: list[tuple[int, list[tuple[int, int, int]]]] = []
    i = 0
    n = len(ids) - 1
    expected = 0
    while i < n:
        if vocab.token_class(ids[i]) != "mask":
            raise GrammarError(f"expected a mask sentinel at position {i}")
        sentinel = vocab.value(ids[i])
        if sentinel != expected:
            raise GrammarError(f"sentinel {sentinel} out of order (expected {expected})")
        expected += 1
        i += 1
        triples: list[tuple[int, int, int]] = []
        while i < n and vocab.token_class(ids[i]) == "pos":
            if i + 2 >= len(ids) or vocab.token_class(ids[i + 1]) != "pitch":
                raise GrammarError(f"[pos] at position {i} not followed by [pitch]")
            if vocab.token_class(ids[i + 2]) != "dur":
                raise GrammarError(f"triple at position {i} missing [dur] after [pitch]")
            triples.append((vocab.value(ids[i]), vocab.value(ids[i + 1]), vocab.value(ids[i + 2])))
            i += 3
        if i < n and vocab.token_class(ids[i]) not in ("mask",):
            raise GrammarError(
                f"unexpected {vocab.token_class(ids[i])} token at position {i}"
            )
        keys = [(p, q) for p, q, _ in triples]
        if keys != sorted(keys) or len(set(keys)) != len(keys):
            raise GrammarError(f"triples of sentinel {sentinel} not strictly sorted by (pos, pitch)")
        spans.append((sentinel, triples))
    if vocab.eos in ids[:-1]:
        raise GrammarError("[eos] before the end of the completion")
    return spans


def validate_completion(seq: TokenSequence, vocab: Vocabulary = VOCAB) -> None:
    parse_completion_strict(seq, vocab)


def _parse_completion_tolerant(
    seq: TokenSequence, vocab: Vocabulary = VOCAB
) -> tuple[dict[int, list[tuple[int, int, int]]], list[str]]:
    """Best-effort completion parse for generated sequences; never raises."""
    spans: dict[int, list[tuple[int, int, int]]] = {}
    warnings: list[str] = []
    current: list[tuple[int, int, int]] | None = None
    ids = seq.ids
    i = 0
    saw_eos = False
    while i < len(ids):
        cls = vocab.token_class(ids[i])
        if cls == "eos":
            saw_eos = True
            if i != len(ids) - 1:
                warnings.append("tokens after [eos] ignored")
            break
        if cls == "mask":
            sentinel = vocab.value(ids[i])
            if sentinel in spans:
                warnings.append(f"repeated sentinel {sentinel}; later span ignored")
                current = None
            else:
                current = spans.setdefault(sentinel, [])
            i += 1
        elif cls == "pos":
            if (
                i + 2 < len(ids)
                and vocab.token_class(ids[i + 1]) == "pitch"
                and vocab.token_class(ids[i + 2]) == "dur"
            ):
                if current is not None:
                    current.append(
                        (vocab.value(ids[i]), vocab.value(ids[i + 1]), vocab.value(ids[i + 2]))
                    )
                else:
                    warnings.append("note triple before any sentinel ignored")
                i += 3
            else:
                warnings.append("incomplete note triple dropped")
                i += 1
                while i < len(ids) and vocab.token_class(ids[i]) in ("pitch", "dur"):
                    i += 1
        else:
            warnings.append(f"unexpected {cls} token in completion ignored")
            i += 1
    if not saw_eos:
        warnings.append("completion missing [eos]")
    return spans, warnings


def decode(
    prompt: TokenSequence,
    completion: TokenSequence,
    vocab: Vocabulary = VOCAB,
) -> Score:
    """Merge a completion's spans into the prompt's slice.

    Unmasked cells are copied verbatim. Masked cells are filled from their
    sentinel's triples with tolerant repair: out-of-measure positions are
    dropped, duplicate (pos, pitch) keep the first, over-long durations are
    clipped to the span, and sentinel mismatches leave cells empty — each with
    a warning on the returned Score.
    """
    structure = parse_prompt(prompt, vocab)
    spans, warnings = _parse_completion_tolerant(completion, vocab)

    known = {c.sentinel for c in structure.sentinel_cells}
    for sentinel in sorted(set(spans) - known):
        warnings.append(f"sentinel {sentinel} not in prompt; span ignored")
    for sentinel in sorted(known - set(spans)):
        warnings.append(f"sentinel {sentinel} missing from completion; cell left empty")

    span_ticks = structure.measure_map.total_ticks
    track_notes: dict[int, list[Note]] = {ti: [] for ti in range(len(structure.instruments))}
    for cell in structure.cells:
        measure = structure.measure_map[cell.measure_index]
        if cell.sentinel is None:
            track_notes[cell.track_index].extend(cell.notes)
            continue
        seen: set[tuple[int, int]] = set()
        for pos, pitch, dur in spans.get(cell.sentinel, []):
            if pos >= measure.length_ticks:
                warnings.append(
                    f"sentinel {cell.sentinel}: position {pos} outside {measure.length_ticks}-tick measure, note dropped"
                )
                continue
            if (pos, pitch) in seen:
                warnings.append(f"sentinel {cell.sentinel}: duplicate (pos {pos}, pitch {pitch}) collapsed")
                continue
            seen.add((pos, pitch))
            onset = measure.start_tick + pos
            if onset + dur > span_ticks:
                warnings.append(f"sentinel {cell.sentinel}: duration clipped at the slice end")
                dur = span_ticks - onset
            track_notes[cell.track_index].append(Note(onset, dur, pitch))

    tracks = []
    for ti, instrument in enumerate(structure.instruments):
        notes = sorted(track_notes[ti], key=lambda n: (n.onset_tick, n.pitch))
        tracks.append(Track(instrument, tuple(notes)))
    return Score(structure.measure_map, tuple(tracks), warnings=tuple(warnings))


def make_training_example(
    score: Score,
    rng: random.Random,
    max_prompt_tokens: int,
    provenance: str | None = None,
    control_probability: float = 0.0,
    vocab: Vocabulary = VOCAB,
) -> TrainingExample | None:
    """A random denoising example: random measure slice, cells masked at p=0.5.

    The slice length is uniform in [1, 16] (capped to the song and shrunk until
    the prompt fits `max_prompt_tokens`). With `control_probability` > 0, each
    masked cell may carry its ground-truth density bucket as a control token,
    which teaches the model the control vocabulary. Returns None when even a
    single measure cannot fit the budget.
    """
    n = score.n_measures
    if n < 1:
        raise ValueError("score has no measures")
    if not score.tracks:
        return None
    length = min(rng.randint(1, 16), n)
    while length >= 1:
        start = rng.randint(0, n - length)
        sl = slice_measures(score, start, start + length)
        cells = [(ti, mi) for mi in range(length) for ti in range(len(sl.tracks))]
        while True:
            chosen = [c for c in cells if rng.random() < 0.5]
            if chosen:
                break
        masks = MaskSpec.of(chosen)
        controls = {}
        if control_probability > 0:
            notes = _cell_notes(sl)
            for cell in masks.cells:
                if rng.random() < control_probability:
                    controls[cell] = density_bucket(len(notes[cell]))
        if prompt_token_count(sl, masks, n_controls=len(controls)) <= max_prompt_tokens:
            return TrainingExample(
                encode_prompt(sl, masks, controls=controls, vocab=vocab),
                build_target(sl, masks, vocab=vocab),
                provenance,
            )
        length -= 1
    return None


def make_accompaniment_prompt(
    melody: Track,
    measure_map: MeasureMap,
    controls: Mapping[tuple[int, int], str] | None = None,
    vocab: Vocabulary = VOCAB,
) -> tuple[TokenSequence, MaskSpec]:
    """Prompt with the melody unmasked and every piano measure masked."""
    if not melody.notes:
        raise ValueError("melody track is empty")
    if len(measure_map) > MAX_MASKS:
        raise CapacityError(
            f"{len(measure_map)} measures exceed the {MAX_MASKS}-sentinel capacity; window the song"
        )
    if melody.instrument_id == PIANO_INSTRUMENT:
        raise ValueError("melody track uses the piano instrument id")
    piano = Track(PIANO_INSTRUMENT, ())
    duet = Score(measure_map, (melody, piano))
    masks = MaskSpec.of((1, mi) for mi in range(len(measure_map)))
    return encode_prompt(duet, masks, controls=controls, vocab=vocab), masks
