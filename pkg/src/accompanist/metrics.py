"""Evaluation metrics and checkpoint-selection curves.

Note density is notes per measure; PHE/PCHE are Shannon entropies (bits) of
the 128-bin pitch and 12-bin pitch-class histograms; note F1 matches exact
(onset, pitch) pairs. Distribution divergence uses 30 equal-width bins over
the reference population's range with 1e-6 additive smoothing, KL in nats.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .codec import MaskSpec, density_bucket, encode_prompt, make_accompaniment_prompt
from .model import Checkpoint, SeqModel
from .sampling import SamplerConfig, generate
from .score import Score, Track, slice_measures

N_BINS = 30
SMOOTHING_EPS = 1e-6


class BinningError(ValueError):
    """KL requested between distributions with different bin definitions."""


@dataclass(frozen=True)
class SnippetMetrics:
    note_density: float
    phe: float
    pche: float
    source_id: str


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    kl_density: float
    kl_phe: float
    kl_pche: float
    mean_f1: float


def note_density(track: Track, n_measures: int) -> float:
    """Notes per measure over the slice."""
    if n_measures < 1:
        raise ValueError("slice has no measures")
    return len(track.notes) / n_measures


def _entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0  # empty slice, by convention
    probs = counts[counts > 0] / total
    return float(-(probs * np.log2(probs)).sum())


def phe(track: Track) -> float:
    """Pitch histogram entropy in bits (128 bins)."""
    counts = np.bincount([n.pitch for n in track.notes], minlength=128)
    return _entropy_bits(counts)


def pche(track: Track) -> float:
    """Pitch-class histogram entropy in bits (12 bins, pitch mod 12)."""
    counts = np.bincount([n.pitch % 12 for n in track.notes], minlength=12)
    return _entropy_bits(counts)


def note_f1(generated: Track, reference: Track) -> float:
    """Harmonic mean of precision/recall over exact (onset, pitch) matches."""
    gen = {(n.onset_tick, n.pitch) for n in generated.notes}
    ref = {(n.onset_tick, n.pitch) for n in reference.notes}
    if not gen and not ref:
        return 1.0
    if not gen or not ref:
        return 0.0
    matches = len(gen & ref)
    if matches == 0:
        return 0.0
    precision = matches / len(gen)
    recall = matches / len(ref)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricDistribution:
    name: str
    values: tuple[float, ...]
    bin_edges: tuple[float, ...]
    histogram: tuple[float, ...]  # smoothed, sums to 1


def make_distribution(
    name: str,
    values: Sequence[float],
    reference_values: Sequence[float] | None = None,
    n_bins: int = N_BINS,
) -> MetricDistribution:
    """Histogram `values` over bins defined by the reference population.

    Values outside the reference range clamp to the edge bins. A degenerate
    reference (min == max) widens to a unit interval around the point.
    """
    if not len(values):
        raise ValueError(f"empty population for metric {name}")
    ref = np.asarray(reference_values if reference_values is not None else values, dtype=np.float64)
    lo, hi = float(ref.min()), float(ref.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, n_bins + 1)
    clamped = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    counts, _ = np.histogram(clamped, bins=edges)
    smoothed = counts.astype(np.float64) + SMOOTHING_EPS
    histogram = smoothed / smoothed.sum()
    return MetricDistribution(name, tuple(map(float, values)), tuple(edges), tuple(histogram))


def kl_divergence(observed: MetricDistribution, reference: MetricDistribution) -> float:
    """KL(observed || reference) in nats; both must share bin definitions."""
    if observed.bin_edges != reference.bin_edges:
        raise BinningError(
            f"bin edges differ between {observed.name} and {reference.name} distributions"
        )
    p = np.asarray(observed.histogram)
    q = np.asarray(reference.histogram)
    value = float((p * np.log(p / q)).sum())
    if value < 0:
        if value < -1e-12:
            raise AssertionError(f"negative KL {value}; smoothing broken")
        value = 0.0
    return value


def snippet_metrics(track: Track, n_measures: int, source_id: str) -> SnippetMetrics:
    return SnippetMetrics(note_density(track, n_measures), phe(track), pche(track), source_id)


def select_snippets(
    songs: Sequence[tuple[str, Score]],
    n_snippets: int,
    snippet_bars: int,
    seed: int,
) -> list[tuple[str, Score, int, int]]:
    """Seeded random (song, start, end) snippet picks; short songs used whole."""
    import random

    rng = random.Random(seed)
    picks = []
    for _ in range(n_snippets):
        song_id, score = songs[rng.randrange(len(songs))]
        if score.n_measures <= snippet_bars:
            picks.append((song_id, score, 0, score.n_measures))
        else:
            start = rng.randint(0, score.n_measures - snippet_bars)
            picks.append((song_id, score, start, start + snippet_bars))
    return picks


@dataclass
class SnippetRow:
    epoch: int
    snippet_index: int
    source_id: str
    generated: SnippetMetrics
    reference: SnippetMetrics
    f1: float


@dataclass
class CurveReport:
    points: list[CurvePoint]
    rows: list[SnippetRow]
    snippet_bars: int
    seed: int

    def curve_csv(self) -> str:
        lines = [
            f"# bins={N_BINS} smoothing={SMOOTHING_EPS} kl=nats entropy=bits seed={self.seed} snippet_bars={self.snippet_bars}",
            "epoch,kl_density,kl_phe,kl_pche,mean_f1",
        ]
        lines += [
            f"{p.epoch},{p.kl_density:.6f},{p.kl_phe:.6f},{p.kl_pche:.6f},{p.mean_f1:.6f}"
            for p in self.points
        ]
        return "\n".join(lines) + "\n"

    def snippet_csv(self) -> str:
        lines = [
            f"# bins={N_BINS} smoothing={SMOOTHING_EPS} kl=nats entropy=bits seed={self.seed} snippet_bars={self.snippet_bars}",
            "epoch,snippet,source,gen_density,gen_phe,gen_pche,ref_density,ref_phe,ref_pche,f1",
        ]
        for r in self.rows:
            lines.append(
                f"{r.epoch},{r.snippet_index},{r.source_id},"
                f"{r.generated.note_density:.6f},{r.generated.phe:.6f},{r.generated.pche:.6f},"
                f"{r.reference.note_density:.6f},{r.reference.phe:.6f},{r.reference.pche:.6f},"
                f"{r.f1:.6f}"
            )
        return "\n".join(lines) + "\n"


def checkpoint_curves(
    checkpoints: Sequence[Checkpoint],
    validation_songs: Sequence[tuple[str, Score]],
    sampler_config: SamplerConfig,
    snippet_bars: int = 16,
    n_snippets: int = 8,
    seed: int = 0,
    melody_track: int = 0,
    piano_track: int = 1,
) -> CurveReport:
    """Generate accompaniments per checkpoint and score them against truth.

    For every checkpoint, each snippet's melody gets one generated
    accompaniment; KL compares the generated metric population against the
    ground-truth piano population (reference defines the bins), and F1 is
    averaged over snippets. Deterministic for a fixed seed.
    """
    if not checkpoints:
        raise ValueError("no checkpoints")
    if not validation_songs:
        raise ValueError("no validation songs")
    picks = select_snippets(validation_songs, n_snippets, snippet_bars, seed)

    references: list[SnippetMetrics] = []
    truth_tracks: list[Track] = []
    prompts = []
    for index, (song_id, score, start, end) in enumerate(picks):
        piece = slice_measures(score, start, end)
        truth = piece.tracks[piano_track]
        truth_tracks.append(truth)
        references.append(snippet_metrics(truth, piece.n_measures, song_id))
        prompt, masks = make_accompaniment_prompt(piece.tracks[melody_track], piece.measure_map)
        prompts.append((prompt, masks, piece.n_measures, song_id))

    points: list[CurvePoint] = []
    rows: list[SnippetRow] = []
    for checkpoint in checkpoints:
        model = SeqModel(checkpoint)
        generated_metrics: list[SnippetMetrics] = []
        f1_values: list[float] = []
        for index, (prompt, masks, n_measures, song_id) in enumerate(prompts):
            config = replace(sampler_config, seed=sampler_config.seed + index)
            result = generate(model, prompt, masks, config)
            gen_track = result.score.tracks[1]
            gen = snippet_metrics(gen_track, n_measures, song_id)
            generated_metrics.append(gen)
            f1 = note_f1(gen_track, truth_tracks[index])
            f1_values.append(f1)
            rows.append(SnippetRow(checkpoint.epoch, index, song_id, gen, references[index], f1))

        kls = {}
        for metric in ("note_density", "phe", "pche"):
            ref_values = [getattr(m, metric) for m in references]
            gen_values = [getattr(m, metric) for m in generated_metrics]
            observed = make_distribution(metric, gen_values, reference_values=ref_values)
            reference = make_distribution(metric, ref_values)
            kls[metric] = kl_divergence(observed, reference)
        points.append(
            CurvePoint(
                checkpoint.epoch,
                kls["note_density"],
                kls["phe"],
                kls["pche"],
                float(np.mean(f1_values)),
            )
        )
    return CurveReport(points, rows, snippet_bars, seed)


def control_adherence(
    checkpoint_or_model,
    control_prompts: Sequence[tuple[Score, MaskSpec, Mapping[tuple[int, int], str]]],
    sampler_config: SamplerConfig,
) -> float:
    """Fraction of controlled cells whose generated density matches the request."""
    if not control_prompts:
        raise ValueError("no control prompts")
    model = checkpoint_or_model if isinstance(checkpoint_or_model, SeqModel) else SeqModel(checkpoint_or_model)
    hits = 0
    total = 0
    for index, (piece, masks, controls) in enumerate(control_prompts):
        if not controls:
            raise ValueError("prompt without density controls")
        prompt = encode_prompt(piece, masks, controls=controls)
        config = replace(sampler_config, seed=sampler_config.seed + index)
        result = generate(model, prompt, masks, config)
        for (track_index, measure_index), requested in controls.items():
            measure = result.score.measure_map[measure_index]
            realized = sum(
                1
                for note in result.score.tracks[track_index].notes
                if measure.start_tick <= note.onset_tick < measure.start_tick + measure.length_ticks
            )
            hits += density_bucket(realized) == requested
            total += 1
    return hits / total
