"""Deterministic synthetic scores and a generated mini-corpus for tests/demos.

Nothing here is real music: songs are seeded random walks shaped like the
voice+piano pieces the pipeline expects (melody on track 0, piano on track 1).
"""

from __future__ import annotations

import random
from pathlib import Path

from .score import ALLOWED_MEASURE_TICKS, MeasureMap, Note, Score, Track, write_smf


def random_score(
    rng: random.Random,
    min_measures: int = 1,
    max_measures: int = 8,
    max_tracks: int = 3,
    max_notes_per_measure: int = 6,
    uniform_meter: bool = False,
) -> Score:
    """A random valid Score: quantized, sorted, deduplicated, inside the span."""
    n_measures = rng.randint(min_measures, max_measures)
    if uniform_meter:
        lengths = [rng.choice(ALLOWED_MEASURE_TICKS)] * n_measures
    else:
        lengths = [rng.choice(ALLOWED_MEASURE_TICKS) for _ in range(n_measures)]
    measure_map = MeasureMap.from_lengths(lengths)
    span = measure_map.total_ticks

    tracks = []
    for instrument in range(rng.randint(1, max_tracks)):
        # same-pitch overlaps are unplayable and ambiguous in MIDI event
        # streams, so the generator never produces them
        sounding: dict[int, list[tuple[int, int]]] = {}
        notes = []
        for measure in measure_map.measures:
            for _ in range(rng.randint(0, max_notes_per_measure)):
                onset = measure.start_tick + rng.randrange(measure.length_ticks)
                pitch = rng.randint(24, 96)
                duration = min(rng.randint(1, 96), span - onset)
                spans = sounding.setdefault(pitch, [])
                if any(onset < e and o < onset + duration for o, e in spans):
                    continue
                spans.append((onset, onset + duration))
                notes.append(Note(onset, duration, pitch))
        if not notes:
            # noteless tracks do not survive an SMF round trip
            notes.append(Note(0, min(24, span), rng.randint(24, 96)))
        notes.sort(key=lambda n: (n.onset_tick, n.pitch))
        tracks.append(Track(instrument, tuple(notes)))
    return Score(measure_map, tuple(tracks))


def melody_piano_song(rng: random.Random, n_measures: int = 2, measure_ticks: int = 48) -> Score:
    """A tiny two-track song: stepwise melody plus a chordal piano part."""
    measure_map = MeasureMap.from_lengths([measure_ticks] * n_measures)
    melody = []
    pitch = rng.randint(60, 72)
    for m in measure_map.measures:
        for beat in range(0, measure_ticks, 12):
            pitch = min(84, max(55, pitch + rng.choice((-2, -1, 0, 1, 2))))
            melody.append(Note(m.start_tick + beat, 12, pitch))
    piano = []
    root = rng.randint(40, 52)
    for m in measure_map.measures:
        root = min(55, max(36, root + rng.choice((-3, 0, 3))))
        for interval in (0, 4, 7):
            piano.append(Note(m.start_tick, measure_ticks, root + interval))
        piano.append(Note(m.start_tick + measure_ticks // 2, measure_ticks // 2, root + 12))
    melody.sort(key=lambda n: (n.onset_tick, n.pitch))
    piano.sort(key=lambda n: (n.onset_tick, n.pitch))
    return Score(measure_map, (Track(0, tuple(melody)), Track(1, tuple(piano))))


_MOODS = ("happy", "sad")
_ADJECTIVES = ("wistful", "bright", "stormy", "tender", "restless", "calm")
_STYLES = ("art song", "spiritual arrangement", "folk setting")


def write_synthetic_corpus(
    root: Path | str,
    n_songs: int = 8,
    seed: int = 0,
    n_measures: int = 4,
    measure_ticks: int = 48,
) -> list[str]:
    """Materialize a labeled synthetic corpus in the on-disk dataset layout.

    Returns the song ids written. Layout per song folder: song.mid plus
    metadata.txt and two onsets files, mirroring the real dataset shape.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "README.txt").write_text(
        "Synthetic test corpus generated by accompanist.synthetic; not real music.\n"
    )
    rng = random.Random(seed)
    ids = []
    for i in range(n_songs):
        song_id = f"synth_{i:03d}"
        folder = root / song_id
        folder.mkdir(exist_ok=True)
        song = melody_piano_song(rng, n_measures=n_measures, measure_ticks=measure_ticks)
        (folder / "song.mid").write_bytes(write_smf(song))
        (folder / "metadata.txt").write_text(
            f"tempo: {rng.randint(60, 140)}\n"
            f"lyricist: synthetic\n"
            f"mood: {rng.choice(_MOODS)}\n"
            f"mood_adjective: {rng.choice(_ADJECTIVES)}\n"
            f"style: {rng.choice(_STYLES)}\n"
        )
        n_bars = song.n_measures
        for annotator in (1, 2):
            bounds = sorted(rng.sample(range(n_bars + 1), min(2, n_bars + 1)))
            (folder / f"onsets_{annotator}.txt").write_text(" ".join(map(str, bounds)) + "\n")
        ids.append(song_id)
    return ids
