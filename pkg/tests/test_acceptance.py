"""Acceptance suite: one test per release criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Every tolerance and runtime bound is pinned here.
"""

import math
import random
import time

import numpy as np
import pytest
import torch

from accompanist.codec import (
    GrammarError,
    MaskSpec,
    VOCAB,
    build_target,
    decode,
    encode_prompt,
    make_accompaniment_prompt,
    validate_completion,
)
from accompanist.corpus import leave_one_out
from accompanist.experiment import binomial_test, build_pairs, export_results
from accompanist.metrics import (
    checkpoint_curves,
    kl_divergence,
    make_distribution,
    note_f1,
    pche,
    phe,
)
from accompanist.model import (
    ModelConfig,
    SeqModel,
    TrainPlan,
    batch_tensors,
    build_module,
    draw_epoch_examples,
    initial_checkpoint,
    sequence_loss,
    train,
)
from accompanist.sampling import SamplerConfig, generate, sample_step, step_distribution
from accompanist.score import Note, Track, parse_smf, write_smf
from accompanist.synthetic import melody_piano_song, random_score
from fixtures import exact_binomial_oracle, make_samples, study_shaped_store


class Stopwatch:
    def __init__(self, budget_s: float):
        self.budget = budget_s
        self.started = time.monotonic()

    def check(self) -> float:
        elapsed = time.monotonic() - self.started
        assert elapsed < self.budget, f"ran {elapsed:.1f}s, budget {self.budget}s"
        return elapsed


def test_binomial_reproduction():
    watch = Stopwatch(1.0)
    p_price = binomial_test(137, 82)
    assert f"{p_price:.2g}" == "0.026"
    p_popular = binomial_test(137, 99)
    assert p_popular < 0.001
    for n, k in [(137, 82), (137, 99), (10, 5), (280, 140), (61, 44)]:
        oracle = exact_binomial_oracle(n, k)
        assert abs(binomial_test(n, k) - oracle) / oracle < 1e-12
    elapsed = watch.check()
    print(f"\n[PASS] binomial reproduction: p(137,82)={p_price:.4g}, "
          f"p(137,99)={p_popular:.3g}, oracle agreement <1e-12 rel ({elapsed:.2f}s)")


def test_error_tally_arithmetic():
    watch = Stopwatch(1.0)
    result = export_results(study_shaped_store())
    by_tag = {t.model_tag: t for t in result.errors}
    fp, baseline = by_tag["fp"], by_tag["baseline"]
    assert fp.error_free_count == 64 and fp.total_samples == 140
    assert baseline.error_free_count == 80 and baseline.total_samples == 140
    assert abs(fp.percent_error_free - 45.71) < 0.01
    assert abs(baseline.percent_error_free - 57.14) < 0.01
    elapsed = watch.check()
    print(f"\n[PASS] error-tally arithmetic: 64/140={fp.percent_error_free:.2f}%, "
          f"80/140={baseline.percent_error_free:.2f}% ({elapsed:.2f}s)")


def _mutate(ids: list[int], kind: str, rng: random.Random) -> list[int] | None:
    """Inject one grammar violation; None when inapplicable to this sequence."""
    ids = list(ids)
    pitch_positions = [i for i, t in enumerate(ids) if VOCAB.token_class(t) == "pitch"]
    if kind == "drop_eos":
        return ids[:-1] if len(ids) > 1 else None
    if kind == "bump_sentinel":
        if VOCAB.value(ids[0]) + 1 >= 64:
            return None
        ids[0] = VOCAB.mask(VOCAB.value(ids[0]) + 1)
        return ids
    if kind == "strip_pitch":
        if not pitch_positions:
            return None
        del ids[rng.choice(pitch_positions)]
        return ids
    if kind == "stray_dur":
        ids.insert(1, VOCAB.dur(24))
        return ids
    if kind == "dup_triple":
        if not pitch_positions:
            return None
        i = pitch_positions[0] - 1
        ids[i:i] = ids[i:i + 3]
        return ids
    if kind == "early_eos":
        ids.insert(0, VOCAB.eos)
        return ids
    raise AssertionError(kind)


def test_codec_losslessness_and_grammar_fuzz():
    watch = Stopwatch(60.0)
    rng = random.Random(2024)
    for _ in range(10_000):
        score = random_score(rng, max_measures=4, max_notes_per_measure=4)
        cells = [(ti, mi) for mi in range(score.n_measures) for ti in range(len(score.tracks))]
        chosen = [c for c in cells if rng.random() < 0.5] or [cells[rng.randrange(len(cells))]]
        masks = MaskSpec.of(chosen)
        assert decode(encode_prompt(score, masks), build_target(score, masks)) == score

    kinds = ["drop_eos", "bump_sentinel", "strip_pitch", "stray_dur", "dup_triple", "early_eos"]
    flagged = 0
    while flagged < 1_000:
        score = random_score(rng, max_measures=4)
        cells = [(ti, mi) for mi in range(score.n_measures) for ti in range(len(score.tracks))]
        masks = MaskSpec.of([c for c in cells if rng.random() < 0.5] or cells[:1])
        target = build_target(score, masks)
        mutated = _mutate(list(target.ids), kinds[flagged % len(kinds)], rng)
        if mutated is None:
            continue
        from accompanist.codec import TokenSequence

        try:
            validate_completion(TokenSequence(tuple(mutated), "generated"))
        except GrammarError:
            flagged += 1
        # anything but GrammarError propagates and fails the test
        else:
            raise AssertionError(f"mutation {kinds[flagged % len(kinds)]} not flagged")
    elapsed = watch.check()
    print(f"\n[PASS] codec losslessness: 10,000 exact round trips; "
          f"grammar fuzz flagged 1,000/1,000 mutations ({elapsed:.1f}s)")


def test_smf_round_trip():
    watch = Stopwatch(10.0)
    rng = random.Random(99)
    for _ in range(100):
        score = random_score(rng)
        assert parse_smf(write_smf(score)) == score
    elapsed = watch.check()
    print(f"\n[PASS] SMF round trip: 100/100 scores bit-identical at the Score level ({elapsed:.2f}s)")


def test_entropy_analytics():
    watch = Stopwatch(10.0)
    uniform12 = Track(0, tuple(Note(i * 4, 2, 60 + i) for i in range(12)))
    assert abs(pche(uniform12) - math.log2(12)) < 1e-9
    point = Track(0, tuple(Note(i * 4, 2, 60) for i in range(10)))
    assert phe(point) == 0.0 and pche(point) == 0.0

    values = [random.Random(5).uniform(0, 3) for _ in range(300)]
    assert kl_divergence(make_distribution("m", values), make_distribution("m", values)) <= 1e-5

    rng = random.Random(6)
    for _ in range(1_000):
        ref = [rng.gauss(0, 1) for _ in range(40)]
        obs = [rng.gauss(rng.uniform(-1, 1), 1.3) for _ in range(40)]
        observed = make_distribution("m", obs, reference_values=ref)
        assert kl_divergence(observed, make_distribution("m", ref)) >= 0.0
    elapsed = watch.check()
    print(f"\n[PASS] entropy analytics: pche(uniform-12)={pche(uniform12):.10f} bits, "
          f"point mass 0, KL identity <=1e-5, KL>=0 on 1,000 pairs ({elapsed:.1f}s)")


def test_gradient_check():
    watch = Stopwatch(120.0)
    torch.manual_seed(17)
    module = build_module(ModelConfig.tiny(), seed=17).double()
    rng = random.Random(41)
    songs = [("s", melody_piano_song(rng, n_measures=2))]
    examples, _ = draw_epoch_examples(songs, rng, ModelConfig.tiny(), 3)
    batch = batch_tensors(examples)
    sequence_loss(module, batch).backward()

    named = list(module.named_parameters())
    eps = 1e-5
    worst = 0.0
    for _ in range(100):
        name, param = named[rng.randrange(len(named))]
        flat = param.detach().reshape(-1)
        index = rng.randrange(flat.numel())
        analytic = float(param.grad.reshape(-1)[index])
        with torch.no_grad():
            original = float(flat[index])
            flat[index] = original + eps
            up = float(sequence_loss(module, batch))
            flat[index] = original - eps
            down = float(sequence_loss(module, batch))
            flat[index] = original
        numeric = (up - down) / (2 * eps)
        scale = max(abs(analytic), abs(numeric))
        if scale < 1e-6:
            assert abs(analytic - numeric) < 1e-8, name
        else:
            rel = abs(analytic - numeric) / scale
            worst = max(worst, rel)
            assert rel < 1e-3, (name, index, rel)
    elapsed = watch.check()
    print(f"\n[PASS] gradient check: 100 coordinates, worst relative error {worst:.2e} ({elapsed:.1f}s)")


def test_memorization_pipeline():
    watch = Stopwatch(900.0)
    rng = random.Random(7)
    songs = [(f"song-{i}", melody_piano_song(rng, n_measures=2)) for i in range(5)]
    config = ModelConfig(
        encoder_layers=3, decoder_layers=3, heads=4, model_dim=128,
        feedforward_dim=256, max_prompt_len=512, max_target_len=512, dropout=0.0,
    )
    plan = TrainPlan(
        epochs=650, effective_batch_size=50, checkpoint_every=500,
        examples_per_epoch=50, seed=11, learning_rate=1e-3,
    )
    losses: list[float] = []
    checkpoints = train(songs, config, plan, progress=lambda e, s, l: losses.append(l))
    assert [c.epoch for c in checkpoints] == [500, 650]
    loss_at_500 = float(np.mean(losses[495:500]))
    assert loss_at_500 < 0.1, f"loss after 500 epochs {loss_at_500}"
    final_loss = float(np.mean(losses[-5:]))
    assert final_loss < 0.1, f"final loss {final_loss}"

    # smoothed 10-step windows trend monotonically down (small jitter allowed)
    windows = [float(np.mean(losses[i:i + 10])) for i in range(0, len(losses) - 9, 10)]
    tolerance = 0.02 * windows[0]
    assert all(b <= a + tolerance for a, b in zip(windows, windows[1:]))

    model = SeqModel(checkpoints[-1])
    cold = SamplerConfig(temperature=1e-9, rhythmic_temperature=1e-9, seed=0, max_tokens=256)
    for song_id, song in songs:
        prompt, masks = make_accompaniment_prompt(song.tracks[0], song.measure_map)
        result = generate(model, prompt, masks, cold)
        f1 = note_f1(result.score.tracks[1], song.tracks[1])
        assert f1 == 1.0, f"{song_id}: F1 {f1}"

    report = checkpoint_curves(checkpoints, songs, cold, snippet_bars=16, n_snippets=5, seed=3)
    point = report.points[-1]
    assert point.kl_density < 0.05 and point.kl_phe < 0.05 and point.kl_pche < 0.05
    elapsed = watch.check()
    print(f"\n[PASS] memorization pipeline: loss {final_loss:.4f} < 0.1, note-F1 1.0 on all 5 "
          f"melodies, KL=({point.kl_density:.4f},{point.kl_phe:.4f},{point.kl_pche:.4f}) ({elapsed:.0f}s)")


def _nucleus_oracle(logits, allowed_ids, classes, config):
    """Independent nucleus-set computation: per-class scaling, sort, cumsum."""
    scaled = []
    for token, cls in zip(allowed_ids, classes):
        temp = config.rhythmic_temperature if cls in ("pos", "dur") else config.temperature
        scaled.append(logits[token] / temp)
    scaled = np.asarray(scaled, dtype=np.float64)
    weights = np.exp(scaled - scaled.max())
    probs = weights / weights.sum()
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], allowed_ids[i]))
    kept, mass = set(), 0.0
    for i in order:
        kept.add(allowed_ids[i])
        mass += probs[i]
        if mass >= config.nucleus_p - 1e-12:
            break
    return kept


def test_sampler_contracts():
    watch = Stopwatch(300.0)
    config = SamplerConfig()  # defaults: p=0.95, T=1.0, rhythmic 1.5
    rng = random.Random(3)
    np_rng = np.random.default_rng(12)
    pools = {
        "dur": [VOCAB.dur(d) for d in range(1, 193)],
        "pitch": [VOCAB.pitch(p) for p in range(128)],
        "pos": [VOCAB.pos(t) for t in range(96)] + [VOCAB.eos],
    }
    outside = 0
    for step in range(100_000):
        kind = ("dur", "pitch", "pos")[step % 3]
        ids = pools[kind]
        classes = [VOCAB.token_class(i) if VOCAB.token_class(i) != "mask" else "sentinel" for i in ids]
        logits = np.full(len(VOCAB), -1e30)
        logits[ids] = np_rng.normal(scale=3.0, size=len(ids))
        token, trace, _ = sample_step(logits, ids, classes, config, rng)
        if token not in _nucleus_oracle(logits, ids, classes, config):
            outside += 1
        expected = 1.5 if trace.token_class in ("pos", "dur") else 1.0
        assert trace.applied_temperature == expected
    assert outside == 0

    model = SeqModel(
        initial_checkpoint(
            ModelConfig.tiny(encoder_layers=1, decoder_layers=1, model_dim=8,
                             feedforward_dim=16, heads=1),
            seed=5,
        )
    )
    gen_rng = random.Random(8)
    prompts = []
    for ticks, bars in ((24, 1), (48, 1), (48, 2), (96, 1)):
        song = melody_piano_song(gen_rng, n_measures=bars, measure_ticks=ticks)
        prompts.append(make_accompaniment_prompt(song.tracks[0], song.measure_map))
    for i in range(10_000):
        prompt, masks = prompts[i % len(prompts)]
        result = generate(model, prompt, masks, SamplerConfig(seed=i, max_tokens=32))
        validate_completion(result.completion)
        for trace in result.traces:
            expected = 1.5 if trace.token_class in ("pos", "dur") else 1.0
            assert trace.applied_temperature == expected
    elapsed = watch.check()
    print(f"\n[PASS] sampler contracts: 0/100,000 steps outside the nucleus, temperatures exact, "
          f"10,000/10,000 generations grammar-valid ({elapsed:.0f}s)")


def test_protocol_accounting():
    watch = Stopwatch(1.0)
    samples = make_samples(n_melodies_per_type=10, per_model=7)  # 20 melodies
    trials = build_pairs(samples, ["listener-1", "listener-2"], seed=4)
    assert len(trials) == 280

    rng = random.Random(0)
    entries = []

    class _Entry:
        def __init__(self, song_id, score):
            self.song_id = song_id
            self.score = score

    songs = [(f"song-{i}", melody_piano_song(rng, n_measures=2)) for i in range(6)]
    entries = [_Entry(song_id, score) for song_id, score in songs]
    split = leave_one_out(entries, "song-2")
    assert [song_id for song_id, _ in [("song-2", None)] if song_id in split.train] == []
    kept = [(song_id, score) for song_id, score in songs if song_id in set(split.train)]
    examples, _ = draw_epoch_examples(kept, random.Random(1), ModelConfig.tiny(), 50)
    provenances = {ex.provenance for ex in examples}
    assert "song-2" not in provenances
    assert provenances <= set(split.train)
    elapsed = watch.check()
    print(f"\n[PASS] protocol accounting: 280 trials from 20x7x2; leave-one-out excluded "
          f"song absent from all {len(examples)} example provenances ({elapsed:.2f}s)")
