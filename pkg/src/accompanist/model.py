"""Desk-scale encoder-decoder denoising model, training loops, checkpoints.

The architecture is a small T5-style transformer: shared input/output
embedding, bucketed relative position bias, RMSNorm pre-norm blocks. Training
is plain Adam with gradient accumulation up to the effective batch size, and
is bit-reproducible from a seed in single-threaded mode.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import struct
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence, TextIO

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .codec import VOCAB, TokenSequence, TrainingExample, make_training_example
from .score import Score

_REL_BUCKETS = 32
_REL_MAX_DISTANCE = 128

DEFAULT_PRETRAIN_LR = 1e-4
DEFAULT_FINETUNE_LR = 5e-5

CHECKPOINT_MAGIC = b"ACPKT001"


class CapacityError(ValueError):
    """Sequence longer than the configured model capacity."""


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint container."""


@dataclass(frozen=True)
class ModelConfig:
    encoder_layers: int = 4
    decoder_layers: int = 4
    heads: int = 8
    model_dim: int = 256
    feedforward_dim: int = 1024
    vocab_size: int = len(VOCAB)
    max_prompt_len: int = 2048
    max_target_len: int = 2048
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("encoder_layers", "decoder_layers", "heads", "model_dim",
                     "feedforward_dim", "vocab_size", "max_prompt_len", "max_target_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """A minimal config for gradient checks and fast tests."""
        base = dict(encoder_layers=2, decoder_layers=2, heads=2, model_dim=16,
                    feedforward_dim=32, max_prompt_len=512, max_target_len=512, dropout=0.0)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class TrainPlan:
    epochs: int
    effective_batch_size: int = 128
    micro_batch_size: int | None = None  # None: one micro-batch per step
    checkpoint_every: int = 10
    learning_rate: float = DEFAULT_PRETRAIN_LR
    seed: int = 0
    examples_per_epoch: int | None = None  # None: one example per song
    max_grad_norm: float | None = 1.0
    control_probability: float = 0.0  # density controls on masked training cells
    deterministic: bool = True  # single-threaded, bit-reproducible

    def __post_init__(self):
        if self.epochs < 0 or self.effective_batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("epochs must be >= 0; batch and checkpoint cadence >= 1")
        micro = self.micro_batch_size
        if micro is not None and (micro < 1 or self.effective_batch_size % micro):
            raise ValueError("effective_batch_size must be micro_batch_size x accumulation_steps")


def _relative_bucket(relative_position: torch.Tensor, bidirectional: bool) -> torch.Tensor:
    """T5-style log-spaced distance buckets for relative attention bias."""
    num_buckets = _REL_BUCKETS
    if bidirectional:
        num_buckets //= 2
        bucket = (relative_position > 0).long() * num_buckets
        rel = relative_position.abs()
    else:
        bucket = torch.zeros_like(relative_position)
        rel = (-relative_position).clamp(min=0)
    max_exact = num_buckets // 2
    large = max_exact + (
        torch.log(rel.clamp(min=1).float() / max_exact)
        / math.log(_REL_MAX_DISTANCE / max_exact)
        * (num_buckets - max_exact)
    ).long()
    large = large.clamp(max=num_buckets - 1)
    return bucket + torch.where(rel < max_exact, rel, large)


class RMSNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        variance = x.pow(2).mean(-1, keepdim=True)
        return self.weight * x * torch.rsqrt(variance + 1e-6)


class Attention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        dim = config.model_dim
        self.heads = config.heads
        self.head_dim = dim // config.heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.o = nn.Linear(dim, dim, bias=False)

    def _split(self, x):
        b, s, _ = x.shape
        return x.view(b, s, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, query, keys_values, bias=None, mask=None, cache=None):
        """Attention with optional additive bias and key mask.

        `mask`: (B, S_k) bool, True where attendable. `cache`: dict holding
        accumulated k/v for incremental decoding; new keys are appended.
        """
        q = self._split(self.q(query))
        if cache is not None and "k" in cache and keys_values is None:
            k, v = cache["k"], cache["v"]  # precomputed cross-attention
        else:
            k = self._split(self.k(keys_values))
            v = self._split(self.v(keys_values))
            if cache is not None:
                if "k" in cache:
                    k = torch.cat([cache["k"], k], dim=2)
                    v = torch.cat([cache["v"], v], dim=2)
                cache["k"], cache["v"] = k, v
        scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if bias is not None:
            scores = scores + bias
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = torch.matmul(weights, v)
        b, _, s, _ = out.shape
        return self.o(out.transpose(1, 2).reshape(b, s, -1))


class FeedForward(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.up = nn.Linear(config.model_dim, config.feedforward_dim, bias=False)
        self.down = nn.Linear(config.feedforward_dim, config.model_dim, bias=False)

    def forward(self, x):
        return self.down(F.relu(self.up(x)))


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.norm1 = RMSNorm(config.model_dim)
        self.attn = Attention(config)
        self.norm2 = RMSNorm(config.model_dim)
        self.ffn = FeedForward(config)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, bias, mask):
        h = self.norm1(x)
        x = x + self.dropout(self.attn(h, h, bias=bias, mask=mask))
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.norm1 = RMSNorm(config.model_dim)
        self.self_attn = Attention(config)
        self.norm2 = RMSNorm(config.model_dim)
        self.cross_attn = Attention(config)
        self.norm3 = RMSNorm(config.model_dim)
        self.ffn = FeedForward(config)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, enc_out, self_bias, enc_mask, self_cache=None, cross_cache=None):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, bias=self_bias, cache=self_cache))
        h = self.norm2(x)
        if cross_cache is not None and "k" not in cross_cache:
            cross_cache["k"] = self.cross_attn._split(self.cross_attn.k(enc_out))
            cross_cache["v"] = self.cross_attn._split(self.cross_attn.v(enc_out))
        x = x + self.dropout(
            self.cross_attn(h, None if cross_cache is not None else enc_out,
                            mask=enc_mask, cache=cross_cache)
        )
        x = x + self.dropout(self.ffn(self.norm3(x)))
        return x


class Seq2Seq(nn.Module):
    """Encoder-decoder over the token vocabulary with tied embeddings."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.model_dim)
        self.enc_rel_bias = nn.Embedding(_REL_BUCKETS, config.heads)
        self.dec_rel_bias = nn.Embedding(_REL_BUCKETS, config.heads)
        self.encoder = nn.ModuleList(EncoderLayer(config) for _ in range(config.encoder_layers))
        self.decoder = nn.ModuleList(DecoderLayer(config) for _ in range(config.decoder_layers))
        self.enc_norm = RMSNorm(config.model_dim)
        self.dec_norm = RMSNorm(config.model_dim)
        self.dropout = nn.Dropout(config.dropout)
        nn.init.normal_(self.embedding.weight, std=0.02)
        nn.init.normal_(self.enc_rel_bias.weight, std=0.02)
        nn.init.normal_(self.dec_rel_bias.weight, std=0.02)

    def _bias(self, q_len: int, k_len: int, bidirectional: bool, device, dtype):
        # queries occupy the last q_len of the k_len absolute positions, which
        # makes the same table serve full and incremental decoding
        query_pos = torch.arange(q_len, device=device)[:, None] + (k_len - q_len)
        key_pos = torch.arange(k_len, device=device)[None, :]
        table = self.enc_rel_bias if bidirectional else self.dec_rel_bias
        bias = table(_relative_bucket(key_pos - query_pos, bidirectional))  # (q, k, heads)
        return bias.permute(2, 0, 1)[None].to(dtype)

    def encode(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.dropout(self.embedding(tokens))
        bias = self._bias(tokens.shape[1], tokens.shape[1], True, tokens.device, x.dtype)
        for layer in self.encoder:
            x = layer(x, bias, mask)
        return self.enc_norm(x)

    def decode(self, tokens: torch.Tensor, enc_out: torch.Tensor, enc_mask: torch.Tensor) -> torch.Tensor:
        s = tokens.shape[1]
        x = self.dropout(self.embedding(tokens))
        bias = self._bias(s, s, False, tokens.device, x.dtype)
        causal = torch.ones(s, s, dtype=torch.bool, device=tokens.device).tril()
        bias = bias.masked_fill(~causal[None, None], float("-inf"))
        for layer in self.decoder:
            x = layer(x, enc_out, bias, enc_mask)
        x = self.dec_norm(x)
        return torch.matmul(x, self.embedding.weight.t())

    def decode_step(self, token: torch.Tensor, enc_out, enc_mask, caches, step: int) -> torch.Tensor:
        """One incremental decoder step; caches hold per-layer self/cross k,v."""
        x = self.embedding(token)[:, None, :]
        bias = self._bias(1, step + 1, False, token.device, x.dtype)
        for layer, cache in zip(self.decoder, caches):
            x = layer(x, enc_out, bias, enc_mask,
                      self_cache=cache["self"], cross_cache=cache["cross"])
        x = self.dec_norm(x)
        return torch.matmul(x, self.embedding.weight.t())[:, 0, :]


@dataclass(eq=False)
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    epoch: int
    vocab_hash: str
    base_hash: str | None = None
    optimizer_state: dict[str, np.ndarray] | None = None

    def to_bytes(self) -> bytes:
        return save_checkpoint_bytes(self)


def _tensor_section(table: dict[str, np.ndarray]):
    manifest = []
    blobs = []
    for name in sorted(table):
        arr = np.ascontiguousarray(table[name], dtype=np.float32)
        manifest.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    return manifest, blobs


def save_checkpoint_bytes(checkpoint: Checkpoint) -> bytes:
    params_manifest, params_blobs = _tensor_section(checkpoint.params)
    opt_manifest, opt_blobs = (None, [])
    if checkpoint.optimizer_state is not None:
        opt_manifest, opt_blobs = _tensor_section(checkpoint.optimizer_state)
    header = json.dumps(
        {
            "version": 1,
            "config": asdict(checkpoint.config),
            "epoch": checkpoint.epoch,
            "vocab_hash": checkpoint.vocab_hash,
            "base_hash": checkpoint.base_hash,
            "params": params_manifest,
            "optimizer": opt_manifest,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", len(header))
    out += header
    for blob in params_blobs + opt_blobs:
        out += blob
    return bytes(out)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint_bytes(checkpoint))


def load_checkpoint_bytes(data: bytes) -> Checkpoint:
    if len(data) < len(CHECKPOINT_MAGIC) + 4 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint container (bad magic)")
    header_len = struct.unpack("<I", data[8:12])[0]
    if len(data) < 12 + header_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[12:12 + header_len])
    except json.JSONDecodeError as err:
        raise CheckpointError(f"corrupt checkpoint header: {err}") from None
    if header.get("version") != 1:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")

    offset = 12 + header_len

    def read_section(manifest):
        nonlocal offset
        table = {}
        for entry in manifest:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            nbytes = count * 4
            if offset + nbytes > len(data):
                raise CheckpointError(f"truncated tensor {entry['name']}")
            arr = np.frombuffer(data[offset:offset + nbytes], dtype=np.float32)
            table[entry["name"]] = arr.reshape(entry["shape"]).copy()
            offset += nbytes
        return table

    params = read_section(header["params"])
    opt = read_section(header["optimizer"]) if header["optimizer"] is not None else None
    return Checkpoint(
        config=ModelConfig(**header["config"]),
        params=params,
        epoch=header["epoch"],
        vocab_hash=header["vocab_hash"],
        base_hash=header["base_hash"],
        optimizer_state=opt,
    )


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())


def checkpoint_hash(checkpoint: Checkpoint) -> str:
    return hashlib.sha256(save_checkpoint_bytes(checkpoint)).hexdigest()


def build_module(config: ModelConfig, seed: int | None = None) -> Seq2Seq:
    if seed is not None:
        torch.manual_seed(seed)
    return Seq2Seq(config)


def module_params(module: Seq2Seq) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy().astype(np.float32, copy=True)
            for name, p in module.state_dict().items()}


def load_params(module: Seq2Seq, params: dict[str, np.ndarray]) -> None:
    state = {name: torch.from_numpy(np.ascontiguousarray(arr)) for name, arr in params.items()}
    module.load_state_dict(state)


def initial_checkpoint(config: ModelConfig, seed: int = 0) -> Checkpoint:
    module = build_module(config, seed)
    return Checkpoint(config, module_params(module), epoch=0, vocab_hash=VOCAB.manifest_hash())


class SeqModel:
    """Inference wrapper binding a module to checkpoint parameters."""

    def __init__(self, checkpoint: Checkpoint):
        self.config = checkpoint.config
        self.module = build_module(checkpoint.config, seed=0)
        load_params(self.module, checkpoint.params)
        self.module.eval()

    def _check_capacity(self, prompt_len: int, prefix_len: int) -> None:
        if prompt_len > self.config.max_prompt_len:
            raise CapacityError(f"prompt of {prompt_len} tokens exceeds {self.config.max_prompt_len}")
        if prefix_len + 1 > self.config.max_target_len:
            raise CapacityError(f"target prefix of {prefix_len} tokens exceeds {self.config.max_target_len}")

    @torch.no_grad()
    def next_logits(self, prompt: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
        """Logits for the token following `prefix`, teacher-forcing the rest."""
        return self.batch_next_logits([prompt], [prefix])[0]

    @torch.no_grad()
    def batch_next_logits(
        self, prompts: Sequence[Sequence[int]], prefixes: Sequence[Sequence[int]]
    ) -> np.ndarray:
        for prompt, prefix in zip(prompts, prefixes):
            self._check_capacity(len(prompt), len(prefix))
        enc_tokens, enc_mask = _pad_batch(prompts, VOCAB.pad)
        dec_inputs = [[VOCAB.pad] + list(prefix) for prefix in prefixes]
        dec_tokens, _ = _pad_batch(dec_inputs, VOCAB.pad)
        enc_out = self.module.encode(enc_tokens, enc_mask)
        logits = self.module.decode(dec_tokens, enc_out, enc_mask)
        rows = [logits[i, len(prefix), :] for i, prefix in enumerate(prefixes)]
        return torch.stack(rows).cpu().numpy()

    @torch.no_grad()
    def begin(self, prompt: Sequence[int]) -> "DecodeCursor":
        self._check_capacity(len(prompt), 0)
        tokens = torch.tensor([list(prompt)], dtype=torch.long)
        mask = torch.ones_like(tokens, dtype=torch.bool)
        enc_out = self.module.encode(tokens, mask)
        return DecodeCursor(self, enc_out, mask)


class DecodeCursor:
    """Incremental decoding with per-layer KV caches; one sequence at a time."""

    def __init__(self, model: SeqModel, enc_out, enc_mask):
        self.model = model
        self.enc_out = enc_out
        self.enc_mask = enc_mask
        self.caches = [{"self": {}, "cross": {}} for _ in model.module.decoder]
        self.step_index = 0

    @torch.no_grad()
    def step(self, token: int) -> np.ndarray:
        """Feed `token` (pad to start) and return next-token logits."""
        if self.step_index + 1 > self.model.config.max_target_len:
            raise CapacityError("decode exceeded max_target_len")
        logits = self.model.module.decode_step(
            torch.tensor([token], dtype=torch.long),
            self.enc_out,
            self.enc_mask,
            self.caches,
            self.step_index,
        )
        self.step_index += 1
        return logits[0].cpu().numpy()


def _pad_batch(seqs: Sequence[Sequence[int]], pad: int):
    width = max(len(s) for s in seqs)
    tokens = torch.full((len(seqs), width), pad, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool)
    for i, seq in enumerate(seqs):
        tokens[i, :len(seq)] = torch.tensor(list(seq), dtype=torch.long)
        mask[i, :len(seq)] = True
    return tokens, mask


def forward(checkpoint: Checkpoint, prompt: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
    """Next-token logits; convenience wrapper that rebuilds the module."""
    return SeqModel(checkpoint).next_logits(prompt, prefix)


def batch_tensors(examples: Sequence[TrainingExample]):
    """Pack examples into encoder/decoder tensors for the loss."""
    prompts = [list(ex.input.ids) for ex in examples]
    targets = [list(ex.target.ids) for ex in examples]
    enc_tokens, enc_mask = _pad_batch(prompts, VOCAB.pad)
    dec_inputs = [[VOCAB.pad] + t[:-1] for t in targets]
    dec_tokens, _ = _pad_batch(dec_inputs, VOCAB.pad)
    labels, label_mask = _pad_batch(targets, VOCAB.pad)
    return enc_tokens, enc_mask, dec_tokens, labels, label_mask


def sequence_loss(module: Seq2Seq, batch) -> torch.Tensor:
    """Mean teacher-forced cross-entropy over non-padding target tokens."""
    enc_tokens, enc_mask, dec_tokens, labels, label_mask = batch
    enc_out = module.encode(enc_tokens, enc_mask)
    logits = module.decode(dec_tokens, enc_out, enc_mask)
    losses = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), reduction="none"
    ).reshape(labels.shape)
    count = label_mask.sum()
    return (losses * label_mask).sum() / count


def loss(checkpoint: Checkpoint, examples: Sequence[TrainingExample]) -> float:
    if not examples:
        raise ValueError("empty batch")
    for ex in examples:
        if len(ex.input) > checkpoint.config.max_prompt_len or len(ex.target) > checkpoint.config.max_target_len:
            raise CapacityError("example exceeds model capacity")
    module = build_module(checkpoint.config, seed=0)
    load_params(module, checkpoint.params)
    module.eval()
    with torch.no_grad():
        return float(sequence_loss(module, batch_tensors(examples)))


def draw_epoch_examples(
    songs: Sequence[tuple[str, Score]],
    rng: random.Random,
    config: ModelConfig,
    count: int,
    control_probability: float = 0.0,
) -> tuple[list[TrainingExample], int]:
    order = list(range(len(songs)))
    rng.shuffle(order)
    examples: list[TrainingExample] = []
    skipped = 0
    cursor = 0
    failures = 0
    while len(examples) < count:
        song_id, score = songs[order[cursor % len(songs)]]
        cursor += 1
        example = make_training_example(
            score, rng, config.max_prompt_len,
            provenance=song_id, control_probability=control_probability,
        )
        if example is None or len(example.target) > config.max_target_len:
            skipped += 1
            failures += 1
            if failures > 20 * len(songs) + 100:
                raise RuntimeError("corpus too dense for the configured sequence capacity")
            continue
        failures = 0
        examples.append(example)
    return examples, skipped


def _run_training(
    songs: Sequence[tuple[str, Score]],
    config: ModelConfig,
    plan: TrainPlan,
    start_params: dict[str, np.ndarray] | None,
    base_hash: str | None,
    log: TextIO | None,
    progress: Callable[[int, int, float], None] | None = None,
) -> list[Checkpoint]:
    if not songs:
        raise ValueError("empty corpus")
    if plan.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(plan.seed)
    module = build_module(config)
    if start_params is not None:
        load_params(module, start_params)
    module.train()
    optimizer = torch.optim.Adam(module.parameters(), lr=plan.learning_rate)
    rng = random.Random(plan.seed ^ 0x5EED)
    vocab_hash = VOCAB.manifest_hash()

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(config, module_params(module), epoch, vocab_hash, base_hash)

    if log:
        log.write("epoch,step,loss,lr,wall_ms\n")
    if plan.epochs == 0:
        return [snapshot(0)]

    micro = plan.micro_batch_size or plan.effective_batch_size
    n_per_epoch = plan.examples_per_epoch if plan.examples_per_epoch is not None else len(songs)
    checkpoints: list[Checkpoint] = []
    for epoch in range(1, plan.epochs + 1):
        examples, _ = draw_epoch_examples(
            songs, rng, config, n_per_epoch, plan.control_probability
        )
        for step, lo in enumerate(range(0, len(examples), plan.effective_batch_size)):
            step_examples = examples[lo:lo + plan.effective_batch_size]
            started = time.perf_counter()
            optimizer.zero_grad()
            total = len(step_examples)
            step_loss = 0.0
            for mlo in range(0, total, micro):
                chunk = step_examples[mlo:mlo + micro]
                piece = sequence_loss(module, batch_tensors(chunk)) * (len(chunk) / total)
                piece.backward()
                step_loss += float(piece.detach())
            if plan.max_grad_norm is not None:
                torch.nn.utils.clip_grad_norm_(module.parameters(), plan.max_grad_norm)
            optimizer.step()
            if log:
                wall_ms = (time.perf_counter() - started) * 1000
                log.write(f"{epoch},{step},{step_loss:.6f},{plan.learning_rate},{wall_ms:.1f}\n")
            if progress:
                progress(epoch, step, step_loss)
        if epoch % plan.checkpoint_every == 0 or epoch == plan.epochs:
            checkpoints.append(snapshot(epoch))
    return checkpoints


def train(
    songs: Sequence[tuple[str, Score]],
    config: ModelConfig,
    plan: TrainPlan,
    log: TextIO | None = None,
    progress: Callable[[int, int, float], None] | None = None,
) -> list[Checkpoint]:
    """Train from scratch; returns a checkpoint every `checkpoint_every` epochs."""
    return _run_training(songs, config, plan, None, None, log, progress)


def finetune(
    base: Checkpoint,
    songs: Sequence[tuple[str, Score]],
    plan: TrainPlan,
    log: TextIO | None = None,
    progress: Callable[[int, int, float], None] | None = None,
) -> list[Checkpoint]:
    """Continue training from `base`; epochs restart at 0 for this phase."""
    if base.vocab_hash != VOCAB.manifest_hash():
        raise CheckpointError("checkpoint vocabulary does not match this build")
    return _run_training(
        songs, base.config, plan, base.params, checkpoint_hash(base), log, progress
    )
