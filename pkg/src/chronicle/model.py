"""Sequence model over timeline tokens: vocabulary, training, forecasting,
top-k generative simulation, and gradient saliency."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .errors import EmptyCorpus, IndexOutOfVocab, SequenceTooLong
from .ontology import Ontology
from .timeline import Timeline
from .tokens import PAD_SPELLING, UNK_SPELLING


def min_context_len(max_concepts: int) -> int:
    """Token capacity needed for a fragment of ``max_concepts`` concepts:
    demographic prefix, separators between single-concept buckets, age
    changes, and the death marker."""
    return 2 * max_concepts + 8


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    embedding_dim: int = 64
    context_len: int = 256
    feedforward_dim: int = 256
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.embedding_dim % self.n_heads != 0:
            raise ValueError("embedding_dim must be divisible by n_heads")
        if min(self.n_layers, self.n_heads, self.context_len, self.feedforward_dim) < 1:
            raise ValueError("model dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def full_scale_config(max_concepts: int = 256) -> ModelConfig:
    """The published full-scale preset; desk tests use the defaults."""
    return ModelConfig(
        n_layers=16,
        n_heads=16,
        embedding_dim=512,
        context_len=min_context_len(max_concepts),
        feedforward_dim=2048,
        dropout=0.1,
    )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3.14e-4
    weight_decay: float = 1e-2
    batch_size: int = 32
    warmup_ratio: float = 0.01
    epochs: int = 10
    seed: int = 0
    schedule: str = "linear"

    def __post_init__(self) -> None:
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.schedule != "linear":
            raise ValueError(f"unsupported schedule: {self.schedule!r}")


@dataclass(frozen=True)
class SamplerConfig:
    top_k: int = 100
    temperature: float = 1.0
    seed: int = 0
    max_new_tokens: int = 15

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be nonnegative")


@dataclass
class Vocab:
    """Dense token <-> index bijection with special Pad and Unknown slots.

    Real tokens are ordered by training frequency (descending) then
    spelling, so identical corpora always produce identical vocabularies.
    """

    spellings: list[str]
    concept_types: dict[str, str] = field(default_factory=dict)
    index: dict[str, int] = field(init=False)

    PAD = 0
    UNK = 1

    def __post_init__(self) -> None:
        self.index = {s: i for i, s in enumerate(self.spellings)}

    def __len__(self) -> int:
        return len(self.spellings)

    def encode(self, spelling: str) -> int:
        return self.index.get(spelling, self.UNK)

    def encode_known(self, spelling: str) -> int | None:
        return self.index.get(spelling)

    def decode(self, idx: int) -> str:
        if not 0 <= idx < len(self.spellings):
            raise IndexOutOfVocab(f"index {idx} outside vocab of size {len(self)}")
        return self.spellings[idx]

    def encode_timeline(self, timeline: Timeline) -> np.ndarray:
        return np.array([self.encode(s) for s in timeline.spellings()], dtype=np.int64)

    def is_concept(self, idx: int) -> bool:
        return self.spellings[idx].startswith("C:")

    def concept_id(self, idx: int) -> str:
        return self.spellings[idx][2:]

    def concept_indices(self) -> np.ndarray:
        return np.array(
            [i for i, s in enumerate(self.spellings) if s.startswith("C:")],
            dtype=np.int64,
        )

    def type_of_index(self, idx: int) -> str | None:
        return self.concept_types.get(self.spellings[idx])


def build_vocab(
    train_timelines: Sequence[Timeline], ontology: Ontology | None = None
) -> Vocab:
    """Vocabulary over every token spelling seen in training fragments."""
    counts: Counter[str] = Counter()
    for tl in train_timelines:
        counts.update(tl.spellings())
    if not counts:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    ordered = sorted(counts, key=lambda s: (-counts[s], s))
    spellings = [PAD_SPELLING, UNK_SPELLING] + ordered
    concept_types: dict[str, str] = {}
    if ontology is not None:
        for s in ordered:
            if s.startswith("C:"):
                concept_types[s] = ontology.type_of(s[2:]).value
    return Vocab(spellings=spellings, concept_types=concept_types)


@dataclass
class Model:
    config: ModelConfig
    vocab: Vocab
    params: dict[str, np.ndarray]

    @classmethod
    def init(
        cls, config: ModelConfig, vocab: Vocab, seed: int = 0, dtype=np.float32
    ) -> "Model":
        params = nn.init_params(
            vocab_size=len(vocab),
            context_len=config.context_len,
            n_layers=config.n_layers,
            n_heads=config.n_heads,
            d_model=config.embedding_dim,
            d_ff=config.feedforward_dim,
            seed=seed,
            dtype=dtype,
        )
        return cls(config=config, vocab=vocab, params=params)

    def astype(self, dtype) -> "Model":
        return Model(
            config=self.config,
            vocab=self.vocab,
            params={k: v.astype(dtype) for k, v in self.params.items()},
        )

    # -- inference ---------------------------------------------------------

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.shape[-1] > self.config.context_len:
            raise SequenceTooLong(
                f"sequence of {ids.shape[-1]} tokens exceeds context "
                f"{self.config.context_len}"
            )
        if ids.size and (ids.min() < 0 or ids.max() >= len(self.vocab)):
            raise IndexOutOfVocab("token index outside vocabulary")

    def forward(self, tokens: Sequence[int] | np.ndarray) -> np.ndarray:
        """Logits for one sequence, shape (len, vocab)."""
        ids = np.asarray(tokens, dtype=np.int64)[None, :]
        self._check_ids(ids)
        return nn.forward(
            self.params, self.config.n_layers, self.config.n_heads, ids
        )[0]

    def forward_batch(self, ids: np.ndarray) -> np.ndarray:
        self._check_ids(ids)
        return nn.forward(self.params, self.config.n_layers, self.config.n_heads, ids)

    def next_distribution(self, prefix: Sequence[int] | np.ndarray) -> np.ndarray:
        """Probability of each vocabulary token following the prefix."""
        prefix = np.asarray(prefix, dtype=np.int64)
        if prefix.size == 0:
            raise ValueError("prefix must be nonempty")
        logits = self.forward(prefix)
        return nn.softmax(logits)[-1]

    # -- training objective --------------------------------------------------

    def _valid_mask(self, batch: np.ndarray) -> np.ndarray:
        targets = batch[:, 1:]
        return (targets != self.vocab.PAD) & (targets != self.vocab.UNK)

    def loss(self, batch: np.ndarray) -> float:
        """Mean negative log-likelihood over non-pad, non-unknown targets."""
        self._check_ids(batch)
        value, _ = nn.loss_and_grads(
            self.params, self.config.n_layers, self.config.n_heads,
            batch, self._valid_mask(batch), want_grads=False,
        )
        return value

    def gradients(self, batch: np.ndarray) -> dict[str, np.ndarray]:
        self._check_ids(batch)
        _, grads = nn.loss_and_grads(
            self.params, self.config.n_layers, self.config.n_heads,
            batch, self._valid_mask(batch),
        )
        return grads

    # -- generation ----------------------------------------------------------

    def generate(
        self, prompt: Sequence[int], sc: SamplerConfig
    ) -> list[tuple[int, bool]]:
        """Extend the prompt by top-k temperature sampling.

        Returns (token index, generated?) pairs covering prompt and
        continuation. Pad and Unknown are excluded from the candidate
        pool; sampling stops early after emitting a death token.
        """
        ids = list(int(t) for t in prompt)
        if len(ids) > self.config.context_len:
            raise SequenceTooLong("prompt exceeds context window")
        rng = np.random.default_rng(sc.seed)
        death_idx = self.vocab.encode_known("DEATH")
        out: list[tuple[int, bool]] = [(t, False) for t in ids]
        for _ in range(sc.max_new_tokens):
            ctx = ids[-self.config.context_len :]
            logits = self.forward(ctx)[-1] / sc.temperature
            logits[self.vocab.PAD] = -np.inf
            logits[self.vocab.UNK] = -np.inf
            order = np.argsort(-logits, kind="stable")
            k = min(sc.top_k, len(order))
            chosen = order[:k]
            weights = nn.softmax(logits[chosen].astype(np.float64))
            nxt = int(rng.choice(chosen, p=weights))
            ids.append(nxt)
            out.append((nxt, True))
            if death_idx is not None and nxt == death_idx:
                break
        return out

    # -- attribution -----------------------------------------------------------

    def saliency(self, prefix: Sequence[int], target: int) -> np.ndarray:
        """Importance of each prefix position for the target token's logit
        at the last position: L2 norm of the logit's gradient with respect
        to the position's input embedding, normalized to sum to one."""
        ids = np.asarray(prefix, dtype=np.int64)[None, :]
        if ids.size == 0:
            raise ValueError("prefix must be nonempty")
        self._check_ids(ids)
        if not 0 <= target < len(self.vocab):
            raise IndexOutOfVocab(f"target index {target} outside vocabulary")
        logits, cache = nn.forward(
            self.params, self.config.n_layers, self.config.n_heads, ids,
            want_cache=True,
        )
        dlogits = np.zeros_like(logits)
        dlogits[0, -1, target] = 1.0
        _, dx_embed = nn.backward(
            self.params, self.config.n_layers, self.config.n_heads, cache, dlogits
        )
        norms = np.linalg.norm(dx_embed[0], axis=-1)
        total = norms.sum()
        if total == 0.0:
            return np.full(norms.shape, 1.0 / norms.size)
        return norms / total


# ---------------------------------------------------------------------------
# Training


def _pad_batch(seqs: list[np.ndarray], pad: int) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def _lr_at(step: int, total: int, base: float, warmup_ratio: float) -> float:
    warmup = int(math.ceil(warmup_ratio * total))
    if warmup > 0 and step <= warmup:
        return base * step / warmup
    if total == warmup:
        return base
    return base * (total - step) / (total - warmup)


def train(
    model: Model, corpus: Sequence[Timeline], tc: TrainConfig
) -> tuple[Model, list[float]]:
    """Optimize in place with decoupled-weight-decay Adam and a linear
    warmup/decay schedule; returns the model and per-epoch mean loss."""
    if not corpus:
        raise EmptyCorpus("training corpus is empty")
    encoded = [model.vocab.encode_timeline(tl) for tl in corpus]
    for i, seq in enumerate(encoded):
        if len(seq) > model.config.context_len:
            raise SequenceTooLong(
                f"fragment {i} has {len(seq)} tokens; context is "
                f"{model.config.context_len}"
            )

    rng = np.random.default_rng(tc.seed)
    dropout_rng = np.random.default_rng(tc.seed + 1) if model.config.dropout > 0 else None
    n_batches = math.ceil(len(encoded) / tc.batch_size)
    total_steps = tc.epochs * n_batches
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    m_state = {k: np.zeros_like(v) for k, v in model.params.items()}
    v_state = {k: np.zeros_like(v) for k, v in model.params.items()}
    history: list[float] = []
    step = 0
    for _ in range(tc.epochs):
        order = rng.permutation(len(encoded))
        epoch_nll = 0.0
        epoch_targets = 0
        for b in range(n_batches):
            idx = order[b * tc.batch_size : (b + 1) * tc.batch_size]
            batch = _pad_batch([encoded[i] for i in idx], model.vocab.PAD)
            valid = (batch[:, 1:] != model.vocab.PAD) & (batch[:, 1:] != model.vocab.UNK)
            loss, grads = nn.loss_and_grads(
                model.params, model.config.n_layers, model.config.n_heads,
                batch, valid,
                dropout=model.config.dropout, rng=dropout_rng,
            )
            step += 1
            lr = _lr_at(step, total_steps, tc.learning_rate, tc.warmup_ratio)
            t_corr1 = 1.0 - beta1**step
            t_corr2 = 1.0 - beta2**step
            for key, p in model.params.items():
                g = grads[key]
                m_state[key] = beta1 * m_state[key] + (1 - beta1) * g
                v_state[key] = beta2 * v_state[key] + (1 - beta2) * g * g
                update = (m_state[key] / t_corr1) / (
                    np.sqrt(v_state[key] / t_corr2) + eps
                )
                if p.ndim >= 2:  # decay matrices only, not biases or norms
                    update = update + tc.weight_decay * p
                p -= (lr * update).astype(p.dtype)
            n_valid = int(valid.sum())
            epoch_nll += loss * n_valid
            epoch_targets += n_valid
        history.append(epoch_nll / max(1, epoch_targets))
    return model, history
