"""Neural re-ranking architectures over similarity matrices.

One matching pipeline, four ways to wire it:

- base: square conv filters over the q x d cosine matrix, per-cell max over
  the filters of each size, k-max over each query-term row, combined with
  per-term IDF by a dense stack.
- hp / hp_hf: same pipeline; each term's feature vector also carries its
  heading-position one-hot (and, for hp_hf, its heading-frequency bucket).
- hi / hi_hf: the title, intermediate and main components each get their own
  conv/pooling stack and dense head of fixed width, so the combination input
  has constant length and offsets no matter how tokens are distributed; for
  hi_hf the component's frequency bucket joins after pooling, before the head.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import (
    CheckpointError,
    EmbeddingError,
    FormatError,
    MissingContext,
    ShapeError,
    VariantError,
)

BASE = "base"
HP = "hp"
HP_HF = "hp_hf"
HI = "hi"
HI_HF = "hi_hf"
VARIANTS = (BASE, HP, HP_HF, HI, HI_HF)

COMPONENTS = ("title", "inter", "main")

CHECKPOINT_FORMAT_VERSION = 1


def uses_position_context(variant: str) -> bool:
    return variant in (HP, HP_HF)


def uses_hf(variant: str) -> bool:
    return variant in (HP_HF, HI_HF)


def is_heading_independent(variant: str) -> bool:
    return variant in (HI, HI_HF)


@dataclass(frozen=True)
class RankerConfig:
    q_len: int = 16
    d_len: int = 256
    filter_sizes: tuple[int, ...] = (2, 3)
    filters_per_size: int = 16
    k: int = 2
    variant: str = BASE
    hidden_sizes: tuple[int, ...] = (32,)
    include_raw_sim: bool = True
    hi_split: tuple[int, int, int] = (6, 4, 6)
    hi_head_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "filter_sizes", tuple(sorted(set(self.filter_sizes))))
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        object.__setattr__(self, "hi_split", tuple(self.hi_split))
        if self.q_len < 1 or self.d_len < 1:
            raise ValueError("q_len and d_len must be positive")
        if not self.filter_sizes or any(n < 1 for n in self.filter_sizes):
            raise ValueError("filter_sizes must be non-empty positive ints")
        if self.filters_per_size < 1:
            raise ValueError("filters_per_size must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if is_heading_independent(self.variant):
            if len(self.hi_split) != 3 or any(b < 1 for b in self.hi_split):
                raise ValueError("hi_split must be three positive budgets")
            if sum(self.hi_split) != self.q_len:
                raise ValueError("hi_split must partition q_len")
            if self.hi_head_dim < 1:
                raise ValueError("hi_head_dim must be positive")

    @property
    def num_signals(self) -> int:
        """Per-cell signal maps entering k-max: one per filter size, plus raw."""
        return len(self.filter_sizes) + (1 if self.include_raw_sim else 0)

    @property
    def matching_width(self) -> int:
        """Per-term width of the k-max block."""
        return self.k * self.num_signals

    @property
    def term_feature_width(self) -> int:
        """Per-term combination width for the flat (non-HI) layouts."""
        w = self.matching_width + 1  # + idf
        if uses_position_context(self.variant):
            w += 3
            if uses_hf(self.variant):
                w += 1
        return w

    @property
    def combine_input_width(self) -> int:
        if is_heading_independent(self.variant):
            return 3 * self.hi_head_dim
        return self.q_len * self.term_feature_width


def context_feature_indices(config: RankerConfig) -> list[int]:
    """Flat combination-input indices carrying hp/hf context (flat variants).

    Per-term layout is [k-max block, idf, hp(3), hf?]; zeroing the combination
    rows at these indices reduces a context variant to the base function.
    """
    if not uses_position_context(config.variant):
        return []
    width = config.term_feature_width
    base_width = config.matching_width + 1
    out = []
    for t in range(config.q_len):
        out.extend(range(t * width + base_width, (t + 1) * width))
    return out


# --- embeddings -------------------------------------------------------------------

class EmbeddingTable:
    """Token -> unit vector map; the last matrix row is the all-zero OOV slot.

    Rows are normalized at load so a dot product is a cosine; any OOV side
    then contributes 0 automatically.
    """

    def __init__(self, dim: int, tokens: Sequence[str], matrix: np.ndarray):
        if matrix.shape != (len(tokens), dim):
            raise EmbeddingError(
                f"matrix shape {matrix.shape} does not match {len(tokens)} x {dim}"
            )
        self.dim = dim
        self.vocab = {t: i for i, t in enumerate(tokens)}
        if len(self.vocab) != len(tokens):
            raise EmbeddingError("duplicate token in embedding table")
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        safe = np.where(norms > 0.0, norms, 1.0)
        normalized = (matrix / safe).astype(np.float64)
        self._matrix = np.vstack([normalized, np.zeros((1, dim))])
        self.oov_policy = "zero"

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def __len__(self) -> int:
        return len(self.vocab)

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        ids = [self.vocab.get(t, len(self.vocab)) for t in tokens]
        return self._matrix[ids]


def load_word2vec_text(path: str) -> EmbeddingTable:
    """word2vec text format: header "vocab_size dim", then token + dim reals."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"{path}:1: expected 'vocab_size dim' header")
        try:
            vocab_size, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise EmbeddingError(f"{path}:1: non-integer header") from exc
        if vocab_size < 0 or dim < 1:
            raise EmbeddingError(f"{path}:1: bad header values {vocab_size} {dim}")
        tokens: list[str] = []
        rows = np.empty((vocab_size, dim), dtype=np.float64)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected token plus {dim} values, got {len(parts) - 1}"
                )
            if len(tokens) == vocab_size:
                raise EmbeddingError(f"{path}:{lineno}: more rows than the header declares")
            try:
                rows[len(tokens)] = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric value") from exc
            tokens.append(parts[0])
    if len(tokens) != vocab_size:
        raise EmbeddingError(f"{path}: header declares {vocab_size} rows, found {len(tokens)}")
    return EmbeddingTable(dim, tokens, rows)


def write_word2vec_text(tokens: Sequence[str], matrix: np.ndarray, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(tokens)} {matrix.shape[1]}\n")
        for tok, row in zip(tokens, matrix):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray  # q_len x d_len, float64 in [-1, 1]
    query_mask: np.ndarray  # q_len bools, True on real token rows


def build_similarity_matrix(
    query_tokens: Sequence[str],
    doc_tokens: Sequence[str],
    emb: EmbeddingTable,
    q_len: int,
    d_len: int,
) -> SimilarityMatrix:
    """Cosine cells with exact-string override.

    Identical strings score 1.0 whether or not they are embedded; pairs with
    an OOV side and differing strings score 0.0.  Overlong inputs keep their
    leading tokens; padding stays zero.
    """
    qt = list(query_tokens)[:q_len]
    dt = list(doc_tokens)[:d_len]
    values = np.zeros((q_len, d_len), dtype=np.float64)
    mask = np.zeros(q_len, dtype=bool)
    mask[: len(qt)] = True
    if qt and dt:
        sims = emb.lookup(qt) @ emb.lookup(dt).T
        qa = np.array(qt, dtype=object)
        da = np.array(dt, dtype=object)
        sims[qa[:, None] == da[None, :]] = 1.0
        values[: len(qt), : len(dt)] = np.clip(sims, -1.0, 1.0)
    return SimilarityMatrix(values, mask)


# --- model --------------------------------------------------------------------------

def expected_param_shapes(config: RankerConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape the config implies, in build order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv_block(prefix: str):
        for n in config.filter_sizes:
            shapes[f"{prefix}conv{n}.filters"] = (config.filters_per_size, n, n)
            shapes[f"{prefix}conv{n}.bias"] = (config.filters_per_size,)

    if is_heading_independent(config.variant):
        per_term = config.matching_width + 1
        for comp, budget in zip(COMPONENTS, config.hi_split):
            conv_block(f"{comp}.")
            in_width = budget * per_term + (1 if uses_hf(config.variant) else 0)
            shapes[f"{comp}.head.W"] = (in_width, config.hi_head_dim)
            shapes[f"{comp}.head.b"] = (config.hi_head_dim,)
    else:
        conv_block("")
    width = config.combine_input_width
    for i, h in enumerate(config.hidden_sizes):
        shapes[f"combine.h{i}.W"] = (width, h)
        shapes[f"combine.h{i}.b"] = (h,)
        width = h
    shapes["combine.out.W"] = (width, 1)
    shapes["combine.out.b"] = (1,)
    return shapes


class RankerModel:
    """Parameters plus the scoring entry points for one variant."""

    def __init__(self, config: RankerConfig, params: dict[str, Parameter]):
        expected = expected_param_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ShapeError(f"parameter set mismatch: missing {missing}, extra {extra}")
        for name, shape in expected.items():
            if params[name].value.data.shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {params[name].value.data.shape}, expected {shape}"
                )
        self.config = config
        self._params = params

    @property
    def params(self) -> list[Parameter]:
        return list(self._params.values())

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value.data.copy() for name, p in self._params.items()}

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._params):
            raise ShapeError("parameter name mismatch")
        for name, arr in arrays.items():
            p = self._params[name]
            if arr.shape != p.value.data.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} does not match")
            p.value.data = arr.astype(np.float64).copy()
            p.value.grad = None

    # -- matching pipeline ---------------------------------------------------------

    def _matching_features(self, sim_values: np.ndarray, prefix: str = "") -> Tensor:
        """k-max block per query term: rows q_len, columns k per signal map.

        Signal order is raw similarity first (when enabled), then filter
        sizes ascending.
        """
        x = Tensor(sim_values)
        blocks: list[Tensor] = []
        if self.config.include_raw_sim:
            blocks.append(ag.kmax_rows(x, self.config.k))
        for n in self.config.filter_sizes:
            conv = ag.conv2d_square(
                x,
                self._params[f"{prefix}conv{n}.filters"].value,
                self._params[f"{prefix}conv{n}.bias"].value,
            )
            blocks.append(ag.kmax_rows(ag.channel_max(conv), self.config.k))
        return ag.concat(blocks, axis=1) if len(blocks) > 1 else blocks[0]

    def _combine(self, features: Tensor) -> Tensor:
        x = features
        for i in range(len(self.config.hidden_sizes)):
            x = ag.dense(
                x,
                self._params[f"combine.h{i}.W"].value,
                self._params[f"combine.h{i}.b"].value,
                activation="tanh",
            )
        out = ag.dense(
            x,
            self._params["combine.out.W"].value,
            self._params["combine.out.b"].value,
            activation="identity",
        )
        return ag.reshape(out, ())

    def _check_flat_inputs(self, sim: SimilarityMatrix, idf: np.ndarray) -> None:
        if sim.values.shape != (self.config.q_len, self.config.d_len):
            raise ShapeError(
                f"similarity matrix {sim.values.shape} does not match config "
                f"({self.config.q_len}, {self.config.d_len})"
            )
        if idf.shape != (self.config.q_len,):
            raise ShapeError(f"idf vector {idf.shape} must have length {self.config.q_len}")

    def score_base(self, sim: SimilarityMatrix, idf: np.ndarray) -> Tensor:
        if self.config.variant != BASE:
            raise VariantError(f"score_base on variant {self.config.variant!r}")
        self._check_flat_inputs(sim, idf)
        return self._score_flat(sim, idf, None, None)

    def score_with_context(
        self,
        sim: SimilarityMatrix,
        idf: np.ndarray,
        hp: np.ndarray,
        hf: np.ndarray | None = None,
    ) -> Tensor:
        if not uses_position_context(self.config.variant):
            raise VariantError(f"score_with_context on variant {self.config.variant!r}")
        self._check_flat_inputs(sim, idf)
        if hp.shape != (self.config.q_len, 3):
            raise ShapeError(f"hp matrix {hp.shape} must be ({self.config.q_len}, 3)")
        if uses_hf(self.config.variant):
            if hf is None:
                raise MissingContext("variant hp_hf needs the heading-frequency vector")
            if hf.shape != (self.config.q_len,):
                raise ShapeError(f"hf vector {hf.shape} must have length {self.config.q_len}")
        elif hf is not None:
            raise VariantError("variant hp does not take a heading-frequency vector")
        return self._score_flat(sim, idf, hp, hf)

    def _score_flat(
        self,
        sim: SimilarityMatrix,
        idf: np.ndarray,
        hp: np.ndarray | None,
        hf: np.ndarray | None,
    ) -> Tensor:
        q = self.config.q_len
        cols = [self._matching_features(sim.values), Tensor(idf.reshape(q, 1))]
        if hp is not None:
            cols.append(Tensor(hp))
        if hf is not None:
            cols.append(Tensor(hf.reshape(q, 1)))
        per_term = ag.concat(cols, axis=1)
        flat = ag.reshape(per_term, (q * self.config.term_feature_width,))
        return self._combine(flat)

    def score_heading_independent(
        self,
        sims: Sequence[SimilarityMatrix],
        idfs: Sequence[np.ndarray],
        hf_buckets: Sequence[float] | None = None,
    ) -> Tensor:
        """Score from per-component inputs in (title, inter, main) order."""
        if not is_heading_independent(self.config.variant):
            raise VariantError(
                f"score_heading_independent on variant {self.config.variant!r}"
            )
        if len(sims) != 3 or len(idfs) != 3:
            raise ShapeError("expected one similarity matrix and idf vector per component")
        if uses_hf(self.config.variant):
            if hf_buckets is None:
                raise MissingContext("variant hi_hf needs per-component frequency buckets")
            if len(hf_buckets) != 3:
                raise ShapeError("expected one frequency bucket per component")
        elif hf_buckets is not None:
            raise VariantError("variant hi does not take frequency buckets")
        heads = []
        for idx, (comp, budget) in enumerate(zip(COMPONENTS, self.config.hi_split)):
            sim, idf = sims[idx], idfs[idx]
            if sim.values.shape != (budget, self.config.d_len):
                raise ShapeError(
                    f"{comp} similarity matrix {sim.values.shape} must be "
                    f"({budget}, {self.config.d_len})"
                )
            if idf.shape != (budget,):
                raise ShapeError(f"{comp} idf vector {idf.shape} must have length {budget}")
            per_term = ag.concat(
                [self._matching_features(sim.values, prefix=f"{comp}."),
                 Tensor(idf.reshape(budget, 1))],
                axis=1,
            )
            pooled = ag.reshape(per_term, (budget * (self.config.matching_width + 1),))
            if uses_hf(self.config.variant):
                assert hf_buckets is not None
                pooled = ag.concat([pooled, Tensor(np.array([float(hf_buckets[idx])]))])
            heads.append(
                ag.dense(
                    pooled,
                    self._params[f"{comp}.head.W"].value,
                    self._params[f"{comp}.head.b"].value,
                    activation="tanh",
                )
            )
        return self._combine(ag.concat(heads))


def init_model(config: RankerConfig, seed: int = 0) -> RankerModel:
    """Fresh parameters: scaled-normal weights, zero biases, seeded rng."""
    rng = np.random.default_rng(seed)
    params: dict[str, Parameter] = {}
    for name, shape in expected_param_shapes(config).items():
        if name.endswith(".bias") or name.endswith(".b"):
            data = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) == 2 else shape[1] * shape[2]
            data = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        params[name] = Parameter(name, Tensor(data))
    return RankerModel(config, params)


# --- checkpoints -----------------------------------------------------------------------

_CONFIG_FIELDS = (
    "q_len", "d_len", "filter_sizes", "filters_per_size", "k", "variant",
    "hidden_sizes", "include_raw_sim", "hi_split", "hi_head_dim",
)


def config_to_dict(config: RankerConfig) -> dict:
    return {
        "q_len": config.q_len,
        "d_len": config.d_len,
        "filter_sizes": list(config.filter_sizes),
        "filters_per_size": config.filters_per_size,
        "k": config.k,
        "variant": config.variant,
        "hidden_sizes": list(config.hidden_sizes),
        "include_raw_sim": config.include_raw_sim,
        "hi_split": list(config.hi_split),
        "hi_head_dim": config.hi_head_dim,
    }


def config_from_dict(obj: dict) -> RankerConfig:
    unknown = set(obj) - set(_CONFIG_FIELDS)
    if unknown:
        raise CheckpointError(f"unknown config fields {sorted(unknown)}")
    kwargs = dict(obj)
    for key in ("filter_sizes", "hidden_sizes", "hi_split"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return RankerConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"bad config: {exc}") from exc


def save_checkpoint(model: RankerModel, path: str) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config_to_dict(model.config),
        "params": {
            name: {"shape": list(p.value.data.shape), "data": p.value.data.reshape(-1).tolist()}
            for name, p in model._params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> RankerModel:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad JSON: {exc.msg}", path=path, line=exc.lineno) from exc
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {payload.get('format_version')!r}"
        )
    config = config_from_dict(payload.get("config", {}))
    expected = expected_param_shapes(config)
    raw = payload.get("params", {})
    if set(raw) != set(expected):
        missing = sorted(set(expected) - set(raw))
        extra = sorted(set(raw) - set(expected))
        raise CheckpointError(f"parameter mismatch: missing {missing}, extra {extra}")
    params: dict[str, Parameter] = {}
    for name, shape in expected.items():
        entry = raw[name]
        if tuple(entry.get("shape", ())) != shape:
            raise CheckpointError(
                f"parameter {name}: stored shape {entry.get('shape')} != expected {list(shape)}"
            )
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"parameter {name}: data length {data.size} != shape")
        params[name] = Parameter(name, Tensor(data.reshape(shape)))
    return RankerModel(config, params)
