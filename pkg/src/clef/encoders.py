"""Sequence encoders behind a pluggable interface.

Two implementations: a stacked gated recurrent encoder and a small causal
self-attention encoder. Both consume per-step input vectors (covariates
concatenated with the step's condition embedding), project them to the
hidden size, add the step's time embedding, and summarize the history in
the representation at the last position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ClefError, ShapeMismatch

ATTENTION_MASK_VALUE = -1e9


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dim: int
    kind: str = "recurrent"
    layers: int = 4
    heads: int = 4
    dropout: float = 0.6

    def __post_init__(self):
        if self.kind not in ("recurrent", "attention"):
            raise ClefError(f"unknown encoder kind {self.kind!r}")
        if self.input_dim < 1 or self.hidden_dim < 1 or self.layers < 1:
            raise ClefError("encoder dimensions and layer count must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ClefError("dropout must be in [0, 1)")
        if self.kind == "attention":
            if self.heads < 1 or self.hidden_dim % self.heads != 0:
                raise ClefError("hidden_dim must be divisible by heads")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "kind": self.kind,
            "layers": self.layers,
            "heads": self.heads,
            "dropout": self.dropout,
        }


def _init_matrix(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    return Tensor(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), requires_grad=True)


def _init_bias(dim: int) -> Tensor:
    return Tensor(np.zeros(dim), requires_grad=True)


class SequenceEncoder:
    """Common projection layer plus the per-kind stack."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.w_in = _init_matrix(rng, config.input_dim, config.hidden_dim)
        self.b_in = _init_bias(config.hidden_dim)

    def parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def encode_all(self, steps: list[Tensor], time_embs: list[Tensor], *,
                   train: bool = False, rng: np.random.Generator | None = None) -> list[Tensor]:
        raise NotImplementedError

    def encode(self, steps: list[Tensor], time_embs: list[Tensor], *,
               train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Representation of the history at its last position, shape [B, d_h]."""
        return self.encode_all(steps, time_embs, train=train, rng=rng)[-1]

    def _check_inputs(self, steps: list[Tensor], time_embs: list[Tensor]) -> None:
        if not steps:
            raise ClefError("encode: history must contain at least one step")
        if len(steps) != len(time_embs):
            raise ShapeMismatch("encode: steps and time embeddings differ in length")
        for s in steps:
            if s.array.ndim != 2 or s.array.shape[1] != self.config.input_dim:
                raise ShapeMismatch(
                    f"encode: step shape {s.shape} incompatible with input_dim {self.config.input_dim}"
                )

    def _project(self, steps: list[Tensor], time_embs: list[Tensor],
                 train: bool, rng) -> list[Tensor]:
        out = []
        for s, te in zip(steps, time_embs):
            u = ad.add(ad.add(ad.matmul(s, self.w_in), self.b_in), te)
            out.append(ad.dropout(u, self.config.dropout, rng, train) if train else u)
        return out


class RecurrentEncoder(SequenceEncoder):
    """Stack of gated recurrent (GRU) layers."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        d = config.hidden_dim
        self.cells = []
        for _ in range(config.layers):
            cell = {
                "wz": _init_matrix(rng, d, d), "uz": _init_matrix(rng, d, d), "bz": _init_bias(d),
                "wr": _init_matrix(rng, d, d), "ur": _init_matrix(rng, d, d), "br": _init_bias(d),
                "wn": _init_matrix(rng, d, d), "un": _init_matrix(rng, d, d), "bn": _init_bias(d),
            }
            self.cells.append(cell)

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = [("enc.w_in", self.w_in), ("enc.b_in", self.b_in)]
        for i, cell in enumerate(self.cells):
            for key in ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"):
                params.append((f"enc.l{i}.{key}", cell[key]))
        return params

    def encode_all(self, steps, time_embs, *, train=False, rng=None):
        self._check_inputs(steps, time_embs)
        batch = steps[0].array.shape[0]
        seq = self._project(steps, time_embs, train, rng)
        for depth, cell in enumerate(self.cells):
            h = Tensor(np.zeros((batch, self.config.hidden_dim)))
            states = []
            for x in seq:
                z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, cell["wz"]), ad.matmul(h, cell["uz"])), cell["bz"]))
                r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, cell["wr"]), ad.matmul(h, cell["ur"])), cell["br"]))
                n = ad.tanh(ad.add(ad.add(ad.matmul(x, cell["wn"]), ad.matmul(ad.multiply(r, h), cell["un"])), cell["bn"]))
                # h' = h + z * (n - h)
                h = ad.add(h, ad.multiply(z, ad.subtract(n, h)))
                states.append(h)
            last_layer = depth == len(self.cells) - 1
            if train and not last_layer:
                states = [ad.dropout(s, self.config.dropout, rng, train) for s in states]
            seq = states
        return seq


class AttentionEncoder(SequenceEncoder):
    """Pre-norm causal self-attention stack; processes one sample at a time."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        d = config.hidden_dim
        self.blocks = []
        for _ in range(config.layers):
            block = {
                "ln1_g": Tensor(np.ones(d), requires_grad=True),
                "ln1_b": _init_bias(d),
                "wq": _init_matrix(rng, d, d), "bq": _init_bias(d),
                "wk": _init_matrix(rng, d, d), "bk": _init_bias(d),
                "wv": _init_matrix(rng, d, d), "bv": _init_bias(d),
                "wo": _init_matrix(rng, d, d), "bo": _init_bias(d),
                "ln2_g": Tensor(np.ones(d), requires_grad=True),
                "ln2_b": _init_bias(d),
                "w1": _init_matrix(rng, d, 2 * d), "b1": _init_bias(2 * d),
                "w2": _init_matrix(rng, 2 * d, d), "b2": _init_bias(d),
            }
            self.blocks.append(block)
        self.ln_f_g = Tensor(np.ones(d), requires_grad=True)
        self.ln_f_b = _init_bias(d)

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = [("enc.w_in", self.w_in), ("enc.b_in", self.b_in)]
        for i, block in enumerate(self.blocks):
            for key in sorted(block):
                params.append((f"enc.l{i}.{key}", block[key]))
        params.append(("enc.ln_f_g", self.ln_f_g))
        params.append(("enc.ln_f_b", self.ln_f_b))
        return params

    def _attend(self, x: Tensor, block: dict, mask: Tensor,
                train: bool, rng) -> Tensor:
        d = self.config.hidden_dim
        heads = self.config.heads
        dk = d // heads
        normed = ad.layer_norm(x, block["ln1_g"], block["ln1_b"])
        q = ad.add(ad.matmul(normed, block["wq"]), block["bq"])
        k = ad.add(ad.matmul(normed, block["wk"]), block["bk"])
        v = ad.add(ad.matmul(normed, block["wv"]), block["bv"])
        head_outputs = []
        for hidx in range(heads):
            lo, hi = hidx * dk, (hidx + 1) * dk
            qh = ad.slice_cols(q, lo, hi)
            kh = ad.slice_cols(k, lo, hi)
            vh = ad.slice_cols(v, lo, hi)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(dk))
            attn = ad.softmax_rows(ad.add(scores, mask))
            head_outputs.append(ad.matmul(attn, vh))
        merged = ad.concat_cols(head_outputs)
        out = ad.add(ad.matmul(merged, block["wo"]), block["bo"])
        if train:
            out = ad.dropout(out, self.config.dropout, rng, train)
        x = ad.add(x, out)
        normed2 = ad.layer_norm(x, block["ln2_g"], block["ln2_b"])
        ff = ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(normed2, block["w1"]), block["b1"])), block["w2"]), block["b2"])
        if train:
            ff = ad.dropout(ff, self.config.dropout, rng, train)
        return ad.add(x, ff)

    def _encode_single(self, rows: list[Tensor], train: bool, rng) -> list[Tensor]:
        length = len(rows)
        x = ad.concat_rows(rows)  # [L, d]
        mask_arr = np.triu(np.full((length, length), ATTENTION_MASK_VALUE), k=1)
        mask = Tensor(mask_arr)
        for block in self.blocks:
            x = self._attend(x, block, mask, train, rng)
        x = ad.layer_norm(x, self.ln_f_g, self.ln_f_b)
        return [ad.slice_rows(x, i, i + 1) for i in range(length)]

    def encode_all(self, steps, time_embs, *, train=False, rng=None):
        self._check_inputs(steps, time_embs)
        seq = self._project(steps, time_embs, train, rng)
        batch = seq[0].array.shape[0]
        per_sample_states: list[list[Tensor]] = []
        for b in range(batch):
            rows = [ad.slice_rows(u, b, b + 1) for u in seq]
            per_sample_states.append(self._encode_single(rows, train, rng))
        # reassemble as per-position [B, d] tensors
        out = []
        for t in range(len(steps)):
            out.append(ad.concat_rows([states[t] for states in per_sample_states]))
        return out


def build_encoder(config: EncoderConfig, rng: np.random.Generator) -> SequenceEncoder:
    if config.kind == "recurrent":
        return RecurrentEncoder(config, rng)
    return AttentionEncoder(config, rng)
