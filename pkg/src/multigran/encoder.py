"""Embedding lookup plus a single-layer unidirectional gated recurrent encoder.

The cell is a standard four-gate LSTM (input, forget, candidate, output) with
the forget-gate bias initialised to 1.0. `encode` is the per-sequence
contract; `encode_batch` is the vectorised path and is output-equivalent to
per-sequence encoding (left-padding with a 0/1 update mask, so padded steps
leave the state untouched and contribute zero gradient).

Gate pre-activations are stored row-blocked as [input, forget, output,
candidate] so the three sigmoid gates share one activation call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ContractError
from .seeding import rng

INIT_RANGE = 0.08
NUM_GATES = 4  # row blocks: input, forget, output, candidate


@dataclass
class EncoderParams:
    """Trainable tensors of one encoder. Two encoders never share tensors."""

    embedding: ag.Tensor  # vocab_size x emb_dim
    w_input: ag.Tensor    # 4*hidden x emb_dim
    w_hidden: ag.Tensor   # 4*hidden x hidden
    bias: ag.Tensor       # 4*hidden

    @property
    def vocab_size(self) -> int:
        return self.embedding.values.shape[0]

    @property
    def emb_dim(self) -> int:
        return self.embedding.values.shape[1]

    @property
    def hidden(self) -> int:
        return self.w_hidden.values.shape[1]

    def tensors(self) -> dict:
        return {
            "embedding": self.embedding,
            "w_input": self.w_input,
            "w_hidden": self.w_hidden,
            "bias": self.bias,
        }

    def parameter_count(self) -> int:
        return sum(t.values.size for t in self.tensors().values())


def init_params(vocab_size: int, emb_dim: int, hidden: int, seed) -> EncoderParams:
    """Uniform init in [-INIT_RANGE, INIT_RANGE]; forget-gate bias set to 1.0."""
    if vocab_size < 2 or emb_dim < 1 or hidden < 1:
        raise ContractError("encoder dimensions must be positive (vocab_size >= 2)")
    gen = rng(seed, "encoder-init")
    gates = NUM_GATES * hidden

    def uniform(shape):
        return gen.uniform(-INIT_RANGE, INIT_RANGE, size=shape)

    bias = np.zeros(gates)
    bias[hidden : 2 * hidden] = 1.0
    return EncoderParams(
        embedding=ag.tensor(uniform((vocab_size, emb_dim))),
        w_input=ag.tensor(uniform((gates, emb_dim))),
        w_hidden=ag.tensor(uniform((gates, hidden))),
        bias=ag.tensor(bias),
    )


def _validate_sequences(params: EncoderParams, sequences) -> None:
    vocab = params.vocab_size
    for seq in sequences:
        if len(seq) == 0:
            raise ContractError("cannot encode an empty token sequence")
        for tok in seq:
            if not 0 <= tok < vocab:
                raise ContractError(f"token id {tok} outside vocabulary of size {vocab}")


def encode_batch(params: EncoderParams, sequences) -> ag.Tensor:
    """Encode a batch of token-id sequences; returns a (batch, hidden) tensor."""
    sequences = list(sequences)
    if not sequences:
        raise ContractError("cannot encode an empty batch")
    _validate_sequences(params, sequences)

    hidden = params.hidden
    batch = len(sequences)
    longest = max(len(s) for s in sequences)
    ids = np.zeros((batch, longest), dtype=np.intp)
    mask = np.zeros((batch, longest))
    for b, seq in enumerate(sequences):
        ids[b, longest - len(seq):] = seq
        mask[b, longest - len(seq):] = 1.0

    # one fused input+recurrent matmul per step: [x h] @ [W_in W_hid]^T
    w_all_t = ag.transpose(ag.concat_cols(params.w_input, params.w_hidden))
    h = ag.tensor(np.zeros((batch, hidden)))
    c = ag.tensor(np.zeros((batch, hidden)))
    for t in range(longest):
        x = ag.rows(params.embedding, ids[:, t])
        z = ag.add_rowvec(ag.matmul(ag.concat_cols(x, h), w_all_t), params.bias)
        gates = ag.sigmoid(ag.narrow(z, 0, 3 * hidden, axis=1))
        gate_i = ag.narrow(gates, 0, hidden, axis=1)
        gate_f = ag.narrow(gates, hidden, 2 * hidden, axis=1)
        gate_o = ag.narrow(gates, 2 * hidden, 3 * hidden, axis=1)
        gate_c = ag.tanh(ag.narrow(z, 3 * hidden, 4 * hidden, axis=1))
        c_new = ag.add(ag.mul(gate_f, c), ag.mul(gate_i, gate_c))
        h_new = ag.mul(gate_o, ag.tanh(c_new))
        step_mask = mask[:, t : t + 1]
        c = ag.where_mask(step_mask, c_new, c)
        h = ag.where_mask(step_mask, h_new, h)
    return h


def encode(params: EncoderParams, token_ids) -> ag.Tensor:
    """Encode one sequence to its final hidden state, shape (hidden,)."""
    return ag.reshape(encode_batch(params, [list(token_ids)]), (params.hidden,))
