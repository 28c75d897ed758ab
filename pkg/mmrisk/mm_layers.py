#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from mmrisk.mm_exceptions import ConfigurationError, ContractViolation, ShapeError
from mmrisk.mm_numeric import SeededRng, glorot_uniform, relu, relu_grad_from_input, sigmoid, \
    sigmoid_grad_from_output, tanh_act, tanh_grad_from_output
from mmrisk.mm_text import PAD_INDEX, EncodedReport

Params = Dict[str, np.ndarray]


@dataclass
class Cache:
    owner: Any
    kind: str
    values: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, item):
        return self.values[item]


def check_cache(layer, cache: Optional[Cache]):
    if cache is None:
        raise ContractViolation(f"No forward cache provided for {layer.kind} layer!")
    if cache.owner is not layer or cache.kind != layer.kind:
        raise ContractViolation(f"Cache of kind `{cache.kind}` was not produced by this {layer.kind} layer!")


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.0
    recurrent_rate: float = 0.0

    def __post_init__(self):
        for name, rate in (('rate', self.rate), ('recurrent_rate', self.recurrent_rate)):
            if not 0.0 <= rate < 1.0:
                raise ConfigurationError(f"Dropout {name} must be in [0, 1), got {rate}")


def dropout_forward(x: np.ndarray, spec: DropoutSpec, rng: SeededRng, training: bool) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inverted dropout: identity at inference, zero with probability `rate` and rescale survivors at training
    """
    x = np.asarray(x, dtype=np.float64)
    if not training or spec.rate == 0.0:
        mask = np.ones_like(x)
    else:
        mask = rng.keep_mask(x.shape, spec.rate)
    return x * mask, mask


def dropout_backward(mask: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return upstream * mask


def substitute_empty_reports(ids: np.ndarray, lengths: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Empty reports are fed as a single PAD token so every patient has a text vector
    """
    lengths = np.asarray(lengths, dtype=np.int64).copy()
    empty = lengths == 0
    n_empty = int(empty.sum())
    if n_empty:
        ids = np.array(ids, dtype=np.int64, copy=True)
        ids[empty, 0] = PAD_INDEX
        lengths[empty] = 1
        logging.warning(f"{n_empty} empty report(s) substituted with a single PAD embedding")
    return ids, lengths, n_empty


def sequence_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    return np.arange(steps)[None, :] < np.asarray(lengths)[:, None]


def reverse_index(lengths: np.ndarray, steps: int) -> np.ndarray:
    """
    Per-row index that reverses the first `length` positions and keeps padding in place.
    The mapping is its own inverse.
    """
    t = np.arange(steps)[None, :]
    m = np.asarray(lengths)[:, None]
    return np.where(t < m, m - 1 - t, t)


class EmbeddingLayer:
    kind = 'embedding'

    def __init__(self, E: np.ndarray):
        self.E = np.asarray(E, dtype=np.float64)
        self.E[PAD_INDEX] = 0.0

    @staticmethod
    def create(vocab_size: int, dim: int, rng: SeededRng) -> 'EmbeddingLayer':
        return EmbeddingLayer(glorot_uniform(vocab_size, dim, rng))

    @property
    def vocab_size(self) -> int:
        return self.E.shape[0]

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    def parameters(self) -> Params:
        return OrderedDict(E=self.E)

    def forward(self, ids: np.ndarray, lengths: np.ndarray) -> Tuple[np.ndarray, Cache]:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError(f"Token id out of range [0, {self.vocab_size}): "
                             f"min={ids.min()}, max={ids.max()}")
        valid = sequence_mask(lengths, ids.shape[1])
        X = self.E[ids] * valid[:, :, None]
        return X, Cache(self, self.kind, {'ids': ids, 'valid': valid})

    def backward(self, cache: Cache, dX: np.ndarray) -> Tuple[Params, None]:
        check_cache(self, cache)
        dE = np.zeros_like(self.E)
        valid = cache['valid']
        np.add.at(dE, cache['ids'][valid], dX[valid])
        dE[PAD_INDEX] = 0.0
        return OrderedDict(E=dE), None

    def zero_pad_row(self):
        self.E[PAD_INDEX] = 0.0


def embed_forward(report: EncodedReport, layer: EmbeddingLayer) -> np.ndarray:
    """
    Sequence of the first m word vectors of a single report, shape (m, d)
    """
    ids = np.asarray(report.ids[:report.length], dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= layer.vocab_size):
        raise IndexError(f"Token id out of range [0, {layer.vocab_size})")
    return layer.E[ids]


class LstmCell:
    """
    Four-gate LSTM cell. Gate blocks are stacked in the order input, forget, output, candidate:
    W_x is (4H, d_in), W_h is (4H, H), b is (4H,).
    """
    kind = 'lstm'
    GATES = ('input', 'forget', 'output', 'candidate')

    def __init__(self, W_x: np.ndarray, W_h: np.ndarray, b: np.ndarray):
        self.W_x = np.asarray(W_x, dtype=np.float64)
        self.W_h = np.asarray(W_h, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        four_h = self.b.shape[0]
        if four_h % 4 or self.W_x.shape[0] != four_h or self.W_h.shape != (four_h, four_h // 4):
            raise ShapeError(f"Inconsistent LSTM shapes: W_x {self.W_x.shape}, W_h {self.W_h.shape}, "
                             f"b {self.b.shape}")

    @staticmethod
    def create(input_size: int, hidden_size: int, rng: SeededRng, forget_bias: float = 1.0) -> 'LstmCell':
        W_x = np.vstack([glorot_uniform(hidden_size, input_size, rng) for _ in LstmCell.GATES])
        W_h = np.vstack([glorot_uniform(hidden_size, hidden_size, rng) for _ in LstmCell.GATES])
        b = np.zeros(4 * hidden_size)
        b[hidden_size:2 * hidden_size] = forget_bias
        return LstmCell(W_x, W_h, b)

    @property
    def hidden_size(self) -> int:
        return self.W_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.W_x.shape[1]

    def parameters(self) -> Params:
        return OrderedDict(W_x=self.W_x, W_h=self.W_h, b=self.b)

    def forward(self, X: np.ndarray, lengths: np.ndarray, dropout: DropoutSpec, rng: SeededRng,
                training: bool) -> Tuple[np.ndarray, np.ndarray, Cache]:
        """
        :param X: (B, T, d_in) padded batch
        :param lengths: (B,) number of valid timesteps per row
        :return: hidden states (B, T, H) zero beyond each length, final state (B, H), cache
        """
        B, T, D = X.shape
        if D != self.input_size:
            raise ShapeError(f"LSTM expects inputs of width {self.input_size}, got batch of shape {X.shape}")
        H = self.hidden_size
        if training:
            mx = rng.keep_mask((B, D), dropout.rate)
            mh = rng.keep_mask((B, H), dropout.recurrent_rate)
        else:
            mx = np.ones((B, D))
            mh = np.ones((B, H))
        Xd = X * mx[:, None, :]
        XW = Xd @ self.W_x.T + self.b
        valid = sequence_mask(lengths, T)

        gates = np.zeros((B, T, 4 * H))
        c_prev = np.zeros((B, T, H))
        h_prev = np.zeros((B, T, H))
        tanh_c = np.zeros((B, T, H))
        hs = np.zeros((B, T, H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(T):
            z = XW[:, t] + (h * mh) @ self.W_h.T
            act = np.empty_like(z)
            act[:, :3 * H] = sigmoid(z[:, :3 * H])
            act[:, 3 * H:] = tanh_act(z[:, 3 * H:])
            i, f, o, g = act[:, :H], act[:, H:2 * H], act[:, 2 * H:3 * H], act[:, 3 * H:]
            c_new = f * c + i * g
            tc = tanh_act(c_new)
            h_new = o * tc
            gates[:, t] = act
            c_prev[:, t] = c
            h_prev[:, t] = h
            tanh_c[:, t] = tc
            v = valid[:, t:t + 1]
            c = np.where(v, c_new, c)
            h = np.where(v, h_new, h)
            hs[:, t] = np.where(v, h_new, 0.0)
        cache = Cache(self, self.kind, {'Xd': Xd, 'mx': mx, 'mh': mh, 'gates': gates, 'c_prev': c_prev,
                                        'h_prev': h_prev, 'tanh_c': tanh_c, 'valid': valid})
        return hs, h, cache

    def backward(self, cache: Cache, d_hs: Optional[np.ndarray] = None,
                 d_last: Optional[np.ndarray] = None) -> Tuple[Params, np.ndarray]:
        """
        Backpropagation through time.
        :param d_hs: gradient w.r.t. every returned hidden state (B, T, H), optional
        :param d_last: gradient w.r.t. the final state (B, H), optional
        :return: parameter gradients and gradient w.r.t. X (B, T, d_in)
        """
        check_cache(self, cache)
        Xd, mx, mh = cache['Xd'], cache['mx'], cache['mh']
        gates, valid = cache['gates'], cache['valid']
        B, T, D = Xd.shape
        H = self.hidden_size
        dh = np.zeros((B, H)) if d_last is None else np.array(d_last, dtype=np.float64)
        dc = np.zeros((B, H))
        dW_h = np.zeros_like(self.W_h)
        dXW = np.zeros((B, T, 4 * H))
        for t in reversed(range(T)):
            v = valid[:, t:t + 1].astype(np.float64)
            if d_hs is not None:
                dh = dh + d_hs[:, t] * v
            dh_new = dh * v
            dc_new = dc * v
            act = gates[:, t]
            i, f, o, g = act[:, :H], act[:, H:2 * H], act[:, 2 * H:3 * H], act[:, 3 * H:]
            tc = cache['tanh_c'][:, t]
            dct = dc_new + dh_new * o * tanh_grad_from_output(tc)
            dz = np.concatenate([
                dct * g * sigmoid_grad_from_output(i),
                dct * cache['c_prev'][:, t] * sigmoid_grad_from_output(f),
                dh_new * tc * sigmoid_grad_from_output(o),
                dct * i * tanh_grad_from_output(g),
            ], axis=1)
            dXW[:, t] = dz
            dW_h += dz.T @ (cache['h_prev'][:, t] * mh)
            dh = dh * (1.0 - v) + (dz @ self.W_h) * mh
            dc = dc * (1.0 - v) + dct * f
        flat = dXW.reshape(-1, 4 * H)
        grads = OrderedDict(W_x=flat.T @ Xd.reshape(-1, D), W_h=dW_h, b=flat.sum(axis=0))
        dX = (dXW @ self.W_x) * mx[:, None, :]
        return grads, dX


def lstm_forward(seq: np.ndarray, cell: LstmCell, dropout: DropoutSpec, rng: SeededRng,
                 training: bool) -> Tuple[np.ndarray, Cache]:
    """
    Single-sequence convenience wrapper: (m, d_in) -> hidden states (m, H) + cache
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ShapeError(f"Sequence must be (m, d_in), got {seq.shape}")
    hs, _, cache = cell.forward(seq[None], np.array([seq.shape[0]]), dropout, rng, training)
    return hs[0], cache


class BiLstmEncoder:
    """
    Two independent LSTM cells over the sequence and its reversal; the text vector is the
    concatenation of the forward final state and the backward final state (width 2H)
    """
    kind = 'bilstm'

    def __init__(self, forward_cell: LstmCell, backward_cell: LstmCell):
        if forward_cell.hidden_size != backward_cell.hidden_size:
            raise ShapeError(f"Forward and backward hidden sizes differ: "
                             f"{forward_cell.hidden_size} vs {backward_cell.hidden_size}")
        self.forward_cell = forward_cell
        self.backward_cell = backward_cell

    @staticmethod
    def create(input_size: int, hidden_size: int, rng: SeededRng) -> 'BiLstmEncoder':
        return BiLstmEncoder(LstmCell.create(input_size, hidden_size, rng),
                             LstmCell.create(input_size, hidden_size, rng))

    @property
    def output_size(self) -> int:
        return 2 * self.forward_cell.hidden_size

    def parameters(self) -> Params:
        params = OrderedDict()
        for prefix, cell in (('fwd', self.forward_cell), ('bwd', self.backward_cell)):
            for name, value in cell.parameters().items():
                params[f"{prefix}.{name}"] = value
        return params

    def forward(self, X: np.ndarray, lengths: np.ndarray, dropout: DropoutSpec, rng: SeededRng,
                training: bool) -> Tuple[np.ndarray, Cache]:
        B, T, _ = X.shape
        if np.any(np.asarray(lengths) < 1):
            raise ShapeError("BiLSTM needs sequences of length >= 1, substitute empty reports first!")
        rev = reverse_index(lengths, T)
        rows = np.arange(B)[:, None]
        _, h_fwd, cache_fwd = self.forward_cell.forward(X, lengths, dropout, rng, training)
        _, h_bwd, cache_bwd = self.backward_cell.forward(X[rows, rev], lengths, dropout, rng, training)
        out = np.concatenate([h_fwd, h_bwd], axis=1)
        return out, Cache(self, self.kind, {'fwd': cache_fwd, 'bwd': cache_bwd, 'rev': rev})

    def backward(self, cache: Cache, d_out: np.ndarray) -> Tuple[Params, np.ndarray]:
        check_cache(self, cache)
        H = self.forward_cell.hidden_size
        grads_fwd, dX = self.forward_cell.backward(cache['fwd'], d_last=d_out[:, :H])
        grads_bwd, dX_rev = self.backward_cell.backward(cache['bwd'], d_last=d_out[:, H:])
        rows = np.arange(dX.shape[0])[:, None]
        dX = dX + dX_rev[rows, cache['rev']]
        grads = OrderedDict()
        for prefix, cell_grads in (('fwd', grads_fwd), ('bwd', grads_bwd)):
            for name, value in cell_grads.items():
                grads[f"{prefix}.{name}"] = value
        return grads, dX


class LstmEncoder:
    """
    Forward-only LSTM encoder: the text vector is the final hidden state (width H)
    """
    kind = 'lstm_encoder'

    def __init__(self, cell: LstmCell):
        self.cell = cell

    @staticmethod
    def create(input_size: int, hidden_size: int, rng: SeededRng) -> 'LstmEncoder':
        return LstmEncoder(LstmCell.create(input_size, hidden_size, rng))

    @property
    def output_size(self) -> int:
        return self.cell.hidden_size

    def parameters(self) -> Params:
        return OrderedDict((f"fwd.{k}", v) for k, v in self.cell.parameters().items())

    def forward(self, X: np.ndarray, lengths: np.ndarray, dropout: DropoutSpec, rng: SeededRng,
                training: bool) -> Tuple[np.ndarray, Cache]:
        if np.any(np.asarray(lengths) < 1):
            raise ShapeError("LSTM encoder needs sequences of length >= 1, substitute empty reports first!")
        _, h_last, cache = self.cell.forward(X, lengths, dropout, rng, training)
        return h_last, Cache(self, self.kind, {'cell': cache})

    def backward(self, cache: Cache, d_out: np.ndarray) -> Tuple[Params, np.ndarray]:
        check_cache(self, cache)
        grads, dX = self.cell.backward(cache['cell'], d_last=d_out)
        return OrderedDict((f"fwd.{k}", v) for k, v in grads.items()), dX


def bilstm_encode(seq: np.ndarray, enc: BiLstmEncoder, dropout: DropoutSpec, rng: SeededRng,
                  training: bool) -> Tuple[np.ndarray, Cache]:
    """
    Single-sequence convenience wrapper: (m, d) -> [h_fwd(m) ; h_bwd(1)] of width 2H.
    An empty sequence is replaced by one all-zero (PAD) vector.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[0] == 0:
        logging.warning("empty sequence given to BiLSTM, using a single PAD embedding")
        seq = np.zeros((1, enc.forward_cell.input_size))
    out, cache = enc.forward(seq[None], np.array([seq.shape[0]]), dropout, rng, training)
    return out[0], cache


class Conv1dEncoder:
    """
    Valid 1-D convolution over windows of `width` word vectors, ReLU, then global max over time.
    W is (F, width * d) with window position as the slow axis.
    """
    kind = 'conv1d'

    def __init__(self, W: np.ndarray, b: np.ndarray, width: int):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.width = int(width)
        if self.W.shape[1] % self.width or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"Inconsistent conv shapes: W {self.W.shape}, b {self.b.shape}, width {width}")

    @staticmethod
    def create(input_size: int, width: int, filters: int, rng: SeededRng) -> 'Conv1dEncoder':
        return Conv1dEncoder(glorot_uniform(filters, width * input_size, rng), np.zeros(filters), width)

    @property
    def filters(self) -> int:
        return self.W.shape[0]

    @property
    def input_size(self) -> int:
        return self.W.shape[1] // self.width

    @property
    def output_size(self) -> int:
        return self.filters

    def parameters(self) -> Params:
        return OrderedDict(W=self.W, b=self.b)

    def forward(self, X: np.ndarray, lengths: np.ndarray, *_args, **_kwargs) -> Tuple[np.ndarray, Cache]:
        B, T, D = X.shape
        if D != self.input_size:
            raise ShapeError(f"Conv1d expects inputs of width {self.input_size}, got batch of shape {X.shape}")
        w = self.width
        T_pad = max(T, w)
        if T_pad > T:
            X = np.concatenate([X, np.zeros((B, T_pad - T, D))], axis=1)
        S = T_pad - w + 1
        Wk = self.W.reshape(self.filters, w, D)
        Z = np.broadcast_to(self.b, (B, S, self.filters)).copy()
        for k in range(w):
            Z += X[:, k:k + S, :] @ Wk[:, k, :].T
        A = relu(Z)
        n_windows = np.maximum(np.asarray(lengths), w) - w + 1
        window_valid = np.arange(S)[None, :] < n_windows[:, None]
        # first index wins on ties
        argmax = np.argmax(np.where(window_valid[:, :, None], A, -np.inf), axis=1)
        out = np.take_along_axis(A, argmax[:, None, :], axis=1)[:, 0, :]
        return out, Cache(self, self.kind, {'X': X, 'Z': Z, 'argmax': argmax, 'T': T})

    def backward(self, cache: Cache, d_out: np.ndarray) -> Tuple[Params, np.ndarray]:
        check_cache(self, cache)
        X, Z, argmax = cache['X'], cache['Z'], cache['argmax']
        B, T_pad, D = X.shape
        S = Z.shape[1]
        w, F = self.width, self.filters
        dA = np.zeros_like(Z)
        np.put_along_axis(dA, argmax[:, None, :], d_out[:, None, :], axis=1)
        dZ = dA * relu_grad_from_input(Z)
        flat = dZ.reshape(-1, F)
        Wk = self.W.reshape(F, w, D)
        dW = np.zeros((F, w, D))
        dX = np.zeros_like(X)
        for k in range(w):
            dW[:, k, :] = flat.T @ X[:, k:k + S, :].reshape(-1, D)
            dX[:, k:k + S, :] += dZ @ Wk[:, k, :]
        return OrderedDict(W=dW.reshape(F, w * D), b=flat.sum(axis=0)), dX[:, :cache['T'], :]


def conv1d_maxpool(seq: np.ndarray, enc: Conv1dEncoder) -> Tuple[np.ndarray, Cache]:
    """
    Single-sequence convenience wrapper: (m, d) -> pooled vector of width F
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"Conv1d needs a non-empty (m, d) sequence, got {seq.shape}")
    out, cache = enc.forward(seq[None], np.array([seq.shape[0]]))
    return out[0], cache


def concat_fuse(text_repr: np.ndarray, clinical: np.ndarray) -> np.ndarray:
    """
    Parameter-free fusion, text part first
    """
    text_repr = np.asarray(text_repr, dtype=np.float64)
    clinical = np.asarray(clinical, dtype=np.float64)
    if text_repr.shape[:-1] != clinical.shape[:-1]:
        raise ShapeError(f"Cannot concatenate text {text_repr.shape} with clinical {clinical.shape}")
    return np.concatenate([text_repr, clinical], axis=-1)


def concat_backward(upstream: np.ndarray, text_width: int) -> Tuple[np.ndarray, np.ndarray]:
    return upstream[..., :text_width], upstream[..., text_width:]


class DenseLayer:
    kind = 'dense'
    ACTIVATIONS = ('relu', 'sigmoid', 'linear')

    def __init__(self, W: np.ndarray, b: np.ndarray, activation: str = 'linear'):
        if activation not in DenseLayer.ACTIVATIONS:
            raise ConfigurationError(f"Unknown activation `{activation}`, use one of {DenseLayer.ACTIVATIONS}")
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.activation = activation
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"Inconsistent dense shapes: W {self.W.shape}, b {self.b.shape}")

    @staticmethod
    def create(in_size: int, out_size: int, activation: str, rng: SeededRng) -> 'DenseLayer':
        return DenseLayer(glorot_uniform(out_size, in_size, rng), np.zeros(out_size), activation)

    @property
    def in_size(self) -> int:
        return self.W.shape[1]

    @property
    def out_size(self) -> int:
        return self.W.shape[0]

    def parameters(self) -> Params:
        return OrderedDict(W=self.W, b=self.b)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_size:
            raise ShapeError(f"Dense layer expects input width {self.in_size}, got {x.shape}")
        z = x @ self.W.T + self.b
        if self.activation == 'relu':
            a = relu(z)
        elif self.activation == 'sigmoid':
            a = sigmoid(z)
        else:
            a = z
        return a, Cache(self, self.kind, {'x': x, 'z': z, 'a': a})

    def backward(self, cache: Cache, upstream: np.ndarray, wrt_logits: bool = False) -> Tuple[Params, np.ndarray]:
        """
        :param upstream: gradient w.r.t. the layer output, or w.r.t. the pre-activation when `wrt_logits`
        """
        check_cache(self, cache)
        if wrt_logits or self.activation == 'linear':
            dz = upstream
        elif self.activation == 'relu':
            dz = upstream * relu_grad_from_input(cache['z'])
        else:
            dz = upstream * sigmoid_grad_from_output(cache['a'])
        x = cache['x']
        if x.ndim == 1:
            grads = OrderedDict(W=np.outer(dz, x), b=np.array(dz, dtype=np.float64))
        else:
            grads = OrderedDict(W=dz.T @ x, b=dz.sum(axis=0))
        return grads, dz @ self.W


def dense_forward(x: np.ndarray, layer: DenseLayer) -> Tuple[np.ndarray, Cache]:
    return layer.forward(x)


def layer_backward(layer, cache: Cache, upstream: np.ndarray) -> Tuple[Params, Optional[np.ndarray]]:
    """
    Dispatch to the backward pass of any layer kind, validating the cache first
    """
    check_cache(layer, cache)
    return layer.backward(cache, upstream)
