"""Multi-scale CNN tokens -> intra/inter-epoch transformers -> graph fusion -> softmax.

Shapes used throughout (per modality):

    tokens      (E, T, S)   E epochs, T=13 tokens, S=300 samples
    z           (E, T, d_cnn)
    segments    (E, d_tr)   one embedding per epoch
    windows     (B, W)      integer indices into the segment axis, last = target
    context     (B, d_tr)
    fused       (B, d_tr)
    logits      (B, num_classes)
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from ..autodiff import ParameterStore, Tensor, ops
from .config import ModelConfig


def normalized_adjacency(num_nodes: int) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 for the complete graph on ``num_nodes`` nodes."""
    a_hat = np.ones((num_nodes, num_nodes))  # complete graph plus self-loops
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]


def attention_block(
    x: Tensor,
    params: Mapping[str, Tensor],
    num_heads: int,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """One post-norm transformer encoder layer on (batch, seq, d).

    ``params`` holds ``in_proj.weight`` (d, 3d), ``in_proj.bias``,
    ``out_proj.weight``, ``out_proj.bias``, ``ln1.gamma``, ``ln1.beta``,
    ``ff1.weight`` (d, d_ff), ``ff1.bias``, ``ff2.weight``, ``ff2.bias``,
    ``ln2.gamma``, ``ln2.beta``. Returns the layer output and the attention
    weights (batch, heads, seq, seq).
    """
    batch, seq, d = x.shape
    if d % num_heads:
        raise ValueError(f"model width {d} is not divisible by {num_heads} heads")
    d_head = d // num_heads

    qkv = ops.linear(x, params["in_proj.weight"], params["in_proj.bias"])
    qkv = ops.transpose(ops.reshape(qkv, (batch, seq, 3, num_heads, d_head)), (2, 0, 3, 1, 4))
    q = ops.take(qkv, 0)
    k = ops.take(qkv, 1)
    v = ops.take(qkv, 2)
    attended, weights = ops.scaled_dot_product_attention(q, k, v)
    attended = ops.reshape(ops.transpose(attended, (0, 2, 1, 3)), (batch, seq, d))
    attended = ops.linear(attended, params["out_proj.weight"], params["out_proj.bias"])
    x = ops.layer_norm(ops.add(x, ops.dropout(attended, dropout, rng, training)), params["ln1.gamma"], params["ln1.beta"])

    hidden = ops.relu(ops.linear(x, params["ff1.weight"], params["ff1.bias"]))
    ff = ops.linear(hidden, params["ff2.weight"], params["ff2.bias"])
    x = ops.layer_norm(ops.add(x, ops.dropout(ff, dropout, rng, training)), params["ln2.gamma"], params["ln2.beta"])
    return x, weights


class SleepStager:
    """The staging network; owns a :class:`ParameterStore` built from a config."""

    def __init__(self, config: ModelConfig, seed: int | np.random.Generator = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.store = ParameterStore()
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._build(rng)

    # ------------------------------------------------------------ parameters

    def encoder_key(self, modality: str) -> str:
        return "shared" if self.config.share_encoders else modality

    @property
    def encoder_keys(self) -> list[str]:
        return list(dict.fromkeys(self.encoder_key(m) for m in self.config.modalities))

    def _uniform(self, rng, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    def _zeros(self, *shape):
        return np.zeros(shape, dtype=self.dtype)

    def _ones(self, *shape):
        return np.ones(shape, dtype=self.dtype)

    def _add_linear(self, rng, name, d_in, d_out):
        self.store.add(f"{name}.weight", self._uniform(rng, (d_in, d_out), d_in))
        self.store.add(f"{name}.bias", self._zeros(d_out))

    def _add_transformer(self, rng, prefix, d):
        cfg = self.config
        for layer in range(cfg.transformer_layers):
            p = f"{prefix}.layer{layer}"
            self._add_linear(rng, f"{p}.in_proj", d, 3 * d)
            self._add_linear(rng, f"{p}.out_proj", d, d)
            self.store.add(f"{p}.ln1.gamma", self._ones(d))
            self.store.add(f"{p}.ln1.beta", self._zeros(d))
            self._add_linear(rng, f"{p}.ff1", d, cfg.d_ff)
            self._add_linear(rng, f"{p}.ff2", cfg.d_ff, d)
            self.store.add(f"{p}.ln2.gamma", self._ones(d))
            self.store.add(f"{p}.ln2.beta", self._zeros(d))

    def _build(self, rng):
        cfg = self.config
        bc = cfg.cnn_branch_channels
        for enc in self.encoder_keys:
            for k in cfg.kernel_sizes:
                self.store.add(f"cnn.{enc}.branch{k}.weight", self._uniform(rng, (bc, 1, k), k))
                self.store.add(f"cnn.{enc}.branch{k}.bias", self._zeros(bc))
            trunk_in = bc * len(cfg.kernel_sizes)
            # no trunk bias: batch norm follows immediately
            self.store.add(
                f"cnn.{enc}.trunk.weight",
                self._uniform(rng, (cfg.d_cnn, trunk_in, cfg.trunk_kernel), trunk_in * cfg.trunk_kernel),
            )
            self.store.add(f"cnn.{enc}.bn.gamma", self._ones(cfg.d_cnn))
            self.store.add(f"cnn.{enc}.bn.beta", self._zeros(cfg.d_cnn))
            self.store.add_buffer(f"cnn.{enc}.bn.running_mean", self._zeros(cfg.d_cnn))
            self.store.add_buffer(f"cnn.{enc}.bn.running_var", self._ones(cfg.d_cnn))

            if cfg.temporal == "full":
                self._add_linear(rng, f"intra.{enc}.proj", cfg.d_cnn, cfg.d_tr)
                self.store.add(f"intra.{enc}.pos", self._zeros(cfg.num_tokens, cfg.d_tr))
                self._add_transformer(rng, f"intra.{enc}", cfg.d_tr)
                self.store.add(f"inter.{enc}.pos", self._zeros(cfg.context_window, cfg.d_tr))
                self._add_transformer(rng, f"inter.{enc}", cfg.d_tr)
            else:
                self._add_linear(rng, f"segproj.{enc}", cfg.d_cnn, cfg.d_tr)

        if cfg.fusion == "gcn":
            self._add_linear(rng, "gcn1", cfg.d_tr, cfg.d_tr)
            self._add_linear(rng, "gcn2", cfg.d_tr, cfg.d_tr)
        else:
            self._add_linear(rng, "concat", cfg.d_tr * len(cfg.modalities), cfg.d_tr)
        self._add_linear(rng, "classifier", cfg.d_tr, cfg.num_classes)

    def num_parameters(self) -> int:
        return self.store.num_parameters()

    def _layer_params(self, prefix: str) -> dict[str, Tensor]:
        start = len(prefix) + 1
        return {name[start:]: p for name, p in self.store.params.items() if name.startswith(prefix + ".")}

    # ---------------------------------------------------------------- stages

    def cnn_tokenize(self, tokens, modality: str, training: bool = False) -> Tensor:
        """(N, 1, S) raw tokens -> (N, d_cnn) token embeddings."""
        cfg = self.config
        x = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens, dtype=self.dtype))
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != cfg.token_samples:
            raise ValueError(f"expected tokens of shape (N, 1, {cfg.token_samples}), got {x.shape}")
        enc = self.encoder_key(modality)
        p = self.store.params
        # The parallel same-padded branches run as one convolution: each
        # kernel is zero-padded into the widest kernel at the offset that
        # preserves its own alignment. Outputs are channel-concatenated.
        k_max = max(cfg.kernel_sizes)
        left_max = ops.same_padding(k_max)[0]
        kernels = []
        for k in cfg.kernel_sizes:
            shift = left_max - ops.same_padding(k)[0]
            kernels.append(ops.pad_last(p[f"cnn.{enc}.branch{k}.weight"], shift, k_max - k - shift))
        weight = ops.concat(kernels, axis=0)
        bias = ops.concat([p[f"cnn.{enc}.branch{k}.bias"] for k in cfg.kernel_sizes], axis=0)
        h = ops.relu(ops.conv1d(x, weight, bias, padding=ops.same_padding(k_max)))
        h = ops.conv1d(h, p[f"cnn.{enc}.trunk.weight"], padding=ops.same_padding(cfg.trunk_kernel))
        h = ops.batch_norm(
            h,
            p[f"cnn.{enc}.bn.gamma"],
            p[f"cnn.{enc}.bn.beta"],
            self.store.buffers[f"cnn.{enc}.bn.running_mean"],
            self.store.buffers[f"cnn.{enc}.bn.running_var"],
            training,
        )
        h = ops.max_pool1d(ops.relu(h), cfg.pool_size, cfg.pool_size)
        return ops.adaptive_avg_pool1d(h)

    def _transformer(self, x: Tensor, prefix: str, training: bool, rng) -> Tensor:
        for layer in range(self.config.transformer_layers):
            x, _ = attention_block(
                x, self._layer_params(f"{prefix}.layer{layer}"), self.config.num_heads, self.config.dropout, training, rng
            )
        return x

    def intra_encode(self, z: Tensor, modality: str, training: bool = False, rng=None) -> Tensor:
        """(E, T, d_cnn) token embeddings -> (E, d_tr) segment embeddings."""
        cfg = self.config
        if z.ndim != 3 or z.shape[1] != cfg.num_tokens or z.shape[2] != cfg.d_cnn:
            raise ValueError(f"intra_encode expects (E, {cfg.num_tokens}, {cfg.d_cnn}), got {z.shape}")
        enc = self.encoder_key(modality)
        p = self.store.params
        x = ops.linear(z, p[f"intra.{enc}.proj.weight"], p[f"intra.{enc}.proj.bias"])
        x = ops.add(x, p[f"intra.{enc}.pos"])
        x = self._transformer(x, f"intra.{enc}", training, rng)
        return ops.mean(x, axis=1)

    def inter_encode(self, f: Tensor, modality: str, training: bool = False, rng=None) -> Tensor:
        """(B, W, d_tr) causal windows of segment embeddings -> (B, d_tr)."""
        cfg = self.config
        if f.ndim != 3 or f.shape[1] != cfg.context_window or f.shape[2] != cfg.d_tr:
            raise ValueError(f"inter_encode expects (B, {cfg.context_window}, {cfg.d_tr}), got {f.shape}")
        enc = self.encoder_key(modality)
        x = ops.add(f, self.store.params[f"inter.{enc}.pos"])
        x = self._transformer(x, f"inter.{enc}", training, rng)
        if cfg.inter_pooling == "last":
            return ops.take(ops.transpose(x, (1, 0, 2)), cfg.context_window - 1)
        return ops.mean(x, axis=1)

    def gcn_fuse(self, h: Tensor) -> Tensor:
        """(B, M, d) modality nodes -> (B, d): two graph convolutions then node mean."""
        m = len(self.config.modalities)
        if h.ndim != 3 or h.shape[1] != m:
            raise ValueError(f"gcn_fuse expects {m} modality nodes, got shape {h.shape}")
        p = self.store.params
        a_hat = Tensor(normalized_adjacency(m).astype(self.dtype))
        k1 = ops.relu(ops.add(ops.matmul(a_hat, ops.linear(h, p["gcn1.weight"])), p["gcn1.bias"]))
        k2 = ops.add(ops.matmul(a_hat, ops.linear(k1, p["gcn2.weight"])), p["gcn2.bias"])
        return ops.mean(k2, axis=1)

    def concat_fuse(self, h: Tensor) -> Tensor:
        """(B, M, d) -> (B, M*d) in modality order -> learned affine map to (B, d)."""
        m = len(self.config.modalities)
        if h.ndim != 3 or h.shape[1] != m:
            raise ValueError(f"concat_fuse expects {m} modality rows, got shape {h.shape}")
        flat = ops.reshape(h, (h.shape[0], m * h.shape[2]))
        return ops.linear(flat, self.store.params["concat.weight"], self.store.params["concat.bias"])

    def fuse(self, h: Tensor) -> Tensor:
        return self.gcn_fuse(h) if self.config.fusion == "gcn" else self.concat_fuse(h)

    def classify_logits(self, fused: Tensor) -> Tensor:
        return ops.linear(fused, self.store.params["classifier.weight"], self.store.params["classifier.bias"])

    def classify(self, fused: Tensor) -> Tensor:
        """Fused embedding(s) -> stage probabilities."""
        return ops.softmax(self.classify_logits(fused), axis=-1)

    # ----------------------------------------------------------- composition

    @property
    def context_epochs(self) -> int:
        """How many preceding epochs a prediction depends on."""
        return self.config.context_window - 1 if self.config.temporal == "full" else 0

    def encode_segments(self, tokens: np.ndarray, modality: str, training: bool = False, rng=None) -> Tensor:
        """(E, T, S) token batches for one modality -> (E, d_tr)."""
        cfg = self.config
        tokens = np.asarray(tokens, dtype=self.dtype)
        if tokens.ndim != 3 or tokens.shape[1:] != (cfg.num_tokens, cfg.token_samples):
            raise ValueError(f"expected (E, {cfg.num_tokens}, {cfg.token_samples}) tokens, got {tokens.shape}")
        e = tokens.shape[0]
        z = self.cnn_tokenize(tokens.reshape(e * cfg.num_tokens, 1, cfg.token_samples), modality, training)
        z = ops.reshape(z, (e, cfg.num_tokens, cfg.d_cnn))
        if cfg.temporal == "full":
            return self.intra_encode(z, modality, training, rng)
        enc = self.encoder_key(modality)
        pooled = ops.mean(z, axis=1)
        return ops.linear(pooled, self.store.params[f"segproj.{enc}.weight"], self.store.params[f"segproj.{enc}.bias"])

    def forward_chunk(
        self,
        tokens: Mapping[str, np.ndarray],
        windows: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Logits for a batch of windows over a shared run of epochs.

        ``tokens[m]`` is (E, T, S) for every configured modality; ``windows``
        is (B, W) with W = context_window, each row listing epoch indices into
        the run in causal order with the target epoch last.
        """
        cfg = self.config
        windows = np.asarray(windows, dtype=np.intp)
        if windows.ndim != 2 or windows.shape[1] != cfg.context_window:
            raise ValueError(f"windows must have shape (B, {cfg.context_window}), got {windows.shape}")
        missing = [m for m in cfg.modalities if m not in tokens]
        if missing:
            raise ValueError(f"missing modalities {missing}")

        contexts = []
        for m in cfg.modalities:
            run = np.asarray(tokens[m])
            if windows.size and (windows.min() < 0 or windows.max() >= run.shape[0]):
                raise ValueError(f"window indices outside the {run.shape[0]}-epoch run")
            if cfg.temporal == "full":
                segments = self.encode_segments(run, m, training, rng)
                contexts.append(self.inter_encode(ops.take(segments, windows), m, training, rng))
            else:
                # only the target epoch is ever encoded
                needed, inverse = np.unique(windows[:, -1], return_inverse=True)
                segments = self.encode_segments(run[needed], m, training, rng)
                contexts.append(ops.take(segments, inverse))
        h = ops.stack(contexts, axis=1)
        return self.classify_logits(self.fuse(h))

    def forward_full(self, window: Mapping[str, np.ndarray]) -> np.ndarray:
        """Stage probabilities for the last epoch of one context window.

        ``window[m]`` is (W, T, S): W consecutive epochs of tokens ending at
        the target epoch. Runs in eval mode.
        """
        cfg = self.config
        for m in cfg.modalities:
            if m not in window:
                raise ValueError(f"window lacks modality {m}")
            if np.shape(window[m])[0] != cfg.context_window:
                raise ValueError(f"{m}: expected {cfg.context_window} epochs, got {np.shape(window[m])[0]}")
        idx = np.arange(cfg.context_window)[None, :]
        logits = self.forward_chunk(window, idx, training=False)
        return ops.softmax(logits, axis=-1).data[0]


def causal_windows(targets: np.ndarray, run_start: int, width: int, record_start: int = 0) -> np.ndarray:
    """Window index matrix for absolute target epochs within a run.

    Positions before ``record_start`` repeat the first available epoch.
    Returned indices are relative to ``run_start``.
    """
    targets = np.asarray(targets, dtype=np.intp)
    offsets = np.arange(-(width - 1), 1)
    absolute = np.maximum(targets[:, None] + offsets[None, :], record_start)
    rel = absolute - run_start
    if rel.size and rel.min() < 0:
        raise ValueError("run does not cover the requested context")
    return rel
