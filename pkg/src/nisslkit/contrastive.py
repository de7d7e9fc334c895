"""Symmetric contrastive objective and a desk-scale dual-encoder trainer.

The objective over a batch of N paired unit embeddings is the mean of two
cross-entropies on the scaled cosine-similarity matrix: image rows classified
against their paired text (row softmax) and text rows against their paired
image (column softmax), each averaged over the batch and weighted 1/2.

Gradients are analytic and flow through the cosine similarity, i.e. they
include the tangent projection of the embedding normalization, so they match
central finite differences of the loss as a function of the raw vectors.

The trainer is intentionally small: fixed per-image feature vectors and a
hashed bag-of-words text vector pass through one learnable projection each,
followed by L2 normalization and the shared temperature. It runs in float64
on one CPU and is bit-deterministic given its seed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NisslkitError

LOGIT_SCALE_MAX = math.log(100.0)
LOGIT_SCALE_INIT = math.log(1.0 / 0.07)
UNIT_NORM_TOL = 1e-6


def l2_normalize(matrix: np.ndarray, axis: int = -1) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=axis, keepdims=True)
    if np.any(norms == 0.0):
        raise NisslkitError("cannot normalize a zero vector")
    return matrix / norms


@dataclass(frozen=True)
class EmbeddingBatch:
    """Positionally paired unit-norm image/text embedding matrices (N x d)."""

    image_embeddings: np.ndarray
    text_embeddings: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.image_embeddings, dtype=np.float64)
        txt = np.asarray(self.text_embeddings, dtype=np.float64)
        if img.ndim != 2 or txt.ndim != 2 or img.shape != txt.shape:
            raise NisslkitError("embedding matrices must share an N x d shape")
        if img.shape[0] < 1:
            raise NisslkitError("batch must contain at least one pair")
        for name, mat in (("image", img), ("text", txt)):
            norms = np.linalg.norm(mat, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise NisslkitError(f"{name} embeddings are not unit-norm")
        object.__setattr__(self, "image_embeddings", img)
        object.__setattr__(self, "text_embeddings", txt)

    @property
    def size(self) -> int:
        return self.image_embeddings.shape[0]


@dataclass
class Temperature:
    """Learnable softmax temperature tau = exp(logit_scale), capped at 100."""

    logit_scale: float = LOGIT_SCALE_INIT

    def __post_init__(self):
        self.logit_scale = min(float(self.logit_scale), LOGIT_SCALE_MAX)

    @property
    def tau(self) -> float:
        return math.exp(self.logit_scale)


def cosine_sim_matrix(batch: EmbeddingBatch) -> np.ndarray:
    """S[i, j] = <image_i, text_j>, clipped into [-1, 1]."""
    return np.clip(batch.image_embeddings @ batch.text_embeddings.T, -1.0, 1.0)


def _row_log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def symmetric_ce_loss(sim: np.ndarray, tau: float) -> float:
    """Mean of the image-to-text and text-to-image cross-entropies."""
    sim = np.asarray(sim, dtype=np.float64)
    if not np.all(np.isfinite(sim)):
        raise NisslkitError("similarity matrix contains non-finite values")
    if not (np.isfinite(tau) and tau > 0):
        raise NisslkitError("tau must be finite and > 0")
    n = sim.shape[0]
    if sim.shape != (n, n):
        raise NisslkitError("similarity matrix must be square")
    logits = tau * sim
    diag = np.arange(n)
    loss_i2t = -_row_log_softmax(logits)[diag, diag].mean()
    loss_t2i = -_row_log_softmax(logits.T)[diag, diag].mean()
    return float(0.5 * (loss_i2t + loss_t2i))


@dataclass(frozen=True)
class LossGradients:
    image_embeddings: np.ndarray
    text_embeddings: np.ndarray
    logit_scale: float


def _softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _tangent_project(grad: np.ndarray, unit_rows: np.ndarray) -> np.ndarray:
    # remove the radial component: d(normalize)/dx at a unit vector
    radial = np.sum(grad * unit_rows, axis=1, keepdims=True)
    return grad - radial * unit_rows


def loss_gradients(batch: EmbeddingBatch, temperature: Temperature) -> LossGradients:
    """Analytic gradients of symmetric_ce_loss w.r.t. embeddings and scale.

    With P the row softmax and C the column softmax of tau * S, the gradient
    through the logits is G = tau/(2N) * (P + C - 2I); embedding gradients are
    G @ T and G.T @ I projected onto each row's tangent space, and the
    logit_scale gradient is sum(G * S) (the extra tau from d tau/d logit_scale
    cancels the 1/tau from differentiating in tau).
    """
    img = batch.image_embeddings
    txt = batch.text_embeddings
    n = batch.size
    tau = temperature.tau
    sim = img @ txt.T
    logits = tau * sim
    p_rows = _softmax(logits, axis=1)
    p_cols = _softmax(logits, axis=0)
    g_logits = (p_rows + p_cols - 2.0 * np.eye(n)) * (tau / (2.0 * n))
    grad_img = _tangent_project(g_logits @ txt, img)
    grad_txt = _tangent_project(g_logits.T @ img, txt)
    grad_scale = float(np.sum(g_logits * sim))
    return LossGradients(grad_img, grad_txt, grad_scale)


# ---------------------------------------------------------------------------
# optimizer: Adam with decoupled weight decay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerHyperparams:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class OptimizerState:
    hyper: OptimizerHyperparams
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One decoupled-weight-decay update: theta -= lr*(m_hat/(sqrt(v_hat)+eps)
    + weight_decay*theta). Parameters are updated in place."""
    hp = state.hyper
    state.step += 1
    t = state.step
    bias1 = 1.0 - hp.beta1 ** t
    bias2 = 1.0 - hp.beta2 ** t
    for name, theta in params.items():
        grad = grads[name]
        if np.shape(grad) != np.shape(theta):
            raise NisslkitError(f"gradient shape mismatch for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        m *= hp.beta1
        m += (1.0 - hp.beta1) * grad
        v *= hp.beta2
        v += (1.0 - hp.beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        theta -= hp.lr * (m_hat / (np.sqrt(v_hat) + hp.eps)
                          + hp.weight_decay * theta)
    return params, state


# ---------------------------------------------------------------------------
# toy dual encoder
# ---------------------------------------------------------------------------

TEXT_FEATURE_DIM = 256
_HASH_PROBES = 4


def hashed_text_features(text: str, dim: int = TEXT_FEATURE_DIM) -> np.ndarray:
    """Deterministic signed bag-of-words hash of a label string.

    Each whitespace token lights up a few signed coordinates derived from its
    digest, so identical strings always map to identical vectors and distinct
    tokens collide only with negligible probability.
    """
    vec = np.zeros(dim, dtype=np.float64)
    for token in text.lower().split():
        digest = hashlib.md5(token.encode("utf-8")).digest()
        for probe in range(_HASH_PROBES):
            idx = int.from_bytes(digest[4 * probe:4 * probe + 2], "little") % dim
            sign = 1.0 if digest[4 * probe + 2] % 2 == 0 else -1.0
            vec[idx] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise NisslkitError(f"cannot embed empty label text {text!r}")
    return vec / norm


@dataclass
class DualEncoder:
    """Linear projections into the shared space, L2-normalized on output."""

    image_projection: np.ndarray  # d_img x d
    text_projection: np.ndarray   # d_txt x d

    def __post_init__(self):
        if not (np.all(np.isfinite(self.image_projection))
                and np.all(np.isfinite(self.text_projection))):
            raise NisslkitError("projection matrices must be finite")

    def encode_image(self, features: np.ndarray) -> np.ndarray:
        return l2_normalize(np.atleast_2d(features) @ self.image_projection)

    def encode_text(self, texts: Sequence[str]) -> np.ndarray:
        feats = np.stack([hashed_text_features(t, self.text_projection.shape[0])
                          for t in texts])
        return l2_normalize(feats @ self.text_projection)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    embed_dim: int = 32
    text_dim: int = TEXT_FEATURE_DIM
    init_scale: float = 1e-3  # small init: normalization makes early steps rotate fast
    seed: int = 0


@dataclass
class TrainResult:
    encoder: DualEncoder
    temperature: Temperature
    loss_curve: list[float]


def _normalize_rows_backward(raw: np.ndarray, unit: np.ndarray,
                             grad_unit: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norms


def train_toy(captions: Sequence[str], image_features: np.ndarray,
              config: TrainConfig = TrainConfig(),
              epoch_callback: Optional[Callable[[int, float], None]] = None
              ) -> TrainResult:
    """Train the projections + temperature on (caption, feature) pairs.

    Image features are unit-normalized once up front; text features come from
    the hashed bag-of-words of each caption. Batches are a seeded shuffle per
    epoch with the final partial batch kept. Returns the per-epoch mean loss.
    """
    n = len(captions)
    if n == 0:
        raise NisslkitError("training set is empty")
    feats = np.asarray(image_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != n:
        raise NisslkitError("image_features must be (n_records, d_img)")
    feats = l2_normalize(feats)
    text_feats = np.stack([hashed_text_features(c, config.text_dim)
                           for c in captions])

    rng = np.random.default_rng(config.seed)
    d_img = feats.shape[1]
    params = {
        "w_img": rng.normal(0.0, config.init_scale, size=(d_img, config.embed_dim)),
        "w_txt": rng.normal(0.0, config.init_scale, size=(config.text_dim, config.embed_dim)),
        "logit_scale": np.array(LOGIT_SCALE_INIT, dtype=np.float64),
    }
    state = OptimizerState(hyper=OptimizerHyperparams(
        lr=config.lr, beta1=config.beta1, beta2=config.beta2,
        eps=config.eps, weight_decay=config.weight_decay))

    loss_curve: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses: list[float] = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            f_img = feats[idx]
            f_txt = text_feats[idx]
            b = len(idx)

            raw_img = f_img @ params["w_img"]
            raw_txt = f_txt @ params["w_txt"]
            u_img = l2_normalize(raw_img)
            u_txt = l2_normalize(raw_txt)
            tau = math.exp(float(params["logit_scale"]))

            sim = u_img @ u_txt.T
            logits = tau * sim
            p_rows = _softmax(logits, axis=1)
            p_cols = _softmax(logits, axis=0)
            diag = np.arange(b)
            log_p = _row_log_softmax(logits)
            log_q = _row_log_softmax(logits.T)
            loss = float(-0.5 * (log_p[diag, diag].mean() + log_q[diag, diag].mean()))
            epoch_losses.append(loss)

            g_logits = (p_rows + p_cols - 2.0 * np.eye(b)) * (tau / (2.0 * b))
            grad_u_img = g_logits @ u_txt
            grad_u_txt = g_logits.T @ u_img
            grads = {
                "w_img": f_img.T @ _normalize_rows_backward(raw_img, u_img, grad_u_img),
                "w_txt": f_txt.T @ _normalize_rows_backward(raw_txt, u_txt, grad_u_txt),
                "logit_scale": np.array(np.sum(g_logits * sim)),
            }
            optimizer_step(params, grads, state)
            params["logit_scale"] = np.minimum(params["logit_scale"], LOGIT_SCALE_MAX)

        mean_loss = float(np.mean(epoch_losses))
        loss_curve.append(mean_loss)
        if epoch_callback is not None:
            epoch_callback(epoch, mean_loss)

    encoder = DualEncoder(image_projection=params["w_img"],
                          text_projection=params["w_txt"])
    return TrainResult(encoder=encoder,
                       temperature=Temperature(float(params["logit_scale"])),
                       loss_curve=loss_curve)
