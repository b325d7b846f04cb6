"""Orthogonal LSTM autoencoder.

An LSTM encoder reads a window of ``L`` samples; its final hidden state goes
through a fully-connected tanh layer to give the latent code ``C``.  The
decoder LSTM receives ``C`` at every step and an affine read-out maps each
decoder hidden state back to a sample.  Training minimizes reconstruction
MSE plus ``ortho_weight`` times an orthogonality penalty on the code layer
weights and on the batch Gram matrix of the codes.

Everything is plain numpy at float64 with hand-written backpropagation
through time.  Gate blocks are stacked in the order forget, input, output,
candidate.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import jsonio
from .core import WindowedDataset
from .errors import DataError, NumericError, SchemaError, TrainingError

log = logging.getLogger(__name__)

GATES = ("f", "i", "o", "c")
MODEL_VERSION = "olae_model_v1"

PARAM_NAMES = ("enc_Wx", "enc_Wh", "enc_b", "code_W", "code_b",
               "dec_Wx", "dec_Wh", "dec_b", "out_W", "out_b")


@dataclass(frozen=True)
class LstmCellParams:
    Wx: np.ndarray  # (4H, input_dim)
    Wh: np.ndarray  # (4H, H)
    b: np.ndarray   # (4H,)

    @property
    def hidden_dim(self) -> int:
        return self.Wh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[1]

    def gate(self, g: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Input weights, recurrent weights and bias of one gate."""
        H = self.hidden_dim
        k = GATES.index(g)
        s = slice(k * H, (k + 1) * H)
        return self.Wx[s], self.Wh[s], self.b[s]


@dataclass(frozen=True)
class OrthoFcParams:
    W: np.ndarray  # (m, H)
    b: np.ndarray  # (m,)


@dataclass(frozen=True)
class OlaeModel:
    params: dict
    window_len: int

    @property
    def input_dim(self) -> int:
        return self.params["enc_Wx"].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.params["enc_Wh"].shape[1]

    @property
    def latent_dim(self) -> int:
        return self.params["code_W"].shape[0]

    @property
    def encoder(self) -> LstmCellParams:
        p = self.params
        return LstmCellParams(p["enc_Wx"], p["enc_Wh"], p["enc_b"])

    @property
    def decoder(self) -> LstmCellParams:
        p = self.params
        return LstmCellParams(p["dec_Wx"], p["dec_Wh"], p["dec_b"])

    @property
    def code_layer(self) -> OrthoFcParams:
        return OrthoFcParams(self.params["code_W"], self.params["code_b"])

    def with_params(self, params: dict) -> "OlaeModel":
        return replace(self, params={k: np.array(params[k]) for k in PARAM_NAMES})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    ortho_weight: float = 1.0
    seed: int = 0
    gradient_clip_norm: float = 5.0
    ortho_exclude_diagonal: bool = False
    gram_normalization: str = "batch"  # or "none"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate",
                     "gradient_clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ortho_weight < 0:
            raise ValueError("ortho_weight must be >= 0")
        if self.gram_normalization not in ("batch", "none"):
            raise ValueError("gram_normalization must be 'batch' or 'none'")


def init_model(input_dim: int, hidden_dim: int, latent_dim: int,
               window_len: int, seed: int = 0) -> OlaeModel:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget bias 1."""
    if latent_dim > hidden_dim:
        raise ValueError("latent_dim cannot exceed hidden_dim")
    rng = np.random.default_rng(seed)
    H, p, m = hidden_dim, input_dim, latent_dim

    def u(shape):
        bound = 1.0 / math.sqrt(shape[1])
        return rng.uniform(-bound, bound, size=shape)

    def lstm_bias():
        b = np.zeros(4 * H)
        b[:H] = 1.0
        return b

    params = {
        "enc_Wx": u((4 * H, p)), "enc_Wh": u((4 * H, H)), "enc_b": lstm_bias(),
        "code_W": u((m, H)), "code_b": np.zeros(m),
        "dec_Wx": u((4 * H, m)), "dec_Wh": u((4 * H, H)), "dec_b": lstm_bias(),
        "out_W": u((p, H)), "out_b": np.zeros(p),
    }
    return OlaeModel(params, window_len)


def _check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}", parameter=name)


def lstm_cell_step(params: LstmCellParams, x_t, h_prev, c_prev):
    """One LSTM step; works on single vectors or on (batch, dim) arrays."""
    H = params.hidden_dim
    z = x_t @ params.Wx.T + h_prev @ params.Wh.T + params.b
    if not np.all(np.isfinite(z)):
        for name, arr in (("Wx", params.Wx), ("Wh", params.Wh), ("b", params.b)):
            _check_finite(arr, name)
        raise NumericError("non-finite gate pre-activation", parameter="Wx")
    f = expit(z[..., :H])
    i = expit(z[..., H:2 * H])
    o = expit(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


# ---------------------------------------------------------------------------
# batched forward / backward


def _lstm_forward(Wh, b, xproj, L, keep):
    """Run an LSTM from zero state.

    ``xproj`` is either (B, L, 4H) per-step input projections or (B, 4H) when
    the same input is fed at every step.
    """
    B = xproj.shape[0]
    H = Wh.shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, L, H))
    cache = {"f": [], "i": [], "o": [], "g": [], "c": [], "tc": []} if keep else None
    for t in range(L):
        z = (xproj[:, t] if xproj.ndim == 3 else xproj) + h @ Wh.T + b
        f = expit(z[:, :H])
        i = expit(z[:, H:2 * H])
        o = expit(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        if keep:
            for k, v in (("f", f), ("i", i), ("o", o), ("g", g), ("c", c), ("tc", tc)):
                cache[k].append(v)
    return hs, cache


def _lstm_backward(Wh, hs, cache, dhs):
    """BPTT.  Returns pre-activation grads (B, L, 4H) and dWh."""
    B, L, H = hs.shape
    dz_all = np.empty((B, L, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zero = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        f, i, o, g = cache["f"][t], cache["i"][t], cache["o"][t], cache["g"][t]
        tc = cache["tc"][t]
        c_prev = cache["c"][t - 1] if t > 0 else zero
        dh = dh_next + dhs[:, t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :H] = dc * c_prev * f * (1.0 - f)
        dz[:, H:2 * H] = dc * g * i * (1.0 - i)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dz @ Wh
    h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
    dWh = np.einsum("blg,blh->gh", dz_all, h_prev)
    return dz_all, dWh


def _forward(model: OlaeModel, X: np.ndarray, keep: bool):
    p = model.params
    L = X.shape[1]
    xproj = np.einsum("blp,gp->blg", X, p["enc_Wx"])
    enc_hs, enc_cache = _lstm_forward(p["enc_Wh"], p["enc_b"], xproj, L, keep)
    hL = enc_hs[:, -1]
    C = np.tanh(hL @ p["code_W"].T + p["code_b"])
    dproj = C @ p["dec_Wx"].T
    dec_hs, dec_cache = _lstm_forward(p["dec_Wh"], p["dec_b"], dproj, L, keep)
    Y = dec_hs @ p["out_W"].T + p["out_b"]
    return C, Y, (enc_hs, enc_cache, dec_hs, dec_cache)


def _check_window(model: OlaeModel, X: np.ndarray):
    if X.ndim != 3 or X.shape[2] != model.input_dim:
        raise SchemaError(
            f"expected windows of shape (n, L, {model.input_dim}), got {X.shape}")


def encode_batch(model: OlaeModel, windows: np.ndarray,
                 chunk: int = 4096) -> np.ndarray:
    """Codes for a stack of windows, shape (n, m)."""
    X = np.asarray(windows, dtype=np.float64)
    _check_window(model, X)
    p = model.params
    out = np.empty((X.shape[0], model.latent_dim))
    for s in range(0, X.shape[0], chunk):
        xb = X[s:s + chunk]
        xproj = np.einsum("blp,gp->blg", xb, p["enc_Wx"])
        hs, _ = _lstm_forward(p["enc_Wh"], p["enc_b"], xproj, xb.shape[1], False)
        out[s:s + chunk] = np.tanh(hs[:, -1] @ p["code_W"].T + p["code_b"])
    return out


def encode(model: OlaeModel, window: np.ndarray) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (model.window_len, model.input_dim):
        raise SchemaError(f"window shape {window.shape} does not match model "
                          f"({model.window_len}, {model.input_dim})")
    return encode_batch(model, window[None])[0]


def decode(model: OlaeModel, code: np.ndarray) -> np.ndarray:
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (model.latent_dim,):
        raise SchemaError(f"code length {code.shape} != ({model.latent_dim},)")
    p = model.params
    hs, _ = _lstm_forward(p["dec_Wh"], p["dec_b"], (code @ p["dec_Wx"].T)[None],
                          model.window_len, False)
    return hs[0] @ p["out_W"].T + p["out_b"]


def reconstruct(model: OlaeModel, windows: np.ndarray) -> np.ndarray:
    X = np.asarray(windows, dtype=np.float64)
    _check_window(model, X)
    return _forward(model, X, keep=False)[1]


# ---------------------------------------------------------------------------
# loss and gradient


def _ortho_terms(W, C, cfg: TrainConfig):
    G = W @ W.T
    if cfg.ortho_exclude_diagonal:
        G = G - np.diag(np.diag(G))
    B = C.shape[0]
    scale = 1.0 / B if cfg.gram_normalization == "batch" else 1.0
    M = scale * (C.T @ C) - np.eye(C.shape[1])
    return G, M, scale


def loss(model: OlaeModel, batch: np.ndarray, cfg: TrainConfig = TrainConfig()
         ) -> tuple[float, float, float]:
    """(total, mse, ortho) with total = mse + ortho_weight * ortho."""
    X = np.asarray(batch, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("empty batch")
    _check_window(model, X)
    C, Y, _ = _forward(model, X, keep=False)
    mse = float(np.mean((X - Y) ** 2))
    G, M, _ = _ortho_terms(model.params["code_W"], C, cfg)
    ortho = float(np.sum(G * G) + np.sum(M * M))
    return mse + cfg.ortho_weight * ortho, mse, ortho


def ortho_weight_grad(W: np.ndarray, exclude_diagonal: bool = False) -> np.ndarray:
    """Gradient of ||W W^T||_F^2 (or of its off-diagonal part)."""
    G = W @ W.T
    if exclude_diagonal:
        G = G - np.diag(np.diag(G))
    return 4.0 * G @ W


def loss_and_grad(model: OlaeModel, batch: np.ndarray,
                  cfg: TrainConfig = TrainConfig()):
    X = np.asarray(batch, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("empty batch")
    _check_window(model, X)
    p = model.params
    lam = cfg.ortho_weight
    C, Y, (enc_hs, enc_cache, dec_hs, dec_cache) = _forward(model, X, keep=True)
    B, L, _ = X.shape
    G, M, scale = _ortho_terms(p["code_W"], C, cfg)
    mse = float(np.mean((X - Y) ** 2))
    ortho = float(np.sum(G * G) + np.sum(M * M))

    g = {}
    dY = 2.0 * (Y - X) / X.size
    g["out_W"] = np.einsum("blp,blh->ph", dY, dec_hs)
    g["out_b"] = dY.sum(axis=(0, 1))
    dz, g["dec_Wh"] = _lstm_backward(p["dec_Wh"], dec_hs, dec_cache, dY @ p["out_W"])
    dz_sum = dz.sum(axis=1)
    g["dec_b"] = dz_sum.sum(axis=0)
    g["dec_Wx"] = dz_sum.T @ C
    dC = dz_sum @ p["dec_Wx"] + lam * 4.0 * scale * (C @ M)

    dA = dC * (1.0 - C * C)
    hL = enc_hs[:, -1]
    g["code_W"] = dA.T @ hL + lam * 4.0 * G @ p["code_W"]
    g["code_b"] = dA.sum(axis=0)
    dhs = np.zeros_like(enc_hs)
    dhs[:, -1] = dA @ p["code_W"]
    dz, g["enc_Wh"] = _lstm_backward(p["enc_Wh"], enc_hs, enc_cache, dhs)
    g["enc_b"] = dz.sum(axis=(0, 1))
    g["enc_Wx"] = np.einsum("blg,blp->gp", dz, X)

    for k in PARAM_NAMES:
        _check_finite(g[k], k)
    return (mse + lam * ortho, mse, ortho), g


def grad(model: OlaeModel, batch: np.ndarray, cfg: TrainConfig = TrainConfig()) -> dict:
    return loss_and_grad(model, batch, cfg)[1]


# ---------------------------------------------------------------------------
# optimizer and training


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()},
                   0, beta1, beta2, eps)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, gk in grads.items():
        state.m[k] *= b1
        state.m[k] += (1.0 - b1) * gk
        state.v[k] *= b2
        state.v[k] += (1.0 - b2) * gk * gk
        params[k] -= lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


@dataclass
class TrainHistory:
    total: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    ortho: list = field(default_factory=list)
    initial: tuple = (math.nan, math.nan, math.nan)
    warnings: list = field(default_factory=list)

    def rows(self):
        return [{"epoch": e + 1, "total": t, "mse": m, "ortho": o}
                for e, (t, m, o) in enumerate(zip(self.total, self.mse, self.ortho))]


def _smoothed_non_increasing(values, width=5) -> bool:
    if len(values) < width + 1:
        return True
    sm = np.convolve(values, np.ones(width) / width, mode="valid")
    return bool(np.all(np.diff(sm) <= 0))


def evaluate_loss(model, windows, cfg, batch_size=512):
    """Loss over a full dataset, with the Gram term taken per chunk."""
    n = windows.shape[0]
    tot = np.zeros(3)
    for s in range(0, n, batch_size):
        xb = windows[s:s + batch_size]
        tot += np.array(loss(model, xb, cfg)) * xb.shape[0]
    return tuple(tot / n)


def train(model: OlaeModel, data: WindowedDataset | np.ndarray,
          cfg: TrainConfig = TrainConfig()) -> tuple[OlaeModel, TrainHistory]:
    windows = data.windows if isinstance(data, WindowedDataset) else np.asarray(data)
    n = windows.shape[0]
    if n == 0:
        raise DataError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    params = {k: np.array(model.params[k]) for k in PARAM_NAMES}
    state = AdamState.zeros_like(params, cfg.beta1, cfg.beta2, cfg.eps)
    hist = TrainHistory()
    hist.initial = evaluate_loss(model, windows, cfg)
    work = OlaeModel(params, model.window_len)  # shares the arrays Adam updates
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for s in range(0, n - bs + 1, bs):
            batch = windows[order[s:s + bs]]
            try:
                (tot, mse, orth), g = loss_and_grad(work, batch, cfg)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch + 1}: {exc}",
                                    parameter=exc.parameter, epoch=epoch + 1) from exc
            if not math.isfinite(tot):
                raise TrainingError(f"loss diverged at epoch {epoch + 1}",
                                    epoch=epoch + 1)
            clip_by_global_norm(g, cfg.gradient_clip_norm)
            adam_step(params, g, state, cfg.learning_rate)
            sums += (tot, mse, orth)
        nb = n // bs
        hist.total.append(sums[0] / nb)
        hist.mse.append(sums[1] / nb)
        hist.ortho.append(sums[2] / nb)
        log.debug("epoch %d total %.5f mse %.5f ortho %.5f", epoch + 1,
                  hist.total[-1], hist.mse[-1], hist.ortho[-1])
    if not _smoothed_non_increasing(hist.total):
        msg = "smoothed training loss is not monotonically non-increasing"
        hist.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return OlaeModel({k: params[k] for k in PARAM_NAMES}, model.window_len), hist


def redundancy_report(codes: np.ndarray):
    """Batch Gram matrix and absolute Pearson correlations of code columns.

    Entries involving a constant column are NaN.
    """
    C = np.asarray(codes, dtype=np.float64)
    if C.shape[0] < 2:
        raise DataError("redundancy report needs at least 2 codes")
    gram = C.T @ C / C.shape[0]
    sd = C.std(axis=0)
    const = sd < 1e-12
    Z = (C - C.mean(axis=0)) / np.where(const, 1.0, sd)
    corr = np.abs(Z.T @ Z / C.shape[0])
    corr[const, :] = np.nan
    corr[:, const] = np.nan
    return gram, corr


def mean_offdiag(a: np.ndarray) -> float:
    m = a.shape[0]
    mask = ~np.eye(m, dtype=bool)
    return float(np.nanmean(np.abs(a[mask])))


# ---------------------------------------------------------------------------
# persistence


def model_to_dict(model: OlaeModel, meta: dict | None = None) -> dict:
    return {
        "version": MODEL_VERSION,
        "dims": {"input": model.input_dim, "hidden": model.hidden_dim,
                 "latent": model.latent_dim, "window": model.window_len},
        "gate_order": list(GATES),
        "meta": meta or {},
        "params": {k: jsonio.pack_array(model.params[k]) for k in PARAM_NAMES},
    }


def model_from_dict(d: dict) -> OlaeModel:
    if d.get("version") != MODEL_VERSION:
        raise SchemaError(f"unsupported model version {d.get('version')!r}")
    params = {k: jsonio.unpack_array(d["params"][k]) for k in PARAM_NAMES}
    model = OlaeModel(params, int(d["dims"]["window"]))
    dims = d["dims"]
    if (model.input_dim, model.hidden_dim, model.latent_dim) != (
            dims["input"], dims["hidden"], dims["latent"]):
        raise SchemaError("parameter shapes disagree with declared dims")
    return model


def save_model(model: OlaeModel, path: str | Path, meta: dict | None = None):
    jsonio.dump(model_to_dict(model, meta), path)


def load_model(path: str | Path) -> OlaeModel:
    return model_from_dict(jsonio.load(path))
