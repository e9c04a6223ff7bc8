"""Trajectory verdicts from a small transformer, float32 end to end.

The model reads the most recent window of track observations (each a
9-vector: position, Doppler, five signal metrics), re-expresses the
positions relative to the window's first observation, standardises
features with stats stored alongside the weights, and produces
[p_false, p_true]. One encoder layer self-attends over the window; a
one-query decoder (the newest observation's embedding) cross-attends
into the encoder output; both use pre-norm residuals.

Weights live in a single container file: a JSON header line describing
hyperparameters and the tensor table, a newline, then the raw
little-endian float32 payload.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_TAG = "tfw1"
LN_EPS = np.float32(1e-5)


@dataclass
class TrajFormerHyper:
    window: int = 6
    features: int = 9
    d_model: int = 32
    n_heads: int = 2
    ffn_dim: int = 64

    def to_dict(self):
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(v) for k, v in d.items()})


def tensor_table(h: TrajFormerHyper) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical tensor names and shapes, in container order."""
    f, d, ffn, w = h.features, h.d_model, h.ffn_dim, h.window
    table = [("embed.w", (f, d)), ("embed.b", (d,)), ("pos", (w, d))]
    for blk in ("enc", "dec"):
        for proj in ("q", "k", "v", "o"):
            table.append((f"{blk}.attn.w{proj}", (d, d)))
            table.append((f"{blk}.attn.b{proj}", (d,)))
        table.extend([(f"{blk}.ln1.g", (d,)), (f"{blk}.ln1.b", (d,)),
                      (f"{blk}.ln2.g", (d,)), (f"{blk}.ln2.b", (d,)),
                      (f"{blk}.ffn.w1", (d, ffn)), (f"{blk}.ffn.b1", (ffn,)),
                      (f"{blk}.ffn.w2", (ffn, d)), (f"{blk}.ffn.b2", (d,))])
    table.extend([("head.w", (d, 2)), ("head.b", (2,)),
                  ("norm.mean", (f,)), ("norm.std", (f,))])
    return table


@dataclass
class TrajFormerWeights:
    hyper: TrajFormerHyper
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def validate_weights(w: TrajFormerWeights) -> None:
    expected = dict(tensor_table(w.hyper))
    for name, shape in expected.items():
        if name not in w.tensors:
            raise ValueError(f"weight file missing tensor {name!r}")
        t = w.tensors[name]
        if tuple(t.shape) != shape:
            raise ValueError(
                f"tensor {name!r} has shape {tuple(t.shape)}, expected {shape}")
        if t.dtype != np.float32:
            raise ValueError(f"tensor {name!r} is not float32")
        if not np.isfinite(t).all():
            raise ValueError(f"tensor {name!r} contains non-finite values")
    extra = set(w.tensors) - set(expected)
    if extra:
        raise ValueError(f"weight file has unexpected tensors: {sorted(extra)}")
    if (w.tensors["norm.std"] <= 0).any():
        raise ValueError("tensor 'norm.std' must be strictly positive")


def save_weights(w: TrajFormerWeights, path: str) -> None:
    validate_weights(w)
    entries, blobs, offset = [], [], 0
    for name, _ in tensor_table(w.hyper):
        t = np.ascontiguousarray(w.tensors[name], dtype="<f4")
        entries.append({"name": name, "shape": list(t.shape),
                        "offset": offset, "count": int(t.size)})
        blobs.append(t.tobytes())
        offset += t.size
    header = {"format": FORMAT_TAG, "hyper": w.hyper.to_dict(),
              "tensors": entries}
    with open(path, "wb") as fp:
        fp.write(json.dumps(header, sort_keys=True).encode())
        fp.write(b"\n")
        for b in blobs:
            fp.write(b)


def load_weights(path: str) -> TrajFormerWeights:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError("weight file has no header line")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as e:
        raise ValueError(f"weight file header is not valid JSON: {e}") from None
    if header.get("format") != FORMAT_TAG:
        raise ValueError("not a trajectory-classifier weight file")
    hyper = TrajFormerHyper.from_dict(header["hyper"])
    payload = np.frombuffer(raw[nl + 1:], dtype="<f4")
    tensors = {}
    for ent in header["tensors"]:
        lo, n = int(ent["offset"]), int(ent["count"])
        if lo + n > payload.size:
            raise ValueError(f"tensor {ent['name']!r} overruns the payload")
        tensors[ent["name"]] = payload[lo:lo + n].reshape(ent["shape"]).copy()
    w = TrajFormerWeights(hyper=hyper, tensors=tensors)
    validate_weights(w)
    return w


def default_weights_path() -> Path:
    return Path(__file__).parent / "assets" / "trajformer.tfw"


def default_parity_path() -> Path:
    return Path(__file__).parent / "assets" / "trajformer_parity.json"


# -- forward pass -------------------------------------------------------

def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * g + b


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _attention(q_in, kv_in, w, prefix, n_heads):
    d = q_in.shape[-1]
    dh = d // n_heads
    q = q_in @ w[f"{prefix}.wq"] + w[f"{prefix}.bq"]
    k = kv_in @ w[f"{prefix}.wk"] + w[f"{prefix}.bk"]
    v = kv_in @ w[f"{prefix}.wv"] + w[f"{prefix}.bv"]
    scale = np.float32(1.0 / np.sqrt(dh))
    ctx = np.empty_like(q)
    maps = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        att = _softmax((q[:, sl] @ k[:, sl].T) * scale)
        maps.append(att)
        ctx[:, sl] = att @ v[:, sl]
    return ctx @ w[f"{prefix}.wo"] + w[f"{prefix}.bo"], maps


def preprocess_window(weights: TrajFormerWeights,
                      window: np.ndarray) -> np.ndarray:
    """Relative positions, then feature standardisation, in float32."""
    h = weights.hyper
    x = np.asarray(window, dtype=np.float32).copy()
    if x.shape != (h.window, h.features):
        raise ValueError(
            f"window must be {(h.window, h.features)}, got {x.shape}")
    x[:, :3] -= x[0, :3]
    return (x - weights["norm.mean"]) / weights["norm.std"]


def forward(weights: TrajFormerWeights, window: np.ndarray,
            return_debug: bool = False):
    """[p_false, p_true] for one observation window."""
    h = weights.hyper
    w = weights.tensors
    x = preprocess_window(weights, window)

    e = x @ w["embed.w"] + w["embed.b"] + w["pos"]

    attn_in = _layer_norm(e, w["enc.ln1.g"], w["enc.ln1.b"])
    sa, enc_maps = _attention(attn_in, attn_in, w, "enc.attn", h.n_heads)
    a = e + sa
    f_in = _layer_norm(a, w["enc.ln2.g"], w["enc.ln2.b"])
    ff = np.maximum(f_in @ w["enc.ffn.w1"] + w["enc.ffn.b1"], np.float32(0.0))
    enc_out = a + ff @ w["enc.ffn.w2"] + w["enc.ffn.b2"]

    q0 = e[-1:]
    cq = _layer_norm(q0, w["dec.ln1.g"], w["dec.ln1.b"])
    ca, dec_maps = _attention(cq, enc_out, w, "dec.attn", h.n_heads)
    c = q0 + ca
    f2_in = _layer_norm(c, w["dec.ln2.g"], w["dec.ln2.b"])
    ff2 = np.maximum(f2_in @ w["dec.ffn.w1"] + w["dec.ffn.b1"], np.float32(0.0))
    d = c + ff2 @ w["dec.ffn.w2"] + w["dec.ffn.b2"]

    logits = (d @ w["head.w"] + w["head.b"])[0]
    probs = _softmax(logits[None, :])[0]
    if return_debug:
        return probs, {"encoder_attention": enc_maps,
                       "decoder_attention": dec_maps, "logits": logits}
    return probs


def classify_window(weights: TrajFormerWeights, window: np.ndarray) -> float:
    """Probability that the window belongs to a real target."""
    return float(forward(weights, window)[1])


@dataclass
class VerificationPolicy:
    """Streak rules turning per-window verdicts into track decisions.

    verify_streak consecutive true verdicts promote a confirmed track
    to verified (sticky); drop_streak consecutive false verdicts on a
    confirmed or verified track discard it.
    """

    verify_streak: int = 1
    drop_streak: int = 5
