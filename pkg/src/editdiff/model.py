"""Dual-head conditional transformer encoder: architecture, loss, training,
and binary checkpoint serialization.

The input sequence is [condition tokens] ++ [START] ++ [caption tokens].
The hidden states of START and each caption token feed two linear heads: a
4-way edit-operation head and a vocabulary-wide content-word head.  The
START row doubles as the script's sentinel slot and its op logits are
masked to KEEP/INSERT.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .align import align
from .autodiff import Adam, Tensor, backward
from .diffusion import denoise_loop, make_random_sequence, sample_denoising_example
from .edit_ops import CaptionState, EditOp, EditScript, NoiseSchedule
from .vocab import NUM_SPECIALS, START_ID, Vocabulary

CHECKPOINT_MAGIC = b"EDIF1"
CHECKPOINT_VERSION = 1

NEG_INF = -1e9


class ModelError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    cond_vocab_size: int
    embed_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    max_T: int = 10
    max_seq_len: int = 48
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ModelError("embed_dim must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must be in [0, 1)")
        for name in ("vocab_size", "cond_vocab_size", "embed_dim", "num_layers",
                     "num_heads", "ffn_dim", "max_T", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be positive")


POSITION_CODE_SEED = 12345


def position_codes(n_positions: int, dim: int) -> np.ndarray:
    """Fixed random position codes, standard normal per entry.

    Random codes are near-orthogonal between positions, so attention can
    address an individual position sharply.  Smooth sinusoids leave
    neighboring positions highly correlated, which measurably prevents the
    denoiser from routing condition tokens to their caption slots.
    """
    rng = np.random.default_rng(POSITION_CODE_SEED)
    return rng.normal(0.0, 1.0, size=(n_positions, dim))


def sinusoid_table(n_positions: int, dim: int) -> np.ndarray:
    pos = np.arange(n_positions)[:, None].astype(np.float64)
    i = np.arange(dim // 2)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, 2 * i / dim)
    table = np.zeros((n_positions, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


class DenoiserModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d, k = cfg.embed_dim, cfg.vocab_size
        self.params: dict[str, Tensor] = {}

        def param(name: str, shape, kind: str = "normal") -> Tensor:
            if kind == "normal":
                data = rng.normal(0.0, 0.02, size=shape)
            elif kind == "ones":
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            t = Tensor(data, requires_grad=True)
            self.params[name] = t
            return t

        param("word_emb", (k, d))
        param("cond_emb", (cfg.cond_vocab_size, d))
        param("seg_emb", (2, d))
        for i in range(cfg.num_layers):
            for w in ("wq", "wk", "wv", "wo"):
                param(f"layers.{i}.attn.{w}", (d, d))
            for b in ("bq", "bk", "bv", "bo"):
                param(f"layers.{i}.attn.{b}", (d,), "zeros")
            param(f"layers.{i}.ln1.g", (d,), "ones")
            param(f"layers.{i}.ln1.b", (d,), "zeros")
            param(f"layers.{i}.ln2.g", (d,), "ones")
            param(f"layers.{i}.ln2.b", (d,), "zeros")
            param(f"layers.{i}.ffn.w1", (d, cfg.ffn_dim))
            param(f"layers.{i}.ffn.b1", (cfg.ffn_dim,), "zeros")
            param(f"layers.{i}.ffn.w2", (cfg.ffn_dim, d))
            param(f"layers.{i}.ffn.b2", (d,), "zeros")
        param("ln_f.g", (d,), "ones")
        param("ln_f.b", (d,), "zeros")
        param("edit_head.w", (d, 4))
        param("edit_head.b", (4,), "zeros")
        param("lang_head.w", (d, k))
        param("lang_head.b", (k,), "zeros")

        self.pos_table = position_codes(cfg.max_seq_len, d)
        self.time_table = sinusoid_table(cfg.max_T + 1, d)

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x), self.params[f"{prefix}.g"]),
                      self.params[f"{prefix}.b"])

    def _attention(self, x: Tensor, layer: int) -> Tensor:
        p = self.params
        cfg = self.cfg
        dh = cfg.embed_dim // cfg.num_heads
        q = ad.add(ad.matmul(x, p[f"layers.{layer}.attn.wq"]), p[f"layers.{layer}.attn.bq"])
        k = ad.add(ad.matmul(x, p[f"layers.{layer}.attn.wk"]), p[f"layers.{layer}.attn.bk"])
        v = ad.add(ad.matmul(x, p[f"layers.{layer}.attn.wv"]), p[f"layers.{layer}.attn.bv"])
        heads = []
        for h in range(cfg.num_heads):
            cols = slice(h * dh, (h + 1) * dh)
            qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(dh))
            heads.append(ad.matmul(ad.softmax(scores), vh))
        merged = ad.concat(heads, axis=1)
        return ad.add(ad.matmul(merged, p[f"layers.{layer}.attn.wo"]),
                      p[f"layers.{layer}.attn.bo"])

    def _ffn(self, x: Tensor, layer: int) -> Tensor:
        p = self.params
        h = ad.silu(ad.add(ad.matmul(x, p[f"layers.{layer}.ffn.w1"]),
                           p[f"layers.{layer}.ffn.b1"]))
        return ad.add(ad.matmul(h, p[f"layers.{layer}.ffn.w2"]),
                      p[f"layers.{layer}.ffn.b2"])

    def forward(self, condition, caption_ids, t: int,
                dropout_rng: np.random.Generator | None = None
                ) -> tuple[Tensor, Tensor]:
        """Return (op_logits, word_logits), each with l+1 rows (START first)."""
        cfg = self.cfg
        condition = list(condition)
        caption_ids = list(caption_ids)
        if not 1 <= t <= cfg.max_T:
            raise ModelError(f"time step {t} outside 1..{cfg.max_T}")
        nc, l = len(condition), len(caption_ids)
        total = nc + 1 + l
        if total > cfg.max_seq_len:
            raise ModelError(f"input length {total} exceeds max_seq_len {cfg.max_seq_len}")

        # embeddings are initialized small; scaling by sqrt(d) keeps token
        # identity comparable in magnitude to the O(1) position/time tables
        emb_gain = math.sqrt(cfg.embed_dim)
        seg = self.params["seg_emb"]
        word_ids = np.array([START_ID] + caption_ids, dtype=np.int64)
        time_vec = self.time_table[t][None, :]
        # caption positions index from 0 so the layout does not shift with
        # the condition length; the segment embedding separates the streams
        word_x = ad.add(ad.add(ad.scale(ad.gather(self.params["word_emb"], word_ids),
                                        emb_gain),
                               Tensor(self.pos_table[:l + 1] + time_vec)),
                        seg[1:2, :])
        if nc:
            cond_x = ad.add(ad.add(ad.scale(ad.gather(self.params["cond_emb"],
                                                      np.array(condition, dtype=np.int64)),
                                            emb_gain),
                                   Tensor(self.pos_table[:nc])),
                            seg[0:1, :])
            x = ad.concat([cond_x, word_x], axis=0)
        else:
            x = word_x

        drop = cfg.dropout
        for i in range(cfg.num_layers):
            h = self._attention(self._ln(x, f"layers.{i}.ln1"), i)
            h = _maybe_dropout(h, drop, dropout_rng)
            x = ad.add(x, h)
            h = self._ffn(self._ln(x, f"layers.{i}.ln2"), i)
            h = _maybe_dropout(h, drop, dropout_rng)
            x = ad.add(x, h)
        x = self._ln(x, "ln_f")

        rows = x[nc:, :]
        op_logits = ad.add(ad.matmul(rows, self.params["edit_head.w"]),
                           self.params["edit_head.b"])
        sentinel_mask = np.zeros((l + 1, 4))
        sentinel_mask[0, int(EditOp.REPLACE)] = NEG_INF
        sentinel_mask[0, int(EditOp.DELETE)] = NEG_INF
        op_logits = ad.add(op_logits, Tensor(sentinel_mask))
        word_logits = ad.add(ad.matmul(rows, self.params["lang_head.w"]),
                             self.params["lang_head.b"])
        # special ids never appear inside captions, so the content head
        # must not be able to emit them
        special_mask = np.zeros((1, cfg.vocab_size))
        special_mask[0, :NUM_SPECIALS] = NEG_INF
        word_logits = ad.add(word_logits, Tensor(special_mask))
        return op_logits, word_logits

    def predict_script(self, condition, c: CaptionState, t: int) -> EditScript:
        """Greedy argmax decoding of both heads into a well-formed script."""
        op_logits, word_logits = self.forward(condition, c.ids(), t)
        ops = np.argmax(op_logits.data, axis=1)
        words = np.argmax(word_logits.data, axis=1)
        slots = []
        for row in range(len(ops)):
            op = EditOp(int(ops[row]))
            if op in (EditOp.INSERT, EditOp.REPLACE):
                slots.append((op, int(words[row])))
            else:
                slots.append((op, None))
        return EditScript(tuple(slots))


def _maybe_dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1 - rate)
    return ad.mul(x, Tensor(mask))


def script_targets(gt: EditScript) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ops = np.array([int(op) for op, _ in gt.slots], dtype=np.int64)
    words = np.array([0 if w is None else w for _, w in gt.slots], dtype=np.int64)
    content_mask = np.array([op in (EditOp.INSERT, EditOp.REPLACE) for op, _ in gt.slots])
    return ops, words, content_mask


def model_loss(op_logits: Tensor, word_logits: Tensor, gt: EditScript
               ) -> tuple[Tensor, float, float]:
    """Edit-op cross-entropy over all rows plus content cross-entropy over
    INSERT/REPLACE rows only.  Returns (loss tensor, edit value, language value)."""
    if op_logits.shape[0] != len(gt):
        raise ModelError(f"{op_logits.shape[0]} logit rows vs script length {len(gt)}")
    ops, words, content_mask = script_targets(gt)
    l_edit = ad.cross_entropy(op_logits, ops)
    l_lang = ad.cross_entropy(word_logits, words, content_mask)
    return ad.add(l_edit, l_lang), float(l_edit.data), float(l_lang.data)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 30
    batch: int = 2
    warmup_frac: float = 0.05
    p_terminal: float = 0.5
    p_truncate: float = 0.15
    seed: int = 0
    holdout_cap: int = 50


def lr_at(step: int, total_steps: int, hyper: TrainConfig) -> float:
    """Linear warmup to peak, then linear decay to zero."""
    warmup = max(1, int(hyper.warmup_frac * total_steps))
    if step < warmup:
        return hyper.lr * (step + 1) / warmup
    frac = (step - warmup) / max(1, total_steps - warmup)
    return hyper.lr * max(0.0, 1.0 - frac)


def holdout_exact_match(model: DenoiserModel, examples, sch: NoiseSchedule,
                        vocab: Vocabulary, rng: np.random.Generator,
                        cap: int | None = None) -> float:
    """Fraction of held-out scenes regenerated exactly from random words."""
    subset = examples if cap is None else examples[:cap]
    if not subset:
        return 0.0
    hits = 0
    for ex in subset:
        start = make_random_sequence(sch.target_len, vocab, rng, step=sch.T)
        try:
            final, _ = denoise_loop(model, ex.condition, start, sch.T)
        except ModelError:
            # an undertrained model can grow the caption past max_seq_len;
            # score the rollout as a miss instead of aborting training
            continue
        hits += int(tuple(final.ids()) == tuple(ex.caption))
    return hits / len(subset)


def train(corpus, sch: NoiseSchedule, cfg: ModelConfig, hyper: TrainConfig,
          log_fn=None) -> tuple[DenoiserModel, list[dict]]:
    """Train on a corpus; deterministic single-threaded under a fixed seed."""
    if not corpus.train:
        raise ModelError("empty training corpus")
    vocab = corpus.vocab
    model = DenoiserModel(cfg)
    params = model.param_list()
    adam = Adam(params, lr=hyper.lr)
    rng = np.random.default_rng(hyper.seed)
    n = len(corpus.train)
    steps_per_epoch = math.ceil(n / hyper.batch)
    total_steps = hyper.epochs * steps_per_epoch
    log: list[dict] = []
    opt_step = 0
    t_start = time.time()
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        edit_sum = lang_sum = 0.0
        pending = 0
        for count, idx in enumerate(order, start=1):
            ex = corpus.train[idx]
            x_t, t = sample_denoising_example(ex.caption, sch, vocab, rng,
                                              hyper.p_terminal, hyper.p_truncate)
            gt = align(x_t, ex.caption)
            op_logits, word_logits = model.forward(
                ex.condition, x_t.ids(), t,
                dropout_rng=rng if cfg.dropout > 0 else None)
            loss, l_edit, l_lang = model_loss(op_logits, word_logits, gt)
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} example {int(idx)} "
                    f"(edit={l_edit}, language={l_lang})")
            backward(loss)
            edit_sum += l_edit
            lang_sum += l_lang
            pending += 1
            if pending == hyper.batch or count == n:
                for p in params:
                    # a batch with no INSERT/REPLACE targets leaves the
                    # language head untouched; treat that as a zero gradient
                    if p.grad is None:
                        p.grad = np.zeros_like(p.data)
                    p.grad /= pending
                adam.step(lr=lr_at(opt_step, total_steps, hyper))
                opt_step += 1
                pending = 0
        em = holdout_exact_match(model, corpus.val, sch, vocab, rng,
                                 cap=hyper.holdout_cap)
        row = {
            "epoch": epoch,
            "loss_edit": edit_sum / n,
            "loss_language": lang_sum / n,
            "holdout_em": em,
            "elapsed_s": round(time.time() - t_start, 2),
        }
        log.append(row)
        if log_fn is not None:
            log_fn(row)
    return model, log


def save_checkpoint(model: DenoiserModel, path, metadata: dict | None = None) -> None:
    """Little-endian binary: magic, version, config JSON, metadata JSON,
    then named float64 parameter blocks."""
    meta = dict(metadata or {})
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for blob in (json.dumps(asdict(model.cfg)).encode("utf-8"),
                     json.dumps(meta, sort_keys=True).encode("utf-8")):
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
        f.write(struct.pack("<I", len(model.params)))
        for name, tensor in model.params.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", tensor.data.ndim))
            for dim in tensor.data.shape:
                f.write(struct.pack("<I", dim))
            f.write(tensor.data.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[DenoiserModel, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic: {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")

        def read_blob() -> bytes:
            (size,) = struct.unpack("<I", f.read(4))
            return f.read(size)

        cfg = ModelConfig(**json.loads(read_blob().decode("utf-8")))
        metadata = json.loads(read_blob().decode("utf-8"))
        model = DenoiserModel(cfg)
        (n_params,) = struct.unpack("<I", f.read(4))
        if n_params != len(model.params):
            raise CheckpointError("parameter count mismatch")
        for _ in range(n_params):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            data = np.frombuffer(f.read(8 * int(np.prod(shape))), dtype="<f8")
            if name not in model.params or model.params[name].data.shape != shape:
                raise CheckpointError(f"unexpected parameter block {name} {shape}")
            model.params[name].data = data.reshape(shape).astype(np.float64)
    return model, metadata
