"""Keyword-refined, gated-fusion captioning transformer.

Data flow for one batch (leading batch axis omitted):

    appearance|motion --fc--> V_am (N x d) --joint blocks--> V_L (N x d)
    objects --fc--> V_o (N_obj x d) --object blocks--> V_o_L ----^
    keyword ids --embed--> F (n_kw x d) --refiner blocks (attend V_L)--> F_L
    V_L, F_L --sequence-axis linear maps--> V', F' (len_s x d)
    prefix tokens --embed + positions--> H_0 --decoder blocks--> H (len_s x d)
    H --W_p, softmax--> P (len_s x N_voc)

The decoder has no self-attention, so row t of every decoder tensor
depends only on the input token at t; teacher forcing with right-shifted
targets therefore keeps predictions causal.
"""

from __future__ import annotations

import math

import numpy as np

from . import nn
from . import tensor as T
from .config import EncoderConfig
from .errors import InputError
from .text import BOS_ID, EOS_ID, PAD_ID
from .tensor import Tensor

LOG_CLAMP = 1e-12


def sinusoidal_positions(steps, d):
    pos = np.arange(steps)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, d, 2) / d))
    pe = np.zeros((steps, d))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: d // 2])
    return pe


class Attention(nn.MultiHeadAttention):
    """Attention without a key bias: its gradient is identically zero."""

    def __init__(self, rng, d, heads):
        super().__init__(rng, d, heads)
        self.bk = None


class ObjectBlock(nn.Module):
    def __init__(self, rng, d, heads):
        self.attn = Attention(rng, d, heads)
        self.ln1 = nn.LayerNorm(d)
        self.ffn = nn.FeedForward(rng, d)
        self.ln2 = nn.LayerNorm(d)

    def __call__(self, x):
        x = self.ln1(x + self.attn(x, x, x))
        return self.ln2(x + self.ffn(x))


class CrossBlock(nn.Module):
    """Self-attention, cross-attention to ``memory``, FFN; each with residual + LN."""

    def __init__(self, rng, d, heads):
        self.self_attn = Attention(rng, d, heads)
        self.ln1 = nn.LayerNorm(d)
        self.cross_attn = Attention(rng, d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = nn.FeedForward(rng, d)
        self.ln3 = nn.LayerNorm(d)

    def __call__(self, x, memory, trace=None):
        x = self.ln1(x + self.self_attn(x, x, x))
        if trace is not None:
            ctx, weights = self.cross_attn(x, memory, memory, need_weights=True)
            trace.append(weights)
        else:
            ctx = self.cross_attn(x, memory, memory)
        x = self.ln2(x + ctx)
        return self.ln3(x + self.ffn(x))


class DecoderBlock(nn.Module):
    def __init__(self, rng, d, heads):
        self.attn_video = Attention(rng, d, heads)
        self.attn_keyword = Attention(rng, d, heads)
        self.gate = nn.Linear(rng, 2 * d, d)
        self.ffn = nn.FeedForward(rng, d)
        self.ln = nn.LayerNorm(d)

    def __call__(self, h, video, keywords, trace=None):
        hv = self.attn_video(h, video, video)
        hk = self.attn_keyword(h, keywords, keywords)
        g, fused = gated_fusion(hv, hk, self.gate.weight, self.gate.bias)
        if trace is not None:
            trace.append({"hv": hv.data, "hk": hk.data, "gate": g.data, "fused": fused.data})
        return self.ln(fused + self.ffn(fused))


def gated_fusion(hv, hk, w_g, b_g=None):
    """``G = sigmoid([hv; hk] W_g + b)``, ``fused = G * hv + (1 - G) * hk``."""
    g = T.sigmoid(nn.linear(T.concat([hv, hk], axis=-1), w_g, b_g))
    return g, g * hv + (1.0 - g) * hk


class CaptionModel(nn.Module):
    def __init__(self, cfg: EncoderConfig, vocab_size, seed=0):
        rng = np.random.default_rng(seed)
        d, h = cfg.d, cfg.heads
        self.cfg = cfg
        self.vocab_size = vocab_size
        n_kw = cfg.n_word + 2
        self.fc_am = nn.Linear(rng, cfg.d_a + cfg.d_m, d)
        self.fc_obj = nn.Linear(rng, cfg.d_o, d)
        self.object_blocks = [ObjectBlock(rng, d, h) for _ in range(cfg.L)]
        self.joint_blocks = [CrossBlock(rng, d, h) for _ in range(cfg.L)]
        self.kw_embed = nn.uniform_init(rng, (vocab_size, d), d)
        self.kw_bias = T.parameter(np.zeros(d))
        self.refiner_blocks = [CrossBlock(rng, d, h) for _ in range(cfg.L_refiner)]
        self.video_to_text = nn.uniform_init(rng, (cfg.len_s, cfg.N), cfg.N)
        self.video_to_text_b = T.parameter(np.zeros((cfg.len_s, 1)))
        self.kw_to_text = nn.uniform_init(rng, (cfg.len_s, n_kw), n_kw)
        self.kw_to_text_b = T.parameter(np.zeros((cfg.len_s, 1)))
        self.tok_embed = nn.uniform_init(rng, (vocab_size, d), d)
        self.decoder_blocks = [DecoderBlock(rng, d, h) for _ in range(cfg.L_decoder)]
        self.word_head = nn.Linear(rng, d, vocab_size)
        self.kw_pool = nn.Linear(rng, d, d)
        self.positions = sinusoidal_positions(cfg.len_s, d)

    # -- stages ------------------------------------------------------------

    def embed_video(self, appearance, motion, objects):
        am = np.concatenate([appearance, motion], axis=-1)
        return self.fc_am(Tensor(am)), self.fc_obj(Tensor(objects))

    def encode_objects(self, v_obj):
        for block in self.object_blocks:
            v_obj = block(v_obj)
        return v_obj

    def encode_joint(self, v_am, v_obj):
        v = v_am
        for block in self.joint_blocks:
            v = block(v, v_obj)
        return v

    def encode_video(self, appearance, motion, objects):
        v_am, v_obj = self.embed_video(appearance, motion, objects)
        return self.encode_joint(v_am, self.encode_objects(v_obj))

    def embed_keywords(self, kw_ids):
        return T.embedding(self.kw_embed, kw_ids) + self.kw_bias

    def refine_keywords(self, kw_ids, video, trace=None):
        f = self.embed_keywords(kw_ids)
        for block in self.refiner_blocks:
            f = block(f, video, trace)
        return f

    def to_text_space(self, video, keywords):
        v = self.video_to_text @ video + self.video_to_text_b
        k = self.kw_to_text @ keywords + self.kw_to_text_b
        return v, k

    def embed_prefix(self, in_ids):
        return T.embedding(self.tok_embed, in_ids) + self.positions[: in_ids.shape[-1]]

    def decode(self, in_ids, video_text, kw_text, trace=None):
        h = self.embed_prefix(in_ids)
        for block in self.decoder_blocks:
            h = block(h, video_text, kw_text, trace)
        return h

    def logits(self, h):
        return self.word_head(h)

    def pooled_keywords(self, refined):
        """Max-pool over keyword rows after a linear map: the pseudo-side vector."""
        return self.kw_pool(refined).max(axis=-2)

    def reference_keywords(self, kw_ids):
        """Mean keyword embedding of real (non-framing) keywords, no gradient.

        Returns ``(vectors, degenerate)``; rows without keywords are zero.
        """
        kw_ids = np.atleast_2d(kw_ids)
        table = self.kw_embed.data + self.kw_bias.data
        real = (kw_ids != PAD_ID) & (kw_ids != BOS_ID) & (kw_ids != EOS_ID)
        vecs = np.zeros((kw_ids.shape[0], table.shape[1]))
        for i in range(kw_ids.shape[0]):
            if real[i].any():
                vecs[i] = table[kw_ids[i][real[i]]].mean(axis=0)
        return vecs, ~real.any(axis=1)

    # -- full passes -------------------------------------------------------

    def forward(self, batch, decoder_inputs, trace=None):
        """``batch`` holds appearance/motion/object/keywords arrays with a batch axis.

        ``decoder_inputs`` is a list of ``(B, len_s)`` id arrays, each decoded
        against the same video and keywords. Returns logits per input and the
        refined keywords.
        """
        video = self.encode_video(batch["appearance"], batch["motion"], batch["object"])
        refined = self.refine_keywords(batch["keywords"], video)
        v_text, k_text = self.to_text_space(video, refined)
        outs = [self.logits(self.decode(ids, v_text, k_text, trace)) for ids in decoder_inputs]
        return outs, refined

    def word_probabilities(self, h):
        return T.softmax(self.logits(h), axis=-1)


def word_probabilities(h, w_p, b_p=None):
    return T.softmax(nn.linear(h, w_p, b_p), axis=-1)


# -- losses -------------------------------------------------------------------

def shift_targets(ids):
    """Decoder targets: ids shifted left by one, PAD appended."""
    ids = np.asarray(ids)
    pad = np.full(ids.shape[:-1] + (1,), PAD_ID, dtype=ids.dtype)
    return np.concatenate([ids[..., 1:], pad], axis=-1)


def sentence_loss(P, gt, pseudo, exclude_pad=True, P_pseudo=None, log_probs=False):
    """Summed cross-entropy of the ground-truth and pseudo targets.

    ``P`` is ``(..., len_s, N_voc)`` probabilities (log-probabilities with
    ``log_probs``); ``gt`` / ``pseudo`` are target id arrays ``(..., len_s)``.
    ``P_pseudo`` scores the pseudo term when the pseudo sentence was decoded
    under its own teacher forcing. With ``exclude_pad`` the PAD targets drop
    out of the sum and of the normaliser (positions where either target is
    real count once); otherwise the normaliser is ``len_s``. Batched inputs
    are averaged.
    """
    P = T.as_tensor(P)
    P2 = P if P_pseudo is None else T.as_tensor(P_pseudo)
    floor = math.log(LOG_CLAMP)
    if log_probs:
        logp, logp2 = T.clamp_min(P, floor), T.clamp_min(P2, floor)
    else:
        logp = T.log(T.clamp_min(P, LOG_CLAMP))
        logp2 = logp if P2 is P else T.log(T.clamp_min(P2, LOG_CLAMP))
    gt = np.asarray(gt, dtype=np.int64)
    pseudo = np.asarray(pseudo, dtype=np.int64)
    if gt.shape != pseudo.shape or gt.shape != P.shape[:-1]:
        raise InputError(f"target shapes {gt.shape}/{pseudo.shape} do not match P {P.shape}")

    def picked(lp, ids):
        onehot = np.zeros(P.shape)
        np.put_along_axis(onehot, ids[..., None], 1.0, axis=-1)
        return (lp * onehot).sum(axis=-1)

    ll_gt, ll_ps = picked(logp, gt), picked(logp2, pseudo)
    len_s = gt.shape[-1]
    if exclude_pad:
        m_gt, m_ps = (gt != PAD_ID).astype(float), (pseudo != PAD_ID).astype(float)
        norm = np.maximum(((gt != PAD_ID) | (pseudo != PAD_ID)).sum(axis=-1), 1).astype(float)
        per = -((ll_gt * m_gt).sum(axis=-1) + (ll_ps * m_ps).sum(axis=-1)) / norm
    else:
        per = -(ll_gt.sum(axis=-1) + ll_ps.sum(axis=-1)) / float(len_s)
    return per.mean() if per.ndim else per


def word_loss(pooled, reference):
    """``1 - cos(pooled, reference)`` averaged over the batch.

    Rows where either vector has zero norm contribute exactly 1 and are
    reported in the returned degenerate mask.
    """
    pooled = T.as_tensor(pooled)
    ref = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    squeeze = pooled.ndim == 1
    if squeeze:
        pooled = pooled.reshape(1, -1)
    ref_norm = np.linalg.norm(ref, axis=-1)
    p_norm = np.sqrt((pooled.data ** 2).sum(axis=-1))
    degenerate = (ref_norm == 0) | (p_norm == 0)
    safe_ref = np.where(degenerate[:, None], 0.0, ref / np.where(ref_norm == 0, 1.0, ref_norm)[:, None])
    norm = T.sqrt((pooled * pooled).sum(axis=-1) + np.where(degenerate, 1.0, 0.0))
    cos = (pooled * safe_ref).sum(axis=-1) / norm
    loss = (1.0 - cos).mean()
    return loss, degenerate


def total_loss(sen, word):
    return sen + word


# -- inference ----------------------------------------------------------------

def greedy_decode(model, batch):
    """Argmax decoding from BOS, one position at a time, stopping at EOS.

    Returns framed id arrays ``(B, len_s)``: BOS, tokens, EOS, PAD. A predicted
    PAD or BOS ends the sentence like EOS.
    """
    len_s = model.cfg.len_s
    B = batch["appearance"].shape[0]
    with T.no_grad():
        video = model.encode_video(batch["appearance"], batch["motion"], batch["object"])
        refined = model.refine_keywords(batch["keywords"], video)
        v_text, k_text = model.to_text_space(video, refined)
        inputs = np.full((B, len_s), PAD_ID, dtype=np.int64)
        inputs[:, 0] = BOS_ID
        done = np.zeros(B, dtype=bool)
        out = np.full((B, len_s), PAD_ID, dtype=np.int64)
        out[:, 0] = BOS_ID
        for t in range(len_s - 1):
            logits = model.logits(model.decode(inputs, v_text, k_text)).data[:, t]
            tok = logits.argmax(axis=-1)
            last = t == len_s - 2
            for b in range(B):
                if done[b]:
                    continue
                if tok[b] in (EOS_ID, PAD_ID, BOS_ID) or last:
                    out[b, t + 1] = EOS_ID
                    done[b] = True
                else:
                    out[b, t + 1] = tok[b]
                    inputs[b, t + 1] = tok[b]
            if done.all():
                break
    return out


def empty_keywords(n_word, batch=1):
    kw = np.full((batch, n_word + 2), PAD_ID, dtype=np.int64)
    kw[:, 0], kw[:, -1] = BOS_ID, EOS_ID
    return kw


def generate_caption(model, video, keywords=None):
    """Greedy caption for one :class:`~fewcap.data.VideoFeatures`."""
    kw = empty_keywords(model.cfg.n_word) if keywords is None else \
        np.asarray(getattr(keywords, "ids", keywords), dtype=np.int64)[None]
    batch = {"appearance": video.appearance[None], "motion": video.motion[None],
             "object": video.object[None], "keywords": kw}
    return greedy_decode(model, batch)[0]
