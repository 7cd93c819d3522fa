"""The full model: language-dominant fusion with correction for missing data.

Pipeline per forward pass (all streams width d after embedding, token
length T):

1. Per-modality token embeddings of the corrupted sequences.
2. Completeness check: a learnable token sequence attends over the
   embedded language stream and predicts a per-sample scalar w in [0,1]
   (how complete the language input is).
3. Proxy generation: a learnable token sequence encoded together with the
   audio/visual streams yields a language stand-in.
4. Dominant correction: blend H_dom = (1-w) * H_proxy + w * H_lang.
5. Origin discriminator on mean-pooled proxy/language features; the proxy
   branch passes a gradient-reversal layer so the generator learns to fool
   it, the language branch is stop-gradient (trains the head only).
6. Hyper-modality stack: the corrected stream is refined by two encoder
   layers while a learnable hyper sequence accumulates cross-attention
   reads from audio and visual at each of the three levels.
7. Fusion: four cross-attention layers (query = corrected stream,
   key/value = hyper sequence), readout at the first position -> scalar.
8. Reconstructors: width-preserving heads rebuild each uncorrupted
   sequence from its corrupted version (auxiliary training signal).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .diffcore import (
    Tensor,
    add,
    concat,
    gradient_reverse,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    slice_along,
    stop_gradient,
    sub,
)
from .nnblocks import (
    Affine,
    EncoderLayer,
    LearnableToken,
    MultiHeadAttention,
    ParamStore,
    TokenEmbedder,
)

logger = logging.getLogger(__name__)


@dataclass
class ForwardOutputs:
    """Everything the losses need from one forward pass."""

    y_hat: Tensor                 # (B,) sentiment prediction
    completeness: Tensor | None   # (B, 1) predicted w in [0, 1]
    h_lang: Tensor                # (B, T, d) embedded language
    h_proxy: Tensor | None        # (B, T, d) generated language stand-in
    h_dom: Tensor                 # (B, T, d) corrected dominant stream
    disc_proxy: Tensor | None     # (B, 1) discriminator logit, proxy branch
    disc_lang: Tensor | None      # (B, 1) discriminator logit, language branch
    recon_lang: Tensor | None     # (B, T_l, d_l) reconstruction
    recon_vis: Tensor | None
    recon_aud: Tensor | None


def _fitting_heads(dim, preferred):
    """Largest head count <= preferred that divides dim."""
    for h in range(min(preferred, dim), 0, -1):
        if dim % h == 0:
            return h
    return 1


class Reconstructor:
    """Width-preserving sequence map: affine-in, two encoders, affine-out."""

    def __init__(self, store, name, rng, dim, heads, ffn_mult):
        h = _fitting_heads(dim, heads)
        self.proj_in = Affine(store, f"{name}.in", rng, dim, dim)
        self.enc1 = EncoderLayer(store, f"{name}.enc1", rng, dim, h, ffn_mult)
        self.enc2 = EncoderLayer(store, f"{name}.enc2", rng, dim, h, ffn_mult)
        self.proj_out = Affine(store, f"{name}.out", rng, dim, dim)

    def __call__(self, u):
        return self.proj_out(self.enc2(self.enc1(self.proj_in(u))))


class LnlnModel:
    """Parameter container plus forward pass.

    Construction is deterministic in (config, seed); the parameter count
    depends only on the architecture dims. Inputs to ``forward`` are
    (B, T_m, d_m) arrays; every internal stream is (B, tokens, width).
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.lang_dim is None or config.vis_dim is None or config.aud_dim is None:
            raise ValueError("model config must have all native dims resolved")
        if config.width % config.heads != 0:
            raise ValueError(
                f"width {config.width} not divisible by heads {config.heads}"
            )
        self.config = config
        self.store = ParamStore(dtype=np.dtype(config.dtype))
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xA11)))
        st, mult = self.store, config.ffn_mult
        T, d, h = config.tokens, config.width, config.heads

        self.embed_lang = TokenEmbedder(st, "embed.lang", rng, config.lang_dim, d, T, h, mult)
        self.embed_vis = TokenEmbedder(st, "embed.vis", rng, config.vis_dim, d, T, h, mult)
        self.embed_aud = TokenEmbedder(st, "embed.aud", rng, config.aud_dim, d, T, h, mult)

        if config.use_dmc:
            self.cc_token = LearnableToken(st, "complete.token", rng, T, d)
            self.cc_enc1 = EncoderLayer(st, "complete.enc1", rng, d, h, mult)
            self.cc_enc2 = EncoderLayer(st, "complete.enc2", rng, d, h, mult)
            self.cc_head = Affine(st, "complete.head", rng, d, 1)
            self.proxy_token = LearnableToken(st, "proxy.token", rng, T, d)
            self.proxy_enc1 = EncoderLayer(st, "proxy.enc1", rng, d, h, mult)
            self.proxy_enc2 = EncoderLayer(st, "proxy.enc2", rng, d, h, mult)
            self.disc_head = Affine(st, "discriminator.head", rng, d, 1)

        self.dom_enc2 = EncoderLayer(st, "dominant.enc2", rng, d, h, mult)
        self.dom_enc3 = EncoderLayer(st, "dominant.enc3", rng, d, h, mult)
        self.hyper_token = LearnableToken(st, "hyper.token", rng, T, d)
        self.hyper_attn = []
        for level in (1, 2, 3):
            pair = (
                MultiHeadAttention(st, f"hyper.l{level}.aud", rng, d, h),
                MultiHeadAttention(st, f"hyper.l{level}.vis", rng, d, h),
            )
            self.hyper_attn.append(pair)

        self.fusion = [
            EncoderLayer(st, f"fusion.l{i}", rng, d, h, mult)
            for i in range(1, config.fusion_layers + 1)
        ]
        self.fusion_head = Affine(st, "fusion.head", rng, d, 1)

        if config.use_reconstructor:
            self.rec_lang = Reconstructor(st, "recon.lang", rng, config.lang_dim, h, mult)
            self.rec_vis = Reconstructor(st, "recon.vis", rng, config.vis_dim, h, mult)
            self.rec_aud = Reconstructor(st, "recon.aud", rng, config.aud_dim, h, mult)

        logger.info(
            "model built: tokens=%d width=%d heads=%d params=%d",
            T, d, h, self.parameter_count(),
        )

    def parameter_count(self):
        return self.store.count()

    def leaves(self):
        return self.store.leaves()

    # --- stages ---------------------------------------------------------

    def completeness_check(self, h_lang):
        """Scalar completeness w in [0,1] per sample, shape (B, 1)."""
        seq = concat([self.cc_token.matched_to(h_lang), h_lang], axis=-2)
        enc = self.cc_enc2(self.cc_enc1(seq))
        pooled = mean(slice_along(enc, -2, 0, self.cc_token.rows), axis=-2)
        return sigmoid(self.cc_head(pooled))

    def generate_proxy(self, h_aud, h_vis):
        """Language stand-in from audio+visual, shape (B, T, d)."""
        seq = concat(
            [self.proxy_token.matched_to(h_aud), h_aud, h_vis], axis=-2
        )
        enc = self.proxy_enc2(self.proxy_enc1(seq))
        return slice_along(enc, -2, 0, self.proxy_token.rows)

    @staticmethod
    def correct_dominant(h_proxy, h_lang, w):
        """(1 - w) * proxy + w * lang with w broadcast from (B, 1)."""
        if h_proxy.shape != h_lang.shape:
            raise ValueError(
                f"proxy/language extents differ: {h_proxy.shape} vs {h_lang.shape}"
            )
        wb = reshape(w, (w.shape[0], 1, 1))
        one = Tensor(np.ones((1, 1, 1), dtype=wb.dtype))
        return add(mul(sub(one, wb), h_proxy), mul(wb, h_lang))

    def discriminate(self, feature, reverse, transparent=False):
        """Origin logit from a (B, T, d) feature, shape (B, 1).

        ``reverse=True`` (proxy branch) routes the pooled feature through
        gradient reversal; ``reverse=False`` (language branch) applies
        stop-gradient instead. ``transparent`` bypasses both, making the
        branch an ordinary differentiable path; this exists only for
        finite-difference testing (reversal/stop-gradient backward maps
        are deliberately not derivatives of their forward).
        """
        pooled = mean(feature, axis=-2)
        if reverse:
            if not transparent:
                pooled = gradient_reverse(pooled, self.config.grl_coeff)
        elif not transparent:
            pooled = stop_gradient(pooled)
        return self.disc_head(pooled)

    def hyper_stack(self, h_dom1, h_aud, h_vis):
        """Three refinement levels; returns (h_dom3, h_hyper3)."""
        hyper = self.hyper_token.matched_to(h_dom1)
        h_dom = h_dom1
        for level, (attn_a, attn_v) in enumerate(self.hyper_attn, start=1):
            if level == 2:
                h_dom = self.dom_enc2(h_dom)
            elif level == 3:
                h_dom = self.dom_enc3(h_dom)
            hyper = add(hyper, add(attn_a(h_dom, h_aud), attn_v(h_dom, h_vis)))
        return h_dom, hyper

    def fuse_predict(self, h_dom3, h_hyper3):
        """Cross-attention fusion readout, shape (B,)."""
        x = h_dom3
        for layer in self.fusion:
            x = layer(x, keyvalue=h_hyper3)
        first = slice_along(x, -2, 0, 1)
        y = self.fusion_head(reshape(first, (x.shape[0], x.shape[-1])))
        return reshape(y, (x.shape[0],))

    # --- full pass ------------------------------------------------------

    def forward(self, lang, vis, aud, force_completeness=None,
                adversarial_transparent=False):
        """Run the full pipeline on (B, T_m, d_m) corrupted inputs.

        ``force_completeness`` overrides the blend weight with a constant
        (test hook for the blend boundary checks);
        ``adversarial_transparent`` bypasses gradient reversal and
        stop-gradient in the discriminator branches (test hook for
        finite-difference checks and the reversal sign test). Both
        default to production behaviour.
        """
        dt = self.store.dtype
        lang_t = Tensor(np.ascontiguousarray(lang, dtype=dt))
        vis_t = Tensor(np.ascontiguousarray(vis, dtype=dt))
        aud_t = Tensor(np.ascontiguousarray(aud, dtype=dt))
        if lang_t.ndim != 3 or vis_t.ndim != 3 or aud_t.ndim != 3:
            raise ValueError("forward expects (B, T_m, d_m) arrays")

        h_lang = self.embed_lang(lang_t)
        h_vis = self.embed_vis(vis_t)
        h_aud = self.embed_aud(aud_t)
        batch = h_lang.shape[0]

        completeness = None
        h_proxy = None
        disc_proxy = None
        disc_lang = None
        if self.config.use_dmc:
            completeness = self.completeness_check(h_lang)
            h_proxy = self.generate_proxy(h_aud, h_vis)
            if force_completeness is not None:
                blend_w = Tensor(
                    np.full((batch, 1), float(force_completeness), dtype=dt)
                )
            else:
                blend_w = completeness
            h_dom = self.correct_dominant(h_proxy, h_lang, blend_w)
            disc_proxy = self.discriminate(h_proxy, reverse=True,
                                           transparent=adversarial_transparent)
            disc_lang = self.discriminate(h_lang, reverse=False,
                                          transparent=adversarial_transparent)
        else:
            h_dom = h_lang

        h_dom3, h_hyper3 = self.hyper_stack(h_dom, h_aud, h_vis)
        y_hat = self.fuse_predict(h_dom3, h_hyper3)

        recon_lang = recon_vis = recon_aud = None
        if self.config.use_reconstructor:
            recon_lang = self.rec_lang(lang_t)
            recon_vis = self.rec_vis(vis_t)
            recon_aud = self.rec_aud(aud_t)

        return ForwardOutputs(
            y_hat=y_hat,
            completeness=completeness,
            h_lang=h_lang,
            h_proxy=h_proxy,
            h_dom=h_dom,
            disc_proxy=disc_proxy,
            disc_lang=disc_lang,
            recon_lang=recon_lang,
            recon_vis=recon_vis,
            recon_aud=recon_aud,
        )

    def predict(self, lang, vis, aud, batch_size=256):
        """Plain predictions as a numpy array, batched for memory."""
        outs = []
        n = lang.shape[0]
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            outs.append(
                self.forward(lang[lo:hi], vis[lo:hi], aud[lo:hi]).y_hat.data
            )
        return np.concatenate(outs)
