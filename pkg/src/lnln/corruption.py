"""Random-missing corruption of modality sequences.

Erasure is positionwise: for a sequence of length T and missing rate r,
exactly round(r*T) positions (round-half-away-from-zero, computed in
decimal so float artifacts like 0.3*5 = 1.4999... still round as the
decimal rate intends) are drawn uniformly without replacement. Erased
visual/audio rows become zeros; erased language rows become a fixed
"unknown" vector carried in the dataset header. The completeness label of
a sample is 1 - r_language.
"""

from __future__ import annotations

from decimal import ROUND_HALF_UP, Decimal

import numpy as np

MODALITIES = ("lang", "vis", "aud")


def keyed_rng(*key):
    """Deterministic generator from a tuple of non-negative ints."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


def rate_key(rate):
    """Stable integer key for a missing rate (3 decimal places)."""
    return int(round(float(rate) * 1000))


def erase_count(length, rate):
    """Number of positions to erase: round-half-away-from-zero of r*T."""
    rate = float(rate)
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"missing rate must be in [0, 1], got {rate}")
    if length < 0:
        raise ValueError(f"sequence length must be >= 0, got {length}")
    exact = Decimal(repr(rate)) * Decimal(length)
    # Rates are non-negative, so HALF_UP is half-away-from-zero here.
    return int(exact.quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def make_mask(length, rate, rng):
    """Boolean erase mask with exactly erase_count(length, rate) True."""
    k = erase_count(length, rate)
    mask = np.zeros(length, dtype=bool)
    if k:
        mask[rng.choice(length, size=k, replace=False)] = True
    return mask


def apply_mask(seq, mask, fill):
    """Copy of ``seq`` with masked rows replaced by ``fill``.

    ``fill`` is a scalar (visual/audio) or a width-matching vector
    (language unknown vector). With an all-False mask the copy is
    bit-identical to the input.
    """
    seq = np.asarray(seq)
    if mask.shape != (seq.shape[0],):
        raise ValueError(
            f"mask length {mask.shape} does not match sequence {seq.shape}"
        )
    out = seq.copy()
    if mask.any():
        out[mask] = np.asarray(fill, dtype=seq.dtype)
    return out


def completeness_label(length, rate):
    """Supervision target for the completeness head.

    The surviving fraction of the language sequence after exact-count
    erasure: 1 - erase_count(T, r)/T. Whenever r*T is integral (e.g.
    r=0.3 with T divisible by 10) this equals 1 - r.
    """
    if length <= 0:
        raise ValueError(f"sequence length must be positive, got {length}")
    return 1.0 - erase_count(length, rate) / length


def corrupt_sample(lang, vis, aud, rates, rng, unknown_vector):
    """Corrupt one sample's three sequences.

    ``rates`` is a scalar (shared by all modalities) or a dict keyed by
    MODALITIES names. Masks are drawn independently per modality, in
    (lang, vis, aud) order, from ``rng``. Returns the corrupted triple
    plus the completeness label (surviving language fraction).
    """
    if np.isscalar(rates):
        rates = {m: float(rates) for m in MODALITIES}
    lang_mask = make_mask(lang.shape[0], rates["lang"], rng)
    lang_c = apply_mask(lang, lang_mask, unknown_vector)
    vis_c = apply_mask(vis, make_mask(vis.shape[0], rates["vis"], rng), 0.0)
    aud_c = apply_mask(aud, make_mask(aud.shape[0], rates["aud"], rng), 0.0)
    w_label = 1.0 - int(lang_mask.sum()) / lang.shape[0]
    return lang_c, vis_c, aud_c, w_label


def corrupt_batch(lang, vis, aud, rates, seed_key, unknown_vector):
    """Corrupt a batch with per-sample generators.

    ``rates`` is a scalar or a (B,)-array of per-sample shared rates.
    Sample i uses the generator keyed by (*seed_key, i), making every
    sample's corruption reproducible in isolation. Returns corrupted
    arrays plus the (B,) completeness labels.
    """
    n = lang.shape[0]
    rates = np.broadcast_to(np.asarray(rates, dtype=np.float64), (n,))
    lang_c = np.empty_like(lang)
    vis_c = np.empty_like(vis)
    aud_c = np.empty_like(aud)
    labels = np.empty(n, dtype=np.float64)
    for i in range(n):
        rng = keyed_rng(*seed_key, i)
        lang_c[i], vis_c[i], aud_c[i], labels[i] = corrupt_sample(
            lang[i], vis[i], aud[i], float(rates[i]), rng, unknown_vector
        )
    return lang_c, vis_c, aud_c, labels


def corrupt_batch_per_modality(lang, vis, aud, rates, seed_key, unknown_vector):
    """Like corrupt_batch but with one rate per modality (dict), shared
    across samples. Used for the modality-missing protocol (rate 1.0 on
    selected modalities, 0.0 elsewhere)."""
    n = lang.shape[0]
    lang_c = np.empty_like(lang)
    vis_c = np.empty_like(vis)
    aud_c = np.empty_like(aud)
    labels = np.empty(n, dtype=np.float64)
    for i in range(n):
        rng = keyed_rng(*seed_key, i)
        lang_c[i], vis_c[i], aud_c[i], labels[i] = corrupt_sample(
            lang[i], vis[i], aud[i], dict(rates), rng, unknown_vector
        )
    return lang_c, vis_c, aud_c, labels
