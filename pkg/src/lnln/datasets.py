"""Dataset container, binary/JSONL persistence, synthetic generation.

Container layout: three modality sequence arrays per split (float32,
shapes (N, T_m, d_m)) plus scalar labels, described by a header carrying
the scheme tag, per-modality extents, split sizes, and the language
"unknown" fill vector.

Binary file format (version 1): 8-byte magic, uint32 LE format version,
uint32 LE header length, JSON header, then per split (train/valid/test
order), per sample: language rows, visual rows, audio rows, label — all
row-major float32 LE. A JSONL sidecar (one header line + one line per
sample) is provided for interoperability with externally preprocessed
feature dumps.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"LNLNDATA"
FORMAT_VERSION = 1
SPLIT_ORDER = ("train", "valid", "test")
SCHEME_RANGES = {"mosi": (-3.0, 3.0), "sims": (-1.0, 1.0)}

# Synthetic-generation constants: per-entry noise scale, distractor
# component scale and count for the non-dominant modalities, per-entry
# signal-to-noise of the label-carrying term, per-position label jitter
# as a fraction of the label range, the decoy label (as a range
# fraction) encoded by the language unknown-fill row, and the fill row's
# noise amplitude relative to content rows (below 1 so the fill is
# detectable, but only through the off-signal residual, not trivially).
NOISE_STD = 0.5
DISTRACTOR_SCALE = 0.5
DISTRACTOR_COUNT = 4
LANG_SNR = 5.0
OTHER_SNR = 1.0
LANG_ROW_JITTER = 0.13
OTHER_ROW_JITTER = 0.40
DECOY_LABEL_FRAC = 0.7
DECOY_NOISE_FRAC = 0.5


class DatasetError(Exception):
    """Base class for container format errors."""


class DatasetFormatError(DatasetError):
    """Bad magic, undecodable header, or invalid field values."""


class DatasetVersionError(DatasetError):
    """File format version not supported."""


class DatasetExtentError(DatasetError):
    """Array extents disagree with the header."""


class DatasetTruncatedError(DatasetError):
    """File ends before the header-implied payload does."""


@dataclass
class DatasetHeader:
    scheme: str
    lang_len: int
    vis_len: int
    aud_len: int
    lang_dim: int
    vis_dim: int
    aud_dim: int
    unknown_vector: np.ndarray
    split_sizes: dict

    def modality_shape(self, name):
        return {
            "lang": (self.lang_len, self.lang_dim),
            "vis": (self.vis_len, self.vis_dim),
            "aud": (self.aud_len, self.aud_dim),
        }[name]

    def sample_floats(self):
        """float32 count of one serialized sample (three matrices + label)."""
        return (self.lang_len * self.lang_dim + self.vis_len * self.vis_dim
                + self.aud_len * self.aud_dim + 1)

    def as_dict(self):
        return {
            "scheme": self.scheme,
            "lang_len": self.lang_len, "vis_len": self.vis_len,
            "aud_len": self.aud_len, "lang_dim": self.lang_dim,
            "vis_dim": self.vis_dim, "aud_dim": self.aud_dim,
            "unknown_vector": [float(x) for x in self.unknown_vector],
            "split_sizes": dict(self.split_sizes),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                scheme=d["scheme"],
                lang_len=int(d["lang_len"]), vis_len=int(d["vis_len"]),
                aud_len=int(d["aud_len"]), lang_dim=int(d["lang_dim"]),
                vis_dim=int(d["vis_dim"]), aud_dim=int(d["aud_dim"]),
                unknown_vector=np.asarray(d["unknown_vector"],
                                          dtype=np.float32),
                split_sizes={k: int(v) for k, v in d["split_sizes"].items()},
            )
        except (KeyError, TypeError, ValueError) as err:
            raise DatasetFormatError(f"bad header: {err}") from None


@dataclass
class ModalitySplit:
    lang: np.ndarray   # (N, T_l, d_l) float32
    vis: np.ndarray
    aud: np.ndarray
    labels: np.ndarray  # (N,) float32


@dataclass
class DatasetContainer:
    header: DatasetHeader
    splits: dict

    def validate(self):
        """Check extents and label ranges against the header."""
        h = self.header
        if h.scheme not in SCHEME_RANGES:
            raise DatasetFormatError(f"unknown scheme {h.scheme!r}")
        if h.unknown_vector.shape != (h.lang_dim,):
            raise DatasetExtentError(
                f"unknown vector width {h.unknown_vector.shape} != "
                f"language dim {h.lang_dim}"
            )
        lo, hi = SCHEME_RANGES[h.scheme]
        for name in SPLIT_ORDER:
            if name not in self.splits:
                raise DatasetFormatError(f"missing split {name!r}")
            split = self.splits[name]
            n = h.split_sizes.get(name)
            if n != split.labels.shape[0]:
                raise DatasetExtentError(
                    f"split {name}: header says {n} samples, arrays hold "
                    f"{split.labels.shape[0]}"
                )
            for mod in ("lang", "vis", "aud"):
                arr = getattr(split, mod)
                want = (n, *h.modality_shape(mod))
                if arr.shape != want:
                    raise DatasetExtentError(
                        f"split {name}: {mod} extent {arr.shape} != header {want}"
                    )
            bad = np.where((split.labels < lo) | (split.labels > hi))[0]
            if bad.size:
                raise DatasetFormatError(
                    f"split {name}: label out of scheme range at sample "
                    f"{int(bad[0])}"
                )
        return self


def save_dataset(container, path):
    """Write the binary container; validates before touching the file."""
    container.validate()
    h = container.header
    header_json = json.dumps(h.as_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_json)))
        fh.write(header_json)
        for name in SPLIT_ORDER:
            split = container.splits[name]
            n = split.labels.shape[0]
            rec = np.concatenate(
                [
                    split.lang.reshape(n, -1),
                    split.vis.reshape(n, -1),
                    split.aud.reshape(n, -1),
                    split.labels.reshape(n, 1),
                ],
                axis=1,
            ).astype("<f4", copy=False)
            fh.write(np.ascontiguousarray(rec).tobytes())


def load_dataset(path):
    """Read and validate a binary container."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic, not a dataset container")
    if len(blob) < 16:
        raise DatasetTruncatedError(f"{path}: file too short for fixed header")
    version, header_len = struct.unpack_from("<II", blob, 8)
    if version != FORMAT_VERSION:
        raise DatasetVersionError(
            f"{path}: format version {version}, supported {FORMAT_VERSION}"
        )
    if len(blob) < 16 + header_len:
        raise DatasetTruncatedError(f"{path}: truncated header")
    try:
        header = DatasetHeader.from_dict(
            json.loads(blob[16:16 + header_len].decode("utf-8"))
        )
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise DatasetFormatError(f"{path}: undecodable header: {err}") from None

    payload = blob[16 + header_len:]
    want_floats = header.sample_floats() * sum(
        header.split_sizes.get(s, 0) for s in SPLIT_ORDER
    )
    if len(payload) < 4 * want_floats:
        raise DatasetTruncatedError(
            f"{path}: payload holds {len(payload)} bytes, header implies "
            f"{4 * want_floats}"
        )
    if len(payload) > 4 * want_floats:
        raise DatasetExtentError(
            f"{path}: {len(payload) - 4 * want_floats} trailing bytes beyond "
            f"the header-implied payload"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    splits = {}
    offset = 0
    per = header.sample_floats()
    sizes = {
        "lang": header.lang_len * header.lang_dim,
        "vis": header.vis_len * header.vis_dim,
        "aud": header.aud_len * header.aud_dim,
    }
    for name in SPLIT_ORDER:
        n = header.split_sizes.get(name, 0)
        rec = flat[offset:offset + n * per].reshape(n, per)
        offset += n * per
        lo = 0
        parts = {}
        for mod in ("lang", "vis", "aud"):
            parts[mod] = (
                rec[:, lo:lo + sizes[mod]]
                .reshape(n, *header.modality_shape(mod))
                .copy()
            )
            lo += sizes[mod]
        splits[name] = ModalitySplit(
            lang=parts["lang"], vis=parts["vis"], aud=parts["aud"],
            labels=rec[:, lo].copy(),
        )
    return DatasetContainer(header, splits).validate()


def export_jsonl(container, path):
    """Text sidecar: one header line, then one line per sample."""
    container.validate()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {"kind": "header", **container.header.as_dict()}, sort_keys=True
        ) + "\n")
        for name in SPLIT_ORDER:
            split = container.splits[name]
            for i in range(split.labels.shape[0]):
                fh.write(json.dumps({
                    "split": name,
                    "index": i,
                    "lang": split.lang[i].tolist(),
                    "vis": split.vis[i].tolist(),
                    "aud": split.aud[i].tolist(),
                    "label": float(split.labels[i]),
                }) + "\n")


def import_jsonl(path):
    """Rebuild a container from the text sidecar.

    Per-sample extents are validated against the header and errors name
    the offending split/sample.
    """
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            head = json.loads(first)
        except json.JSONDecodeError as err:
            raise DatasetFormatError(f"{path}: bad header line: {err}") from None
        if head.get("kind") != "header":
            raise DatasetFormatError(f"{path}: first record is not a header")
        header = DatasetHeader.from_dict(head)
        rows = {name: {} for name in SPLIT_ORDER}
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            split, idx = rec["split"], int(rec["index"])
            if split not in rows:
                raise DatasetFormatError(
                    f"{path}:{line_no}: unknown split {split!r}"
                )
            sample = {}
            for mod in ("lang", "vis", "aud"):
                arr = np.asarray(rec[mod], dtype=np.float32)
                want = header.modality_shape(mod)
                if arr.shape != want:
                    raise DatasetExtentError(
                        f"sample {idx} in split {split}: {mod} extent "
                        f"{arr.shape} != header {want}"
                    )
                sample[mod] = arr
            sample["label"] = np.float32(rec["label"])
            rows[split][idx] = sample

    splits = {}
    for name in SPLIT_ORDER:
        n = header.split_sizes.get(name, 0)
        missing = sorted(set(range(n)) - set(rows[name]))
        if missing:
            raise DatasetExtentError(
                f"split {name}: missing sample index {missing[0]}"
            )
        ordered = [rows[name][i] for i in range(n)]
        splits[name] = ModalitySplit(
            lang=np.stack([s["lang"] for s in ordered]) if n else
            np.zeros((0, header.lang_len, header.lang_dim), np.float32),
            vis=np.stack([s["vis"] for s in ordered]) if n else
            np.zeros((0, header.vis_len, header.vis_dim), np.float32),
            aud=np.stack([s["aud"] for s in ordered]) if n else
            np.zeros((0, header.aud_len, header.aud_dim), np.float32),
            labels=np.array([s["label"] for s in ordered], dtype=np.float32),
        )
    return DatasetContainer(header, splits).validate()


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def generate_synthetic(n_train, n_valid, n_test, seq_len=16, dim=20,
                       scheme="mosi", seed=0):
    """Language-dominant synthetic regression data.

    Each sample's label y is uniform in the scheme range. Position i of a
    modality carries a jittered label copy y + e_i along a fixed unit
    direction, so every position holds an independent (noisy) piece of
    label information and erasing positions genuinely destroys some of
    it. The jitter is small for language and coarse for visual/audio,
    making language the dominant modality by a wide margin. The label
    term sits at per-entry signal-to-noise 5:1 over iid noise for
    language and 1:1 for visual/audio; the latter two also carry
    per-sample distractor components that are constant across positions
    (so temporal pooling does not remove them).

    The language unknown-fill row is a decoy: a row built by the
    content-row recipe that encodes the fixed wrong label at
    DECOY_LABEL_FRAC of the range, with its noise term shrunk by
    DECOY_NOISE_FRAC. A pooled language readout therefore drifts toward
    the decoy label as more positions are erased; telling fill from
    content requires the subtle off-signal residual cue (or spotting
    exact repeats), which corruption-aware supervision teaches far more
    directly than the prediction loss alone. Deterministic in ``seed``.
    """
    if min(n_train, n_valid, n_test) <= 0 or seq_len <= 0 or dim <= 1:
        raise ValueError("sizes, sequence length, and dim must be positive")
    if scheme not in SCHEME_RANGES:
        raise DatasetFormatError(f"unknown scheme {scheme!r}")
    lo, hi = SCHEME_RANGES[scheme]
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xDA7A)))

    rms_y = np.sqrt((hi - lo) ** 2 / 12.0 + ((hi + lo) / 2.0) ** 2)
    directions = {m: _unit(rng, dim) for m in ("lang", "vis", "aud")}
    distractors = {
        m: np.stack([_unit(rng, dim) for _ in range(DISTRACTOR_COUNT)])
        for m in ("vis", "aud")
    }

    # Per-entry rms of the signal term y*s*dir is |y|*s/sqrt(dim); solve s
    # for the target per-entry SNR against the non-signal rms.
    s_lang = LANG_SNR * NOISE_STD * np.sqrt(dim) / rms_y
    other_ms = DISTRACTOR_SCALE ** 2 * DISTRACTOR_COUNT / dim + NOISE_STD ** 2
    s_other = OTHER_SNR * np.sqrt(other_ms * dim) / rms_y

    decoy_y = lo + DECOY_LABEL_FRAC * (hi - lo)
    unknown = (
        decoy_y * s_lang * directions["lang"]
        + DECOY_NOISE_FRAC * NOISE_STD * rng.standard_normal(dim)
    ).astype(np.float32)

    def make_split(n):
        y = rng.uniform(lo, hi, size=n)
        arrays = {}
        for mod in ("lang", "vis", "aud"):
            s = s_lang if mod == "lang" else s_other
            jitter = LANG_ROW_JITTER if mod == "lang" else OTHER_ROW_JITTER
            per_row = y[:, None] + jitter * (hi - lo) * rng.standard_normal(
                (n, seq_len)
            )
            seq = per_row[:, :, None] * s * directions[mod][None, None, :]
            if mod in distractors:
                z = rng.standard_normal((n, DISTRACTOR_COUNT))
                seq = seq + DISTRACTOR_SCALE * (z @ distractors[mod])[:, None, :]
            seq = seq + NOISE_STD * rng.standard_normal((n, seq_len, dim))
            arrays[mod] = seq.astype(np.float32)
        return ModalitySplit(
            lang=arrays["lang"], vis=arrays["vis"], aud=arrays["aud"],
            labels=y.astype(np.float32),
        )

    splits = {
        "train": make_split(n_train),
        "valid": make_split(n_valid),
        "test": make_split(n_test),
    }
    header = DatasetHeader(
        scheme=scheme,
        lang_len=seq_len, vis_len=seq_len, aud_len=seq_len,
        lang_dim=dim, vis_dim=dim, aud_dim=dim,
        unknown_vector=unknown,
        split_sizes={k: v.labels.shape[0] for k, v in splits.items()},
    )
    return DatasetContainer(header, splits).validate()


def least_squares_probe(container, modality, fit_split="train",
                        eval_split="test"):
    """MAE of an affine least-squares fit on mean-pooled single-modality
    features. A cheap oracle for how much label signal one modality
    carries."""
    fit = container.splits[fit_split]
    ev = container.splits[eval_split]
    x_fit = getattr(fit, modality).mean(axis=1).astype(np.float64)
    x_ev = getattr(ev, modality).mean(axis=1).astype(np.float64)
    ones_fit = np.hstack([x_fit, np.ones((x_fit.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(ones_fit, fit.labels.astype(np.float64),
                               rcond=None)
    pred = np.hstack([x_ev, np.ones((x_ev.shape[0], 1))]) @ coef
    return float(np.abs(pred - ev.labels.astype(np.float64)).mean())
