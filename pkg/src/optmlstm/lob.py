"""Limit-order-book events, mid-price, normalization, CSV I/O and synthetic streams.

Prices are integer ticks (price x 10,000). A stream is held as an ``(n, 40)``
int64 matrix laid out as ``ask prices | ask volumes | bid prices | bid volumes``,
ten levels each, which is also the CSV column order.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ValidationError
from .numerics import make_rng

LEVELS = 10
N_FEATURES = 4 * LEVELS
PRICE_SCALE = 10_000

CSV_HEADER = (
    [f"ask_price_{k}" for k in range(1, LEVELS + 1)]
    + [f"ask_vol_{k}" for k in range(1, LEVELS + 1)]
    + [f"bid_price_{k}" for k in range(1, LEVELS + 1)]
    + [f"bid_vol_{k}" for k in range(1, LEVELS + 1)]
)

_ASK_P = slice(0, LEVELS)
_ASK_V = slice(LEVELS, 2 * LEVELS)
_BID_P = slice(2 * LEVELS, 3 * LEVELS)
_BID_V = slice(3 * LEVELS, 4 * LEVELS)

REGIMES = ("random_walk", "mean_revert", "trend")
NORMALIZATIONS = ("raw", "minmax", "zscore")


@dataclass(frozen=True)
class LobEvent:
    """One trading event: ten ask/bid price and volume levels."""

    ask_prices: np.ndarray
    ask_volumes: np.ndarray
    bid_prices: np.ndarray
    bid_volumes: np.ndarray

    @classmethod
    def from_row(cls, row):
        row = np.asarray(row, dtype=np.int64)
        return cls(row[_ASK_P], row[_ASK_V], row[_BID_P], row[_BID_V])

    def row(self):
        return np.concatenate(
            [self.ask_prices, self.ask_volumes, self.bid_prices, self.bid_volumes]
        ).astype(np.int64)

    def features(self):
        """The 40 raw features as floats (the model boundary)."""
        return self.row().astype(np.float64)

    @property
    def mid(self):
        return mid_price(self)


def mid_price(e):
    """Mean of best ask and best bid, in scaled-price units."""
    return (float(e.ask_prices[0]) + float(e.bid_prices[0])) / 2.0


def check_event_row(row):
    """Return the name of the first violated invariant, or None."""
    ap, av, bp, bv = row[_ASK_P], row[_ASK_V], row[_BID_P], row[_BID_V]
    if not ap[0] > bp[0]:
        return "positive spread"
    if np.any(np.diff(ap) < 0):
        return "ask prices nondecreasing"
    if np.any(np.diff(bp) > 0):
        return "bid prices nonincreasing"
    if np.any(av < 0) or np.any(bv < 0):
        return "non-negative volumes"
    return None


@dataclass(frozen=True)
class LobStream:
    """Ordered, immutable sequence of events backed by an int64 matrix."""

    data: np.ndarray
    source: str = "memory"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.int64)
        if data.ndim != 2 or data.shape[1] != N_FEATURES:
            raise ValidationError(f"stream matrix must be (n, {N_FEATURES}), got {data.shape}")
        if data.shape[0] < 2:
            raise ValidationError("a stream needs at least 2 events")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return LobStream(self.data[k], self.source)
        return LobEvent.from_row(self.data[k])

    def __iter__(self):
        for row in self.data:
            yield LobEvent.from_row(row)

    @property
    def events(self):
        return list(self)

    def mids(self):
        return (self.data[:, 0].astype(np.float64) + self.data[:, 2 * LEVELS].astype(np.float64)) / 2.0

    def features(self):
        return self.data.astype(np.float64)

    @classmethod
    def from_events(cls, events, source="memory"):
        return cls(np.stack([e.row() for e in events]), source)


# -- normalization -----------------------------------------------------------


@dataclass
class Normalizer:
    """Per-feature affine map fitted on a training window.

    ``shift``/``scale`` act on the 40 features and ``label_shift``/``label_scale``
    on the mid-price, so that ``normalized = (x - shift) / scale``.
    """

    mode: str = "raw"
    shift: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    scale: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))
    label_shift: float = 0.0
    label_scale: float = 1.0

    def apply(self, e):
        return self.apply_features(e.features())

    def apply_features(self, x):
        if self.mode == "raw":
            return np.asarray(x, dtype=np.float64)
        return (np.asarray(x, dtype=np.float64) - self.shift) / self.scale

    def label(self, y):
        if self.mode == "raw":
            return y
        return (y - self.label_shift) / self.label_scale

    def inverse_label(self, z):
        if self.mode == "raw":
            return z
        return z * self.label_scale + self.label_shift

    def to_dict(self):
        return {
            "mode": self.mode,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "label_shift": self.label_shift,
            "label_scale": self.label_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["mode"],
            np.asarray(d["shift"], dtype=np.float64),
            np.asarray(d["scale"], dtype=np.float64),
            float(d["label_shift"]),
            float(d["label_scale"]),
        )


def _stats(values, mode, what):
    if mode == "minmax":
        lo, hi = values.min(axis=0), values.max(axis=0)
        span = hi - lo
        bad = np.flatnonzero(np.atleast_1d(span <= 0))
        if bad.size:
            raise ConfigError(f"minmax: {what} {int(bad[0])} has max == min")
        return lo, span
    mu = values.mean(axis=0)
    sd = values.std(axis=0)  # population std
    bad = np.flatnonzero(np.atleast_1d(sd <= 0))
    if bad.size:
        raise ConfigError(f"zscore: {what} {int(bad[0])} has zero standard deviation")
    return mu, sd


def fit_normalizer(mode, window):
    """Fit per-feature and mid-price statistics on ``window`` (a LobStream or events)."""
    if mode not in NORMALIZATIONS:
        raise ConfigError(f"unknown normalization mode {mode!r}; expected one of {NORMALIZATIONS}")
    if not isinstance(window, LobStream):
        window = list(window)
        if not window:
            raise ConfigError("cannot fit a normalizer on an empty window")
        feats = np.stack([e.features() for e in window])
        mids = np.array([mid_price(e) for e in window])
    else:
        feats, mids = window.features(), window.mids()
    if mode == "raw":
        return Normalizer("raw")
    shift, scale = _stats(feats, mode, "feature")
    lshift, lscale = _stats(mids[:, None], mode, "mid-price label")
    return Normalizer(mode, shift, scale, float(lshift[0]), float(lscale[0]))


def apply(n, e):
    return n.apply(e)


# -- CSV ---------------------------------------------------------------------


def write_csv(stream, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(stream.data.tolist())


def load_csv(path):
    """Read and validate a 40-column LOB CSV (see ``CSV_HEADER``)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"{path}:1: header does not match the 40-column LOB format")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != N_FEATURES:
                raise ParseError(f"{path}:{lineno}: expected {N_FEATURES} fields, got {len(rec)}")
            try:
                row = np.array([int(v) for v in rec], dtype=np.int64)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer field ({exc})") from None
            rule = check_event_row(row)
            if rule is not None:
                raise ValidationError(f"{path}:{lineno}: invariant violated: {rule}")
            rows.append(row)
    if len(rows) < 2:
        raise ValidationError(f"{path}: a stream needs at least 2 events, found {len(rows)}")
    return LobStream(np.stack(rows), source=str(path))


# -- synthetic generator -----------------------------------------------------


def _mid_path(n, regime, rng, start, drift, noise_std, kappa):
    if regime == "random_walk":
        steps = rng.choice(np.array([-1, 1]), size=n - 1)
        return start + np.concatenate([[0], np.cumsum(steps)])
    if regime == "trend":
        incr = drift + noise_std * rng.standard_normal(n - 1)
        latent = start + np.concatenate([[0.0], np.cumsum(incr)])
        return np.rint(latent).astype(np.int64)
    if regime == "mean_revert":
        latent = np.empty(n)
        latent[0] = start
        eps = rng.standard_normal(n - 1)
        for t in range(1, n):
            latent[t] = latent[t - 1] + kappa * (start - latent[t - 1]) + noise_std * eps[t - 1]
        return np.rint(latent).astype(np.int64)
    raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def generate_synthetic(n, regime="random_walk", seed=0, *, start_mid=1_000_000,
                       drift=1.0, noise_std=2.0, kappa=0.05, max_volume=1000):
    """Synthetic LOB stream whose mid-price follows ``regime``.

    Levels are built outward from the mid with a fixed 2-tick spread and random
    strictly increasing level gaps of 1-3 ticks; volumes are uniform in
    ``[1, max_volume]``.
    """
    if n < 2:
        raise ConfigError(f"need at least 2 events, got {n}")
    rng = make_rng(seed)
    mids = _mid_path(n, regime, rng, start_mid, drift, noise_std, kappa).astype(np.int64)
    if mids.min() - 1 - 3 * (LEVELS - 1) <= 0:
        raise ConfigError("mid-price path drifts too close to zero; raise start_mid")
    gaps = rng.integers(1, 4, size=(n, 2, LEVELS - 1))
    ask_off = 1 + np.concatenate([np.zeros((n, 1), np.int64), np.cumsum(gaps[:, 0], axis=1)], axis=1)
    bid_off = 1 + np.concatenate([np.zeros((n, 1), np.int64), np.cumsum(gaps[:, 1], axis=1)], axis=1)
    vols = rng.integers(1, max_volume + 1, size=(n, 2, LEVELS))
    data = np.empty((n, N_FEATURES), dtype=np.int64)
    data[:, _ASK_P] = mids[:, None] + ask_off
    data[:, _ASK_V] = vols[:, 0]
    data[:, _BID_P] = mids[:, None] - bid_off
    data[:, _BID_V] = vols[:, 1]
    return LobStream(data, source=f"synthetic:{regime}:n={n}:seed={seed}")
