"""Bell-CHSH analysis of polarization coincidence data."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams, MissingSetting, ZeroTotal
from .measurement import AnalyzerSetting, CoincidenceRecord, coincidence_probability

TSIRELSON = 2 * math.sqrt(2)
LOCAL_BOUND = 2.0


@dataclass(frozen=True)
class ChshAngleSet:
    alpha: float
    alpha_p: float
    beta: float
    beta_p: float

    def __post_init__(self):
        if not all(math.isfinite(x) for x in self.as_tuple()):
            raise InvalidParams("CHSH angles must be finite")

    def as_tuple(self):
        return (self.alpha, self.alpha_p, self.beta, self.beta_p)

    @classmethod
    def parse(cls, text: str) -> "ChshAngleSet":
        """``"a,a',b,b'"`` in degrees."""
        try:
            vals = [float(x) for x in text.split(",")]
        except ValueError as exc:
            raise InvalidParams(f"bad angle list {text!r}") from exc
        if len(vals) != 4:
            raise InvalidParams("need exactly four angles: alpha, alpha', beta, beta'")
        return cls(*vals)

    def terms(self):
        """The four (a, b, sign) terms of S = E(a,b) - E(a,b') + E(a',b) + E(a',b')."""
        a, ap, b, bp = self.as_tuple()
        return [(a, b, 1.0), (a, bp, -1.0), (ap, b, 1.0), (ap, bp, 1.0)]


CANONICAL = ChshAngleSet(0.0, 45.0, 22.5, 67.5)


def quadruple(a: AnalyzerSetting, b: AnalyzerSetting):
    """Settings for one correlation term, ordered (a,b), (a+,b+), (a,b+), (a+,b)
    where + adds 90 degrees to the polarizer."""
    ap, bp = a.perpendicular(), b.perpendicular()
    return [(a, b), (ap, bp), (a, bp), (ap, b)]


def chsh_settings(angles: ChshAngleSet = CANONICAL, qwp_a=None, qwp_b=None):
    """All 16 setting pairs, grouped by term in the order of ``angles.terms()``."""
    out = []
    for x, y, _ in angles.terms():
        out.extend(quadruple(AnalyzerSetting(x, qwp_a), AnalyzerSetting(y, qwp_b)))
    return out


_SIGNS = np.array([1.0, 1.0, -1.0, -1.0])


def _correlation(rates, variances):
    """E and its first-order error from four rates ordered as in ``quadruple``.
    Works on the last axis, so batches of resamples are allowed."""
    rates = np.asarray(rates, dtype=float)
    total = rates.sum(axis=-1)
    num = (rates * _SIGNS).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = num / total
        de = None
        if variances is not None:
            grad = (_SIGNS - e[..., None]) / total[..., None]
            de = np.sqrt((grad ** 2 * variances).sum(axis=-1))
    return e, de, total


def correlation_E(records, coinc_window: float | None = None):
    """(E, dE) from four records ordered (a,b), (a+,b+), (a,b+), (a+,b).

    Counts are converted to rates before combining, so unequal durations are
    fine. Each raw count is an independent Poisson variable; with
    ``coinc_window`` the accidental estimate from the singles is subtracted
    and treated as exact.
    """
    if len(records) != 4:
        raise InvalidParams("correlation_E needs exactly four records")
    n = np.array([r.coincidences for r in records], dtype=float)
    d = np.array([r.duration for r in records], dtype=float)
    acc = np.array([r.accidentals(coinc_window) for r in records])
    e, de, total = _correlation((n - acc) / d, n / d ** 2)
    if total == 0:
        raise ZeroTotal("sum of the four coincidence rates is zero")
    return float(e), float(de)


@dataclass
class ChshResult:
    S: float
    dS: float
    n_sigma: float
    E_table: list
    counts_used: list = field(repr=False, default_factory=list)

    @property
    def abs_S(self) -> float:
        return abs(self.S)

    def as_dict(self):
        return {
            "S": self.S,
            "abs_S": abs(self.S),
            "dS": self.dS,
            "n_sigma": self.n_sigma,
            "n_sigma_floor": math.floor(self.n_sigma) if math.isfinite(self.n_sigma) else None,
            "E_table": self.E_table,
        }


def _index_records(records):
    table = {}
    for r in records:
        k = (r.setting_a.key(), r.setting_b.key())
        if k in table:
            # repeated acquisitions of one setting are pooled
            p = table[k]
            table[k] = CoincidenceRecord(p.setting_a, p.setting_b, p.coincidences + r.coincidences,
                                         p.singles_a + r.singles_a, p.singles_b + r.singles_b,
                                         p.duration + r.duration)
        else:
            table[k] = r
    return table


def select_records(records, angles: ChshAngleSet = CANONICAL):
    """Pick the 16 records needed for ``angles``, in the canonical order.

    The QWP field is taken from the records themselves: each arm's analyzer
    must use the same waveplate across all of its settings.
    """
    table = _index_records(records)
    if not table:
        raise MissingSetting("no records")
    qa = {r.setting_a.qwp_angle for r in records}
    qb = {r.setting_b.qwp_angle for r in records}
    qwp_a = qa.pop() if len(qa) == 1 else None
    qwp_b = qb.pop() if len(qb) == 1 else None
    chosen = []
    for a, b in chsh_settings(angles, qwp_a, qwp_b):
        k = (a.key(), b.key())
        if k not in table:
            raise MissingSetting(f"no record for setting A={a.pol_angle:g} deg, B={b.pol_angle:g} deg")
        chosen.append(table[k])
    return chosen


def _finish(es, des, angles, chosen):
    signs = [s for *_, s in angles.terms()]
    S = float(sum(s * e for s, e in zip(signs, es)))
    dS = float(math.sqrt(sum(x ** 2 for x in des)))
    n_sigma = (abs(S) - LOCAL_BOUND) / dS if dS > 0 else (math.inf if abs(S) > 2 else -math.inf)
    table = [
        {"alpha": x, "beta": y, "sign": s, "E": e, "dE": de}
        for (x, y, s), e, de in zip(angles.terms(), es, des)
    ]
    return ChshResult(S, dS, float(n_sigma), table, chosen)


def chsh_S(records, angles: ChshAngleSet = CANONICAL, coinc_window: float | None = None) -> ChshResult:
    """S = E(a,b) - E(a,b') + E(a',b) + E(a',b') with Poisson error propagation.

    ``n_sigma`` = (|S| - 2) / dS, negative when there is no violation.
    """
    chosen = select_records(records, angles)
    es, des = [], []
    for k in range(4):
        e, de = correlation_E(chosen[4 * k:4 * k + 4], coinc_window)
        es.append(e)
        des.append(de)
    return _finish(es, des, angles, chosen)


def significance(abs_S: float, dS: float) -> float:
    return (abs_S - LOCAL_BOUND) / dS


def chsh_sigma_montecarlo(records, angles: ChshAngleSet = CANONICAL, trials: int = 1000,
                          seed=0, coinc_window: float | None = None) -> float:
    """Standard deviation of S over Poisson resamples of the 16 records.

    Independent of the propagation formula; singles are resampled as well
    when accidentals are subtracted.
    """
    if trials < 100:
        raise InvalidParams("need at least 100 Monte-Carlo trials")
    chosen = select_records(records, angles)
    rng = np.random.default_rng(seed)
    n = np.array([r.coincidences for r in chosen], dtype=float)
    d = np.array([r.duration for r in chosen], dtype=float)
    draws = rng.poisson(n, size=(trials, 16)).astype(float)
    if coinc_window:
        sa = rng.poisson([r.singles_a for r in chosen], size=(trials, 16))
        sb = rng.poisson([r.singles_b for r in chosen], size=(trials, 16))
        draws = draws - sa * sb * coinc_window / d
    rates = (draws / d).reshape(trials, 4, 4)
    e, _, total = _correlation(rates, None)
    signs = np.array([s for *_, s in angles.terms()])
    S = (e * signs).sum(axis=1)
    S = S[np.isfinite(S)]
    return float(S.std(ddof=1))


def ideal_S(rho, angles: ChshAngleSet = CANONICAL, qwp_a=None, qwp_b=None) -> float:
    """S from exact coincidence probabilities of ``rho``."""
    es = []
    settings = chsh_settings(angles, qwp_a, qwp_b)
    for k in range(4):
        p = [coincidence_probability(rho, a, b) for a, b in settings[4 * k:4 * k + 4]]
        e, _, total = _correlation(p, None)
        es.append(float(e) if total > 0 else 0.0)
    return float(sum(s * e for (*_, s), e in zip(angles.terms(), es)))
