"""Closed-form communication-cost accounting, cross-checked against ledgers.

Costs are counted in block-weight units: one unit is one float of an encoder
or decoder block crossing the wire once, per direction, per client. With N
target blocks per stack, per-block weight counts W1 (encoder) and W2
(decoder), and T rounds:

  fixed-depth total                 T * N * (W1 + W2)
  grown, stage-sum total            sum over stages n = 0..c-1 of
                                    (T/c) * (N/c)(n+1) * (W1 + W2)
                                    = T * N * (W1 + W2) * (c+1) / (2c)
  grown, quoted closed form         (T / 2c) * (N + 1) * (W1 + W2)

The stage sum assumes each depth is held for exactly T/c rounds (the
``uniform`` staging); it is what a per-round ledger of such a run reproduces
exactly, and its reduction ratio (c+1)/(2c) is the headline number. The quoted
closed form sums the same arithmetic series over a single stage's worth of
rounds instead of all T; it is kept, clearly labeled, as a comparison mode,
and the two disagree by the factor N(c+1) / (c(N+1)). The quoted stage index
is also written elsewhere as running from 0 to c - c/N, which is not an
integer for most N; the range used here is n = 0..c-1, which reproduces the
experimental schedule.

All computations are exact: integers where integral, fractions elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError, VerificationError
from .fed import CommLedger, MODE_FEDDT, MODE_FEDT, MODES


@dataclass(frozen=True)
class CostInputs:
    """T rounds, c growth parts, N target blocks, per-block weight counts."""

    rounds: int
    parts: int
    blocks: int
    enc_weights: int
    dec_weights: int

    def __post_init__(self):
        for name in ("rounds", "parts", "blocks", "enc_weights", "dec_weights"):
            if getattr(self, name) < 1:
                raise ConfigError(f"cost input {name} must be >= 1, got {getattr(self, name)}")
        if self.blocks % self.parts != 0:
            raise ConfigError(f"blocks={self.blocks} not divisible by parts={self.parts}")

    @property
    def per_block(self) -> int:
        return self.enc_weights + self.dec_weights


def fedt_total(inputs: CostInputs) -> int:
    """Fixed-depth training: T * N * (W1 + W2) block-weight units."""
    return inputs.rounds * inputs.blocks * inputs.per_block


def uniform_depth_trace(inputs: CostInputs) -> list[int]:
    """Depth per round under uniform staging: (N/c)(n+1) held for T/c rounds."""
    if inputs.rounds % inputs.parts != 0:
        raise ConfigError(f"rounds={inputs.rounds} not divisible by parts={inputs.parts}")
    span = inputs.rounds // inputs.parts
    step = inputs.blocks // inputs.parts
    return [step * ((t - 1) // span + 1) for t in range(1, inputs.rounds + 1)]


def feddt_total_series(inputs: CostInputs) -> int:
    """Stage-sum total for the grown model; exact integer.

    Equals sum(depth_t * (W1 + W2)) over the uniform-staged depth trace, i.e.
    T * N * (W1 + W2) * (c + 1) / (2c).
    """
    if inputs.rounds % inputs.parts != 0:
        raise ConfigError(f"rounds={inputs.rounds} not divisible by parts={inputs.parts}")
    span = inputs.rounds // inputs.parts
    step = inputs.blocks // inputs.parts
    c = inputs.parts
    return span * step * inputs.per_block * (c * (c + 1) // 2)


def feddt_total_quoted(inputs: CostInputs) -> Fraction:
    """The quoted closed form (T / 2c) * (N + 1) * (W1 + W2), reproduced
    verbatim for comparison; not what a per-round ledger sums to."""
    return Fraction(inputs.rounds, 2 * inputs.parts) * (inputs.blocks + 1) * inputs.per_block


@dataclass(frozen=True)
class RatioReport:
    """Grown-over-fixed traffic ratios; exact fractions plus float views."""

    series_exact: Fraction
    quoted_exact: Fraction

    @property
    def series_ratio(self) -> float:
        return float(self.series_exact)

    @property
    def quoted_ratio(self) -> float:
        return float(self.quoted_exact)


def reduction_ratio(inputs: CostInputs) -> RatioReport:
    """series = (c+1)/(2c), a function of c alone; quoted = (N+1)/(2cN).

    Both are reported; the disagreement is documented, not silently resolved.
    """
    c, n = inputs.parts, inputs.blocks
    return RatioReport(
        series_exact=Fraction(c + 1, 2 * c),
        quoted_exact=Fraction(1, 2 * c) + Fraction(1, 2 * c * n),
    )


@dataclass(frozen=True)
class LedgerCheck:
    rounds_checked: int
    measured_units: int
    expected_units: int
    fixed_bytes_total: int


def verify_ledger(ledger: CommLedger, inputs: CostInputs, mode: str = MODE_FEDDT) -> LedgerCheck:
    """Assert the measured per-round block traffic equals the closed form.

    Block-weight units are counted per direction per client:
    units_t = block_bytes_t / (8 * 2 * M_t). The expectation is the constant
    trace N for fixed-depth mode and the uniform-staged trace otherwise, so a
    grown run verifies exactly iff it used uniform staging. Raises
    VerificationError naming the first divergent round.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    t_expected = inputs.rounds
    if len(ledger.rounds) != t_expected:
        raise VerificationError(
            f"ledger diverges at round {len(ledger.rounds) + 1}: "
            f"have {len(ledger.rounds)} rounds, cost model covers {t_expected}"
        )
    if mode == MODE_FEDT:
        trace = [inputs.blocks] * t_expected
        expected_total = fedt_total(inputs)
    else:
        trace = uniform_depth_trace(inputs)
        expected_total = feddt_total_series(inputs)
    measured = 0
    for i, (report, block_bytes) in enumerate(zip(ledger.rounds, ledger.block_bytes)):
        t = i + 1
        m = len(report.client_ids)
        denom = 8 * 2 * m
        if m == 0 or block_bytes % denom != 0:
            raise VerificationError(
                f"ledger diverges at round {t}: block bytes {block_bytes} "
                f"are not a whole number of weight units for {m} clients"
            )
        units = block_bytes // denom
        expected = trace[i] * inputs.per_block
        if units != expected:
            raise VerificationError(
                f"ledger diverges at round {t}: measured {units} block-weight units, "
                f"cost model expects {expected}"
            )
        measured += units
    return LedgerCheck(
        rounds_checked=t_expected,
        measured_units=measured,
        expected_units=expected_total,
        fixed_bytes_total=ledger.total_fixed_bytes,
    )
