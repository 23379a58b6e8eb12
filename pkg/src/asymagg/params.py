"""Public scheme constants and the derived Gaussian widths and norm bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .ring_core import hash_digest, TAG_SUBSEED


class ParameterError(ValueError):
    """A parameter set violates a structural or correctness invariant."""


DEFAULT_MATRIX_SEED = hash_digest(TAG_SUBSEED, [b"asymagg-default-round-matrix"]).value


@dataclass(frozen=True)
class ProtocolParams:
    """All public constants of the scheme.

    ``Delta`` is the plaintext scaling factor q/p; ``delta`` and ``eta`` are
    the dropout and corruption fractions.  ``t``, ``B_x`` and ``B_w`` are
    derived when left as ``None``.  ``strict=False`` skips only the aggregate
    noise-budget check, which the decode negative control needs.
    """

    q: int = 1 << 32
    p: int = 1 << 16
    L: int = 4096
    lam: int = 512
    d: int = 1024
    m: int = 1024
    C: int = 1
    kappa_sound: int = 40
    t: int | None = None
    B_s: int = 1
    B_e: int = 4
    B_x: int | None = None
    B_w: int | None = None
    B_rho: int = 2
    xi: float = 11.0
    tau: float = 1.1
    tail_bits: int = 20
    restart_factor: int = 64
    n: int = 64
    delta: float = 0.0
    eta: float = 0.0
    matrix_seed: bytes = field(default=DEFAULT_MATRIX_SEED, repr=False)
    strict: bool = True

    def __post_init__(self):
        if self.t is None:
            t = math.ceil(self.kappa_sound / math.log2(2 * self.C + 1))
            object.__setattr__(self, "t", t)
        if self.B_x is None:
            object.__setattr__(self, "B_x", self.p - 1)
        if self.B_w is None:
            object.__setattr__(self, "B_w", self.p // 2)
        self.validate()

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> None:
        errs = []
        if self.q < 2 or self.p < 2:
            errs.append("moduli must be at least 2")
        elif self.q % self.p != 0:
            errs.append("p must divide q so that aggregate sums reduce consistently mod p")
        if self.q > (1 << 62):
            errs.append("q must not exceed 2^62")
        for name in ("L", "lam", "d", "m", "C", "t", "n"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be positive")
        if self.d >= 1 and self.L % self.d != 0:
            errs.append("d must divide L")
        if min(self.B_s, self.B_e, self.B_x, self.B_w, self.B_rho) < 0:
            errs.append("witness bounds must be non-negative")
        if self.xi <= 0 or self.tau < 1:
            errs.append("xi must be positive and tau at least 1")
        if not (0 <= self.delta and 0 <= self.eta and self.delta + self.eta < Fraction(1, 3)):
            errs.append("need 0 <= delta, eta and delta + eta < 1/3")
        if len(self.matrix_seed) != 32:
            errs.append("matrix_seed must be 32 bytes")
        if self.strict and not errs and not self.noise_budget_ok():
            errs.append("aggregate noise budget n * B_e < Delta / 2 violated")
        if errs:
            raise ParameterError("; ".join(errs))

    def noise_budget_ok(self) -> bool:
        return 2 * self.n * self.B_e < self.Delta

    # ------------------------------------------------------------------
    # Derived quantities
    # ------------------------------------------------------------------

    @property
    def Delta(self) -> int:
        return self.q // self.p

    @property
    def k(self) -> int:
        return self.L // self.d

    @property
    def M(self) -> float:
        """Expected trials of the rejection step."""
        return math.exp(12.0 / self.xi + 1.0 / (2.0 * self.xi * self.xi))

    @property
    def restart_limit(self) -> int:
        return math.ceil(self.restart_factor * self.M)

    def tau_for(self, dim: int) -> float:
        """Tail factor for an L2 bound in ``dim`` dimensions.

        The configured tau is raised to the chi-square tail factor
        (Laurent-Massart) that keeps honest failures below 2^-tail_bits.
        """
        x = self.tail_bits * math.log(2.0)
        lm = math.sqrt(1.0 + 2.0 * math.sqrt(x / dim) + 2.0 * x / dim)
        return max(self.tau, lm)

    def _sigma(self, dim: int, bound: int) -> float:
        return self.xi * self.C * math.sqrt(dim) * max(bound, 1)

    @property
    def sigma_s(self) -> float:
        return self._sigma(self.lam, self.B_s)

    @property
    def sigma_e(self) -> float:
        return self._sigma(self.d, self.B_e)

    @property
    def sigma_x(self) -> float:
        return self._sigma(self.d, self.B_x)

    @property
    def sigma_w(self) -> float:
        return self._sigma(self.d, self.B_w)

    @property
    def sigma_rho(self) -> float:
        return self._sigma(self.m, self.B_rho)

    @property
    def beta_s(self) -> float:
        return self.tau_for(self.lam) * math.sqrt(self.lam) * self.sigma_s

    @property
    def beta_e(self) -> float:
        return self.tau_for(self.d) * math.sqrt(self.d) * self.sigma_e

    @property
    def beta_x(self) -> float:
        return self.tau_for(self.d) * math.sqrt(self.d) * self.sigma_x

    @property
    def beta_w(self) -> float:
        return self.tau_for(self.d) * math.sqrt(self.d) * self.sigma_w

    @property
    def beta_rho(self) -> float:
        return self.tau_for(self.m) * math.sqrt(self.m) * self.sigma_rho

    @property
    def fold_bound(self) -> float:
        """Norm bound on a folded randomness vector r*_u."""
        dim = self.k * self.lam
        return self.tau_for(dim) * self.sigma_s * math.sqrt(dim)

    @property
    def gamma(self) -> float:
        """Soundness slack of block-wise extraction."""
        return 2.0 * self.tau * self.xi * self.C * math.sqrt(self.d)

    @property
    def error_sigma(self) -> float:
        """Width of the LWE error distribution (tail-cut at B_e)."""
        return max(self.B_e / 4.0, 0.5)

    @property
    def rho_sigma(self) -> float:
        """Width of the Ajtai randomness distribution (tail-cut at B_rho)."""
        return max(self.B_rho / 2.0, 0.5)

    def threshold(self, n: int | None = None) -> int:
        """Minimum |V| = ceil((1 - delta - eta) n), evaluated in exact decimal arithmetic."""
        n = self.n if n is None else n
        frac = 1 - Fraction(repr(float(self.delta))) - Fraction(repr(float(self.eta)))
        return math.ceil(frac * n)

    def with_(self, **changes) -> "ProtocolParams":
        return replace(self, **changes)


def default_params(L: int = 4096, n: int = 64, **overrides) -> ProtocolParams:
    """Desk-scale defaults; block size shrinks to L when L < 1024."""
    d = overrides.pop("d", min(1024, L))
    return ProtocolParams(L=L, n=n, d=d, **overrides)


def toy_params(L: int = 64, n: int = 8, **overrides) -> ProtocolParams:
    """Small parameters with q = 2^20 for randomized scenario testing."""
    base = dict(q=1 << 20, p=1 << 8, lam=16, d=min(16, L), m=16)
    base.update(overrides)
    return ProtocolParams(L=L, n=n, **base)
