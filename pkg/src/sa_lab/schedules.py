"""Step-size schedules: constant eps and polynomial eps / (k + h)**xi.

Both kinds are nonincreasing with first step inside (0, 1), which is what
the iteration downstream assumes of any admissible schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = ["StepSchedule", "parse_schedule"]

CONSTANT = "constant"
POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class StepSchedule:
    """Step-size rule eps(k); construct via `constant` or `polynomial`."""

    kind: str
    eps: float
    h: float = 0.0
    xi: float = 1.0

    @classmethod
    def constant(cls, eps: float) -> "StepSchedule":
        if not (0.0 < eps < 1.0):
            raise InvalidInputError(f"constant step size must lie in (0,1), got {eps!r}")
        return cls(CONSTANT, float(eps))

    @classmethod
    def polynomial(cls, eps: float, h: float, xi: float) -> "StepSchedule":
        if eps <= 0.0:
            raise InvalidInputError(f"polynomial coefficient must be positive, got {eps!r}")
        if h < 0.0:
            raise InvalidInputError(f"offset h must be >= 0, got {h!r}")
        if not (0.0 < xi <= 1.0):
            raise InvalidInputError(f"decay exponent xi must lie in (0,1], got {xi!r}")
        first = eps / h**xi if h > 0.0 else float("inf")
        if not (0.0 < first < 1.0):
            raise InvalidInputError(
                f"first step eps/h**xi = {first!r} must lie in (0,1); increase h"
            )
        return cls(POLYNOMIAL, float(eps), float(h), float(xi))

    def step(self, k: int) -> float:
        """eps(k) for a single iteration index."""
        if k < 0:
            raise InvalidInputError("k must be >= 0")
        if self.kind == CONSTANT:
            return self.eps
        return self.eps / (k + self.h) ** self.xi

    def steps(self, n: int) -> np.ndarray:
        """Vector of eps(0), ..., eps(n-1)."""
        if n < 0:
            raise InvalidInputError("n must be >= 0")
        if self.kind == CONSTANT:
            return np.full(n, self.eps)
        return self.eps / (np.arange(n) + self.h) ** self.xi

    def partial_sum(self, i: int, j: int) -> float:
        """Sum of eps(k) for k = i..j inclusive; 0 for the empty range i = j+1."""
        if i < 0:
            raise InvalidInputError("i must be >= 0")
        if i > j + 1:
            raise InvalidInputError(f"invalid range: i={i} exceeds j+1={j + 1}")
        if i == j + 1:
            return 0.0
        if self.kind == CONSTANT:
            return self.eps * (j - i + 1)
        ks = np.arange(i, j + 1)
        return float((self.eps / (ks + self.h) ** self.xi).sum())

    def describe(self) -> str:
        if self.kind == CONSTANT:
            return f"const:{self.eps!r}"
        return f"poly:eps={self.eps!r},h={self.h!r},xi={self.xi!r}"


def parse_schedule(text: str) -> StepSchedule:
    """Parse `const:0.01` or `poly:eps=2,h=10,xi=1`."""
    head, _, rest = text.strip().partition(":")
    if head == "const":
        try:
            return StepSchedule.constant(float(rest))
        except ValueError as exc:
            raise InvalidInputError(f"bad constant schedule {text!r}: {exc}") from exc
    if head == "poly":
        fields = {}
        for part in rest.split(","):
            key, _, val = part.partition("=")
            key = key.strip()
            if key not in ("eps", "h", "xi") or not val:
                raise InvalidInputError(f"bad polynomial schedule field {part!r} in {text!r}")
            try:
                fields[key] = float(val)
            except ValueError as exc:
                raise InvalidInputError(f"bad number {val!r} in {text!r}") from exc
        missing = {"eps", "h", "xi"} - fields.keys()
        if missing:
            raise InvalidInputError(f"schedule {text!r} missing fields {sorted(missing)}")
        return StepSchedule.polynomial(fields["eps"], fields["h"], fields["xi"])
    raise InvalidInputError(f"unknown schedule kind {head!r}; use const:... or poly:...")
