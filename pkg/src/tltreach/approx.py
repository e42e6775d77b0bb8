from __future__ import annotations

import enum


class ApproxDirection(enum.Enum):
    """Whether a computed set is exact, an over- or an under-approximation, or invalid."""

    EXACT = "E"
    OVER = "O"
    UNDER = "U"
    INVALID = "I"

    @property
    def sign(self) -> float:
        return {"E": 0.0, "O": 1.0, "U": -1.0, "I": float("nan")}[self.value]

    def negate(self) -> "ApproxDirection":
        return {
            ApproxDirection.OVER: ApproxDirection.UNDER,
            ApproxDirection.UNDER: ApproxDirection.OVER,
        }.get(self, self)

    @classmethod
    def parse(cls, text: str) -> "ApproxDirection":
        key = text.strip().upper()
        aliases = {"EXACT": "E", "OVER": "O", "UNDER": "U", "INVALID": "I"}
        return cls(aliases.get(key, key))

    def __str__(self):
        return self.value


E = ApproxDirection.EXACT
O = ApproxDirection.OVER
U = ApproxDirection.UNDER
I = ApproxDirection.INVALID  # noqa: E741
