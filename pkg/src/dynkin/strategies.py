"""Threshold stopping rules for the two players."""
from __future__ import annotations

import math
from dataclasses import dataclass

KINDS = ("never", "below", "above", "band")
KIND_CODES = {k: i for i, k in enumerate(KINDS)}


@dataclass(frozen=True)
class Rule:
    """A Markov stopping rule.

    ``below``: stop at the first time ``X <= level``;
    ``above``: stop at the first time ``X >= level``;
    ``band``: stop at the first time ``lower <= X <= level``;
    ``never``: do not stop.
    """

    kind: str = "never"
    level: float | None = None
    lower: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.kind != "never" and (self.level is None or math.isnan(self.level)):
            raise ValueError(f"rule {self.kind!r} needs a level")
        if self.kind == "band" and not (self.lower is not None and self.lower <= self.level):
            raise ValueError("band rules need lower <= level")

    @classmethod
    def never(cls):
        return cls("never")

    @classmethod
    def below(cls, level):
        return cls("below", float(level))

    @classmethod
    def above(cls, level):
        return cls("above", float(level))

    @classmethod
    def band(cls, lower, upper):
        return cls("band", float(upper), float(lower))

    def stops_at(self, x) -> bool:
        if self.kind == "never":
            return False
        if self.kind == "below":
            return x <= self.level
        if self.kind == "above":
            return x >= self.level
        return self.lower <= x <= self.level

    def encode(self):
        """``(code, a, b)`` triple consumed by the simulation kernel."""
        code = KIND_CODES[self.kind]
        if self.kind == "never":
            return code, math.nan, math.nan
        if self.kind == "band":
            return code, self.lower, self.level
        return code, self.level, self.level

    def describe(self) -> str:
        if self.kind == "never":
            return "never stop"
        if self.kind == "below":
            return f"stop when X <= {self.level:.10g}"
        if self.kind == "above":
            return f"stop when X >= {self.level:.10g}"
        return f"stop when {self.lower:.10g} <= X <= {self.level:.10g}"

    def to_dict(self):
        d = {"kind": self.kind}
        if self.level is not None:
            d["level"] = self.level
        if self.lower is not None:
            d["lower"] = self.lower
        return d


@dataclass(frozen=True)
class StrategyPair:
    tau1: Rule
    tau2: Rule

    def __post_init__(self):
        t1, t2 = self.tau1, self.tau2
        if t1.kind == "below" and t2.kind == "above" and not t1.level < t2.level:
            raise ValueError("threshold strategies need x1 < x2")

    @classmethod
    def thresholds(cls, x1=None, x2=None):
        r1 = Rule.never() if x1 is None else Rule.below(x1)
        r2 = Rule.never() if x2 is None else Rule.above(x2)
        return cls(r1, r2)

    def rule(self, player: int) -> Rule:
        return self.tau1 if player == 1 else self.tau2

    def with_rule(self, player: int, rule: Rule) -> "StrategyPair":
        if player == 1:
            return StrategyPair._unchecked(rule, self.tau2)
        return StrategyPair._unchecked(self.tau1, rule)

    @staticmethod
    def _unchecked(t1, t2):
        obj = object.__new__(StrategyPair)
        object.__setattr__(obj, "tau1", t1)
        object.__setattr__(obj, "tau2", t2)
        return obj

    def to_dict(self):
        return {"tau1": self.tau1.to_dict(), "tau2": self.tau2.to_dict()}
