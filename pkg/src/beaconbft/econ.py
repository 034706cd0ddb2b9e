"""Economic-safety arithmetic and the mining-reward table recomputation.

Every money value is a ``Decimal`` tagged with its currency.  Ratios and
probabilities are plain ``Decimal``.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, getcontext
from itertools import combinations
from typing import Iterable, Sequence

getcontext().prec = 40

DAYS_PER_YEAR = 365
TABLE_TOLERANCE = Decimal("0.005")


class ParameterError(ValueError):
    pass


def dec(x) -> Decimal:
    """Exact decimal from an int, str or Decimal; floats go through repr."""
    if isinstance(x, Decimal):
        return x
    if isinstance(x, float):
        return Decimal(repr(x))
    return Decimal(x)


@dataclass(frozen=True)
class Money:
    amount: Decimal
    currency: str = "USD"

    def __post_init__(self) -> None:
        object.__setattr__(self, "amount", dec(self.amount))

    def _same(self, other: "Money") -> None:
        if other.currency != self.currency:
            raise ParameterError(f"currency mismatch: {self.currency} vs {other.currency}")

    def __add__(self, other: "Money") -> "Money":
        self._same(other)
        return Money(self.amount + other.amount, self.currency)

    def __mul__(self, k) -> "Money":
        return Money(self.amount * dec(k), self.currency)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Money):
            self._same(other)
            return self.amount / other.amount
        return Money(self.amount / dec(other), self.currency)

    def __lt__(self, other: "Money") -> bool:
        self._same(other)
        return self.amount < other.amount

    def __gt__(self, other: "Money") -> bool:
        self._same(other)
        return self.amount > other.amount

    def __le__(self, other: "Money") -> bool:
        return not self > other

    def __ge__(self, other: "Money") -> bool:
        return not self < other

    def to_json(self) -> dict:
        return {"amount": str(self.amount), "currency": self.currency}

    def __str__(self) -> str:
        return f"{self.amount:f} {self.currency}"


def _probability(name: str, x: Decimal) -> None:
    if not Decimal(0) <= x <= Decimal(1):
        raise ParameterError(f"{name} must lie in [0, 1], got {x}")


@dataclass(frozen=True)
class PermissionlessParams:
    block_reward: Decimal  # coins per block
    exchange_rate: Money  # fiat per coin
    maturation_blocks: Decimal
    detection_probability: Decimal = Decimal(1)

    def __post_init__(self) -> None:
        for name in ("block_reward", "maturation_blocks", "detection_probability"):
            object.__setattr__(self, name, dec(getattr(self, name)))
        if not isinstance(self.exchange_rate, Money):
            object.__setattr__(self, "exchange_rate", Money(self.exchange_rate))
        if self.block_reward < 0 or self.maturation_blocks < 0 or self.exchange_rate.amount < 0:
            raise ParameterError("block reward, exchange rate and maturation count must be non-negative")
        _probability("detection_probability", self.detection_probability)

    @property
    def attack_cost(self) -> Money:
        """w * R * x: the value forfeited by orphaning ``w`` matured blocks."""
        return self.exchange_rate * (self.maturation_blocks * self.block_reward)


@dataclass(frozen=True)
class PermissionedParams:
    penalties: tuple[Money, ...]
    punishment_probability: Decimal
    colluders: int
    detection_probability: Decimal = Decimal(1)

    def __post_init__(self) -> None:
        pens = tuple(p if isinstance(p, Money) else Money(p) for p in self.penalties)
        object.__setattr__(self, "penalties", pens)
        object.__setattr__(self, "punishment_probability", dec(self.punishment_probability))
        object.__setattr__(self, "detection_probability", dec(self.detection_probability))
        _probability("punishment_probability", self.punishment_probability)
        _probability("detection_probability", self.detection_probability)
        if any(p.amount < 0 for p in pens):
            raise ParameterError("penalties must be non-negative")
        if len({p.currency for p in pens}) > 1:
            raise ParameterError("penalties must share one currency")
        if not 0 <= self.colluders <= len(pens):
            raise ParameterError(f"colluder count {self.colluders} must be between 0 and {len(pens)} penalties")

    @property
    def currency(self) -> str:
        return self.penalties[0].currency if self.penalties else "USD"

    def cheapest_coalition(self) -> Money:
        """Total penalty of the ``colluders`` nodes with the lowest penalties."""
        amounts = sorted(p.amount for p in self.penalties)[: self.colluders]
        return Money(sum(amounts, Decimal(0)), self.currency)


def beta_permissionless(p: PermissionlessParams) -> Money:
    """Transaction value above which a permissionless chain is not safe."""
    return p.attack_cost * p.detection_probability


def beta_permissioned(p: PermissionedParams) -> Money:
    """Same threshold when colluders are identified and fined."""
    return p.cheapest_coalition() * (p.detection_probability * p.punishment_probability)


def permissioned_safer(p: PermissionedParams, q: PermissionlessParams) -> bool:
    """Strictly larger expected fine than the permissionless attack cost."""
    return p.cheapest_coalition() * p.punishment_probability > q.attack_cost


def min_block_reward(attack_payoff: Money, attack_duration: Decimal) -> Money:
    """Infimum block reward that makes an attack unprofitable (strictly above it)."""
    alpha = dec(attack_duration)
    if alpha <= 0:
        raise ParameterError(f"attack duration must be positive, got {alpha}")
    return attack_payoff / alpha


def poca_ratio(worst_equilibrium_cost: Money, identity_cost: Money) -> Decimal:
    """Cost of decentralised Sybil resistance over the identity-based cost."""
    if identity_cost.amount <= 0:
        raise ParameterError("identity cost must be positive; supply a floor if it is negligible")
    return worst_equilibrium_cost / identity_cost


@dataclass(frozen=True)
class CoinRow:
    name: str
    reward_per_block: Decimal
    blocks_per_day: Decimal
    price: Money

    def __post_init__(self) -> None:
        object.__setattr__(self, "reward_per_block", dec(self.reward_per_block))
        object.__setattr__(self, "blocks_per_day", dec(self.blocks_per_day))
        if not isinstance(self.price, Money):
            object.__setattr__(self, "price", Money(self.price))
        if self.reward_per_block < 0 or self.blocks_per_day < 0 or self.price.amount < 0:
            raise ParameterError(f"{self.name}: reward, block rate and price must be non-negative")


def yearly_reward(c: CoinRow) -> Money:
    return c.price * (c.reward_per_block * c.blocks_per_day * DAYS_PER_YEAR)


def yearly_inflation(reward: Money, market_cap: Money) -> Decimal:
    if market_cap.amount <= 0:
        raise ParameterError("market cap must be positive")
    return reward / market_cap


def brute_force_coalition(penalties: Sequence[Decimal], colluders: int) -> Decimal:
    """Minimum penalty sum over every subset of size ``colluders``."""
    return min((sum(s, Decimal(0)) for s in combinations(penalties, colluders)), default=Decimal(0))


# -- published mining-reward table ---------------------------------------------

USD = "USD"


@dataclass(frozen=True)
class PublishedRow:
    coin: CoinRow
    printed_reward: Money
    printed_inflation: Decimal


PUBLISHED_TABLE: tuple[PublishedRow, ...] = tuple(
    PublishedRow(CoinRow(name, Decimal(r), Decimal(b), Money(Decimal(p), USD)), Money(Decimal(pr), USD), Decimal(pi))
    for name, r, b, p, pr, pi in (
        ("BTC", "6.25", "144", "50000", "18.061e9", "0.0412"),
        ("ETH", "2", "6545", "3780", "16.425e9", "0.0176"),
        ("DOGE", "10000", "1440", "0.49", "2.575e9", "0.0406"),
        ("LTC", "12.5", "576", "320", "840e6", "0.0394"),
        ("BCH", "6.25", "144", "1275", "418e6", "0.0175"),
        ("ZEC", "3.125", "1152", "301", "395e6", "0.1184"),
        ("XMR", "1.02", "720", "407", "109e6", "0.015"),
    )
)


@dataclass(frozen=True)
class TableRow:
    name: str
    derived_reward: Money
    printed_reward: Money
    deviation: Decimal  # derived / printed - 1
    market_cap: Money  # back-solved from the printed inflation
    derived_inflation: Decimal
    printed_inflation: Decimal
    # printed inflation of the row the derived reward matched (itself unless transposed)
    matched_inflation: Decimal
    status: str  # "ok", or "transposed:<other coin>", or "mismatch"

    @property
    def within_tolerance(self) -> bool:
        return abs(self.deviation) <= TABLE_TOLERANCE

    @property
    def inflation_round_trips(self) -> bool:
        return abs(self.derived_inflation / self.matched_inflation - 1) <= TABLE_TOLERANCE

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "derived_reward": self.derived_reward.to_json(),
            "printed_reward": self.printed_reward.to_json(),
            "deviation": str(self.deviation),
            "market_cap": self.market_cap.to_json(),
            "derived_inflation": str(self.derived_inflation),
            "printed_inflation": str(self.printed_inflation),
            "matched_inflation": str(self.matched_inflation),
            "status": self.status,
        }


def _close(a: Money, b: Money) -> bool:
    return abs(a / b - 1) <= TABLE_TOLERANCE


def recompute_table(rows: Iterable[PublishedRow] = PUBLISHED_TABLE) -> list[TableRow]:
    """Recompute each row from its inputs and compare with the printed cells.

    A row whose derived reward misses its own printed value but matches
    another row's is reported as a transposition.  Market caps are not
    inputs of the table; each is back-solved as printed reward over printed
    inflation, taken from the row whose printed reward the derived one
    matches, and the derived reward is then divided by it.
    """
    rows = list(rows)
    derived = {r.coin.name: yearly_reward(r.coin) for r in rows}
    out = []
    for r in rows:
        d = derived[r.coin.name]
        if _close(d, r.printed_reward):
            status, source = "ok", r
        else:
            source = next((o for o in rows if o is not r and _close(d, o.printed_reward)), None)
            status = f"transposed:{source.coin.name}" if source else "mismatch"
            source = source or r
        cap = Money(source.printed_reward.amount / source.printed_inflation, d.currency)
        out.append(
            TableRow(
                r.coin.name,
                d,
                r.printed_reward,
                d / r.printed_reward - 1,
                cap,
                yearly_inflation(d, cap),
                r.printed_inflation,
                source.printed_inflation,
                status,
            )
        )
    return out


def _short(m: Money) -> str:
    a = m.amount
    if a >= Decimal("1e9"):
        return f"${a / Decimal('1e9'):.3f}B"
    return f"${a / Decimal('1e6'):.1f}MM"


def format_table(rows: Sequence[TableRow]) -> str:
    header = f"{'coin':<6}{'derived':>12}{'printed':>12}{'deviation':>11}{'inflation':>11}{'printed':>9}  status"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r.name:<6}{_short(r.derived_reward):>12}{_short(r.printed_reward):>12}"
            f"{float(r.deviation) * 100:>+10.2f}%{float(r.derived_inflation) * 100:>10.2f}%"
            f"{float(r.printed_inflation) * 100:>8.2f}%  {r.status}"
        )
    return "\n".join(lines)
