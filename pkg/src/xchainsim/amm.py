"""Constant-product pricing and fee/reward accounting for the exchange pools.

All amounts are unsigned integers in smallest currency units; divisions
floor, and rounding always favors the pool (the reserve product never
decreases across a trade). Reward fractions are exact rationals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Tuple


class TradeRejected(Exception):
    """Trade violates pool preconditions (dust output, bad size, empty pool)."""


class LiquidityError(Exception):
    """Liquidity contribution off the current reserve ratio or malformed."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass
class Pool:
    """Constant-product pool: reserve_x of the source currency, reserve_y of
    the target currency, funded by LP contributions."""

    reserve_x: int = 0
    reserve_y: int = 0
    invariant_k: int = 0
    lp_shares: Dict[bytes, int] = field(default_factory=dict)
    fee_rate: Fraction = Fraction(3, 10)  # LP portion of each transaction fee
    fee_per_tx: int = 0

    @property
    def total_shares(self) -> int:
        return sum(self.lp_shares.values())

    def snapshot(self) -> Tuple[int, int]:
        return (self.reserve_x, self.reserve_y)


def exchange(pool: Pool, x: int) -> int:
    """Trade x units of the source currency for y units of the target.

    y is the largest integer keeping (X+x)*(Y-y) >= X*Y; reserves update
    in place. Rejects zero/dust trades and trades against an empty pool.
    """
    if x <= 0:
        raise TradeRejected(f"trade size must be positive, got {x}")
    if pool.reserve_x <= 0 or pool.reserve_y <= 0:
        raise TradeRejected("pool has no liquidity")
    k = pool.reserve_x * pool.reserve_y
    y = pool.reserve_y - _ceil_div(k, pool.reserve_x + x)
    if y <= 0:
        raise TradeRejected(f"output would round to zero for input {x}")
    if y >= pool.reserve_y:
        raise TradeRejected("trade would drain the pool")
    pool.reserve_x += x
    pool.reserve_y -= y
    return y


def add_liquidity(pool: Pool, lp: bytes, amount_x: int, amount_y: int) -> int:
    """Mint shares for a two-sided contribution at the current reserve ratio.

    The first contribution bootstraps the pool and mints shares equal to
    its source-side amount. Later contributions must match the reserve
    ratio within one smallest unit.
    """
    if amount_x <= 0 or amount_y <= 0:
        raise LiquidityError("both contributions must be positive")
    if pool.total_shares == 0:
        minted = amount_x
    else:
        expected_y = Fraction(amount_x * pool.reserve_y, pool.reserve_x)
        if abs(Fraction(amount_y) - expected_y) > 1:
            raise LiquidityError(
                f"contribution ({amount_x}, {amount_y}) is off the reserve ratio "
                f"{pool.reserve_x}:{pool.reserve_y}"
            )
        minted = pool.total_shares * amount_x // pool.reserve_x
        if minted <= 0:
            raise LiquidityError("contribution too small to mint a share")
    pool.reserve_x += amount_x
    pool.reserve_y += amount_y
    pool.invariant_k = pool.reserve_x * pool.reserve_y
    pool.lp_shares[lp] = pool.lp_shares.get(lp, 0) + minted
    return minted


def lp_reward(fee: int, liquidity: int, total_liquidity: int, rate: Fraction) -> int:
    """Fee share for one LP: floor(fee * rate * liquidity / total)."""
    if total_liquidity == 0:
        return 0
    if not 0 < liquidity <= total_liquidity:
        raise ValueError(f"liquidity {liquidity} outside (0, {total_liquidity}]")
    if not 0 <= rate <= 1:
        raise ValueError(f"rate {rate} outside [0, 1]")
    return int(Fraction(fee) * rate * liquidity / total_liquidity)


def operator_reward(fee: int, signer_count: int, rate: Fraction) -> int:
    """Fee share for each of the signer_count operators whose signatures
    entered the final multisig: floor(fee * (1 - rate) / signer_count)."""
    if signer_count < 1:
        raise ValueError("at least one signer required")
    if not 0 <= rate <= 1:
        raise ValueError(f"rate {rate} outside [0, 1]")
    return int(Fraction(fee) * (1 - rate) / signer_count)


@dataclass
class RewardLedger:
    lp_accrued: Dict[bytes, int] = field(default_factory=dict)
    operator_accrued: Dict[bytes, int] = field(default_factory=dict)

    def total_paid(self) -> int:
        return sum(self.lp_accrued.values()) + sum(self.operator_accrued.values())


def distribute_fee(
    ledger: RewardLedger,
    fee: int,
    lp_shares: Dict[bytes, int],
    signers: Iterable[bytes],
    rate: Fraction,
) -> int:
    """Split one transaction fee between LPs (rate portion, pro rata by
    share) and the multisig signers (equal split of the rest).

    Returns the rounding dust, which accrues to the vault. The payout sum
    never exceeds the fee and the deficit is below the payee count.
    """
    total_shares = sum(lp_shares.values())
    paid = 0
    if total_shares > 0:
        for lp in sorted(lp_shares):
            amount = lp_reward(fee, lp_shares[lp], total_shares, rate)
            if amount:
                ledger.lp_accrued[lp] = ledger.lp_accrued.get(lp, 0) + amount
                paid += amount
    signer_list = sorted(set(signers))
    if signer_list:
        each = operator_reward(fee, len(signer_list), rate)
        for op in signer_list:
            if each:
                ledger.operator_accrued[op] = ledger.operator_accrued.get(op, 0) + each
                paid += each
    assert paid <= fee, "fee distribution overpaid"
    return fee - paid
