"""Deterministic single-node ledger with gas metering and the marketplace contract.

All value is held in integer wei.  Every transaction pays ``gas * gas_price``
to a fee-collector account, including transactions the contract rejects,
so the total of balances, escrows and forfeited deposits never changes.
Simulated time is the block height; ``advance`` moves it forward.
"""

from __future__ import annotations

import copy
import hashlib
import json
import threading
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import IO, Iterable

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .commitment import CommitMessage, CommitmentParams, vc_verify
from .encoding import GridLocation
from .rand import as_drbg

WEI_PER_ETHER = 10**18
WEI_PER_GWEI = 10**9

OP_REGISTER = "register_owner"
OP_SET_PARAMS = "set_commitment_params"
OP_INDEX_INFO = "publish_index_info"
OP_COMMIT = "submit_commitment"
OP_OFFER = "make_offer"
OP_DELIVER = "deliver_key"
OP_WITHDRAW = "withdraw_payment"
OP_DISPUTE = "dispute"
OP_REFUND = "refund_deposit"
OP_TRANSFER = "transfer"

DEFAULT_GAS = {
    OP_REGISTER: 42150,
    OP_SET_PARAMS: 327590,
    OP_INDEX_INFO: 177160,
    OP_COMMIT: 83092,
    OP_OFFER: 297478,
    OP_WITHDRAW: 40649,
    # not measured anywhere; sized from the storage each call writes
    OP_DELIVER: 64000,
    OP_DISPUTE: 95000,
    OP_REFUND: 29000,
    OP_TRANSFER: 21000,
}

# Minimises the larger USD error of the owner-setup and purchase totals.
DEFAULT_GAS_PRICE_WEI = 2_186_363_000
DEFAULT_ETHER_USD = 133.0
DEFAULT_BLOCKS_PER_DAY = 5760

OFFER_OPEN = "open"
OFFER_KEY_DELIVERED = "key-delivered"
OFFER_COMPLETED = "completed"
OFFER_DISPUTED = "disputed"
OFFER_REVERSED = "reversed"

DEPOSIT_ESCROWED = "escrowed"
DEPOSIT_REFUNDED = "refunded"
DEPOSIT_FORFEITED = "forfeited"


class LedgerError(Exception):
    pass


class InsufficientFunds(LedgerError):
    """The sender cannot even pay for gas; nothing is recorded."""


class TransactionRejected(LedgerError):
    """The contract reverted; gas was charged and the attempt is on the log."""

    def __init__(self, message: str, tx: "LedgerTransaction"):
        super().__init__(message)
        self.tx = tx


@dataclass
class GasSchedule:
    costs: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_GAS))
    gas_price_wei: int = DEFAULT_GAS_PRICE_WEI
    ether_usd: float = DEFAULT_ETHER_USD

    def __post_init__(self):
        for op, gas in self.costs.items():
            if gas <= 0:
                raise LedgerError(f"gas cost of {op} must be positive")
        if self.gas_price_wei <= 0 or self.ether_usd <= 0:
            raise LedgerError("gas price and ether rate must be positive")

    def gas(self, op: str) -> int:
        return self.costs[op]

    def usd(self, gas: int) -> float:
        return gas * self.gas_price_wei * self.ether_usd / WEI_PER_ETHER

    def usd_to_wei(self, usd: float) -> int:
        # round up so a "$1 deposit" is never a hair short
        wei = Fraction(str(usd)) / Fraction(str(self.ether_usd)) * WEI_PER_ETHER
        return -(-wei.numerator // wei.denominator)

    @classmethod
    def from_dict(cls, d: dict) -> "GasSchedule":
        costs = dict(DEFAULT_GAS)
        costs.update(d.get("costs", {}))
        price = d.get("gas_price_wei")
        if price is None and "gas_price_gwei" in d:
            price = round(Fraction(str(d["gas_price_gwei"])) * WEI_PER_GWEI)
        return cls(costs, int(price or DEFAULT_GAS_PRICE_WEI), float(d.get("ether_usd", DEFAULT_ETHER_USD)))

    def to_dict(self) -> dict:
        return {"costs": dict(self.costs), "gas_price_wei": self.gas_price_wei, "ether_usd": self.ether_usd}


@dataclass
class Policy:
    deposit_usd: float = 1.0
    daily_commit_cap: int = 50
    max_batch: int = 20
    blocks_per_day: int = DEFAULT_BLOCKS_PER_DAY
    refund_after_blocks: int | None = None
    dispute_window_blocks: int | None = None

    def __post_init__(self):
        if self.refund_after_blocks is None:
            self.refund_after_blocks = self.blocks_per_day
        if self.dispute_window_blocks is None:
            self.dispute_window_blocks = self.blocks_per_day

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class Account:
    address: str
    public_key: bytes


@dataclass
class Wallet:
    """An X25519 key pair; the account address is derived from the public key."""

    private_key: X25519PrivateKey

    @classmethod
    def generate(cls, seed=None) -> "Wallet":
        return cls(X25519PrivateKey.from_private_bytes(as_drbg(seed).bytes(32)))

    @property
    def public_key(self) -> bytes:
        return self.private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    @property
    def account(self) -> Account:
        return Account(address_of(self.public_key), self.public_key)

    @property
    def address(self) -> str:
        return self.account.address


def address_of(public_key: bytes) -> str:
    return hashlib.sha256(public_key).digest()[:20].hex()


@dataclass(frozen=True)
class LedgerTransaction:
    seq: int
    block: int
    sender: str
    op: str
    payload_hash: str
    gas: int
    status: str  # "ok" or "reverted"
    error: str = ""


@dataclass(frozen=True)
class CommitmentRecord:
    cid: int
    owner: str
    cc: bytes
    count: int
    block: int
    deposit_wei: int


@dataclass
class Offer:
    offer_id: int
    buyer: str
    owner: str
    oid: str
    amount: int
    status: str
    opened_block: int
    delivered_block: int | None = None
    envelope: bytes | None = None


@dataclass
class ContractState:
    owners: dict[str, bytes] = field(default_factory=dict)  # address -> public key
    params: dict[str, bytes] = field(default_factory=dict)  # owner -> serialized pp
    index_info: dict[str, list[bytes]] = field(default_factory=dict)  # publisher -> handles
    commitments: dict[int, CommitmentRecord] = field(default_factory=dict)
    deposits: dict[int, str] = field(default_factory=dict)
    offers: dict[int, Offer] = field(default_factory=dict)
    daily_commits: dict[tuple[str, int], int] = field(default_factory=dict)


def _payload_hash(parts: Iterable) -> str:
    h = hashlib.sha256()
    for p in parts:
        b = p if isinstance(p, bytes) else repr(p).encode()
        h.update(len(b).to_bytes(4, "big") + b)
    return h.hexdigest()


class Ledger:
    """Single-writer contract host; every public mutator is one transaction."""

    FEE_COLLECTOR = "fee-collector"

    def __init__(self, schedule: GasSchedule | None = None, policy: Policy | None = None):
        self.schedule = schedule or GasSchedule()
        self.policy = policy or Policy()
        self.height = 0
        self.balances: dict[str, int] = {self.FEE_COLLECTOR: 0}
        self.escrow: dict[int, int] = {}  # offer id -> wei
        self.deposit_escrow: dict[int, int] = {}  # commitment id -> wei
        self.forfeited = 0
        self.state = ContractState()
        self.log: list[LedgerTransaction] = []
        self._next_cid = 0
        self._next_offer = 0
        self._lock = threading.RLock()

    # --- accounts and time ---------------------------------------------------

    def fund(self, address: str, wei: int) -> None:
        """Mint funds into an account (genesis allocation, not a transaction)."""
        if wei < 0:
            raise LedgerError("cannot mint a negative amount")
        with self._lock:
            self.balances[address] = self.balances.get(address, 0) + wei

    def balance(self, address: str) -> int:
        return self.balances.get(address, 0)

    def advance(self, blocks: int = 1) -> int:
        if blocks < 0:
            raise LedgerError("time only moves forward")
        with self._lock:
            self.height += blocks
            return self.height

    @property
    def day(self) -> int:
        return self.height // self.policy.blocks_per_day

    def total_funds(self) -> int:
        return sum(self.balances.values()) + sum(self.escrow.values()) + sum(self.deposit_escrow.values()) + self.forfeited

    def snapshot(self) -> ContractState:
        with self._lock:
            return copy.deepcopy(self.state)

    # --- transaction plumbing ------------------------------------------------

    def _run(self, sender: str, op: str, payload: tuple, body):
        with self._lock:
            gas = self.schedule.gas(op)
            fee = gas * self.schedule.gas_price_wei
            if self.balance(sender) < fee:
                raise InsufficientFunds(f"{sender} cannot pay {fee} wei of gas for {op}")
            self.balances[sender] -= fee
            self.balances[self.FEE_COLLECTOR] += fee
            try:
                result = body()
            except TransactionRejected as exc:
                tx = self._record(sender, op, payload, gas, "reverted", str(exc))
                raise TransactionRejected(str(exc), tx) from None
            tx = self._record(sender, op, payload, gas, "ok")
            return tx, result

    def _record(self, sender, op, payload, gas, status, error=""):
        tx = LedgerTransaction(len(self.log), self.height, sender, op, _payload_hash(payload), gas, status, error)
        self.log.append(tx)
        return tx

    @staticmethod
    def _reject(msg: str):
        raise TransactionRejected(msg, None)  # type: ignore[arg-type]

    def _require_owner(self, address: str):
        if address not in self.state.owners:
            self._reject(f"{address} is not a registered owner")

    def _offer(self, offer_id: int) -> Offer:
        offer = self.state.offers.get(offer_id)
        if offer is None:
            self._reject(f"no offer {offer_id}")
        return offer

    # --- contract operations -------------------------------------------------

    def register_owner(self, account: Account) -> LedgerTransaction:
        def body():
            if account.address in self.state.owners:
                self._reject("owner already registered")
            self.state.owners[account.address] = account.public_key

        return self._run(account.address, OP_REGISTER, (account.public_key,), body)[0]

    def set_commitment_params(self, owner: str, pp: CommitmentParams) -> LedgerTransaction:
        blob = pp.to_bytes()

        def body():
            self._require_owner(owner)
            self.state.params[owner] = blob

        return self._run(owner, OP_SET_PARAMS, (blob,), body)[0]

    def commitment_params(self, owner: str) -> CommitmentParams | None:
        blob = self.state.params.get(owner)
        return CommitmentParams.from_bytes(blob) if blob else None

    def params_digest(self, owner: str) -> bytes | None:
        blob = self.state.params.get(owner)
        return hashlib.sha256(blob).digest() if blob else None

    def publish_index_info(self, publisher: str, handle: bytes) -> LedgerTransaction:
        def body():
            self.state.index_info.setdefault(publisher, []).append(bytes(handle))

        return self._run(publisher, OP_INDEX_INFO, (handle,), body)[0]

    def index_handles(self, publisher: str) -> list[bytes]:
        return list(self.state.index_info.get(publisher, []))

    def deposit_wei(self) -> int:
        return self.schedule.usd_to_wei(self.policy.deposit_usd)

    def submit_commitment(self, owner: str, cc: bytes, count: int, deposit: int | None = None) -> tuple[LedgerTransaction, int]:
        """Record ``cc`` covering ``count`` objects and escrow the deposit; returns the commitment id."""
        deposit = self.deposit_wei() if deposit is None else deposit

        def body():
            self._require_owner(owner)
            if owner not in self.state.params:
                self._reject("owner has not published commitment parameters")
            if not 1 <= count <= self.policy.max_batch:
                self._reject(f"batch of {count} objects outside 1..{self.policy.max_batch}")
            if deposit < self.deposit_wei():
                self._reject("deposit below the policy minimum")
            key = (owner, self.day)
            if self.state.daily_commits.get(key, 0) >= self.policy.daily_commit_cap:
                self._reject("daily commitment cap reached")
            if self.balance(owner) < deposit:
                self._reject("balance cannot cover the deposit")
            cid = self._next_cid
            self._next_cid += 1
            self.balances[owner] -= deposit
            self.deposit_escrow[cid] = deposit
            self.state.commitments[cid] = CommitmentRecord(cid, owner, bytes(cc), count, self.height, deposit)
            self.state.deposits[cid] = DEPOSIT_ESCROWED
            self.state.daily_commits[key] = self.state.daily_commits.get(key, 0) + 1
            return cid

        return self._run(owner, OP_COMMIT, (cc, count, deposit), body)

    def refund_deposit(self, owner: str, cid: int) -> LedgerTransaction:
        def body():
            rec = self.state.commitments.get(cid)
            if rec is None or rec.owner != owner:
                self._reject("not this owner's commitment")
            if self.state.deposits[cid] != DEPOSIT_ESCROWED:
                self._reject(f"deposit already {self.state.deposits[cid]}")
            if self.height < rec.block + self.policy.refund_after_blocks:
                self._reject("refund window has not elapsed")
            self.balances[owner] += self.deposit_escrow.pop(cid)
            self.state.deposits[cid] = DEPOSIT_REFUNDED

        return self._run(owner, OP_REFUND, (cid,), body)[0]

    def make_offer(self, buyer: str, owner: str, oid: str, amount: int) -> tuple[LedgerTransaction, int]:
        def body():
            self._require_owner(owner)
            if amount <= 0:
                self._reject("offer amount must be positive")
            for o in self.state.offers.values():
                if o.buyer == buyer and o.oid == oid and o.status in (OFFER_OPEN, OFFER_KEY_DELIVERED):
                    self._reject("buyer already has a live offer on this object")
            if self.balance(buyer) < amount:
                self._reject("balance cannot cover the offer")
            oid_ = self._next_offer
            self._next_offer += 1
            self.balances[buyer] -= amount
            self.escrow[oid_] = amount
            self.state.offers[oid_] = Offer(oid_, buyer, owner, oid, amount, OFFER_OPEN, self.height)
            return oid_

        return self._run(buyer, OP_OFFER, (owner, oid, amount), body)

    def deliver_key(self, owner: str, offer_id: int, envelope: bytes) -> LedgerTransaction:
        def body():
            offer = self._offer(offer_id)
            if offer.owner != owner:
                self._reject("only the selling owner can deliver the key")
            if offer.status != OFFER_OPEN:
                self._reject(f"offer is {offer.status}")
            offer.status = OFFER_KEY_DELIVERED
            offer.delivered_block = self.height
            offer.envelope = bytes(envelope)

        return self._run(owner, OP_DELIVER, (offer_id, envelope), body)[0]

    def key_envelope(self, reader: str, offer_id: int) -> bytes:
        """The envelope is only handed to the offer's buyer."""
        offer = self.state.offers.get(offer_id)
        if offer is None or offer.envelope is None:
            raise LedgerError("no key delivered for this offer")
        if reader != offer.buyer:
            raise LedgerError("envelope is readable by the buyer only")
        return offer.envelope

    def withdraw_payment(self, owner: str, offer_id: int) -> LedgerTransaction:
        def body():
            offer = self._offer(offer_id)
            if offer.owner != owner:
                self._reject("only the selling owner can withdraw")
            if offer.status != OFFER_KEY_DELIVERED:
                self._reject(f"offer is {offer.status}")
            if self.height < offer.delivered_block + self.policy.dispute_window_blocks:
                self._reject("dispute window still open")
            self.balances[owner] = self.balance(owner) + self.escrow.pop(offer_id)
            offer.status = OFFER_COMPLETED

        return self._run(owner, OP_WITHDRAW, (offer_id,), body)[0]

    def dispute(
        self,
        buyer: str,
        offer_id: int,
        cid: int,
        message: CommitMessage,
        index: int,
        proof: bytes,
        observed: GridLocation,
    ) -> LedgerTransaction:
        """Reverse a purchase whose committed cell differs from the observed one.

        ``message``/``index``/``proof`` is the owner's opening of the advertised
        location (delivered with the key); ``observed`` is the cell the buyer
        found in the decrypted object.
        """

        def body():
            offer = self._offer(offer_id)
            if offer.buyer != buyer:
                self._reject("only the offer's buyer can dispute")
            if offer.status != OFFER_KEY_DELIVERED:
                self._reject(f"offer is {offer.status}")
            if self.height >= offer.delivered_block + self.policy.dispute_window_blocks:
                self._reject("dispute window closed")
            rec = self.state.commitments.get(cid)
            if rec is None or rec.owner != offer.owner:
                self._reject("commitment does not belong to the seller")
            if message.oid != offer.oid:
                self._reject("opening is for a different object")
            pp = self.commitment_params(offer.owner)
            if not vc_verify(pp, rec.cc, message, index, proof):
                self._reject("opening does not verify against the commitment")
            if (message.x, message.y) == (observed.x, observed.y):
                self._reject("committed location matches the object")
            offer.status = OFFER_REVERSED
            self.balances[buyer] += self.escrow.pop(offer_id)
            if self.state.deposits[cid] == DEPOSIT_ESCROWED:
                self.forfeited += self.deposit_escrow.pop(cid)
                self.state.deposits[cid] = DEPOSIT_FORFEITED

        payload = (offer_id, cid, message.encode(), index, proof, observed.x, observed.y)
        return self._run(buyer, OP_DISPUTE, payload, body)[0]

    def transfer(self, sender: str, recipient: str, amount: int, memo: str = "") -> LedgerTransaction:
        def body():
            if amount <= 0 or self.balance(sender) < amount:
                self._reject("invalid transfer amount")
            self.balances[sender] -= amount
            self.balances[recipient] = self.balance(recipient) + amount

        return self._run(sender, OP_TRANSFER, (recipient, amount, memo), body)[0]

    # --- reporting -----------------------------------------------------------

    def usd_cost(self, tx: LedgerTransaction | int) -> float:
        gas = tx if isinstance(tx, int) else tx.gas
        return self.schedule.usd(gas)

    def export_log(self, out: IO[str]) -> int:
        for tx in self.log:
            out.write(json.dumps(asdict(tx), sort_keys=True) + "\n")
        return len(self.log)


def usd_cost(tx: LedgerTransaction | int | None, schedule: GasSchedule | None = None) -> float:
    """USD for a transaction or a raw gas amount; off-chain work (``None``) is free."""
    if tx is None:
        return 0.0
    return (schedule or GasSchedule()).usd(tx if isinstance(tx, int) else tx.gas)
