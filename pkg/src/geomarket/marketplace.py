"""End-to-end marketplace flows: owners advertise, buyers search and purchase.

Two deployments are supported.  In ``sse`` mode a trusted curator (TC)
receives plaintext cells, maintains the encrypted index and sells search
tokens.  In ``hve`` mode owners encrypt their own cells under the trusted
authority's (TA) public key and the TA only ever sees query ranges.

Either way, every advertised object is covered by a vector commitment on
the ledger, its payload sits AES-encrypted in the bulk store under its
OID, and a purchase runs offer -> key delivery -> withdraw or dispute.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .commitment import (
    CommitAux,
    CommitMessage,
    CommitmentParams,
    encode_location_message,
    vc_commit,
    vc_keygen,
    vc_open,
    vc_verify,
)
from .encoding import (
    DomainParams,
    GridLocation,
    SpatialRange,
    decompose_range_query,
    hve_query_value,
    object_keywords,
)
from .hve import (
    HvePublicKey,
    HveSecretKey,
    MatchStats,
    append_flat_record,
    encrypt_object,
    group_setup,
    hve_setup,
    linear_scan,
    query_token,
    read_flat_file,
    token_to_bytes,
    write_flat_file,
)
from .ledger import (
    OFFER_COMPLETED,
    OFFER_REVERSED,
    Ledger,
    LedgerError,
    TransactionRejected,
    Wallet,
)
from .rand import Drbg, as_drbg
from .sse import (
    EncryptedIndex,
    SearchStats,
    SseKeys,
    document_decrypt,
    document_encrypt,
    generate_keys,
    search_terms,
    sse_insert,
    sse_search,
    sse_token,
)
from .store import BulkStore

log = logging.getLogger(__name__)


class MarketError(Exception):
    pass


class AdvertisementRefused(MarketError):
    pass


@dataclass
class MarketConfig:
    params: DomainParams = field(default_factory=lambda: DomainParams(L=64))
    mode: str = "sse"
    tc_object_limit: int = 1000
    commit_batch: int = 20
    commitment_bits: int = 1024
    hve_group_bits: int = 128
    hve_backend: str = "exponent"
    token_fee_usd: float = 0.01
    sse_security_bits: int = 128
    scan_workers: int = 1
    seed: bytes | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "MarketConfig":
        d = dict(d)
        if "params" in d and isinstance(d["params"], dict):
            d["params"] = DomainParams.from_dict(d["params"])
        if isinstance(d.get("seed"), str):
            d["seed"] = d["seed"].encode()
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class ObjectRecord:
    oid: str
    advertised: GridLocation
    aes_key: bytes
    cid: int
    index: int  # 1-based position inside the commitment


@dataclass
class OwnerSession:
    wallet: Wallet
    pp: CommitmentParams
    objects: dict[str, ObjectRecord] = field(default_factory=dict)
    openings: dict[int, CommitAux] = field(default_factory=dict)  # cid -> owner-held aux

    @property
    def address(self) -> str:
        return self.wallet.address


@dataclass
class CuratorState:
    keys: SseKeys
    edb: EncryptedIndex
    iid: str
    wallet: Wallet
    locations: dict[str, GridLocation] = field(default_factory=dict)  # plaintext, TC only
    owner_of: dict[str, str] = field(default_factory=dict)
    per_owner: dict[str, int] = field(default_factory=dict)
    published_digest: str | None = None
    dirty: bool = False


@dataclass
class AuthorityState:
    sk: HveSecretKey
    pk: HvePublicKey
    handle: str
    wallet: Wallet
    tokens_issued: int = 0

    def issue_token(self, r: SpatialRange, params: DomainParams, rng=None):
        """The TA's only query-side entry point: a range in, one token out."""
        tk = query_token(self.sk, r, params, rng=rng)
        self.tokens_issued += 1
        return tk


@dataclass(frozen=True, order=True)
class SearchHit:
    """What a buyer learns per result: the object id and the seller's pseudonym."""

    oid: str
    owner: str


@dataclass
class BuyerSession:
    wallet: Wallet
    tokens: list[bytes] = field(default_factory=list)
    results: list[SearchHit] = field(default_factory=list)

    @property
    def address(self) -> str:
        return self.wallet.address


@dataclass
class PurchaseOutcome:
    oid: str
    offer_id: int
    status: str
    payload: bytes | None
    disputed: bool


# --- sealed key envelopes --------------------------------------------------

ENVELOPE_INFO = b"geomarket key envelope"


def seal_to(public_key: bytes, plaintext: bytes, rng=None) -> bytes:
    """X25519 + HKDF-SHA256 + AES-GCM; output ``eph_pub || nonce || ct``."""
    rng = as_drbg(rng)
    eph = X25519PrivateKey.from_private_bytes(rng.bytes(32))
    shared = eph.exchange(X25519PublicKey.from_public_bytes(public_key))
    eph_pub = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    key = HKDF(hashes.SHA256(), 32, salt=eph_pub + public_key, info=ENVELOPE_INFO).derive(shared)
    nonce = rng.bytes(12)
    return eph_pub + nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def open_sealed(private_key: X25519PrivateKey, blob: bytes) -> bytes:
    eph_pub, nonce, ct = blob[:32], blob[32:44], blob[44:]
    mine = private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    shared = private_key.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    key = HKDF(hashes.SHA256(), 32, salt=eph_pub + mine, info=ENVELOPE_INFO).derive(shared)
    try:
        return AESGCM(key).decrypt(nonce, ct, None)
    except InvalidTag:
        raise MarketError("key envelope failed to open") from None


def _pack_delivery(aes_key: bytes, cid: int, index: int, message: CommitMessage, proof: bytes) -> bytes:
    oid = message.oid.encode()
    return struct.pack(">16sIIQH", aes_key, cid, index, message.word, len(oid)) + oid + proof


def _unpack_delivery(blob: bytes):
    aes_key, cid, index, word, olen = struct.unpack_from(">16sIIQH", blob)
    pos = struct.calcsize(">16sIIQH")
    oid = blob[pos : pos + olen].decode()
    return aes_key, cid, index, CommitMessage(word, oid), blob[pos + olen :]


# --- the marketplace -------------------------------------------------------


class Marketplace:
    def __init__(self, config: MarketConfig | None = None, ledger: Ledger | None = None, store: BulkStore | None = None):
        self.config = config or MarketConfig()
        if self.config.mode not in ("sse", "hve"):
            raise MarketError(f"unknown mode {self.config.mode!r}")
        self.params = self.config.params
        self.ledger = ledger or Ledger()
        self.store = store or BulkStore()
        self.rng = Drbg(self.config.seed)
        self.owners: dict[str, OwnerSession] = {}
        self.buyers: dict[str, BuyerSession] = {}
        self.ground_truth: dict[str, GridLocation] = {}  # where each object really is
        self.curator: CuratorState | None = None
        self.authority: AuthorityState | None = None
        self._flat_cache: tuple[str, list] | None = None
        self._edb_cache: tuple[str, EncryptedIndex] | None = None
        if self.config.mode == "sse":
            self._setup_curator()
        else:
            self._setup_authority()

    # --- participants ---------------------------------------------------------

    def _service_wallet(self, label: str) -> Wallet:
        w = Wallet.generate(self.rng.fork(label).bytes(32))
        self.ledger.fund(w.address, 10**18)
        return w

    def _setup_curator(self):
        wallet = self._service_wallet("tc")
        keys = generate_keys(self.config.sse_security_bits, self.rng.fork("sse-keys").bytes(32))
        iid = "iid-" + self.rng.bytes(16).hex()
        self.curator = CuratorState(keys, EncryptedIndex(self.config.sse_security_bits), iid, wallet)
        self._publish_index()
        self.ledger.publish_index_info(wallet.address, iid.encode())

    def _setup_authority(self):
        wallet = self._service_wallet("ta")
        group = group_setup(self.config.hve_group_bits, self.rng.fork("group").bytes(32), self.config.hve_backend)
        bound = 4 * self.params.L * self.params.L + 1
        sk, pk = hve_setup(group, 1, attribute_bound=bound, rng=self.rng.fork("hve-keys"))
        handle = "flat-" + self.rng.bytes(16).hex()
        self.authority = AuthorityState(sk, pk, handle, wallet)
        self.store.put(handle, write_flat_file(group, []))
        self.ledger.publish_index_info(wallet.address, handle.encode())

    def join_owner(self, wallet: Wallet, fund_wei: int = 0) -> OwnerSession:
        if fund_wei:
            self.ledger.fund(wallet.address, fund_wei)
        pp = vc_keygen(self.config.commitment_bits, self.config.commit_batch, self.rng.fork("pp").bytes(32))
        self.ledger.register_owner(wallet.account)
        self.ledger.set_commitment_params(wallet.address, pp)
        session = OwnerSession(wallet, pp)
        self.owners[wallet.address] = session
        return session

    def join_buyer(self, wallet: Wallet, fund_wei: int = 0) -> BuyerSession:
        if fund_wei:
            self.ledger.fund(wallet.address, fund_wei)
        session = BuyerSession(wallet)
        self.buyers[wallet.address] = session
        return session

    # --- advertising ----------------------------------------------------------

    def _new_oid(self) -> str:
        return "oid-" + self.rng.bytes(16).hex()

    def _commit_batch(self, owner: OwnerSession, cells: list[GridLocation], oids: list[str]) -> int:
        msgs = [encode_location_message(c, oid) for c, oid in zip(cells, oids)]
        cc, aux = vc_commit(owner.pp, msgs, self.rng)
        _, cid = self.ledger.submit_commitment(owner.address, cc, len(msgs))
        owner.openings[cid] = aux
        return cid

    def advertise_batch(
        self,
        owner: OwnerSession,
        items: list[tuple[GridLocation, bytes]],
        true_locations: list[GridLocation] | None = None,
    ) -> list[str]:
        """Advertise up to one commitment batch of objects.

        ``true_locations`` lets a test script an owner who advertises cells
        other than where the objects really are.
        """
        if not items:
            return []
        if len(items) > self.config.commit_batch:
            raise MarketError(f"at most {self.config.commit_batch} objects per batch")
        cells = [loc for loc, _ in items]
        for c in cells:
            c.check(self.params)
        if self.curator is not None:
            have = self.curator.per_owner.get(owner.address, 0)
            if have + len(items) > self.config.tc_object_limit:
                raise AdvertisementRefused(
                    f"curator limit of {self.config.tc_object_limit} objects per owner reached"
                )
        oids = [self._new_oid() for _ in items]
        try:
            cid = self._commit_batch(owner, cells, oids)  # Step 1
        except TransactionRejected as exc:
            raise AdvertisementRefused(str(exc)) from exc
        truths = true_locations or cells
        for n, ((loc, payload), oid) in enumerate(zip(items, oids)):
            key = self.rng.bytes(16)
            self.store.put(oid, document_encrypt(key, payload, oid.encode()))  # Step 3
            owner.objects[oid] = ObjectRecord(oid, loc, key, cid, n + 1)
            self.ground_truth[oid] = truths[n]
        if self.curator is not None:
            self._curator_ingest(owner.address, list(zip(oids, cells)))  # Steps 2 and 4
        else:
            self._owner_hve_encrypt(list(zip(oids, cells)))
        return oids

    def sse_advertise(self, owner: OwnerSession, loc: GridLocation, payload: bytes, true_location=None) -> str:
        self._require("sse")
        return self.advertise_batch(owner, [(loc, payload)], [true_location] if true_location else None)[0]

    def hve_advertise(self, owner: OwnerSession, loc: GridLocation, payload: bytes, true_location=None) -> str:
        self._require("hve")
        return self.advertise_batch(owner, [(loc, payload)], [true_location] if true_location else None)[0]

    def _require(self, mode: str):
        if self.config.mode != mode:
            raise MarketError(f"this deployment runs in {self.config.mode} mode")

    def _curator_ingest(self, owner: str, items: list[tuple[str, GridLocation]]):
        tc = self.curator
        for oid, loc in items:
            tc.locations[oid] = loc
            tc.owner_of[oid] = owner
            sse_insert(tc.edb, tc.keys, oid, object_keywords(loc, self.params))
        tc.per_owner[owner] = tc.per_owner.get(owner, 0) + len(items)
        tc.dirty = True

    def _publish_index(self):
        tc = self.curator
        tc.published_digest = self.store.put_chunked(tc.iid, tc.edb.to_bytes())
        tc.dirty = False

    def _owner_hve_encrypt(self, items: list[tuple[str, GridLocation]]):
        # runs on the owner's side; only ciphertexts reach the store
        ta = self.authority
        flat = self.store.get(ta.handle)
        for oid, loc in items:
            bundle = encrypt_object(ta.pk, oid, loc, self.params, rng=self.rng)
            flat = append_flat_record(ta.pk.group, flat, bundle)
        self.store.put(ta.handle, flat)

    def owner_pseudonym(self, oid: str) -> str:
        for addr, session in self.owners.items():
            if oid in session.objects:
                return addr
        raise MarketError(f"unknown object {oid}")

    # --- searching ------------------------------------------------------------

    def _charge_token_fee(self, buyer: BuyerSession, payee: Wallet, tokens: int):
        fee = self.ledger.schedule.usd_to_wei(self.config.token_fee_usd) * tokens
        if fee:
            self.ledger.transfer(buyer.address, payee.address, fee, memo=f"{tokens} search tokens")

    def _load_index(self) -> EncryptedIndex:
        tc = self.curator
        if tc.dirty:
            self._publish_index()
        digest = tc.published_digest
        if self._edb_cache is None or self._edb_cache[0] != digest:
            self._edb_cache = (digest, EncryptedIndex.from_bytes(self.store.get_chunked(tc.iid)))
        return self._edb_cache[1]

    def buyer_search_sse(self, buyer: BuyerSession, r: SpatialRange, stats: SearchStats | None = None) -> list[SearchHit]:
        self._require("sse")
        tc = self.curator
        r.check(self.params)
        # Steps 5-6: the buyer sends the plaintext range, the TC returns tokens
        terms = search_terms(decompose_range_query(r, self.params))
        tokens = [sse_token(tc.keys, t) for t in terms]
        self._charge_token_fee(buyer, tc.wallet, len(tokens))
        buyer.tokens += [t.to_bytes() for t in tokens]
        # Step 7: search the index fetched from bulk storage
        edb = self._load_index()
        found: set[str] = set()
        for t in tokens:
            found |= sse_search(edb, t, stats)
        hits = sorted(SearchHit(oid, tc.owner_of[oid]) for oid in found)
        buyer.results += hits
        return hits

    def buyer_search_hve(
        self, buyer: BuyerSession, r: SpatialRange, stats: MatchStats | None = None, workers: int | None = None
    ) -> list[SearchHit]:
        self._require("hve")
        ta = self.authority
        hve_query_value(r, self.params)  # rejects non-square or unaligned ranges before any token exists
        tk = ta.issue_token(r, self.params, rng=self.rng)
        self._charge_token_fee(buyer, ta.wallet, 1)
        buyer.tokens.append(token_to_bytes(ta.pk.group, tk))
        flat = self._load_flat()
        found = linear_scan(ta.pk, flat, tk, workers or self.config.scan_workers, stats)
        hits = sorted(SearchHit(oid, self.owner_pseudonym(oid)) for oid in found)
        buyer.results += hits
        return hits

    def _load_flat(self):
        ta = self.authority
        digest = self.store.stat(ta.handle).digest
        if self._flat_cache is None or self._flat_cache[0] != digest:
            self._flat_cache = (digest, read_flat_file(ta.pk.group, self.store.get(ta.handle)))
        return self._flat_cache[1]

    # --- purchasing -----------------------------------------------------------

    def deliver(self, owner: OwnerSession, offer_id: int) -> None:
        """Owner side of Step 8: put the AES key and the location opening in an envelope."""
        offer = self.ledger.state.offers[offer_id]
        rec = owner.objects[offer.oid]
        aux = owner.openings[rec.cid]
        msg = aux.messages[rec.index - 1]
        proof = vc_open(aux, msg, rec.index)
        buyer_pub = self.buyers[offer.buyer].wallet.public_key
        envelope = seal_to(buyer_pub, _pack_delivery(rec.aes_key, rec.cid, rec.index, msg, proof), self.rng)
        self.ledger.deliver_key(owner.address, offer_id, envelope)

    def purchase(self, buyer: BuyerSession, oid: str, price_wei: int) -> PurchaseOutcome:
        owner = self.owners[self.owner_pseudonym(oid)]
        _, offer_id = self.ledger.make_offer(buyer.address, owner.address, oid, price_wei)
        self.deliver(owner, offer_id)
        # Step 9: open the envelope, fetch and decrypt the object
        blob = open_sealed(buyer.wallet.private_key, self.ledger.key_envelope(buyer.address, offer_id))
        aes_key, cid, index, msg, proof = _unpack_delivery(blob)
        payload = document_decrypt(aes_key, self.store.get(oid), oid.encode())
        observed = self.ground_truth[oid]
        pp = self.ledger.commitment_params(owner.address)
        record = self.ledger.state.commitments[cid]
        opening_ok = msg.oid == oid and vc_verify(pp, record.cc, msg, index, proof)
        if opening_ok and (msg.x, msg.y) != (observed.x, observed.y):
            self.ledger.dispute(buyer.address, offer_id, cid, msg, index, proof, observed)
            status = self.ledger.state.offers[offer_id].status
            return PurchaseOutcome(oid, offer_id, status, payload, True)
        if not opening_ok:
            log.warning("opening for %s did not verify; buyer has nothing to dispute with", oid)
        self.ledger.advance(self.ledger.policy.dispute_window_blocks)
        self.ledger.withdraw_payment(owner.address, offer_id)
        return PurchaseOutcome(oid, offer_id, self.ledger.state.offers[offer_id].status, payload, False)

    # --- audits ---------------------------------------------------------------

    def audit_commitments(self) -> dict[str, int]:
        """For every advertised OID, count on-ledger commitments whose opening verifies."""
        out = {}
        for owner in self.owners.values():
            pp = self.ledger.commitment_params(owner.address)
            for oid, rec in owner.objects.items():
                msg = encode_location_message(rec.advertised, oid)
                hits = 0
                for cid, crec in self.ledger.state.commitments.items():
                    aux = owner.openings.get(cid)
                    if crec.owner != owner.address or aux is None or msg not in aux.messages:
                        continue
                    i = aux.messages.index(msg) + 1
                    hits += vc_verify(pp, crec.cc, msg, i, vc_open(aux, msg, i))
                out[oid] = hits
        return out



# --- declarative scenarios -------------------------------------------------


def run_scenario(script: dict) -> dict:
    """Run a list of actor actions and return a JSON-friendly summary.

    Actions: ``owner``/``buyer`` (join, with ``fund_eth``), ``advertise``
    (``owner``, ``cell``, optional ``true_cell`` and ``payload``),
    ``search`` (``buyer``, ``range``), ``purchase`` (``buyer``, ``object``
    as an index into advertised objects, ``price_usd``) and ``advance``
    (``days`` or ``blocks``).
    """
    config = MarketConfig.from_dict(script.get("config", {}))
    market = Marketplace(config)
    ledger = market.ledger
    people: dict[str, object] = {}
    oids: list[str] = []
    events = []
    for step, action in enumerate(script.get("actions", [])):
        kind = action["do"]
        name = action.get("name") or action.get("owner") or action.get("buyer")
        try:
            if kind in ("owner", "buyer"):
                wallet = Wallet.generate(f"{config.seed!r}:{name}")
                fund = int(action.get("fund_eth", 1) * 10**18)
                join = market.join_owner if kind == "owner" else market.join_buyer
                people[name] = join(wallet, fund)
                events.append({"step": step, "do": kind, "name": name, "address": wallet.address})
            elif kind == "advertise":
                owner = people[action["owner"]]
                cell = GridLocation(*action["cell"])
                true = GridLocation(*action["true_cell"]) if "true_cell" in action else None
                payload = action.get("payload", f"object {len(oids)}").encode()
                oid = market.advertise_batch(owner, [(cell, payload)], [true] if true else None)[0]
                oids.append(oid)
                events.append({"step": step, "do": kind, "oid": oid})
            elif kind == "search":
                buyer = people[action["buyer"]]
                r = SpatialRange(*action["range"])
                search = market.buyer_search_sse if config.mode == "sse" else market.buyer_search_hve
                hits = search(buyer, r)
                events.append({"step": step, "do": kind, "hits": [h.oid for h in hits]})
            elif kind == "purchase":
                buyer = people[action["buyer"]]
                price = ledger.schedule.usd_to_wei(action.get("price_usd", 10.0))
                out = market.purchase(buyer, oids[action["object"]], price)
                events.append({"step": step, "do": kind, "oid": out.oid, "status": out.status,
                               "disputed": out.disputed, "payload_bytes": len(out.payload or b"")})
            elif kind == "advance":
                blocks = action.get("blocks", 0) + action.get("days", 0) * ledger.policy.blocks_per_day
                ledger.advance(blocks)
                events.append({"step": step, "do": kind, "height": ledger.height})
            else:
                raise MarketError(f"unknown action {kind!r}")
        except (MarketError, LedgerError, ValueError) as exc:
            events.append({"step": step, "do": kind, "error": str(exc)})
    gas = sum(t.gas for t in ledger.log)
    return {
        "mode": config.mode,
        "events": events,
        "transactions": len(ledger.log),
        "gas": gas,
        "usd": round(ledger.usd_cost(gas), 6),
        "completed": sum(o.status == OFFER_COMPLETED for o in ledger.state.offers.values()),
        "reversed": sum(o.status == OFFER_REVERSED for o in ledger.state.offers.values()),
    }


def load_scenario(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
