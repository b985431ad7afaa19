"""Model-hash registry and reward token, as a deterministic state machine.

Mirrors the ``BlockchainFL`` Solidity contract: each address owns a 1-based
sequence of uploaded hash links (``ipfsMappingAddress[addr][timeUploaded + 1]``)
and an upload counter (``addressUploadedTime``). On top of that sit a token
balance table fed by a treasury, and the operator's list of published global
models.

State only changes through ``apply_*`` calls made while a block is mined.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

from .blobstore import ContentHash

ADDRESS_LEN = 20
ZERO_ADDRESS = bytes(ADDRESS_LEN)


def address_from_label(label: str) -> bytes:
    return hashlib.sha256(b"fedchain-address:" + label.encode()).digest()[:ADDRESS_LEN]


def render_address(addr: bytes) -> str:
    return "0x" + addr.hex()


def parse_address(text: str) -> bytes:
    raw = bytes.fromhex(text[2:] if text.startswith("0x") else text)
    if len(raw) != ADDRESS_LEN:
        raise ValueError(f"address must be {ADDRESS_LEN} bytes: {text!r}")
    return raw


TREASURY_ADDRESS = address_from_label("treasury")
MONITOR_ADDRESS = address_from_label("monitor")


class ContractError(Exception):
    pass


class InvalidAddress(ContractError):
    pass


class EmptyPayload(ContractError):
    pass


class NotFound(ContractError, KeyError):
    pass


class InsufficientBalance(ContractError):
    pass


class UnauthorizedMint(ContractError):
    pass


class UnauthorizedPublisher(ContractError):
    pass


class InvalidPayload(ContractError):
    pass


@dataclass(frozen=True)
class Event:
    name: str
    height: int
    fields: tuple[tuple[str, object], ...]

    def get(self, key):
        return dict(self.fields)[key]

    def to_dict(self) -> dict:
        return {"name": self.name, "height": self.height, **dict(self.fields)}


@dataclass
class ContractState:
    model_hashes: dict[tuple[bytes, int], str] = field(default_factory=dict)
    upload_counts: dict[bytes, int] = field(default_factory=dict)
    balances: dict[bytes, int] = field(default_factory=dict)
    global_model_history: list[str] = field(default_factory=list)
    event_log: list[Event] = field(default_factory=list)
    total_minted: int = 0
    treasury: bytes = TREASURY_ADDRESS
    publisher: bytes = MONITOR_ADDRESS

    def copy(self) -> ContractState:
        return copy.deepcopy(self)

    def balance_of(self, addr: bytes) -> int:
        return self.balances.get(addr, 0)

    def uploads_of(self, addr: bytes) -> list[str]:
        return [self.model_hashes[(addr, i)] for i in range(1, self.upload_counts.get(addr, 0) + 1)]

    def to_dict(self) -> dict:
        return {
            "treasury": render_address(self.treasury),
            "publisher": render_address(self.publisher),
            "uploads": {
                render_address(a): self.uploads_of(a) for a in sorted(self.upload_counts)
            },
            "balances": {render_address(a): b for a, b in sorted(self.balances.items())},
            "global_model_history": list(self.global_model_history),
            "total_minted": self.total_minted,
            "events": [e.to_dict() for e in self.event_log],
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


def apply_update_model_hash(state: ContractState, sender: bytes, payload: bytes, height: int) -> Event:
    if sender == ZERO_ADDRESS:
        raise InvalidAddress("Invalid address")
    if not payload:
        raise EmptyPayload("hash payload is empty")
    index = state.upload_counts.get(sender, 0) + 1
    state.model_hashes[(sender, index)] = payload.hex()
    state.upload_counts[sender] = index
    event = Event("ModelUploaded", height, (("sender", render_address(sender)), ("index", index)))
    state.event_log.append(event)
    return event


def get_model_hash(state: ContractState, address: bytes, index: int) -> str:
    try:
        return state.model_hashes[(address, index)]
    except KeyError:
        raise NotFound(f"no upload #{index} for {render_address(address)}") from None


def apply_token_transfer(
    state: ContractState, sender: bytes, to: bytes, amount: int, height: int, mint: bool = False
) -> Event | None:
    """Move ``amount`` tokens; a treasury ``mint`` creates them instead.

    A zero-amount transfer succeeds without touching state and emits nothing.
    """
    if amount < 0:
        raise InvalidPayload("negative amount")
    if to == ZERO_ADDRESS:
        raise InvalidAddress("Invalid address")
    if mint and sender != state.treasury:
        raise UnauthorizedMint(f"{render_address(sender)} is not the treasury")
    if amount == 0:
        return None
    if mint:
        state.total_minted += amount
        name = "RewardMinted"
    else:
        if state.balance_of(sender) < amount:
            raise InsufficientBalance(
                f"{render_address(sender)} holds {state.balance_of(sender)}, needs {amount}"
            )
        state.balances[sender] -= amount
        name = "Transfer"
    state.balances[to] = state.balance_of(to) + amount
    event = Event(
        name, height,
        (("from", render_address(sender)), ("to", render_address(to)), ("amount", amount)),
    )
    state.event_log.append(event)
    return event


def apply_publish_global(state: ContractState, sender: bytes, cid: str, height: int) -> Event:
    if sender != state.publisher:
        raise UnauthorizedPublisher(f"{render_address(sender)} may not publish global models")
    try:
        ContentHash.parse(cid)
    except ValueError as exc:
        raise InvalidPayload(str(exc)) from None
    state.global_model_history.append(cid)
    event = Event("GlobalPublished", height, (("cid", cid), ("round", len(state.global_model_history))))
    state.event_log.append(event)
    return event
