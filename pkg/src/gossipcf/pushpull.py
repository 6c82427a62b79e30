"""Generic epidemic push-pull engine.

Every peer keeps a bounded cache of timestamped data items and periodically
exchanges its cache with one neighbor.  After the push/pull both sides run,
each with its *own* utility function, the three exchangeable steps:

    merge      -> one surviving version per item id
    select     -> keep the k most useful items
    neighbors  -> adapt the neighborhood from the selected cache

Variants (anti-entropy replication, news dissemination, similarity-driven
neighborhood formation) differ only in the :class:`ProtocolSpec` they plug
into :func:`run_exchange`.

All tie-breaks are deterministic so that seeded runs reproduce exactly:
merge ties fall back to larger timestamp and then to the merging peer's own
copy; selection ties fall back to smaller source peer id, then smaller item
id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

PeerId = int
Timestamp = int


class DataItem(NamedTuple):
    """One version of a piece of disseminated data.

    ``id`` identifies the datum across versions, ``src`` the peer where it
    entered the network, ``timestamp`` the (logical) creation time of this
    version.  For protocols that disseminate one item per peer, ``id == src``.
    """

    id: int
    src: PeerId
    timestamp: Timestamp
    payload: Any = None


# A cache is an ordered, immutable collection of items.  Capacity is a
# protocol parameter enforced by select_top_k rather than stored per cache.
Cache = tuple[DataItem, ...]

# Utility of a single item, evaluated from one peer's perspective.
Utility = Callable[[DataItem], float]


class ResponderUnreachable(Exception):
    """The chosen exchange partner is not alive; caller should re-draw."""


def merge_freshest(cache_a: Cache, cache_b: Cache) -> Cache:
    """Union of both caches keeping, per item id, the most recent version.

    Timestamp ties prefer ``cache_a``'s copy, so a merging peer keeps its own
    version when versions are equally fresh.
    """
    best: dict[int, tuple[int, int, DataItem]] = {}
    for side, cache in ((0, cache_b), (1, cache_a)):
        for item in cache:
            key = (item.timestamp, side, item)
            cur = best.get(item.id)
            if cur is None or key[:2] > cur[:2]:
                best[item.id] = key
    return tuple(entry[2] for entry in best.values())


def merge_by_utility(cache_a: Cache, cache_b: Cache, u: Utility) -> Cache:
    """Union of both caches keeping, per item id, the most useful version.

    ``u`` must be the merging peer's own utility assignment.  Utility ties
    fall back to larger timestamp, then to ``cache_a``'s copy.
    """
    best: dict[int, tuple[float, int, int, DataItem]] = {}
    for side, cache in ((0, cache_b), (1, cache_a)):
        for item in cache:
            key = (u(item), item.timestamp, side, item)
            cur = best.get(item.id)
            if cur is None or key[:3] > cur[:3]:
                best[item.id] = key
    return tuple(entry[3] for entry in best.values())


def select_top_k(cache: Cache, u: Utility, k: int) -> Cache:
    """The k most useful items, in descending utility order.

    Expects an id-unique (merged) cache.  Utility ties are broken by smaller
    source peer id, then smaller item id.
    """
    if k < 1:
        raise ValueError("k must be positive")
    ranked = sorted(cache, key=lambda it: (-u(it), it.src, it.id))
    return tuple(ranked[:k])


def adapt_neighbors(
    cache_selected: Cache,
    u: Utility,
    l: int,
    mode: str,
    prior: frozenset[PeerId] = frozenset(),
) -> frozenset[PeerId]:
    """New neighborhood after an exchange.

    ``adaptive`` takes the sources of the top-l items by utility; ``fixed``
    leaves the prior neighborhood untouched (no neighborhood adaptation).
    """
    if mode == "fixed":
        return prior
    if mode != "adaptive":
        raise ValueError(f"unknown adaptation mode: {mode!r}")
    if l < 1:
        raise ValueError("l must be positive")
    ranked = sorted(cache_selected, key=lambda it: (-u(it), it.src, it.id))
    return frozenset(it.src for it in ranked[:l])


@dataclass(frozen=True)
class ProtocolSpec:
    """Configuration that turns the generic engine into a concrete protocol.

    ``utility_for`` returns the utility assignment evaluated from a given
    peer's perspective.  ``self_item_for`` (when ``self_inject`` is set)
    builds the fresh item a peer injects into its pushed cache.
    ``drop_own_id`` removes items about the owner itself from what the owner
    retains; the item still transits through other peers' caches.
    """

    name: str
    cache_size: int
    utility_for: Callable[[PeerId], Utility]
    merge_on_utility: bool
    self_inject: bool = False
    self_item_for: Callable[[PeerId, Timestamp], DataItem] | None = None
    drop_own_id: bool = False
    adapt_mode: str = "adaptive"
    adapt_l: int | None = None  # None means l = cache_size
    global_view: bool = False


@dataclass
class GossipState:
    """Mutable per-peer protocol state shared by all variants.

    ``neighbors[v] is None`` encodes a global view (the peer may contact any
    live peer).  ``run_exchange`` mutates exactly the two participants'
    entries; items themselves are immutable values.
    """

    caches: list[Cache]
    neighbors: list[frozenset[PeerId] | None]
    alive: list[bool]

    @property
    def n_peers(self) -> int:
        return len(self.caches)


def _retain(
    owner: PeerId,
    own: Cache,
    other: Cache,
    protocol: ProtocolSpec,
    prior: frozenset[PeerId] | None,
) -> tuple[Cache, frozenset[PeerId] | None]:
    """Merge, select and neighborhood-adapt for one side of an exchange.

    Fused equivalent of merge (freshest or by-utility), the own-id filter,
    select_top_k and adapt_neighbors, scoring each item exactly once; the
    test suite pins its equivalence to that composition of the public ops.
    """
    u = protocol.utility_for(owner)
    drop_own = protocol.drop_own_id
    on_utility = protocol.merge_on_utility
    best: dict[int, tuple[float, int, int, DataItem]] = {}
    for side, cache in ((0, other), (1, own)):
        for item in cache:
            if drop_own and item.id == owner:
                continue
            entry = (u(item), item.timestamp, side, item)
            cur = best.get(item.id)
            if cur is None:
                best[item.id] = entry
            elif on_utility:
                if entry[:3] > cur[:3]:
                    best[item.id] = entry
            elif entry[1:3] > cur[1:3]:
                best[item.id] = entry
    ranked = sorted(best.values(), key=lambda e: (-e[0], e[3].src, e[3].id))
    selected = tuple(e[3] for e in ranked[: protocol.cache_size])
    if protocol.adapt_mode == "fixed":
        return selected, prior
    l = protocol.adapt_l if protocol.adapt_l is not None else protocol.cache_size
    # selected is ordered by the selection key, which is the same ordering
    # adapt_neighbors uses, so the top-l sources are a prefix.
    return selected, frozenset(it.src for it in selected[:l])


def run_exchange(
    state: GossipState,
    initiator: PeerId,
    responder: PeerId,
    protocol: ProtocolSpec,
    now: Timestamp,
) -> None:
    """One push-pull session between ``initiator`` and ``responder``.

    The initiator (optionally) injects a fresh self-item into the cache it
    pushes; both transmitted caches are then merged, filtered and selected
    independently on each side with that side's own utility.  The update is
    atomic: both peers' caches and neighborhoods are replaced together.
    """
    if not state.alive[responder]:
        raise ResponderUnreachable(f"peer {responder} is not alive")
    pushed = state.caches[initiator]
    if protocol.self_inject:
        assert protocol.self_item_for is not None
        pushed = pushed + (protocol.self_item_for(initiator, now),)
    pulled = state.caches[responder]

    new_i = _retain(initiator, pushed, pulled, protocol, state.neighbors[initiator])
    new_r = _retain(responder, pulled, pushed, protocol, state.neighbors[responder])
    state.caches[initiator], state.neighbors[initiator] = new_i
    state.caches[responder], state.neighbors[responder] = new_r
