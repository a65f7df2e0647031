"""Overlay of twin nodes: one node per domain participant.

Every domain owns a gateway node. A twin joining a domain is linked to the
gateway and to its ``k`` nearest peers (nearest by node id). Each logical link
is carried by a chain of 1-3 underlay links whose ids and parameters are
drawn from the graph's seeded generator, so two graphs built by the same
operation sequence are identical.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .core import Topic
from .rtps import Guid


class OverlayError(RuntimeError):
    pass


class NodeKind(enum.Enum):
    TWIN_MODEL = "TwinModel"
    SERVICE_APP = "ServiceApp"
    DATA_GATEWAY = "DataGateway"


@dataclass(frozen=True)
class OverlayNode:
    node_id: int
    guid: Guid
    domain: int
    kind: NodeKind


@dataclass(frozen=True)
class OverlayLink:
    a: int
    b: int
    underlay_path: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.underlay_path:
            raise OverlayError("underlay_path must be non-empty")


@dataclass(frozen=True)
class UnderlayParams:
    bandwidth_bytes_per_ms: float
    prop_delay_ms: float


@dataclass
class OverlayGraph:
    seed: int = 0
    k_peers: int = 2
    bandwidth_bytes_per_ms: float = 12_500.0
    prop_delay_range_ms: tuple[float, float] = (1.0, 5.0)
    max_underlay_hops: int = 3
    nodes: dict[int, OverlayNode] = field(default_factory=dict)
    links: dict[tuple[int, int], OverlayLink] = field(default_factory=dict)
    subscriptions: dict[Topic, set[int]] = field(default_factory=dict)
    gateways: dict[int, int] = field(default_factory=dict)
    underlay: dict[int, UnderlayParams] = field(default_factory=dict)
    on_join: list[Callable[[OverlayNode], None]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.seed)
        self._next_node = 0
        self._next_underlay = 0
        self._adj: dict[int, set[int]] = {}
        self._by_guid: dict[Guid, int] = {}

    # -- queries -------------------------------------------------------
    def neighbors(self, node_id: int) -> set[int]:
        return self._adj[node_id]

    def domain_nodes(self, domain: int) -> list[int]:
        return sorted(n for n, node in self.nodes.items() if node.domain == domain)

    def node_for(self, guid: Guid) -> int:
        return self._by_guid[guid]

    def link(self, a: int, b: int) -> OverlayLink:
        return self.links[(min(a, b), max(a, b))]

    def is_connected(self, domain: int) -> bool:
        members = self.domain_nodes(domain)
        return len(self._components(members)) <= 1

    # -- mutation ------------------------------------------------------
    def _add_node(self, guid: Guid, domain: int, kind: NodeKind) -> OverlayNode:
        if guid in self._by_guid:
            raise OverlayError(f"duplicate participant {guid}")
        node = OverlayNode(self._next_node, guid, int(domain), kind)
        self._next_node += 1
        self.nodes[node.node_id] = node
        self._adj[node.node_id] = set()
        self._by_guid[guid] = node.node_id
        return node

    def _connect(self, a: int, b: int) -> OverlayLink:
        key = (min(a, b), max(a, b))
        if key in self.links:
            return self.links[key]
        hops = int(self._rng.integers(1, self.max_underlay_hops + 1))
        path = []
        lo, hi = self.prop_delay_range_ms
        for _ in range(hops):
            lid = self._next_underlay
            self._next_underlay += 1
            self.underlay[lid] = UnderlayParams(self.bandwidth_bytes_per_ms,
                                                float(self._rng.uniform(lo, hi)))
            path.append(lid)
        link = OverlayLink(key[0], key[1], tuple(path))
        self.links[key] = link
        self._adj[a].add(b)
        self._adj[b].add(a)
        return link

    def connect(self, a: int, b: int) -> OverlayLink:
        """Add a logical link by hand (same-domain nodes only)."""
        if self.nodes[a].domain != self.nodes[b].domain:
            raise OverlayError("links never cross domains")
        if a == b:
            raise OverlayError("self-links are not allowed")
        return self._connect(a, b)

    def add_domain(self, domain: int, gateway_guid: Guid | None = None) -> int:
        """Create the domain's gateway node; returns its node id."""
        if domain in self.gateways:
            raise OverlayError(f"domain {domain} already exists")
        guid = gateway_guid if gateway_guid is not None else Guid(10_000 + int(domain), 0)
        node = self._add_node(guid, domain, NodeKind.DATA_GATEWAY)
        self.gateways[int(domain)] = node.node_id
        return node.node_id

    def register_twin(self, guid: Guid, domain: int,
                      kind: NodeKind = NodeKind.TWIN_MODEL) -> int:
        if domain not in self.gateways:
            raise OverlayError(f"unknown domain {domain}")
        peers = [n for n in self.domain_nodes(domain)
                 if n != self.gateways[domain] and self.nodes[n].kind is kind]
        node = self._add_node(guid, domain, kind)
        self._connect(node.node_id, self.gateways[domain])
        if kind is NodeKind.TWIN_MODEL:
            nearest = sorted(peers, key=lambda p: (abs(node.node_id - p), p))[: self.k_peers]
            for p in sorted(nearest):
                self._connect(node.node_id, p)
        for callback in self.on_join:
            callback(node)
        return node.node_id

    def subscribe(self, topic: Topic, node_id: int) -> None:
        node = self.nodes[node_id]
        if node.domain != topic.domain:
            raise OverlayError(f"node {node_id} (domain {node.domain}) cannot subscribe to "
                               f"a topic of domain {topic.domain}")
        self.subscriptions.setdefault(topic, set()).add(node_id)

    def remove_node(self, node_id: int) -> list[OverlayLink]:
        """Remove a node, repairing its domain if it was a cut vertex.

        Returns the repair links that were added.
        """
        if node_id not in self.nodes:
            raise OverlayError(f"unknown node {node_id}")
        node = self.nodes.pop(node_id)
        del self._by_guid[node.guid]
        for other in sorted(self._adj.pop(node_id)):
            self._adj[other].discard(node_id)
            del self.links[(min(node_id, other), max(node_id, other))]
        for subs in self.subscriptions.values():
            subs.discard(node_id)
        if self.gateways.get(node.domain) == node_id:
            rest = self.domain_nodes(node.domain)
            if rest:
                self.gateways[node.domain] = rest[0]
            else:
                del self.gateways[node.domain]

        comps = self._components(self.domain_nodes(node.domain))
        repairs = []
        if len(comps) > 1:
            anchor = comps[0][0]
            for comp in comps[1:]:
                repairs.append(self._connect(anchor, comp[0]))
        return repairs

    def _components(self, members: list[int]) -> list[list[int]]:
        seen: set[int] = set()
        comps = []
        for start in members:
            if start in seen:
                continue
            comp = []
            queue = deque([start])
            seen.add(start)
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in self._adj[u]:
                    if v not in seen:
                        seen.add(v)
                        queue.append(v)
            comps.append(sorted(comp))
        comps.sort()
        return comps

    # -- routing -------------------------------------------------------
    def route(self, src: int, dst: int) -> list[int]:
        """Shortest hop-count path; ties go to the lexicographically smallest."""
        for n in (src, dst):
            if n not in self.nodes:
                raise OverlayError(f"unknown node {n}")
        if self.nodes[src].domain != self.nodes[dst].domain:
            raise OverlayError(f"nodes {src} and {dst} are in different domains")
        if src == dst:
            return [src]
        dist = {dst: 0}
        queue = deque([dst])
        while queue and src not in dist:
            u = queue.popleft()
            for v in self._adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        if src not in dist:
            raise OverlayError(f"no route from {src} to {dst}")
        path = [src]
        while path[-1] != dst:
            here = path[-1]
            path.append(min(v for v in self._adj[here] if dist.get(v) == dist[here] - 1))
        return path

    def underlay_route(self, path: list[int]) -> list[int]:
        """Underlay link ids traversed along an overlay node path."""
        out: list[int] = []
        for u, v in zip(path, path[1:]):
            hops = self.link(u, v).underlay_path
            out.extend(hops if u < v else reversed(hops))
        return out

    def propagate_update(self, topic: Topic, src_node: int) -> dict[int, list[int]]:
        """Subscribers that receive an update of ``topic`` published at ``src_node``.

        Maps each subscriber node to the underlay links its copy crosses; the
        key set is the recipient set.
        """
        if src_node not in self.nodes:
            raise OverlayError(f"unknown node {src_node}")
        domain = self.nodes[src_node].domain
        out = {}
        for sub in sorted(self.subscriptions.get(topic, ())):
            if sub == src_node or self.nodes[sub].domain != domain:
                continue
            out[sub] = self.underlay_route(self.route(src_node, sub))
        return out

    # -- export --------------------------------------------------------
    def snapshot(self) -> dict:
        return {
            "nodes": [
                {"id": n.node_id, "guid": str(n.guid), "domain": n.domain, "kind": n.kind.value}
                for n in sorted(self.nodes.values(), key=lambda n: n.node_id)
            ],
            "links": [
                {"a": l.a, "b": l.b, "underlay_path": list(l.underlay_path)}
                for _, l in sorted(self.links.items())
            ],
        }

    def export_snapshot(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh, indent=1, sort_keys=True)
            fh.write("\n")
