"""Generative encoding for voxel designs.

A genome is a small feed-forward graph of activation nodes that maps
normalized workspace coordinates to two values: material presence and
material type.  Genomes are immutable; variation returns new genomes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    PHASE_A,
    PHASE_B,
    EmptyPhenotype,
    Polycube,
    largest_connected_component,
    DEFAULT_VOXEL_SIZE,
)

# fixed node ids: inputs are x, y, z and a constant-one bias feed
INPUT_X, INPUT_Y, INPUT_Z, INPUT_ONE = 0, 1, 2, 3
INPUT_IDS = (INPUT_X, INPUT_Y, INPUT_Z, INPUT_ONE)
OUT_PRESENCE = 4
OUT_MATERIAL = 5
OUTPUT_IDS = (OUT_PRESENCE, OUT_MATERIAL)
FIRST_HIDDEN_ID = 6

ACTIVATIONS = ("sine", "abs", "square", "sqrt", "step")
OUTPUT_ACTIVATION = "sine"  # bounded squash keeping outputs inside [-1, 1]

# post-activation clamp; keeps square/abs chains finite without affecting
# ordinary operating ranges
VALUE_CLIP = 1.0e6

MUTATION_RETRIES = 8
DEFAULT_WEIGHT_NOISE = 0.5
DEFAULT_HIDDEN_RANGE = (0, 4)


class InvalidGenome(ValueError):
    pass


@dataclass(frozen=True)
class NodeGene:
    id: int
    activation: str
    bias: float


@dataclass(frozen=True)
class EdgeGene:
    src: int
    dst: int
    weight: float


@dataclass(frozen=True)
class CppnGenome:
    """Feed-forward activation graph plus the lineage age counter.

    ``nodes`` holds hidden and output genes (inputs are implicit).  The two
    output genes always use the squashing activation.
    """

    nodes: tuple[NodeGene, ...]
    edges: tuple[EdgeGene, ...]
    age: int = 0

    def __post_init__(self):
        # canonical ordering so equal graphs compare and serialize identically
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: (e.src, e.dst))))
        validate_genome(self)

    @property
    def hidden_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.id not in OUTPUT_IDS)

    def node(self, nid: int) -> NodeGene:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)


def validate_genome(g: CppnGenome) -> None:
    ids = [n.id for n in g.nodes]
    if len(set(ids)) != len(ids):
        raise InvalidGenome("duplicate node ids")
    if any(i in INPUT_IDS for i in ids):
        raise InvalidGenome("input ids must not appear in the node list")
    for out in OUTPUT_IDS:
        if out not in ids:
            raise InvalidGenome(f"missing output node {out}")
    for n in g.nodes:
        if n.id in OUTPUT_IDS:
            if n.activation != OUTPUT_ACTIVATION:
                raise InvalidGenome("output nodes must use the squashing activation")
        elif n.activation not in ACTIVATIONS:
            raise InvalidGenome(f"unknown activation {n.activation!r}")
    known = set(ids) | set(INPUT_IDS)
    seen_edges = set()
    for e in g.edges:
        if e.src not in known or e.dst not in known:
            raise InvalidGenome(f"edge {e.src}->{e.dst} references unknown node")
        if e.dst in INPUT_IDS:
            raise InvalidGenome("edges may not target input nodes")
        if e.src in OUTPUT_IDS:
            raise InvalidGenome("edges may not leave output nodes")
        if (e.src, e.dst) in seen_edges:
            raise InvalidGenome(f"duplicate edge {e.src}->{e.dst}")
        seen_edges.add((e.src, e.dst))
    topological_order(g)  # raises on cycles


def topological_order(g: CppnGenome) -> list[int]:
    """Kahn ordering of non-input nodes; raises InvalidGenome on a cycle."""
    indeg = {n.id: 0 for n in g.nodes}
    out_edges: dict[int, list[int]] = {}
    for e in g.edges:
        out_edges.setdefault(e.src, []).append(e.dst)
        if e.src not in INPUT_IDS:
            indeg[e.dst] += 1
    ready = sorted(nid for nid, d in indeg.items() if d == 0)
    order = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        for dst in sorted(out_edges.get(nid, [])):
            indeg[dst] -= 1
            if indeg[dst] == 0:
                ready.append(dst)
        ready.sort()
    if len(order) != len(indeg):
        raise InvalidGenome("activation graph contains a cycle")
    return order


def _apply_activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "sine":
        return np.sin(x)
    if name == "abs":
        return np.abs(x)
    if name == "square":
        return x * x
    if name == "sqrt":
        return np.sqrt(np.abs(x))
    if name == "step":
        return np.where(x < 0, -1.0, 1.0)
    raise InvalidGenome(f"unknown activation {name!r}")


def evaluate_grid(g: CppnGenome, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass over an (n, 3) array of normalized coordinates.

    Returns (presence, material) arrays, each squashed into [-1, 1].
    """
    coords = np.asarray(coords, dtype=float)
    values = {
        INPUT_X: coords[:, 0],
        INPUT_Y: coords[:, 1],
        INPUT_Z: coords[:, 2],
        INPUT_ONE: np.ones(len(coords)),
    }
    incoming: dict[int, list[EdgeGene]] = {}
    for e in g.edges:
        incoming.setdefault(e.dst, []).append(e)
    for nid in topological_order(g):
        node = g.node(nid)
        total = np.full(len(coords), node.bias)
        for e in incoming.get(nid, []):
            total = total + e.weight * values[e.src]
        values[nid] = np.clip(_apply_activation(node.activation, total),
                              -VALUE_CLIP, VALUE_CLIP)
    return values[OUT_PRESENCE], values[OUT_MATERIAL]


def evaluate(g: CppnGenome, coord) -> tuple[float, float]:
    """Presence and material values at a single normalized (x, y, z)."""
    presence, material = evaluate_grid(g, np.asarray(coord, dtype=float)[None, :])
    return float(presence[0]), float(material[0])


def cell_coordinates(extent: int) -> np.ndarray:
    """Normalized cell-center coordinates, (extent^3, 3), x fastest-varying last."""
    axis = np.linspace(-1.0, 1.0, extent) if extent > 1 else np.zeros(1)
    xs, ys, zs = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)


def decode(g: CppnGenome, extent: int, voxel_size: float = DEFAULT_VOXEL_SIZE) -> Polycube:
    """Threshold the genome over the workspace and keep the largest component.

    A cell is occupied when presence is strictly positive; occupied cells take
    PHASE_A when the material value is strictly positive, PHASE_B otherwise.
    Raises EmptyPhenotype when nothing is occupied.
    """
    if extent < 1:
        raise ValueError(f"extent must be >= 1, got {extent}")
    presence, material = evaluate_grid(g, cell_coordinates(extent))
    shape = (extent, extent, extent)
    occupied = (presence > 0.0).reshape(shape)
    labels = np.where(material > 0.0, PHASE_A, PHASE_B).reshape(shape)
    if not occupied.any():
        raise EmptyPhenotype("genome paints no material anywhere")
    return largest_connected_component(occupied, materials=labels, voxel_size=voxel_size)


def random_genome(rng: np.random.Generator,
                  hidden_range: tuple[int, int] = DEFAULT_HIDDEN_RANGE) -> CppnGenome:
    """Small random feed-forward genome with age 0.

    Inputs are fully wired to both outputs; each hidden node (count drawn from
    ``hidden_range``, inclusive) gets one incoming and one outgoing edge.
    """
    n_hidden = int(rng.integers(hidden_range[0], hidden_range[1] + 1))
    nodes = [
        NodeGene(OUT_PRESENCE, OUTPUT_ACTIVATION, float(rng.uniform(-1, 1))),
        NodeGene(OUT_MATERIAL, OUTPUT_ACTIVATION, float(rng.uniform(-1, 1))),
    ]
    edges = [EdgeGene(src, dst, float(rng.uniform(-1, 1)))
             for src in INPUT_IDS for dst in OUTPUT_IDS]
    hidden_ids = [FIRST_HIDDEN_ID + k for k in range(n_hidden)]
    present = {(e.src, e.dst) for e in edges}
    for k, nid in enumerate(hidden_ids):
        act = ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))]
        nodes.append(NodeGene(nid, act, float(rng.uniform(-1, 1))))
        sources = list(INPUT_IDS) + hidden_ids[:k]
        sinks = list(OUTPUT_IDS) + hidden_ids[k + 1:]
        incoming = (sources[int(rng.integers(len(sources)))], nid)
        outgoing = (nid, sinks[int(rng.integers(len(sinks)))])
        for pair in (incoming, outgoing):
            if pair not in present:
                present.add(pair)
                edges.append(EdgeGene(pair[0], pair[1], float(rng.uniform(-1, 1))))
    return CppnGenome(nodes=tuple(nodes), edges=tuple(edges), age=0)


def _reaches_output(nodes, edges) -> bool:
    """At least one output node is reachable from some input."""
    adjacency: dict[int, list[int]] = {}
    for e in edges:
        adjacency.setdefault(e.src, []).append(e.dst)
    stack = list(INPUT_IDS)
    seen = set(stack)
    while stack:
        nid = stack.pop()
        if nid in OUTPUT_IDS:
            return True
        for dst in adjacency.get(nid, []):
            if dst not in seen:
                seen.add(dst)
                stack.append(dst)
    return False


def _creates_cycle(edges, src: int, dst: int) -> bool:
    """Would adding src->dst close a cycle (i.e. src reachable from dst)?"""
    adjacency: dict[int, list[int]] = {}
    for e in edges:
        adjacency.setdefault(e.src, []).append(e.dst)
    stack = [dst]
    seen = {dst}
    while stack:
        nid = stack.pop()
        if nid == src:
            return True
        for nxt in adjacency.get(nid, []):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return False


def _perturb(g: CppnGenome, rng: np.random.Generator, noise: float) -> CppnGenome:
    """Gaussian-perturb one weight or one bias, chosen uniformly."""
    slots = len(g.edges) + len(g.nodes)
    pick = int(rng.integers(slots))
    delta = float(rng.normal(0.0, noise))
    if pick < len(g.edges):
        e = g.edges[pick]
        edges = list(g.edges)
        edges[pick] = replace(e, weight=e.weight + delta)
        return replace(g, edges=tuple(edges))
    n = g.nodes[pick - len(g.edges)]
    nodes = list(g.nodes)
    nodes[pick - len(g.edges)] = replace(n, bias=n.bias + delta)
    return replace(g, nodes=tuple(nodes))


def _add_node(g: CppnGenome, rng: np.random.Generator) -> CppnGenome | None:
    if not g.edges:
        return None
    pick = int(rng.integers(len(g.edges)))
    e = g.edges[pick]
    new_id = max([n.id for n in g.nodes] + [FIRST_HIDDEN_ID - 1]) + 1
    act = ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))]
    nodes = g.nodes + (NodeGene(new_id, act, 0.0),)
    edges = list(g.edges)
    edges[pick] = EdgeGene(e.src, new_id, 1.0)
    edges.append(EdgeGene(new_id, e.dst, e.weight))
    return replace(g, nodes=tuple(nodes), edges=tuple(edges))


def _remove_node(g: CppnGenome, rng: np.random.Generator) -> CppnGenome | None:
    hidden = [n for n in g.nodes if n.id not in OUTPUT_IDS]
    if not hidden:
        return None
    victim = hidden[int(rng.integers(len(hidden)))].id
    nodes = tuple(n for n in g.nodes if n.id != victim)
    kept = [e for e in g.edges if victim not in (e.src, e.dst)]
    ins = [e for e in g.edges if e.dst == victim]
    outs = [e for e in g.edges if e.src == victim]
    present = {(e.src, e.dst) for e in kept}
    # bridge around the removed node where possible
    for ei in ins:
        for eo in outs:
            if (ei.src, eo.dst) in present or ei.src == eo.dst:
                continue
            kept.append(EdgeGene(ei.src, eo.dst, ei.weight * eo.weight))
            present.add((ei.src, eo.dst))
    return replace(g, nodes=nodes, edges=tuple(kept))


def _add_edge(g: CppnGenome, rng: np.random.Generator) -> CppnGenome | None:
    sources = list(INPUT_IDS) + [n.id for n in g.nodes if n.id not in OUTPUT_IDS]
    sinks = [n.id for n in g.nodes]
    present = {(e.src, e.dst) for e in g.edges}
    for _ in range(MUTATION_RETRIES):
        src = sources[int(rng.integers(len(sources)))]
        dst = sinks[int(rng.integers(len(sinks)))]
        if src == dst or (src, dst) in present:
            continue
        if _creates_cycle(g.edges, src, dst):
            continue
        return replace(g, edges=g.edges + (EdgeGene(src, dst, float(rng.uniform(-1, 1))),))
    return None


def _remove_edge(g: CppnGenome, rng: np.random.Generator) -> CppnGenome | None:
    if not g.edges:
        return None
    pick = int(rng.integers(len(g.edges)))
    edges = g.edges[:pick] + g.edges[pick + 1:]
    return replace(g, edges=edges)


_OPERATORS = ("add_node", "remove_node", "add_edge", "remove_edge", "perturb")


def mutate(g: CppnGenome, rng: np.random.Generator,
           noise: float = DEFAULT_WEIGHT_NOISE) -> CppnGenome:
    """Apply exactly one structural or parametric mutation.

    The operator class is chosen uniformly.  Results that sever every path
    from the inputs to the outputs are retried a bounded number of times,
    falling back to a weight perturbation.  The child keeps the parent's age.
    """
    for _ in range(MUTATION_RETRIES):
        op = _OPERATORS[int(rng.integers(len(_OPERATORS)))]
        if op == "add_node":
            child = _add_node(g, rng)
        elif op == "remove_node":
            child = _remove_node(g, rng)
        elif op == "add_edge":
            child = _add_edge(g, rng)
        elif op == "remove_edge":
            child = _remove_edge(g, rng)
        else:
            child = _perturb(g, rng, noise)
        if child is not None and _reaches_output(child.nodes, child.edges):
            return child
    return _perturb(g, rng, noise)


def genome_to_json(g: CppnGenome) -> str:
    doc = {
        "age": g.age,
        "nodes": [{"id": n.id, "activation": n.activation, "bias": n.bias}
                  for n in sorted(g.nodes, key=lambda n: n.id)],
        "edges": [{"src": e.src, "dst": e.dst, "weight": e.weight}
                  for e in sorted(g.edges, key=lambda e: (e.src, e.dst))],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def genome_from_json(text: str) -> CppnGenome:
    doc = json.loads(text)
    nodes = tuple(NodeGene(int(n["id"]), str(n["activation"]), float(n["bias"]))
                  for n in doc["nodes"])
    edges = tuple(EdgeGene(int(e["src"]), int(e["dst"]), float(e["weight"]))
                  for e in doc["edges"])
    return CppnGenome(nodes=nodes, edges=edges, age=int(doc["age"]))
