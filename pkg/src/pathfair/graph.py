"""Causal graphs, unfair pathway sets and their identification.

A pathway set ``rho`` is a set of edges; a directed path belongs to ``rho``
when every one of its edges does. The counterfactual outcome
``Y(s, s'; rho)`` is expanded recursively: along edges in ``rho`` a node
receives its rho-version (direct dependence on S set to ``s`` when the edge
``S -> V`` is in ``rho``), along all other edges it receives its baseline
version in which S is set to ``s'`` everywhere upstream.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .exceptions import CycleError, GraphError, InvalidPathSet, NotIdentified

ROLES = ("sensitive", "covariate", "mediator", "outcome")


@dataclass(frozen=True)
class Dag:
    """Directed graph with role-tagged nodes.

    Construction does not validate; use :func:`validate_dag`.

    Parameters
    ----------
    nodes : sequence of str
        Node names in declaration order.
    roles : dict
        Maps node name to one of ``ROLES``.
    edges : iterable of (str, str)
        Directed edges ``(parent, child)``.
    """

    nodes: tuple
    roles: dict
    edges: frozenset

    def __init__(self, nodes, roles, edges):
        object.__setattr__(self, "nodes", tuple(nodes))
        object.__setattr__(self, "roles", dict(roles))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in edges))

    def __hash__(self):
        return hash((self.nodes, self.edges))

    @property
    def sensitive(self) -> str:
        return self._unique("sensitive")

    @property
    def outcome(self) -> str:
        return self._unique("outcome")

    def _unique(self, role):
        names = [v for v in self.nodes if self.roles.get(v) == role]
        if len(names) != 1:
            raise GraphError(f"expected exactly one {role} node, found {len(names)}")
        return names[0]

    def parents(self, v) -> list:
        return [a for a in self.nodes if (a, v) in self.edges]

    def children(self, v) -> list:
        return [b for b in self.nodes if (v, b) in self.edges]

    def topological_order(self) -> list:
        """Kahn's algorithm, ties broken by declaration order."""
        indeg = {v: 0 for v in self.nodes}
        for a, b in self.edges:
            if b in indeg:
                indeg[b] += 1
        ready = [v for v in self.nodes if indeg[v] == 0]
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in self.children(v):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            raise CycleError("graph contains a directed cycle")
        return order

    def descendants(self, v) -> set:
        out, stack = set(), [v]
        while stack:
            for c in self.children(stack.pop()):
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def ancestors(self, v) -> set:
        out, stack = set(), [v]
        while stack:
            for p in self.parents(stack.pop()):
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return out

    def causal_nodes(self) -> list:
        """Nodes strictly after S on some directed path S -> ... -> Y."""
        s, y = self.sensitive, self.outcome
        keep = self.descendants(s) & (self.ancestors(y) | {y})
        return [v for v in self.topological_order() if v in keep]

    def causal_edges(self) -> set:
        """Edges lying on at least one directed path from S to Y."""
        s, y = self.sensitive, self.outcome
        reach_from_s = self.descendants(s) | {s}
        reach_y = self.ancestors(y) | {y}
        return {(a, b) for a, b in self.edges if a in reach_from_s and b in reach_y}

    @classmethod
    def from_dict(cls, doc) -> tuple["Dag", "PathSet"]:
        """Parse ``{"nodes": [...], "edges": [...], "rho": [...]}``."""
        try:
            nodes = [n["name"] for n in doc["nodes"]]
            roles = {n["name"]: n["role"] for n in doc["nodes"]}
            edges = [tuple(e) for e in doc.get("edges", [])]
            rho = [tuple(e) for e in doc.get("rho", [])]
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph document: {exc}") from exc
        if any(len(e) != 2 for e in edges + rho):
            raise GraphError("edges must be pairs")
        return cls(nodes, roles, edges), PathSet(rho)

    @classmethod
    def from_json(cls, path) -> tuple["Dag", "PathSet"]:
        with open(path) as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GraphError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc)

    def to_dict(self, rho: "PathSet | None" = None) -> dict:
        doc = {
            "nodes": [{"name": v, "role": self.roles[v]} for v in self.nodes],
            "edges": sorted([list(e) for e in self.edges]),
        }
        if rho is not None:
            doc["rho"] = sorted([list(e) for e in rho.edges])
        return doc


@dataclass(frozen=True)
class PathSet:
    """Set of edges whose all-marked paths carry the unfair effect."""

    edges: frozenset

    def __init__(self, edges: Iterable = ()):
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in edges))

    def __contains__(self, edge):
        return tuple(edge) in self.edges

    def __len__(self):
        return len(self.edges)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        return "valid" if self.ok else "; ".join(self.violations)


def validate_dag(dag: Dag) -> ValidationReport:
    """Check structural and role invariants of ``dag``."""
    rep = ValidationReport()
    names = set(dag.nodes)
    if len(names) != len(dag.nodes):
        rep.violations.append("duplicate node names")
    for v in dag.nodes:
        if dag.roles.get(v) not in ROLES:
            rep.violations.append(f"node {v!r} has unknown role {dag.roles.get(v)!r}")
    for a, b in sorted(dag.edges):
        if a not in names or b not in names:
            rep.violations.append(f"dangling edge {a}->{b}")
        elif a == b:
            rep.violations.append(f"self loop on {a}")
    for role, label in (("sensitive", "missing-sensitive"), ("outcome", "missing-outcome")):
        k = sum(dag.roles.get(v) == role for v in dag.nodes)
        if k == 0:
            rep.violations.append(f"{label}: no node tagged {role}")
        elif k > 1:
            rep.violations.append(f"more than one node tagged {role}")
    if not rep.ok:
        return rep
    try:
        dag.topological_order()
    except CycleError:
        rep.violations.append("cycle: graph is not acyclic")
        return rep
    s, y = dag.sensitive, dag.outcome
    if y not in dag.descendants(s):
        rep.violations.append("outcome is not a descendant of the sensitive node")
    on_path = set(dag.causal_nodes())
    desc_s = dag.descendants(s)
    for v in dag.nodes:
        role = dag.roles[v]
        if role == "covariate" and v in desc_s:
            rep.violations.append(f"covariate {v!r} is a descendant of {s!r}")
        if role == "mediator" and v not in on_path:
            rep.violations.append(f"mediator {v!r} lies on no causal path {s}->{y}")
    return rep


def validate_rho(dag: Dag, rho: PathSet) -> list:
    """Return the edges of ``rho`` that are not causal edges of ``dag``."""
    causal = dag.causal_edges()
    return sorted(e for e in rho.edges if e not in causal)


@dataclass(frozen=True)
class VersionRequirement:
    needs_rho_version: bool
    needs_sprime_version: bool
    versions_differ: bool


@dataclass(frozen=True)
class IdentifiabilityResult:
    identified: bool
    witness: str | None
    requirements: dict

    def __str__(self):
        return "Identified" if self.identified else f"RecantingWitness({self.witness})"


def version_requirements(dag: Dag, rho: PathSet) -> dict:
    """Propagate version demands top-down from the outcome.

    Returns a dict mapping every causal node to a :class:`VersionRequirement`.
    ``versions_differ`` is true when a directed path from S to the node runs
    entirely through edges of ``rho``; otherwise the rho-version reduces to
    the baseline version.
    """
    s, y = dag.sensitive, dag.outcome
    causal = dag.causal_nodes()
    on_path = set(causal)
    need_rho = {v: False for v in causal}
    need_sp = {v: False for v in causal}
    need_rho[y] = True
    for v in reversed(causal):
        for p in dag.parents(v):
            if p not in on_path:
                continue
            if need_rho[v]:
                if (p, v) in rho:
                    need_rho[p] = True
                else:
                    need_sp[p] = True
            if need_sp[v]:
                need_sp[p] = True
    differ = {}
    for v in causal:
        differ[v] = (s, v) in rho or any(
            (p, v) in rho and differ.get(p, False) for p in dag.parents(v) if p in on_path
        )
    return {
        v: VersionRequirement(need_rho[v], need_sp[v], differ[v]) for v in causal
    }


def _require_valid(dag, rho):
    rep = validate_dag(dag)
    if not rep.ok:
        raise GraphError(str(rep))
    bad = validate_rho(dag, rho)
    if bad:
        txt = ", ".join(f"{a}->{b}" for a, b in bad)
        raise InvalidPathSet(f"edges not on any causal path: {txt}")


def check_identifiability(dag: Dag, rho: PathSet) -> IdentifiabilityResult:
    """Decide whether the rho-specific effect has a recanting witness.

    Raises
    ------
    GraphError
        If the graph is invalid.
    InvalidPathSet
        If ``rho`` contains an edge off every causal path.
    """
    _require_valid(dag, rho)
    req = version_requirements(dag, rho)
    for v in dag.causal_nodes():
        r = req[v]
        if r.needs_rho_version and r.needs_sprime_version and r.versions_differ:
            return IdentifiabilityResult(False, v, req)
    return IdentifiabilityResult(True, None, req)


@dataclass(frozen=True)
class CausalPartition:
    """Decomposition ``(X, S, M_rho, L_rho, s_y)`` used by the estimators.

    ``assignment`` maps each causal node with a direct S parent to the value
    (1 for ``s``, 0 for ``s'``) that S takes in its density.
    """

    sensitive: str
    outcome: str
    x_vars: tuple
    m_rho: tuple
    l_rho: tuple
    s_y: int
    assignment: dict

    def describe(self) -> str:
        return (
            f"X = {{{', '.join(self.x_vars)}}}\n"
            f"S = {self.sensitive}\n"
            f"M_rho = {{{', '.join(self.m_rho)}}}\n"
            f"L_rho = {{{', '.join(self.l_rho)}}}\n"
            f"s_y = {self.s_y}"
        )

    def to_dict(self) -> dict:
        return {
            "sensitive": self.sensitive,
            "outcome": self.outcome,
            "x_vars": list(self.x_vars),
            "m_rho": list(self.m_rho),
            "l_rho": list(self.l_rho),
            "s_y": self.s_y,
        }


def partition(dag: Dag, rho: PathSet) -> CausalPartition:
    """Derive the partition driving identification.

    Raises
    ------
    NotIdentified
        If a recanting witness exists.
    """
    res = check_identifiability(dag, rho)
    if not res.identified:
        raise NotIdentified(res.witness)
    s, y = dag.sensitive, dag.outcome
    causal = dag.causal_nodes()
    assignment = {}
    for v in causal:
        if s not in dag.parents(v):
            continue
        r = res.requirements[v]
        assignment[v] = int(r.needs_rho_version and (s, v) in rho)
    s_y = int((s, y) in rho)
    m_rho = tuple(v for v in causal if v in assignment and assignment[v] != s_y)
    l_rho = tuple(v for v in causal if v not in m_rho)
    x_vars = tuple(v for v in dag.nodes if v != s and v not in set(causal))
    return CausalPartition(s, y, x_vars, m_rho, l_rho, s_y, assignment)
