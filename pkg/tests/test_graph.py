import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fig_c_dag
from pathfair.exceptions import CycleError, GraphError, InvalidPathSet, NotIdentified
from pathfair.graph import (
    Dag, PathSet, check_identifiability, partition, validate_dag, validate_rho,
)


def brute_force_witnesses(dag, rho):
    """Nodes whose nested counterfactual appears in more than one form.

    Expands ``Y(rho)`` symbolically: a node reached through a path suffix
    ``q`` to Y sees ``s`` through its S edge only if that edge and all of
    ``q`` lie in ``rho``.
    """
    s, y = dag.sensitive, dag.outcome
    forms = {}

    def expand(v, q_in_rho):
        parts = []
        for p in dag.parents(v):
            edge_ok = q_in_rho and (p, v) in rho
            if p == s:
                parts.append("s" if edge_ok else "s'")
            else:
                parts.append(f"{p}=" + expand(p, edge_ok))
        e = f"{v}(" + ",".join(parts) + ")"
        forms.setdefault(v, set()).add(e)
        return e

    expand(y, True)
    return {v for v, f in forms.items() if len(f) > 1}


class TestFigC:
    def test_rho1_partition(self, fig_c, rho1):
        part = partition(fig_c, rho1)
        assert part.m_rho == ("m",)
        assert part.l_rho == ("l", "y")
        assert part.s_y == 1
        assert part.x_vars == ("x",)
        assert part.assignment == {"m": 0, "l": 1, "y": 1}

    def test_rho2_partition(self, fig_c, rho2):
        part = partition(fig_c, rho2)
        assert part.m_rho == ("l",)
        assert part.l_rho == ("m", "y")
        assert part.assignment == {"m": 1, "l": 0, "y": 1}

    def test_direct_only(self, fig_c):
        part = partition(fig_c, PathSet([("s", "y")]))
        assert part.m_rho == ("m", "l")
        assert part.s_y == 1

    def test_indirect_only_has_zero_s_y(self, fig_c):
        rho = PathSet([("s", "m"), ("m", "y"), ("m", "l"), ("l", "y"), ("s", "l")])
        part = partition(fig_c, rho)
        assert part.s_y == 0
        assert part.m_rho == ("m", "l")

    def test_recanting_witness(self, fig_c):
        rho = PathSet([("s", "m"), ("m", "y")])
        res = check_identifiability(fig_c, rho)
        assert not res.identified
        assert res.witness == "m"
        assert str(res) == "RecantingWitness(m)"
        with pytest.raises(NotIdentified) as info:
            partition(fig_c, rho)
        assert info.value.witness == "m"

    def test_str_identified(self, fig_c, rho1):
        assert str(check_identifiability(fig_c, rho1)) == "Identified"

    def test_causal_nodes_order(self, fig_c):
        assert fig_c.causal_nodes() == ["m", "l", "y"]


class TestValidation:
    def test_cycle(self):
        dag = Dag(["s", "m", "y"], {"s": "sensitive", "m": "mediator", "y": "outcome"},
                  [("s", "m"), ("m", "y"), ("y", "m")])
        with pytest.raises(CycleError):
            dag.topological_order()
        assert "cycle" in str(validate_dag(dag))

    def test_missing_roles(self):
        dag = Dag(["a", "y"], {"a": "covariate", "y": "outcome"}, [("a", "y")])
        rep = validate_dag(dag)
        assert not rep.ok
        assert any(v.startswith("missing-sensitive") for v in rep.violations)

    def test_covariate_downstream_of_s(self):
        dag = Dag(["s", "x", "y"], {"s": "sensitive", "x": "covariate", "y": "outcome"},
                  [("s", "x"), ("x", "y"), ("s", "y")])
        assert any("descendant" in v for v in validate_dag(dag).violations)

    def test_dangling_mediator(self):
        dag = Dag(["s", "m", "y"], {"s": "sensitive", "m": "mediator", "y": "outcome"},
                  [("s", "m"), ("s", "y")])
        assert any("no causal path" in v for v in validate_dag(dag).violations)

    def test_rho_off_path(self, fig_c):
        rho = PathSet([("x", "y")])
        assert validate_rho(fig_c, rho) == [("x", "y")]
        with pytest.raises(InvalidPathSet):
            check_identifiability(fig_c, rho)

    def test_invalid_graph_raises(self):
        dag = Dag(["s", "y"], {"s": "sensitive", "y": "outcome"}, [("y", "s")])
        with pytest.raises(GraphError):
            check_identifiability(dag, PathSet())


class TestJson:
    def test_round_trip(self, tmp_path, fig_c, rho1):
        p = tmp_path / "g.json"
        p.write_text(json.dumps(fig_c.to_dict(rho1)))
        dag, rho = Dag.from_json(p)
        assert dag.edges == fig_c.edges
        assert rho.edges == rho1.edges
        assert set(dag.nodes) == set(fig_c.nodes)

    def test_parse_error_is_line_anchored(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "nodes": [,\n}')
        with pytest.raises(GraphError, match=r"bad.json:2:\d+"):
            Dag.from_json(p)

    def test_malformed_document(self):
        with pytest.raises(GraphError):
            Dag.from_dict({"nodes": [{"name": "a"}]})


@st.composite
def random_graph(draw):
    k = draw(st.integers(1, 4))
    meds = [f"v{i}" for i in range(k)]
    order = ["s", *meds, "y"]
    edges = [("x", v) for v in order]
    for i, a in enumerate(order):
        for b in order[i + 1:]:
            if draw(st.booleans()):
                edges.append((a, b))
    # keep every mediator on a causal path
    for i, v in enumerate(meds):
        edges += [(order[i], v), (v, order[i + 2])]
    roles = {"x": "covariate", "s": "sensitive", "y": "outcome"}
    roles.update({v: "mediator" for v in meds})
    dag = Dag(["x", *order], roles, set(edges))
    causal = sorted(dag.causal_edges())
    chosen = draw(st.lists(st.sampled_from(causal), unique=True, min_size=1))
    return dag, PathSet(chosen)


@settings(max_examples=300, deadline=None)
@given(random_graph())
def test_identification_matches_symbolic_expansion(g):
    dag, rho = g
    assert validate_dag(dag).ok
    witnesses = brute_force_witnesses(dag, rho)
    res = check_identifiability(dag, rho)
    assert res.identified == (not witnesses)
    if witnesses:
        assert res.witness in witnesses


@settings(max_examples=200, deadline=None)
@given(random_graph())
def test_partition_covers_causal_nodes(g):
    dag, rho = g
    if brute_force_witnesses(dag, rho):
        return
    part = partition(dag, rho)
    causal = dag.causal_nodes()
    assert set(part.m_rho) | set(part.l_rho) == set(causal)
    assert not set(part.m_rho) & set(part.l_rho)
    assert dag.outcome in part.l_rho
    assert part.s_y == int((dag.sensitive, dag.outcome) in rho.edges)
    # every M node has a direct S parent
    assert all(dag.sensitive in dag.parents(v) for v in part.m_rho)


def test_fig_c_with_two_covariates():
    dag = fig_c_dag(("x1", "x2"))
    assert partition(dag, PathSet([("s", "y")])).x_vars == ("x1", "x2")
