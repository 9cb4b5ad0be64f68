import json

import pytest

import oracles as o
from wigsync.measurement import TimeStamp
from wigsync.protocol import MeasureStep, OutcomeSpec, Protocol, VectorSpec
from wigsync.runner import (
    compare_modes,
    default_external_agents,
    default_record,
    run_audit,
    run_exact,
    run_sampled,
    sample_tree,
    to_json,
)
from wigsync.audit import builtin_table1_chain
from wigsync.scenarios import (
    DEFAULT_RECORDS,
    S,
    builtin_epr,
    builtin_wfr,
    builtin_wfr_synced,
    builtin_wigner,
)


def check_tree(tree):
    for n in tree.nodes():
        if n.children:
            assert sum(c.p_cond for c in n.children) == pytest.approx(1, abs=1e-10)
    assert tree.root.p_cum == 1.0
    assert sum(l.p_cum for l in tree.leaves()) == pytest.approx(1, abs=1e-9)


class TestExact:
    def test_collapse_tree_matches_enumeration_oracle(self):
        tree = run_exact(builtin_wfr(), "exact_collapse")
        check_tree(tree)
        assert tree.measurements == ("r", "z", "wbar", "w")
        for path, p in o.enumerate_collapse_tree().items():
            assert tree.probability(path) == pytest.approx(p, abs=1e-12), path

    def test_zero_branch_kept(self):
        tree = run_exact(builtin_wfr(), "exact_collapse")
        n = tree.node(("head", "up"))
        assert n.p_cum == 0.0 and n.children == []

    def test_external_tree(self):
        tree = run_exact(builtin_wfr(), "exact_external")
        check_tree(tree)
        assert tree.measurements == ("wbar", "w")
        for wb in ("okbar", "failbar"):
            for w in ("ok", "fail"):
                assert tree.probability((wb, w)) == pytest.approx(o.external_joint(wb, w), abs=1e-10)

    def test_external_okbar_one_sixth(self):
        assert run_exact(builtin_wfr(), "exact_external").probability(("okbar",)) == pytest.approx(1 / 6, abs=1e-10)

    def test_synced_external_branches_everywhere(self):
        tree = run_exact(builtin_wfr_synced(), "exact_external")
        assert tree.measurements == ("r", "z", "wbar", "w")
        assert tree.probability(("tail", "up", "okbar", "ok")) == pytest.approx(1 / 12, abs=1e-12)

    def test_explicit_external_agents(self):
        tree = run_exact(builtin_wfr(), "exact_external", ["W"])
        assert tree.measurements == ("w",)
        assert tree.probability(("ok",)) == pytest.approx(1 / 12 + 1 / 12, abs=1e-12)

    def test_unknown_external_agent(self):
        with pytest.raises(ValueError):
            run_exact(builtin_wfr(), "exact_external", ["nobody"])

    def test_no_measurements(self):
        p = Protocol((S,), ("x",), VectorSpec.basis("up"), ())
        tree = run_exact(p)
        assert tree.leaves() == [tree.root]
        assert compare_modes(p) == []


class TestDefaults:
    def test_external_agents(self):
        assert default_external_agents(builtin_wfr()) == ("Wbar", "W")
        assert default_external_agents(builtin_wigner()) == ("wigner",)
        assert default_external_agents(builtin_epr()) == ("alice", "bob")

    def test_default_record_picks_most_probable(self):
        assert default_record(builtin_wfr()) == {"r": "tail", "z": "down", "wbar": "okbar", "w": "ok"}


class TestSampling:
    def test_deterministic_protocol_single_leaf(self):
        z = MeasureStep(
            TimeStamp.parse("1:01"), "z", "x", ("S",),
            (OutcomeSpec("down", (VectorSpec.basis("down"),)), OutcomeSpec("up", (VectorSpec.basis("up"),))),
        )
        p = Protocol((S,), ("x",), VectorSpec.basis("up"), (z,))
        table = run_sampled(p, 50, 1)
        assert table.counts == {("up",): 50}
        assert table.frequency(("up",)) == 1.0

    def test_head_forces_spin_down(self):
        sub = run_exact(builtin_wfr(), "exact_collapse").node(("head",))
        assert [c.p_cond for c in sub.children] == pytest.approx([1.0, 0.0])

    def test_same_seed_same_table(self):
        a = run_sampled(builtin_wfr_synced(), 2000, 99)
        b = run_sampled(builtin_wfr_synced(), 2000, 99)
        assert a.counts == b.counts
        assert to_json(a.to_rows()) == to_json(b.to_rows())

    def test_different_seed_differs(self):
        a = run_sampled(builtin_wfr_synced(), 2000, 1)
        b = run_sampled(builtin_wfr_synced(), 2000, 2)
        assert a.counts != b.counts

    def test_trial_substreams_independent_of_count(self):
        # the first trials do not depend on how many follow
        tree = run_exact(builtin_wfr_synced())
        small = sample_tree(tree, 50, 5).counts
        big = sample_tree(tree, 51, 5).counts
        extra = {k: big.get(k, 0) - small.get(k, 0) for k in set(big) | set(small)}
        assert sorted(extra.values())[-1] == 1 and sum(extra.values()) == 1
        assert min(extra.values()) >= 0

    def test_convergence_within_four_sigma(self):
        n = 20000
        tree = run_exact(builtin_wfr_synced())
        table = sample_tree(tree, n, 4242)
        for leaf in tree.leaves():
            p = leaf.p_cum
            sigma = (p * (1 - p) / n) ** 0.5
            assert abs(table.frequency(leaf.path) - p) <= 4 * sigma + 1e-12

    @pytest.mark.parametrize("trials,seed", [(0, 1), (-5, 1), (10, -1), (10, 2**64)])
    def test_bad_config(self, trials, seed):
        with pytest.raises(ValueError):
            run_sampled(builtin_wfr_synced(), trials, seed)


class TestCompare:
    def test_wfr_row(self):
        rows = {tuple(r.outcomes.values()): r for r in compare_modes(builtin_wfr(), record=DEFAULT_RECORDS["wfr"])}
        row = rows[("okbar", "ok")]
        assert row.external == pytest.approx(1 / 12, abs=1e-10)
        assert row.collapse_synced_path == pytest.approx(1 / 12, abs=1e-10)
        assert row.collapse_nosync == pytest.approx(o.GOLDEN_NOSYNC_COLLAPSE_OKBAR_OK, abs=1e-10)
        assert set(rows) == {("okbar", "ok"), ("okbar", "fail"), ("failbar", "ok"), ("failbar", "fail")}

    def test_columns_each_sum_to_one(self):
        rows = compare_modes(builtin_wfr(), record=DEFAULT_RECORDS["wfr"])
        assert sum(r.external for r in rows) == pytest.approx(1)
        assert sum(r.collapse_nosync for r in rows) == pytest.approx(1)

    def test_wigner_descriptions_differ(self):
        rows = {r.outcomes["w"]: r for r in compare_modes(builtin_wigner(), record=DEFAULT_RECORDS["wigner"])}
        assert rows["fail"].external == pytest.approx(1)
        assert rows["ok"].external == pytest.approx(0, abs=1e-12)
        assert rows["ok"].collapse_nosync == pytest.approx(0.5)
        d = rows["ok"].to_dict()
        assert d["diff_nosync_minus_external"] == pytest.approx(0.5)


class TestAuditAndReports:
    def test_run_audit(self):
        rows = run_audit(builtin_wfr(), builtin_table1_chain(), DEFAULT_RECORDS["wfr"])
        assert [r.statement_id for r in rows if r.verdict != "ok"] == ["F^n:14"]
        p = builtin_wfr_synced()
        rows = run_audit(p, builtin_table1_chain(p), DEFAULT_RECORDS["wfr"], rebase=True)
        assert all(r.verdict == "ok" for r in rows)

    def test_json_fifteen_digits(self):
        text = to_json({"x": 1 / 3, "y": [2 / 3, 1e-30], "z": 0.5})
        d = json.loads(text)
        assert d == {"x": 0.333333333333333, "y": [0.666666666666667, 0.0], "z": 0.5}

    def test_tree_rows_schema(self):
        rows = run_exact(builtin_wigner()).to_rows()
        assert rows[0] == {"path": [], "p_cond": 1.0, "p_cum": 1.0}
        assert {tuple(r["path"]) for r in rows} >= {("up", "fail"), ("down", "ok")}
