"""Level sets, packings, well relations, and predicted constants."""

import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from gibbstail.combinat import (
    ConstantReport,
    LevelSet,
    PackingBound,
    WellGraph,
    _grid_candidates,
    _independent_count,
    build_index_sets,
    find_turan_counterexample,
    interior_member,
    level_member,
    max_indep_weight,
    packing_number,
    predicted_constants,
    t_a_is_one,
    turan_min_edges,
)
from gibbstail.errors import (
    ConfigError,
    GridTooLarge,
    HypothesisUnmet,
    TooManyWells,
)
from gibbstail.pointproc import (
    AreaModel,
    Box,
    PairwiseModel,
    PoissonModel,
    StraussPotential,
    TablePotential,
    ZeroPotential,
)
from gibbstail.potential import (
    DeltaWell,
    SingleSitePotential,
    TableProfile,
    Well,
)

PHI = StraussPotential(2.0, 1.0)


def single_well(radius, b=1.0, center=(0.0,)):
    profile = TableProfile(radii=(radius,), values=(1.0,))
    return SingleSitePotential(wells=(Well(center=center, b=b,
                                           profile=profile),))


def well_pair(gap, radius=0.1, b1=1.0, b2=0.7):
    profile = TableProfile(radii=(radius,), values=(1.0,))
    return SingleSitePotential(wells=(
        Well(center=(0.0,), b=b1, profile=profile),
        Well(center=(gap,), b=b2, profile=profile),
    ))


class TestLevelSet:
    def test_strauss_members(self):
        assert level_member(PHI, 1.0, [0.5]) is True
        assert level_member(PHI, 3.0, [0.5]) is False
        assert level_member(PHI, 3.0, [0.0]) is True
        assert level_member(PHI, 1.0, [1.0]) is True
        assert level_member(PHI, 1.0, [1.0000001]) is False

    def test_level_set_object(self):
        ls = LevelSet(PHI, 1.5)
        assert ls.member([0.3, 0.4])
        assert not ls.member([0.8, 0.8])
        with pytest.raises(ConfigError):
            LevelSet(PHI, 0.0)
        with pytest.raises(ConfigError):
            level_member(PHI, -1.0, [0.5])

    def test_membership_is_the_ball_below_the_plateau(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            d = int(rng.integers(1, 3))
            x = rng.uniform(-1.5, 1.5, size=d)
            a = float(rng.uniform(1e-6, 2.0))
            assert level_member(PHI, a, x) == (np.linalg.norm(x) <= 1.0)

    def test_interior_and_boundary(self):
        assert interior_member(PHI, 1.0, [0.9])
        assert not interior_member(PHI, 1.0, [1.1])
        assert interior_member(PHI, 1.0, [0.0])
        with pytest.raises(HypothesisUnmet):
            interior_member(PHI, 1.0, [1.0])
        with pytest.raises(HypothesisUnmet):
            interior_member(PHI, 1.0, [1.0 - 5e-10])
        # at the plateau value the strict comparison has nothing inside
        assert not interior_member(PHI, 2.0, [0.5])


class TestPacking:
    def test_interval_closed_form(self):
        phi = StraussPotential(2.0, 0.4)
        assert packing_number(Box(1, 1.0), phi, 1.0,
                              delta=0.01) == PackingBound(3, True)

    def test_tiny_interval_packs_one(self):
        phi = StraussPotential(2.0, 0.4)
        assert packing_number(Box(1, 0.3), phi, 1.0, delta=0.01).value == 1

    def test_exact_divisibility_drops_one(self):
        phi = StraussPotential(2.0, 0.4)
        # three spans of exactly 0.4 hold 3 points, not 4: the 4th would
        # need a strict gap somewhere
        assert packing_number(Box(1, 1.2), phi, 1.0, delta=0.01).value == 3
        assert packing_number(Box(1, 1.2000001), phi, 1.0,
                              delta=0.01).value == 4

    def test_square_counts_corners(self):
        phi = StraussPotential(2.0, 0.9)
        got = packing_number(Box(2, 1.0), phi, 1.0, delta=0.05)
        # the four corners are pairwise at least side 1 > 0.9 apart; a
        # fifth point cannot fit because the four half-side subsquares
        # have diameter sqrt(2)/2 < 0.9 and one of them would hold two
        assert got == PackingBound(4, False)

    def test_grid_bound_below_closed_form(self):
        phi = StraussPotential(2.0, 0.37)
        rng = np.random.default_rng(5)
        for _ in range(25):
            side = float(rng.uniform(0.2, 2.0))
            box = Box(1, side)
            exact = packing_number(box, phi, 1.0, delta=0.01).value
            pts = _grid_candidates(box, 0.01, 0.0)
            assert _independent_count(pts, phi, 1.0) <= exact

    def test_refining_delta_never_decreases(self):
        phi = StraussPotential(2.0, 0.9)
        box = Box(2, 1.0)
        values = [
            _independent_count(_grid_candidates(box, d, 0.0), phi, 1.0)
            for d in (0.2, 0.1, 0.05)
        ]
        assert values == sorted(values)

    def test_dilation_grows_the_region(self):
        phi = StraussPotential(2.0, 0.9)
        base = packing_number(Box(2, 1.0), phi, 1.0, delta=0.1).value
        grown = packing_number(Box(2, 1.0), phi, 1.0, delta=0.1,
                               dilation=0.3).value
        assert grown >= base
        got = packing_number(Box(1, 1.0), phi, 1.0, delta=0.1, dilation=0.4)
        assert got == PackingBound(2, True)

    def test_too_fine_grid_rejected(self):
        with pytest.raises(GridTooLarge):
            packing_number(Box(2, 1.0), StraussPotential(2.0, 0.9), 1.0,
                           delta=0.005)

    def test_level_above_everything_rejected(self):
        with pytest.raises(ConfigError):
            packing_number(Box(1, 1.0), PHI, 3.0, delta=0.1)
        with pytest.raises(ConfigError):
            packing_number(Box(1, 1.0), PHI, 1.0, delta=0.0)

    def test_ring_gap_forces_grid_path(self):
        phi = TablePotential((0.3, 0.6, 1.0), (2.0, 0.5, 2.0))
        got = packing_number(Box(1, 1.0), phi, 1.0, delta=0.01)
        assert not got.exact
        # compatible distances are (0.3, 0.6] and beyond 1; three points
        # in a unit interval with two compatible gaps would need a total
        # span in (0.6, 1.2] that also avoids (0.6, 1], impossible
        assert got.value == 2


class TestSupportSmallness:
    def test_small_well_support(self):
        assert t_a_is_one(single_well(0.4), PHI, 1.0)

    def test_wide_well_support(self):
        assert not t_a_is_one(single_well(0.6), PHI, 1.0)

    def test_level_above_interaction(self):
        assert not t_a_is_one(single_well(0.4), PHI, 2.5)

    def test_boundary_well_radius(self):
        with pytest.raises(HypothesisUnmet):
            t_a_is_one(single_well(0.5), PHI, 1.0)

    def test_two_small_wells(self):
        assert t_a_is_one(well_pair(0.3), PHI, 1.0)
        assert not t_a_is_one(well_pair(1.5), PHI, 1.0)

    def test_point_well_always_small(self):
        V = SingleSitePotential(wells=(Well(center=(0.0,), b=1.0,
                                            profile=DeltaWell(c=1.0)),))
        assert t_a_is_one(V, PHI, 1.999998)


class TestIndexSets:
    def test_close_pair_fully_related(self):
        sets = build_index_sets([(0.0,), (0.5,)], [0.1, 0.1], PHI, 1.0)
        assert (0, 1) in sets.contact and (1, 0) in sets.contact
        assert (0, 1) in sets.center_deep
        assert (0, 1) in sets.support_deep
        assert (0, 0) in sets.contact

    def test_far_pair_unrelated(self):
        sets = build_index_sets([(0.0,), (2.0,)], [0.1, 0.1], PHI, 1.0)
        assert (0, 1) not in sets.contact
        assert (0, 1) not in sets.center_deep
        assert (0, 1) not in sets.support_deep

    def test_wide_supports_drop_out_of_the_deep_relation(self):
        sets = build_index_sets([(0.0,), (0.9,)], [0.1, 0.1], PHI, 1.0)
        assert (0, 1) in sets.contact
        assert (0, 1) in sets.center_deep
        assert (0, 1) not in sets.support_deep

    def test_boundary_distance_rejected(self):
        with pytest.raises(HypothesisUnmet):
            build_index_sets([(0.0,), (1.0,)], [0.0, 0.0], PHI, 1.0)

    def test_symmetry_and_nesting(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            q = int(rng.integers(2, 6))
            centers = [tuple(rng.uniform(-2.0, 2.0, size=2))
                       for _ in range(q)]
            radii = rng.uniform(0.0, 0.15, size=q)
            try:
                sets = build_index_sets(centers, radii, PHI, 1.3)
            except HypothesisUnmet:
                continue
            assert sets.support_deep <= sets.center_deep
            for rel in (sets.contact, sets.support_deep, sets.center_deep):
                assert {(j, i) for i, j in rel} == set(rel)


def _brute_best(weights, adj):
    q = len(weights)
    best = 0.0
    for mask in range(1 << q):
        ok = True
        for i in range(q):
            if mask >> i & 1 and adj[i] & mask:
                ok = False
                break
        if ok:
            best = max(best,
                       sum(weights[i] ** 2 for i in range(q)
                           if mask >> i & 1))
    return best


class TestMaxWeight:
    def test_two_well_cases(self):
        close = WellGraph(((0.0,), (0.5,)), (1.0, 0.7), {(0, 1)})
        got = max_indep_weight(close)
        assert got.value == 1.0 and got.witness == (0,)
        apart = WellGraph(((0.0,), (3.0,)), (1.0, 0.7), frozenset())
        got = max_indep_weight(apart)
        assert got.value == pytest.approx(1.49) and got.witness == (0, 1)

    def test_single_well(self):
        g = WellGraph(((0.0,),), (2.0,), frozenset())
        assert max_indep_weight(g).value == 4.0

    def test_relation_override(self):
        g = WellGraph(((0.0,), (0.5,)), (1.0, 0.7), {(0, 1)})
        free = max_indep_weight(g, relation=frozenset())
        assert free.value == pytest.approx(1.49)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            q = int(rng.integers(1, 11))
            weights = tuple(float(b) for b in rng.uniform(0.2, 2.0, size=q))
            edges = set()
            adj = [0] * q
            for i, j in itertools.combinations(range(q), 2):
                if rng.random() < 0.35:
                    edges.add((i, j))
                    adj[i] |= 1 << j
                    adj[j] |= 1 << i
            graph = WellGraph(tuple((float(i),) for i in range(q)),
                              weights, edges)
            got = max_indep_weight(graph)
            assert got.value == pytest.approx(_brute_best(weights, adj),
                                              rel=1e-12)
            assert sum(weights[i] ** 2 for i in got.witness) == \
                pytest.approx(got.value, rel=1e-12)
            for i, j in itertools.combinations(got.witness, 2):
                assert (i, j) not in edges

    def test_monotone_under_nested_relations(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            q = int(rng.integers(2, 9))
            weights = tuple(float(b) for b in rng.uniform(0.2, 2.0, size=q))
            pairs = list(itertools.combinations(range(q), 2))
            big = {p for p in pairs if rng.random() < 0.5}
            small = {p for p in big if rng.random() < 0.5}
            graph = WellGraph(tuple((float(i),) for i in range(q)),
                              weights, frozenset())
            v_big = max_indep_weight(graph, relation=big).value
            v_small = max_indep_weight(graph, relation=small).value
            assert v_big <= v_small + 1e-12

    def test_too_many_wells(self):
        with pytest.raises(TooManyWells):
            WellGraph(tuple((float(i),) for i in range(21)),
                      (1.0,) * 21, frozenset())

    def test_edge_validation(self):
        with pytest.raises(ConfigError):
            WellGraph(((0.0,), (1.0,)), (1.0, 1.0), {(0, 5)})


def _alpha_table(n):
    """Independence number per edge-bitmask graph on n vertices."""
    pairs = list(itertools.combinations(range(n), 2))
    pairmask = []
    for s in range(1 << n):
        pm = 0
        for idx, (i, j) in enumerate(pairs):
            if s >> i & 1 and s >> j & 1:
                pm |= 1 << idx
        pairmask.append(pm)
    sizes = [bin(s).count("1") for s in range(1 << n)]
    table = []
    for g in range(1 << len(pairs)):
        alpha = max(sizes[s] for s in range(1 << n)
                    if g & pairmask[s] == 0)
        table.append(alpha)
    return table, len(pairs)


class TestTuran:
    def test_bound_values(self):
        assert turan_min_edges(4, 2) == Fraction(2)
        assert turan_min_edges(5, 2) == Fraction(15, 4)
        assert turan_min_edges(3, 5) == Fraction(0)
        assert turan_min_edges(4.7, 2) == turan_min_edges(4, 2)
        with pytest.raises(ConfigError):
            turan_min_edges(0, 1)
        with pytest.raises(ConfigError):
            turan_min_edges(4, 0)
        with pytest.raises(ConfigError):
            turan_min_edges(4, 1.5)

    def test_exhaustive_minima_match(self):
        # smallest edge count over all graphs with independence number
        # at most two: 2 on four vertices, 4 on five
        for n, want in ((4, 2), (5, 4)):
            table, n_pairs = _alpha_table(n)
            best = min(bin(g).count("1") for g in range(1 << n_pairs)
                       if table[g] <= 2)
            assert best == want
            assert Fraction(best) >= turan_min_edges(n, 2)

    def test_bound_holds_exhaustively(self):
        for n in (3, 4, 5):
            table, n_pairs = _alpha_table(n)
            for g in range(1 << n_pairs):
                edges = bin(g).count("1")
                assert Fraction(edges) >= turan_min_edges(n, table[g])

    def test_scan_agrees(self):
        for n in (3, 4, 5):
            assert find_turan_counterexample(n) is None
        with pytest.raises(ConfigError):
            find_turan_counterexample(8)


class TestConstants:
    def test_dilute_regime(self):
        rep = predicted_constants(PoissonModel(1.0), single_well(0.4))
        assert rep.regime == "dilute"
        assert rep.regressor == "g_log_g"
        assert rep.slope == -1.0
        assert rep.a0 is None

    def test_single_small_well(self):
        model = PairwiseModel(PHI, 1.0)
        rep = predicted_constants(model, single_well(0.4))
        assert rep.regime == "single-well"
        assert rep.regressor == "g_squared"
        assert rep.slope == -1.0
        assert rep.a0 == 2.0
        assert rep.level_sup == 2.0
        assert dict(rep.checklist)["small-support"] is True

    def test_single_wide_well(self):
        model = PairwiseModel(PHI, 1.0)
        rep = predicted_constants(model, single_well(0.6))
        # support differences span up to 1.2 > 1, so two support points
        # can be compatible: the packing count doubles and the level
        # ratio supremum halves
        assert dict(rep.checklist)["small-support"] is False
        assert rep.level_sup == pytest.approx(1.0)
        assert rep.slope == pytest.approx(-0.5)

    def test_two_wells_apart(self):
        model = PairwiseModel(PHI, 1.0)
        rep = predicted_constants(model, well_pair(3.0))
        assert rep.regime == "multi-well"
        assert rep.regressor == "combined_g_squared"
        assert rep.indep_weight == pytest.approx(1.49)
        assert rep.slope == pytest.approx(-2.0 / (2.0 * 1.49))
        assert rep.witness == (0, 1)
        assert all(ok for _, ok in rep.checklist)

    def test_two_wells_close(self):
        model = PairwiseModel(PHI, 1.0)
        rep = predicted_constants(model, well_pair(0.5))
        assert rep.indep_weight == pytest.approx(1.0)
        assert rep.slope == pytest.approx(-1.0)
        assert rep.witness == (0,)

    def test_unstable_relations_rejected(self):
        # centers 0.9 apart touch (0.9 <= 1) but their supports reach
        # out to 1.1 > 1, so the deep-support relation drops the pair
        model = PairwiseModel(PHI, 1.0)
        with pytest.raises(HypothesisUnmet) as err:
            predicted_constants(model, well_pair(0.9))
        assert err.value.check == "relation-stability"

    def test_area_model_unsupported(self):
        with pytest.raises(HypothesisUnmet) as err:
            predicted_constants(AreaModel(1.0), single_well(0.4))
        assert err.value.check == "uniform-core"

    def test_needs_wells(self):
        wellless = SingleSitePotential(
            v4=TableProfile(radii=(0.5,), values=(0.3,)))
        with pytest.raises(HypothesisUnmet) as err:
            predicted_constants(PairwiseModel(PHI, 1.0), wellless)
        assert err.value.check == "wells-present"

    def test_hard_core_unsupported(self):
        model = PairwiseModel(StraussPotential(math.inf, 1.0), 1.0)
        with pytest.raises(HypothesisUnmet) as err:
            predicted_constants(model, single_well(0.4))
        assert err.value.check == "uniform-core"

    def test_free_interaction_unsupported(self):
        model = PairwiseModel(ZeroPotential(), 1.0)
        with pytest.raises(HypothesisUnmet) as err:
            predicted_constants(model, single_well(0.4))
        assert err.value.check == "uniform-core"

    def test_json_round_trip(self):
        rep = predicted_constants(PairwiseModel(PHI, 1.0), single_well(0.4))
        doc = json.loads(rep.to_json())
        assert doc["slope"] == rep.slope
        assert doc["checklist"] == {"uniform-core": True,
                                    "small-support": True}
        assert rep.to_json() == rep.to_json()

    def test_report_validation(self):
        with pytest.raises(ConfigError):
            ConstantReport(regime="dilute", regressor="g_log_g", slope=1.0)
        with pytest.raises(ConfigError):
            ConstantReport(regime="dilute", regressor="g_log_g",
                           slope=-1.0, a0=-2.0)
