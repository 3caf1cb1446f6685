"""Profiles, site potentials, grids, and field assembly."""

import math

import numpy as np
import pytest

from gibbstail.errors import (
    ConfigError,
    CutoffTooSmall,
    ShapeMismatch,
    SingularPoint,
)
from gibbstail.pointproc import Box, Configuration
from gibbstail.potential import (
    DeltaWell,
    ExpTail,
    GridSpec,
    PowerLaw,
    ScreenedCoulomb,
    SingleSitePotential,
    SquareWell,
    TableProfile,
    Well,
    assemble_field,
    default_cutoff,
    evaluate_single_site,
    load_field,
    potential_from_json,
    potential_to_json,
    save_field,
    tail_truncation_bound,
)


def single_well(profile, dim=1, b=1.0):
    return SingleSitePotential(wells=(Well((0.0,) * dim, b, profile),))


class TestProfiles:
    def test_square_well_values(self):
        w = SquareWell(depth=5.0, radius=1.0)
        assert w.value(0.5) == -5.0
        assert w.value(1.0) == -5.0
        assert w.value(1.0000001) == 0.0
        assert w.support_radius == 1.0

    def test_square_well_validation(self):
        with pytest.raises(ConfigError):
            SquareWell(depth=0.0, radius=1.0)
        with pytest.raises(ConfigError):
            SquareWell(depth=1.0, radius=-1.0)

    def test_screened_coulomb_reference_value(self):
        p = ScreenedCoulomb()
        assert float(p.value(1.0)) == pytest.approx(-math.exp(-1.0))
        assert float(p.value(1.0)) == pytest.approx(-0.3679, abs=1e-4)
        p.check_dimension(3)
        with pytest.raises(ConfigError):
            p.check_dimension(2)

    def test_power_law_validation_depends_on_dimension(self):
        p = PowerLaw(nu=0.5, amplitude=-1.0, cutoff=1.0)
        p.check_dimension(2)
        with pytest.raises(ConfigError):
            p.check_dimension(1)
        with pytest.raises(ConfigError):
            PowerLaw(nu=2.5, amplitude=-1.0, cutoff=1.0)
        with pytest.raises(ConfigError):
            PowerLaw(nu=0.5, amplitude=1.0, cutoff=1.0)

    def test_power_law_values_and_cutoff(self):
        p = PowerLaw(nu=0.4, amplitude=-2.0, cutoff=1.5)
        assert float(p.value(0.5)) == pytest.approx(-2.0 * 0.5**-0.4)
        assert float(p.value(1.5)) == pytest.approx(-2.0 * 1.5**-0.4)
        assert float(p.value(1.51)) == 0.0
        assert float(p.value(0.0)) == -math.inf

    def test_delta_well_is_zero_away_from_center(self):
        d = DeltaWell(c=2.0)
        assert float(d.value(0.3)) == 0.0
        d.check_dimension(1)
        with pytest.raises(ConfigError):
            d.check_dimension(2)
        with pytest.raises(ConfigError):
            DeltaWell(c=-1.0)

    def test_table_profile_steps(self):
        t = TableProfile((0.5, 1.0), (-3.0, -1.0))
        assert float(t.value(0.2)) == -3.0
        assert float(t.value(0.5)) == -3.0
        assert float(t.value(0.7)) == -1.0
        assert float(t.value(1.2)) == 0.0
        with pytest.raises(ConfigError):
            TableProfile((1.0, 0.5), (-1.0, -2.0))


class TestSingleSite:
    def test_needs_some_part(self):
        with pytest.raises(ConfigError):
            SingleSitePotential()

    def test_weights_must_be_positive(self):
        with pytest.raises(ConfigError):
            Well((0.0,), 0.0, SquareWell(1.0, 1.0))

    def test_evaluate_square_well(self):
        V = single_well(SquareWell(depth=5.0, radius=1.0))
        assert evaluate_single_site(V, [0.5]) == -5.0
        assert evaluate_single_site(V, [2.0]) == 0.0

    def test_two_wells_midpoint_is_twice_one(self):
        prof = SquareWell(depth=3.0, radius=2.0)
        y = 1.6
        V = SingleSitePotential(wells=(
            Well((0.0,), 1.0, prof), Well((y,), 1.0, prof),
        ))
        mid = evaluate_single_site(V, [y / 2])
        assert mid == pytest.approx(2.0 * float(prof.value(y / 2)))

    def test_screened_coulomb_site(self):
        V = SingleSitePotential(
            wells=(Well((0.0, 0.0, 0.0), 1.0, ScreenedCoulomb()),)
        )
        got = evaluate_single_site(V, [1.0, 0.0, 0.0])
        assert got == pytest.approx(-math.exp(-1.0))

    def test_singular_hit_raises(self):
        V = SingleSitePotential(
            wells=(Well((0.0, 0.0, 0.0), 1.0, ScreenedCoulomb()),)
        )
        with pytest.raises(SingularPoint):
            evaluate_single_site(V, [0.0, 0.0, 0.0])
        D = single_well(DeltaWell(c=1.0))
        with pytest.raises(SingularPoint):
            evaluate_single_site(D, [0.0])

    def test_tail_contributes(self):
        V = SingleSitePotential(tail=ExpTail(amplitude=-0.5, rate=2.0))
        assert evaluate_single_site(V, [1.0]) == pytest.approx(
            -0.5 * math.exp(-2.0)
        )

    def test_p_floor_advisory(self):
        V = single_well(SquareWell(1.0, 1.0))
        assert V.p_is_admissible(1)
        assert SingleSitePotential.p_floor(3) == 2.0
        assert SingleSitePotential.p_floor(6) == 3.0
        low = SingleSitePotential(
            wells=(Well((0.0,), 1.0, SquareWell(1.0, 1.0)),), p=1.5
        )
        assert not low.p_is_admissible(1)

    def test_nonnegative_extra_requires_disjoint_wells(self):
        prof = SquareWell(1.0, 1.0)
        bump = TableProfile((0.5,), (2.0,))
        SingleSitePotential(
            wells=(Well((0.0,), 1.0, prof), Well((2.5,), 1.0, prof)),
            v5=bump,
        )
        with pytest.raises(ConfigError):
            SingleSitePotential(
                wells=(Well((0.0,), 1.0, prof), Well((1.5,), 1.0, prof)),
                v5=bump,
            )
        with pytest.raises(ConfigError):
            SingleSitePotential(
                wells=(Well((0.0,), 1.0, prof),),
                v5=TableProfile((0.5,), (-1.0,)),
            )

    def test_dimension_mismatch(self):
        V = single_well(SquareWell(1.0, 1.0), dim=2)
        with pytest.raises(ConfigError):
            evaluate_single_site(V, [0.5])


class TestGridSpec:
    def test_dirichlet_nodes(self):
        g = GridSpec(Box(1, 2.0, center=(0.0,)), h=0.5)
        assert g.nodes_per_axis == 3
        assert np.allclose(g.axis_nodes(), [-0.5, 0.0, 0.5])

    def test_bloch_nodes_include_upper_face(self):
        tor = Box(1, 2.0, center=(0.0,), periodic=True)
        g = GridSpec(tor, h=0.5, boundary="bloch", theta=(0.0,))
        assert g.nodes_per_axis == 4
        assert np.allclose(g.axis_nodes(), [-0.5, 0.0, 0.5, 1.0])

    def test_spacing_must_divide_side(self):
        with pytest.raises(ConfigError):
            GridSpec(Box(1, 2.0), h=0.3)

    def test_bloch_needs_periodic_box_and_phases(self):
        with pytest.raises(ConfigError):
            GridSpec(Box(1, 2.0), h=0.5, boundary="bloch", theta=(0.0,))
        tor = Box(1, 2.0, periodic=True)
        with pytest.raises(ConfigError):
            GridSpec(tor, h=0.5, boundary="bloch", theta=())
        with pytest.raises(ConfigError):
            GridSpec(tor, h=0.5, boundary="bloch", theta=(math.pi * 1.01,))
        with pytest.raises(ConfigError):
            GridSpec(tor, h=0.5, theta=(0.1,))

    def test_node_coords_rowmajor(self):
        g = GridSpec(Box(2, 1.0, center=(0.5, 0.5)), h=0.5)
        assert g.shape == (1, 1)
        assert np.allclose(g.node_coords(), [[0.5, 0.5]])
        g2 = GridSpec(Box(2, 1.5, center=(0.75, 0.75)), h=0.5)
        coords = g2.node_coords()
        assert coords.shape == (4, 2)
        assert np.allclose(coords[0], [0.5, 0.5])
        assert np.allclose(coords[1], [0.5, 1.0])


class TestAssembly:
    def test_empty_configuration_zero_field(self):
        V = single_well(SquareWell(2.0, 0.5))
        box = Box(1, 4.0, center=(0.0,))
        grid = GridSpec(box, h=0.25)
        field = assemble_field(V, Configuration.empty(box), grid)
        assert field.shape == grid.shape
        assert not field.any()

    def test_single_point_square_well_matches_translation(self):
        V = single_well(SquareWell(depth=2.0, radius=0.5))
        box = Box(1, 4.0, center=(0.0,))
        grid = GridSpec(box, h=0.25)
        cfg = Configuration(np.array([[0.0]]), box)
        field = assemble_field(V, cfg, grid)
        nodes = grid.axis_nodes()
        expect = np.where(np.abs(nodes) <= 0.5, -2.0, 0.0)
        assert np.array_equal(field, expect)

    def test_linearity_exact(self):
        V = SingleSitePotential(
            wells=(Well((0.0,), 1.3, SquareWell(1.0, 0.7)),),
            tail=ExpTail(-0.4, 1.0),
        )
        box = Box(1, 6.0, center=(0.0,))
        grid = GridSpec(box, h=0.25)
        a = Configuration(np.array([[-1.0]]), box)
        b = Configuration(np.array([[0.75]]), box)
        both = Configuration(np.array([[-1.0], [0.75]]), box)
        fa = assemble_field(V, a, grid)
        fb = assemble_field(V, b, grid)
        fab = assemble_field(V, both, grid)
        assert np.array_equal(fab, fa + fb)

    def test_points_outside_grid_box_still_contribute(self):
        V = single_well(SquareWell(depth=1.0, radius=1.0))
        inner = Box(1, 2.0, center=(0.0,))
        outer = Box(1, 6.0, center=(0.0,))
        grid = GridSpec(inner, h=0.5)
        cfg = Configuration(np.array([[1.5]]), outer)
        field = assemble_field(V, cfg, grid)
        nodes = grid.axis_nodes()
        expect = np.where(np.abs(nodes - 1.5) <= 1.0, -1.0, 0.0)
        assert np.array_equal(field, expect)

    def test_cutoff_validation_and_default(self):
        V = SingleSitePotential(tail=ExpTail(-1.0, rate=2.0))
        assert default_cutoff(V) == 5.0
        box = Box(1, 4.0, center=(0.0,))
        grid = GridSpec(box, h=0.5)
        cfg = Configuration(np.array([[0.0]]), box)
        with pytest.raises(CutoffTooSmall):
            assemble_field(V, cfg, grid, cutoff_radius=2.0)
        assert tail_truncation_bound(V, 5.0) == pytest.approx(math.exp(-10.0))

    def test_tail_truncates_at_cutoff(self):
        V = SingleSitePotential(tail=ExpTail(-1.0, rate=1.0))
        box = Box(1, 16.0, center=(0.0,))
        grid = GridSpec(box, h=1.0)
        cfg = Configuration(np.array([[0.0]]), box)
        field = assemble_field(V, cfg, grid, cutoff_radius=5.0).ravel()
        nodes = grid.axis_nodes()
        inside = np.abs(nodes) <= 5.0
        assert np.array_equal(field[~inside], np.zeros((~inside).sum()))
        assert np.allclose(field[inside], -np.exp(-np.abs(nodes[inside])))

    def test_delta_well_deposits_mass_on_one_node(self):
        V = single_well(DeltaWell(c=2.0))
        box = Box(1, 2.0, center=(0.0,))
        grid = GridSpec(box, h=0.01)
        cfg = Configuration(np.array([[0.0]]), box)
        field = assemble_field(V, cfg, grid).ravel()
        nz = np.flatnonzero(field)
        assert nz.size == 1
        assert field[nz[0]] == pytest.approx(-200.0)
        # integral is preserved at any spacing
        assert field.sum() * grid.h == pytest.approx(-2.0)

    def test_delta_well_outside_grid_contributes_nothing(self):
        V = single_well(DeltaWell(c=2.0))
        inner = Box(1, 2.0, center=(0.0,))
        outer = Box(1, 8.0, center=(0.0,))
        grid = GridSpec(inner, h=0.01)
        cfg = Configuration(np.array([[3.0]]), outer)
        assert not assemble_field(V, cfg, grid).any()

    def test_shape_mismatch(self):
        V = single_well(SquareWell(1.0, 1.0))
        box2 = Box(2, 2.0)
        grid = GridSpec(Box(1, 2.0), h=0.5)
        cfg = Configuration(np.array([[0.5, 0.5]]), box2)
        with pytest.raises((ShapeMismatch, ConfigError)):
            assemble_field(V, cfg, grid)

    def test_two_dimensional_assembly(self):
        V = single_well(SquareWell(depth=1.0, radius=0.6), dim=2)
        box = Box(2, 4.0, center=(0.0, 0.0))
        grid = GridSpec(box, h=0.5)
        cfg = Configuration(np.array([[0.0, 0.0]]), box)
        field = assemble_field(V, cfg, grid)
        coords = grid.node_coords()
        r = np.sqrt((coords**2).sum(axis=1))
        expect = np.where(r <= 0.6, -1.0, 0.0).reshape(grid.shape)
        assert np.array_equal(field, expect)


class TestPeriodicAssembly:
    def test_wrap_contribution_reaches_across_the_seam(self):
        V = single_well(SquareWell(depth=1.0, radius=0.75))
        tor = Box(1, 4.0, center=(0.0,), periodic=True)
        grid = GridSpec(tor, h=0.25, boundary="bloch", theta=(0.0,))
        cfg = Configuration(np.array([[1.875]]), tor)
        field = assemble_field(V, cfg, grid).ravel()
        nodes = grid.axis_nodes()
        dist = np.abs(nodes - 1.875)
        dist = np.minimum(dist, 4.0 - dist)
        expect = np.where(dist <= 0.75, -1.0, 0.0)
        assert np.array_equal(field, expect)

    def test_lattice_translation_cycles_the_field(self):
        # dyadic coordinates keep every distance exactly representable, so
        # the cyclic-shift identity holds bitwise
        V = SingleSitePotential(
            wells=(Well((0.0,), 1.0, SquareWell(depth=1.5, radius=0.5)),),
            tail=ExpTail(-0.25, rate=2.0),
        )
        tor = Box(1, 4.0, center=(0.0,), periodic=True)
        grid = GridSpec(tor, h=0.25, boundary="bloch", theta=(0.0,))
        pts = np.array([[-1.5], [0.25], [1.75]])
        base = assemble_field(V, Configuration(pts, tor), grid).ravel()
        k = 3
        shifted_pts = tor.wrap(pts + k * 0.25)
        shifted = assemble_field(
            V, Configuration(shifted_pts, tor), grid
        ).ravel()
        assert np.array_equal(shifted, np.roll(base, k))

    def test_torus_mismatch_rejected(self):
        V = single_well(SquareWell(1.0, 0.5))
        tor = Box(1, 4.0, periodic=True)
        grid = GridSpec(tor, h=0.5, boundary="bloch", theta=(0.0,))
        other = Box(1, 6.0, center=(3.0,))
        cfg = Configuration(np.array([[1.0]]), other)
        with pytest.raises(ConfigError):
            assemble_field(V, cfg, grid)


class TestRegularization:
    def ground_energy(self, field, h):
        """Smallest eigenvalue of the standard three-point stencil plus the
        field, dense reference."""
        m = field.size
        mat = (
            np.diag(2.0 / h**2 + field)
            - np.diag(np.full(m - 1, 1.0 / h**2), 1)
            - np.diag(np.full(m - 1, 1.0 / h**2), -1)
        )
        return float(np.linalg.eigvalsh(mat)[0])

    def test_power_law_two_resolutions_agree(self):
        # the cell-averaged singular node keeps the well's mass, so the
        # discrete ground energy converges; two spacings must agree to 1%
        prof = PowerLaw(nu=0.4, amplitude=-3.0, cutoff=1.0)
        V = SingleSitePotential(wells=(Well((0.0,), 1.0, prof),))
        box = Box(1, 16.0, center=(0.0,))
        energies = {}
        for h in (1 / 128, 1 / 256):
            grid = GridSpec(box, h=h)
            cfg = Configuration(np.array([[0.0]]), box)
            field = assemble_field(V, cfg, grid).ravel()
            energies[h] = self.ground_energy(field, h)
        e1, e2 = energies[1 / 128], energies[1 / 256]
        assert e2 < 0
        assert abs(e1 - e2) < 0.01 * abs(e2)

    def test_interval_average_closed_form(self):
        prof = PowerLaw(nu=0.4, amplitude=-3.0, cutoff=1.0)
        h = 0.01
        expect = -3.0 * (h / 2) ** -0.4 / (1.0 - 0.4)
        assert prof.cell_average(h, 1) == pytest.approx(expect, rel=1e-12)

    def test_screened_coulomb_ball_average(self):
        prof = ScreenedCoulomb()
        h = 0.02
        a = h / 2
        # exact ball average of -exp(-r)/r
        expect = -3.0 * (1.0 - (1.0 + a) * math.exp(-a)) / a**3
        assert prof.cell_average(h, 3) == pytest.approx(expect, rel=1e-12)
        # at small radius it approaches the -3/(2a) asymptote of -1/r
        assert prof.cell_average(h, 3) == pytest.approx(
            -1.5 / a, rel=2 * a
        )

    def test_singular_node_uses_cell_average(self):
        prof = PowerLaw(nu=0.4, amplitude=-1.0, cutoff=1.0)
        V = SingleSitePotential(wells=(Well((0.0,), 1.0, prof),))
        box = Box(1, 2.0, center=(0.0,))
        grid = GridSpec(box, h=0.5)
        cfg = Configuration(np.array([[0.0]]), box)
        field = assemble_field(V, cfg, grid).ravel()
        assert field[1] == pytest.approx(prof.cell_average(0.5, 1))
        assert np.isfinite(field).all()


class TestSerialization:
    def test_round_trip(self):
        V = SingleSitePotential(
            wells=(
                Well((0.0,), 1.0, SquareWell(2.0, 0.5)),
                Well((2.0,), 0.7, TableProfile((0.3,), (-1.0,))),
            ),
            tail=ExpTail(-0.4, 1.5),
            v4=TableProfile((0.2,), (0.5,)),
            p=3.0,
        )
        back = potential_from_json(potential_to_json(V))
        assert back == V

    def test_all_profile_kinds(self):
        kinds = [
            SquareWell(1.0, 1.0),
            ScreenedCoulomb(),
            PowerLaw(0.3, -1.0, 2.0),
            DeltaWell(1.5),
            TableProfile((1.0, 2.0), (-2.0, -0.5)),
        ]
        for prof in kinds:
            V = SingleSitePotential(wells=(Well((0.0,), 1.0, prof),))
            back = potential_from_json(potential_to_json(V))
            assert back.wells[0].profile == prof

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            potential_from_json({"wells": [
                {"center": [0.0], "b": 1.0, "profile": {"kind": "mystery"}}
            ]})

    def test_field_file_round_trip(self, tmp_path):
        V = single_well(SquareWell(1.0, 0.5))
        box = Box(1, 4.0, center=(0.0,))
        grid = GridSpec(box, h=0.25)
        cfg = Configuration(np.array([[0.5]]), box)
        field = assemble_field(V, cfg, grid)
        prefix = tmp_path / "field"
        save_field(field, grid, prefix)
        back, grid2 = load_field(prefix)
        assert np.array_equal(back, field)
        assert grid2 == grid
