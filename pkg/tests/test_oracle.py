import numpy as np
import pytest
from scipy import integrate

from snftm import dgp, oracle
from snftm.core import InstanceTooLargeError, TimeGrid, TreatmentRegime
from snftm.shift import ShiftParams

from conftest import make_config

THRESHOLD = TreatmentRegime.threshold(2, level=1)


def test_death_atoms_partition_unity(rich_world):
    total = 0.0
    for k in range(rich_world.grid.K + 1):
        for node in rich_world.stages[k].values():
            for b, w in enumerate(node.pi):
                total += w * rich_world._bin_mass(b, node.u_alive, node.u_next)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_history_prob_layers_are_coherent(rich_world):
    # summing the dose out of a post-treatment cell recovers the pre-treatment cell
    for (lbar, abar) in rich_world.stages[1]:
        pre = rich_world.history_prob(lbar, abar[:-1])
        post = sum(
            rich_world.history_prob(lbar, abar[:-1] + (a,)) for a in (0, 1)
        )
        assert pre == pytest.approx(post, abs=1e-14)


def test_baseline_regime_recovers_baseline_curve(rich_world):
    never = TreatmentRegime.baseline(2)
    for t in (0.3, 1.0, 2.2, 4.0):
        want = rich_world.cfg.baseline.eval(t)
        assert rich_world.counterfactual_survival(never, t) == pytest.approx(want, abs=1e-12)


def test_null_world_is_regime_free(null_world):
    regimes, _ = oracle.all_regimes((2, 2), (2, 2))
    t_grid = (0.4, 1.1, 2.6)
    base = [null_world.counterfactual_survival(regimes[0], t) for t in t_grid]
    for g in regimes[1:]:
        for t, b in zip(t_grid, base):
            assert null_world.counterfactual_survival(g, t) == pytest.approx(b, abs=1e-12)


def test_counterfactual_mean_against_quadrature(rich_world):
    grid = rich_world.grid
    for g in (TreatmentRegime.baseline(2), THRESHOLD, TreatmentRegime.static((1, 1))):
        # curve kinks: blip images of hazard bounds and prognosis edges per path
        cuts = {1.0}
        for k in range(grid.K + 1):
            for node in rich_world._regime_stages(g)[k].values():
                for x in (1.0, 1.5, 2.0):
                    t = node.t_of_t0(grid, x)
                    if grid.tau(k) < t <= grid.next_tau(k) and 1e-9 < t < 12.0:
                        cuts.add(t)
        head, _ = integrate.quad(
            lambda t: rich_world.counterfactual_survival(g, t), 1e-9, 12.0,
            points=sorted(cuts), limit=400,
        )
        tail, _ = integrate.quad(
            lambda t: rich_world.counterfactual_survival(g, t), 12.0, 250.0, limit=200
        )
        assert rich_world.counterfactual_mean(g) == pytest.approx(head + tail, rel=1e-9)


def test_observed_density_integrates_to_cell_mass(rich_world):
    # integrating the joint density over one death interval recovers the atom mass
    lbar, abar = (1, 1), (1, 0)
    node = rich_world.stages[1][(lbar, abar)]
    mass = sum(
        w * rich_world._bin_mass(b, node.u_alive, node.u_next)
        for b, w in enumerate(node.pi)
    )
    # density kinks sit where the blipped time crosses bin edges or hazard bounds
    cuts = sorted(
        node.t_of_t0(rich_world.grid, x)
        for x in (1.0, 1.5, 2.0)
        if node.u_alive < x
    )
    num, _ = integrate.quad(
        lambda t: rich_world.observed_density(lbar, abar, t), 1.0 + 1e-12, 400.0,
        points=[c for c in cuts if c < 400.0], limit=400,
    )
    assert num == pytest.approx(mass, rel=1e-9)


def test_guard_rejects_large_instances(rich_config):
    with pytest.raises(InstanceTooLargeError):
        oracle.enumerate_world(rich_config, max_cells=3)


class TestVerifyGcomputation:
    def test_passes_for_evaluable_regimes(self, rich_world):
        for g in (THRESHOLD, TreatmentRegime.static((1, 1)), TreatmentRegime.baseline(2)):
            rep = oracle.verify_gcomputation(rich_world, g)
            assert rep.passed and rep.worst < 1e-10

    def test_skips_non_evaluable_regime(self):
        cfg = make_config()
        table = dict(cfg.treatment_law.table)
        table[(1, (1, 1), (1,))] = np.array([1.0, 0.0])
        blocked = dgp.DgpConfig(
            cfg.grid, cfg.baseline, cfg.thresholds, cfg.covariate_law,
            dgp.TreatmentLaw(cfg.treatment_law.levels, table), cfg.psi0,
        )
        world = oracle.enumerate_world(blocked)
        rep = oracle.verify_gcomputation(world, TreatmentRegime.static((1, 1)))
        assert rep.passed and rep.skipped and "not evaluable" in rep.skipped[0]


class TestVerifyBlipTheorems:
    def test_exact_identities_at_truth(self, rich_world):
        reports = oracle.verify_blip_theorems(rich_world)
        for rep in reports.values():
            assert rep.passed, rep
            assert rep.worst < 1e-12

    def test_trivial_at_null(self, null_world):
        reports = oracle.verify_blip_theorems(null_world)
        assert all(r.passed for r in reports.values())

    def test_wrong_parameters_break_independence(self, rich_world):
        reports = oracle.verify_blip_theorems(rich_world, psi=ShiftParams((0.3, 0.0, 0.0)))
        assert not reports["independence"].passed
        assert reports["independence"].worst > 1e-3


class TestVerifyNullEquivalence:
    def test_forward_direction_at_null(self, null_world):
        rep = oracle.verify_null_equivalence(null_world)
        assert rep.passed and "forward" in rep.name
        assert rep.worst < 1e-12

    def test_witness_pair_when_effectful(self, rich_world):
        rep = oracle.verify_null_equivalence(rich_world)
        assert rep.passed and "witness" in rep.name
        assert rep.worst > 1e-3
        assert not rep.skipped  # both witness regimes evaluable

    def test_effect_confined_to_zero_probability_cells(self):
        # covariates are identically 0 (exact structural zero on l_k = 1),
        # and the only effect rides on l_k = 1
        grid = TimeGrid((0.0, 1.0))
        cov = dgp.CovariateLaw.from_logistic(2, 1, intercept=-800.0)
        trt = dgp.TreatmentLaw.from_logistic(2, intercept=-0.5, l_coef=0.5)
        from snftm.core import SurvivalCurve

        cfg = dgp.DgpConfig(
            grid, SurvivalCurve((0.0,), (0.6,)), (), cov, trt,
            ShiftParams((0.0, 0.0, 0.9)),
        )
        world = oracle.enumerate_world(cfg)
        rep = oracle.verify_null_equivalence(world)
        assert "forward" in rep.name and rep.passed


def test_run_suite_shapes(rich_world):
    reports = oracle.run_suite(rich_world, "blip")
    assert set(reports) == {"blip-baseline_law", "blip-independence", "blip-stopped_law"}
    as_dict = reports["blip-independence"].to_dict()
    assert as_dict["passed"] is True and "worst_abs_error" in as_dict
    with pytest.raises(Exception):
        oracle.run_suite(rich_world, "bogus")
