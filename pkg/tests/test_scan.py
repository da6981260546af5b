import numpy as np
import pytest

from elapsed_stability.firing import CustomModel, RefractoryModel, SatQuad, Sigmoid9
from elapsed_stability.scan import (LEVEL_A_EQ_1, LEVEL_A_EQ_1_PLUS_SIGMA_PHI, bifurcation_scan, constant_family,
                                    find_fold_points, find_level_crossings, pseudo_eq_fixed_point_state,
                                    pseudo_equilibrium_sequence, satquad_family, sigmoid9_family)
from elapsed_stability.steady import find_steady_states, integral_I


@pytest.fixture(scope="module")
def sigmoid_scan():
    return bifurcation_scan(sigmoid9_family(), 0.8, 1.7, 100, threads=4)


@pytest.fixture(scope="module")
def satquad_scan():
    return bifurcation_scan(satquad_family(), 0.0, 1.5, 100, threads=4)


@pytest.fixture(scope="module")
def sigmoid_folds(sigmoid_scan):
    return find_fold_points(sigmoid_scan)


def test_scan_rejects_bad_arguments():
    with pytest.raises(ValueError):
        bifurcation_scan(satquad_family(), 1.0, 0.5)
    with pytest.raises(ValueError):
        bifurcation_scan(satquad_family(), 0.0, 1.0, n_points=10)


def test_sigmoid_counts(sigmoid_scan):
    b, counts = sigmoid_scan.b_values, sigmoid_scan.counts
    assert not sigmoid_scan.failures
    assert np.all(counts[(b < 0.93) | (b > 1.532)] == 1)
    assert np.all(counts[(b > 0.932) & (b < 1.531)] == 3)


def test_sigmoid_branches_are_continuous(sigmoid_scan):
    for bid in sigmoid_scan.branch_ids:
        rows = sigmoid_scan.branch(bid)
        bs = np.array([row.b for row in rows])
        assert np.all(np.diff(bs) > 0)
        assert np.max(np.abs(np.diff([row.r_star for row in rows]))) < 0.1


def test_sigmoid_folds(sigmoid_folds):
    assert [f.b for f in sigmoid_folds] == [pytest.approx(0.9313, abs=1e-3), pytest.approx(1.5314, abs=1e-3)]
    for fold in sigmoid_folds:
        assert fold.resolved
        assert fold.slope_inv_I == pytest.approx(1.0, abs=1e-3)


def test_sigmoid_unit_level_crossings(sigmoid_scan, sigmoid_folds):
    crossings = find_level_crossings(sigmoid_scan, LEVEL_A_EQ_1, sigmoid_folds)
    bs = sorted(c.b for c in crossings if c.bracketed)
    assert bs == [pytest.approx(0.9480, abs=1e-3), pytest.approx(1.5301, abs=1e-3)]


def test_second_level_is_met_at_folds(sigmoid_scan, sigmoid_folds):
    crossings = find_level_crossings(sigmoid_scan, LEVEL_A_EQ_1_PLUS_SIGMA_PHI, sigmoid_folds)
    fold_bs = [f.b for f in sigmoid_folds]
    for c in crossings:
        assert min(abs(c.b - fb) for fb in fold_bs) <= 1e-3


def test_satquad_single_branch_and_window(satquad_scan):
    assert np.all(satquad_scan.counts == 1)
    assert find_fold_points(satquad_scan) == []
    unstable = [row.b for row in satquad_scan.rows if row.verdict_d0 == "Unstable"]
    assert min(unstable) > 0.4750 - 1e-3 and max(unstable) < 1.0730 + 1e-3
    stable = [row.b for row in satquad_scan.rows if row.verdict_d0 == "Stable"]
    assert all(b < 0.4750 + 1e-3 or b > 1.0730 - 1e-3 for b in stable)


def test_satquad_level_crossings(satquad_scan):
    crossings = find_level_crossings(satquad_scan, LEVEL_A_EQ_1)
    assert [c.b for c in crossings] == [pytest.approx(0.4750, abs=1e-3), pytest.approx(1.0730, abs=1e-3)]


def test_constant_family_is_flat_and_stable():
    scan = bifurcation_scan(constant_family(1.0, 0.5), 0.0, 2.0, 50)
    assert len(scan.branch_ids) == 1
    assert all(row.r_star == pytest.approx(2 / 3, abs=1e-12) and row.A_star == 0 for row in scan.rows)
    assert all(row.verdict_d0 == "Stable" and row.verdict_dpos == "Stable" for row in scan.rows)
    assert find_fold_points(scan) == []
    assert find_level_crossings(scan) == []


@pytest.mark.parametrize("scan_name", ["sigmoid_scan", "satquad_scan"])
def test_verdict_changes_only_at_clause_boundaries(request, scan_name):
    scan = request.getfixturevalue(scan_name)
    folds = find_fold_points(scan)
    marks = [f.b for f in folds]
    for level in (LEVEL_A_EQ_1, LEVEL_A_EQ_1_PLUS_SIGMA_PHI):
        marks += [c.b for c in find_level_crossings(scan, level, folds)]
    for bid in scan.branch_ids:
        rows = scan.branch(bid)
        for prev, cur in zip(rows, rows[1:]):
            if prev.verdict_d0 != cur.verdict_d0:
                assert any(prev.b - 1e-9 <= m <= cur.b + 1e-9 for m in marks)


def test_pseudo_eq_constant_model(constant):
    seq = pseudo_equilibrium_sequence(constant, 3.0)
    assert seq.converged and seq.converged_at == 1
    assert seq.x[1] == pytest.approx(2 / 3, abs=1e-15)


def test_pseudo_eq_satquad_converges(satquad, satquad_state):
    seq = pseudo_equilibrium_sequence(satquad, 0.6)
    assert seq.converged
    assert seq.fixed_point == pytest.approx(0.4729, abs=1e-3)
    assert seq.fixed_point == pytest.approx(satquad_state.r_star, abs=1e-6)
    assert abs(seq.fixed_point * integral_I(satquad, seq.fixed_point) - 1) <= 1e-8
    st = pseudo_eq_fixed_point_state(satquad, seq)
    assert st.A_star == pytest.approx(satquad_state.A_star, abs=1e-6)


def test_pseudo_eq_leaves_middle_branch(sigmoid12, sigmoid12_states):
    middle = sigmoid12_states[1]
    assert middle.slope_inv_I > 1
    seq = pseudo_equilibrium_sequence(sigmoid12, middle.r_star + 1e-4)
    assert seq.converged
    assert abs(seq.fixed_point - middle.r_star) > 1e-2
    assert min(abs(seq.fixed_point - st.r_star) for st in sigmoid12_states) <= 1e-6


def test_pseudo_eq_divergence_flag():
    model = CustomModel(lambda a, r: np.exp(r) + 0 * a, 0.0, 1.0)
    seq = pseudo_equilibrium_sequence(model, 1.0, K=50, blowup=10.0)
    assert seq.divergent and not seq.converged
    assert seq.x[-1] == pytest.approx(np.exp(np.e), rel=1e-6)


def test_pseudo_eq_arguments():
    model = RefractoryModel(1.0, SatQuad(0.2))
    with pytest.raises(ValueError):
        pseudo_equilibrium_sequence(model, 0.0)
    with pytest.raises(ValueError):
        pseudo_equilibrium_sequence(model, 0.5, K=0)


def _returns_to(model, x_star, slope, offset):
    iterations = int(min(2e5, 40 / max(1 - abs(slope), 1e-3)))
    seq = pseudo_equilibrium_sequence(model, x_star + offset, K=iterations)
    return seq.converged and abs(seq.fixed_point - x_star) <= 1e-6


@pytest.mark.parametrize("model", [RefractoryModel(0.5, Sigmoid9(b)) for b in (0.9, 0.94, 1.2, 1.53, 1.6)]
                         + [RefractoryModel(1.0, SatQuad(b * b)) for b in (0.2, 0.43, 0.8, 1.3)])
def test_local_convergence_iff_slope_below_one(model):
    for st in find_steady_states(model):
        if abs(abs(st.slope_inv_I) - 1) < 1e-3:
            continue
        contracting = abs(st.slope_inv_I) < 1 - 1e-3
        for offset in (1e-4, -1e-4):
            assert _returns_to(model, st.r_star, st.slope_inv_I, offset) == contracting
