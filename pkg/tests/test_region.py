import warnings

import numpy as np
import pytest

from droopstab.modal import sensitivity_bundle
from droopstab.region import (
    ConstraintSet,
    InfeasibleExpansionError,
    NoSignChangeError,
    SlopeConstraint,
    build_constraints,
    cross_validate,
    estimate_supremum,
    first_positive_root,
    loci_supremum,
    max_real_part,
    region_agreement,
    scan_region,
)
from planted import make_planted


@pytest.fixture
def planted(rng):
    return make_planted(rng, nd=2)


def single(a, H, delta, k_star=(0.0, 0.0)):
    c = SlopeConstraint(mode=0, eigenvalue=-delta + 1j, a=np.asarray(a, float), H=np.asarray(H, float), delta=delta)
    return ConstraintSet((c,), np.asarray(k_star, float), ("k1", "k2"))


@pytest.mark.parametrize(
    "alpha, beta, gamma, expected",
    [
        (0.0, 2.0, -4.0, 2.0),
        (0.0, -1.0, -4.0, np.inf),
        (1.0, 0.0, -4.0, 2.0),
        (-1.0, 1.0, -1.0, np.inf),  # never reaches zero
        (-1.0, 3.0, -2.0, 1.0),  # roots 1 and 2
        (1e-12, 1.0, -1.0, 1.0 - 1e-12),
    ],
)
def test_first_positive_root(alpha, beta, gamma, expected):
    t = first_positive_root(alpha, beta, gamma)
    if np.isinf(expected):
        assert np.isinf(t)
    else:
        assert t == pytest.approx(expected, rel=1e-9)
        assert alpha * t * t + beta * t + gamma == pytest.approx(0.0, abs=1e-12)


def test_first_positive_root_cancellation():
    # tiny curvature, large linear term: the naive formula loses all digits
    t = first_positive_root(1e-20, 1.0, -3.0)
    assert t == pytest.approx(3.0, rel=1e-12)


def test_supremum_single_constraint():
    cs = single([0.5, 0.0], [[0.2, 0.0], [0.0, 0.0]], 1.0)
    r = estimate_supremum(cs, 0)
    # 0.1 t^2 + 0.5 t - 1 = 0
    assert r.k_sup == pytest.approx((-0.5 + np.sqrt(0.25 + 0.4)) / 0.2)
    assert r.bounded and r.binding_mode == 0
    assert float(cs.constraints[0].lhs(np.array([r.k_sup, 0.0]))) == pytest.approx(1.0, rel=1e-12)


def test_unbounded_axis_is_capped():
    cs = single([0.5, -0.1], np.zeros((2, 2)), 1.0, k_star=(1.0, 2.0))
    r = estimate_supremum(cs, 1)
    assert not r.bounded
    assert r.binding_mode is None
    assert r.k_sup == pytest.approx(2.0 + 200.0)


def test_infeasible_start():
    cs = single([0.5, 0.0], np.zeros((2, 2)), 1.0)
    with pytest.raises(InfeasibleExpansionError):
        estimate_supremum(cs, 1, init_deviations=[3.0, 0.0])


def test_wrong_deviation_length():
    cs = single([0.5, 0.0], np.zeros((2, 2)), 1.0)
    with pytest.raises(ValueError):
        estimate_supremum(cs, 0, init_deviations=[0.0])


def test_build_constraints_one_per_pair(planted):
    b = planted.bundle(planted.k0)
    cs = build_constraints(b)
    assert len(cs) == planted.s0.size
    assert all(c.eigenvalue.imag >= 0 for c in cs.constraints)
    for c in cs.constraints:
        np.testing.assert_allclose(c.H, c.H.T)
    with pytest.raises(ValueError):
        build_constraints(sensitivity_bundle(planted.A(planted.k0), planted.M(planted.k0)))


def test_planted_suprema_exact(planted):
    cs = build_constraints(planted.bundle(planted.k0))
    for axis in range(planted.nd):
        r = estimate_supremum(cs, axis)
        assert r.k_sup == pytest.approx(planted.crossing(planted.k0, axis), rel=1e-9)


def test_planted_cross_validation(planted):
    k_other = planted.k0 + np.array([0.2, -0.1])
    cs_self = build_constraints(planted.bundle(planted.k0))
    cs_other = build_constraints(planted.bundle(k_other))
    for r_self, r_cross in zip([estimate_supremum(cs_self, i) for i in range(2)], cross_validate(cs_other, planted.k0)):
        assert r_cross.k_sup == pytest.approx(r_self.k_sup, rel=1e-9)


def test_loci_matches_planted(planted):
    axis = 0
    exact = planted.crossing(planted.k0, axis)
    r = loci_supremum(planted.A, planted.k0, axis, (planted.k0[axis], planted.k0[axis] + 10.0), k_tol=1e-10, f_tol=0.0)
    assert r.k_sup == pytest.approx(exact, rel=1e-8)
    assert r.table_eigs.shape == (41, planted.T.shape[0])
    assert r.crossings >= 1


def test_loci_errors(planted):
    lo = planted.k0[0]
    with pytest.raises(ValueError):
        loci_supremum(planted.A, planted.k0, 0, (lo, lo))
    with pytest.raises(NoSignChangeError, match="no sign change"):
        loci_supremum(planted.A, planted.k0, 0, (lo, lo + 1e-6))
    with pytest.raises(NoSignChangeError, match="already"):
        loci_supremum(planted.A, planted.k0, 0, (lo + 50.0, lo + 60.0))


def test_loci_warns_on_reentry():
    # real part (k - 1)(2 - k): stable below 1, unstable on (1, 2), stable again above 2
    A_of_k = lambda k: np.array([[(k[0] - 1.0) * (2.0 - k[0]), 1.0], [-1.0, (k[0] - 1.0) * (2.0 - k[0])]])  # noqa: E731
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        r = loci_supremum(A_of_k, [0.0], 0, (0.05, 3.0), k_tol=1e-9, f_tol=0.0)
    assert any(issubclass(w.category, RuntimeWarning) for w in rec)
    assert r.crossings == 2
    assert r.k_sup == pytest.approx(1.0, abs=1e-8)


def test_region_scan_agrees_on_planted(planted):
    cs = build_constraints(planted.bundle(planted.k0))
    ranges = ((0.0, 4.0), (0.0, 4.0))
    taylor = scan_region(cs, (0, 1), ranges, 25)
    loci = scan_region(planted.A, (0, 1), ranges, 25, k_base=planted.k0)
    agr = region_agreement(taylor, loci)
    assert agr["agreement"] == 1.0
    assert agr["adjacent"]
    # slack and margin have the same sign as the classification
    assert np.all((taylor.margin > 0) == taylor.stable)
    rows = list(taylor.rows())
    assert len(rows) == 625 and rows[0][3] == "taylor"


def test_region_agreement_flags_far_mismatch():
    from droopstab.region import RegionGrid

    v = np.arange(5.0)
    loci = RegionGrid((0, 1), v, v, np.ones((5, 5), bool), "loci")
    wrong = loci.stable.copy()
    wrong[2, 2] = False
    agr = region_agreement(RegionGrid((0, 1), v, v, wrong, "taylor"), loci)
    assert agr["mismatches"] == 1
    assert not agr["adjacent"]
    with pytest.raises(ValueError):
        RegionGrid((0, 1), v, v[:3], wrong, "taylor")


def test_loci_scan_needs_base(planted):
    with pytest.raises(ValueError):
        scan_region(planted.A, (0, 1), ((0, 1), (0, 1)), 3)


def test_max_real_part():
    assert max_real_part(np.diag([-1.0, 0.5])) == 0.5
