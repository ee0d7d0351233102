from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from loopreg.multiscale import (
    ETA_LIBRARY,
    ConfigurationError,
    LabelledTree,
    UnknownExample,
    all_shapes,
    bounded_sum,
    check_sum_conditions,
    cluster,
    dyadic_label,
    eta_from_csv,
    eta_library,
    hausdorff,
    interior_vertices,
    lambda_sweep,
    leaves_of,
    log2_dyadic_sum,
    parabolic_distance,
    parse_shape,
    random_configuration,
    rescale,
    seeded_violations,
    shape_text,
    v_star,
    verify_distance_equivalence,
    x_star,
)

points = st.tuples(st.floats(-1, 1), st.floats(-1, 1))


def fs(*xs) -> frozenset:
    return frozenset(xs)


# ---------------------------------------------------------------------------
# labels and clustering


@pytest.mark.parametrize("d,n", [(0.5, 1), (0.75, 0), (1.0, 0), (0.01, 6), (1.01, -1), (3.0, -2), (4.0, -2)])
def test_dyadic_label(d, n):
    assert dyadic_label(d) == n
    assert d <= 2.0**-n < 2 * d


def test_single_point():
    t = cluster([(0.0, 0.5)])
    assert t.labels == {fs(0, 1): 1}


def test_two_point_example():
    t = cluster([(0.0, 1.0), (0.0, 1.01)])
    assert shape_text(t.shape) == "(0,(1,2))"
    assert t.labels[fs(1, 2)] == 6
    assert t.labels[fs(0, 1, 2)] == -1


def test_duplicate_points_rejected():
    with pytest.raises(ConfigurationError):
        cluster([(0.1, 0.2), (0.1, 0.2)])
    with pytest.raises(ConfigurationError):
        cluster([(0.0, 0.0)])


def test_parabolic_metric_and_hausdorff():
    assert parabolic_distance((0.25, 0.0), (0.0, 0.5)) == pytest.approx(1.0)
    assert hausdorff([(0.0, 0.0)], [(0.0, 1.0), (0.0, 2.0)]) == pytest.approx(2.0)


@given(st.lists(points, min_size=1, max_size=4))
@settings(max_examples=200, deadline=None)
def test_labels_monotone(z):
    pts = [(0.0, 0.0)] + z
    assume(len(set(pts)) == len(pts))
    t = cluster(z)
    assert t.is_monotone()
    assert len(t.interior) == len(z)


@given(st.lists(points, min_size=1, max_size=4))
@settings(max_examples=200, deadline=None)
def test_permutation_consistent(z):
    pts = [(0.0, 0.0)] + z
    assume(len(set(pts)) == len(pts))
    t = cluster(z)
    perm = list(reversed(range(len(z))))
    u = cluster([z[i] for i in perm])
    relabel = {0: 0, **{j + 1: perm[j] + 1 for j in range(len(z))}}
    for v, n in u.labels.items():
        assert t.labels[frozenset(relabel[i] for i in v)] == n


def _tie_free(z) -> bool:
    pts = [(0.0, 0.0)] + z
    ds = [parabolic_distance(a, b) for a, b in itertools.combinations(pts, 2)]
    for d in ds:
        frac = math.log2(d) % 1.0
        if min(frac, 1 - frac) < 1e-6:
            return False
    return len(set(round(d, 12) for d in ds)) == len(ds)


@given(st.lists(points, min_size=1, max_size=4))
@settings(max_examples=200, deadline=None)
def test_scale_equivariant(z):
    pts = [(0.0, 0.0)] + z
    assume(len(set(pts)) == len(pts) and _tie_free(z))
    t = cluster(z)
    u = cluster(rescale(z, 1))
    assert u.shape == t.shape
    assert u.labels == {v: n + 1 for v, n in t.labels.items()}


def test_distance_equivalence_one_point():
    rng = np.random.default_rng(0)
    fit = verify_distance_equivalence([random_configuration(rng, 1) for _ in range(2000)])
    assert (fit.c, fit.C) == (1.0, 2.0)


def test_distance_equivalence_contains_two_point_example():
    rng = np.random.default_rng(1)
    z = [(0.0, 1.0), (0.0, 1.01)]
    fit = verify_distance_equivalence([random_configuration(rng, 2) for _ in range(2000)] + [z])
    assert fit.c <= 2.0**-6 / 0.01 <= fit.C
    assert 0 < fit.c < fit.C < math.inf


def test_configuration_frequency_bound():
    # frequency of a labelled tree over the unit box is at most const * prod 2^(-3 n)
    rng = np.random.default_rng(2)
    counts: dict = {}
    total = 20000
    for _ in range(total):
        t = cluster(random_configuration(rng, 2))
        key = (t.shape, tuple(sorted((shape_text(tuple(sorted(v))), n) for v, n in t.labels.items())))
        counts[key] = counts.get(key, (t, 0))[0], counts.get(key, (t, 0))[1] + 1
    ratios = []
    for t, c in counts.values():
        bound = math.prod(2.0 ** (-3 * n) for n in t.labels.values())
        ratios.append((c / total) / bound)
    assert max(ratios) < 50


# ---------------------------------------------------------------------------
# shapes


def test_shape_parsing():
    s = parse_shape("((0,1),(2,3))")
    assert shape_text(s) == "((0,1),(2,3))"
    assert leaves_of(s) == fs(0, 1, 2, 3)
    for bad in ["(0,1", "(0,1,2)", "((0,1),3)", "(0,(1,2)))"]:
        with pytest.raises(ValueError):
            parse_shape(bad)


@pytest.mark.parametrize("n,count", [(1, 1), (2, 3), (3, 15), (4, 105)])
def test_number_of_shapes(n, count):
    shapes = all_shapes(n)
    assert len(shapes) == count
    assert len({shape_text(s) for s in shapes}) == count


def test_x_star_and_v_star():
    s = parse_shape("(((0,1),2),3)")
    assert x_star(s) == fs(0, 1, 2)
    assert v_star(s) == [fs(0, 1, 2)]
    r = parse_shape("((0,1),(2,3))")
    assert x_star(r) == fs(0, 1, 2, 3)
    assert v_star(r) == []


# ---------------------------------------------------------------------------
# summation conditions


def test_conditions_vacuous_second():
    s = parse_shape("((0,1),(2,3))")
    eta = {fs(0, 1): 1.0, fs(2, 3): 1.0, fs(0, 1, 2, 3): -1.5}
    assert check_sum_conditions(s, eta) == (True, True)
    eta[fs(0, 1)] = -1.0
    assert check_sum_conditions(s, eta)[0] is False


def test_condition_two_reads_root_sign():
    s = parse_shape("(((0,1),2),3)")
    eta = {fs(0, 1): 2.0, fs(0, 1, 2): 2.0, fs(0, 1, 2, 3): -3.5}
    assert check_sum_conditions(s, eta) == (True, True)
    eta[fs(0, 1, 2, 3)] = 0.5
    assert check_sum_conditions(s, eta) == (True, False)


def test_missing_eta_rejected():
    with pytest.raises(ValueError):
        check_sum_conditions(parse_shape("((0,1),2)"), {fs(0, 1): 1.0})


def test_eta_csv_in_post_order():
    s = parse_shape("((0,1),(2,3))")
    assert eta_from_csv(s, "1,1,-1.5") == {fs(0, 1): 1.0, fs(2, 3): 1.0, fs(0, 1, 2, 3): -1.5}
    with pytest.raises(ValueError):
        eta_from_csv(s, "1,2")


# ---------------------------------------------------------------------------
# dyadic sums


def test_passing_example_slope():
    s = parse_shape("((0,1),(2,3))")
    r = lambda_sweep(s, {fs(0, 1): 1.0, fs(2, 3): 1.0, fs(0, 1, 2, 3): -1.5})
    assert r.converged
    assert r.scale_slope == pytest.approx(-0.5, abs=0.1)
    assert r.slope == pytest.approx(0.5, abs=0.1)


def test_condition_one_violation_diverges():
    s = parse_shape("((0,1),(2,3))")
    r = bounded_sum(s, {fs(0, 1): -1.0, fs(2, 3): 1.0, fs(0, 1, 2, 3): 1.0}, 0.25, max_window=128)
    assert not r.converged


def test_zero_eta_grows_with_window():
    s = parse_shape("((0,1),2)")
    eta = {fs(0, 1): 0.0, fs(0, 1, 2): 0.0}
    vals = [log2_dyadic_sum(s, eta, 0.25, w) for w in (8, 16, 32)]
    assert vals[0] < vals[1] < vals[2]
    assert not bounded_sum(s, eta, 0.25, max_window=64).converged


def test_positive_eta_without_constraint_converges():
    s = parse_shape("((0,1),(2,3))")
    eta = {v: 0.7 for v in interior_vertices(s)}
    assert bounded_sum(s, eta, 1e6).converged


@pytest.mark.parametrize("name,total", [
    ("Xi-second-moment", 3.0),
    ("IprimeXi-second-moment", 5.0),
    ("IprimeXi2-renormalised", 4.0),
    ("IprimeXi2-unrenormalised", 4.0),
])
def test_library_sum_rule(name, total):
    assert ETA_LIBRARY[name].target == total
    for _, eta in eta_library(name):
        assert sum(eta.values()) == pytest.approx(total)


def test_renormalised_variant_passes_everywhere():
    assert all(all(check_sum_conditions(s, e)) for s, e in eta_library("IprimeXi2-renormalised"))
    assert not all(all(check_sum_conditions(s, e)) for s, e in eta_library("IprimeXi2-unrenormalised"))


def test_unknown_example():
    with pytest.raises(UnknownExample):
        eta_library("nope")


def test_seeded_violations_are_violations():
    for shape, eta, which in seeded_violations(0, 10):
        c1, c2 = check_sum_conditions(shape, eta)
        assert (which == "condition 1" and not c1) or (which == "condition 2" and c1 and not c2)


def test_labelled_tree_meet():
    t = LabelledTree(parse_shape("((0,1),(2,3))"))
    assert t.meet(0, 1) == fs(0, 1)
    assert t.meet(1, 2) == fs(0, 1, 2, 3)
    assert t.parent(fs(0, 1)) == fs(0, 1, 2, 3)


def test_merge_distance_inversion_is_closed():
    # the root merge is closer (0.935) than the earlier {2,3} merge (1.112)
    t = cluster([(0.0, 0.5), (0.5, 0.5), (0.875, 0.0)])
    root = fs(0, 1, 2, 3)
    assert t.raw_labels[root] == 0 and t.raw_labels[fs(2, 3)] == -1
    assert t.labels[root] == -1
    assert t.is_monotone()


@given(st.lists(points, min_size=1, max_size=4))
@settings(max_examples=100, deadline=None)
def test_labels_equal_raw_labels_without_inversion(z):
    pts = [(0.0, 0.0)] + z
    assume(len(set(pts)) == len(pts))
    t = cluster(z)
    raw = LabelledTree(t.shape, t.raw_labels)
    if raw.is_monotone():
        assert t.labels == t.raw_labels
