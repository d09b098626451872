import pytest
from hypothesis import given
from hypothesis import strategies as st

from nsam.vtree import VtreeError, build_balanced, build_right_linear, emit_vtree, parse_vtree


def test_balanced_three_leaves():
    vt = build_balanced([0, 1, 2])
    assert vt.shape() == ((0, 1), 2)
    assert len(vt) == 5


def test_single_leaf():
    vt = build_balanced([0])
    assert vt.shape() == 0 and len(vt) == 1


def test_right_linear_shapes():
    assert build_right_linear([0, 1, 2]).shape() == (0, (1, 2))
    assert build_right_linear([0, 1]).shape() == (0, 1)


@pytest.mark.parametrize("build", [build_balanced, build_right_linear])
@pytest.mark.parametrize("order", [[0, 0], [], [1, 2]])
def test_bad_orders(build, order):
    with pytest.raises(VtreeError):
        build(order)


def test_parse_example():
    vt = parse_vtree("vtree 3\nL 0 1\nL 2 2\nI 1 0 2\n")
    assert vt.shape() == (0, 1)


def test_round_trip_canonical_text():
    text = "vtree 3\nL 0 1\nL 2 2\nI 1 0 2\n"
    assert emit_vtree(parse_vtree(text)) == text


def test_dangling_child():
    with pytest.raises(VtreeError, match="dangling"):
        parse_vtree("vtree 3\nL 0 1\nL 2 2\nI 1 0 5\n")


def test_non_binary_node():
    with pytest.raises(VtreeError, match="exactly two children"):
        parse_vtree("vtree 4\nL 0 1\nL 2 2\nL 3 3\nI 1 0 2 3\n")


orders = st.integers(1, 16).flatmap(lambda n: st.permutations(list(range(n))))


@given(orders, st.sampled_from([build_balanced, build_right_linear]))
def test_in_order_numbering_and_partition(order, build):
    vt = build(order)
    assert vt.leaf_order() == list(order)
    for node in vt.nodes:
        if node.is_leaf:
            continue
        left = [n.id for n in vt.nodes if vt.contains(node.left, n.id)]
        right = [n.id for n in vt.nodes if vt.contains(node.right, n.id)]
        assert max(left) < node.id < min(right)
        assert vt.variables(node.left).isdisjoint(vt.variables(node.right))
    assert vt.variables(vt.root) == frozenset(order)


@given(orders, st.sampled_from([build_balanced, build_right_linear]))
def test_emit_parse_round_trip(order, build):
    vt = build(order)
    text = emit_vtree(vt)
    again = parse_vtree(text)
    assert again.shape() == vt.shape()
    assert emit_vtree(again) == text


@given(st.integers(2, 40))
def test_balanced_depth_is_logarithmic(n):
    vt = build_balanced(list(range(n)))

    def depth(i):
        node = vt[i]
        return 0 if node.is_leaf else 1 + max(depth(node.left), depth(node.right))

    assert depth(vt.root) == (n - 1).bit_length()
