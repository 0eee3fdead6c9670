import itertools

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from adabort.blossom import max_weight_matching, min_weight_perfect_matching


def brute_max_weight(n, edges, maxcardinality):
    best = (-1, -1)
    for r in range(len(edges) + 1):
        for subset in itertools.combinations(edges, r):
            used = [v for i, j, _ in subset for v in (i, j)]
            if len(used) != len(set(used)):
                continue
            key = (len(subset), sum(w for *_, w in subset)) if maxcardinality else (sum(w for *_, w in subset),)
            best = max(best, key) if maxcardinality else max(best, key + (0,))
    return best


graphs = st.integers(2, 7).flatmap(
    lambda n: st.lists(
        st.tuples(st.integers(0, n - 1), st.integers(0, n - 1), st.integers(-5, 30)),
        min_size=1, max_size=12,
    ).map(lambda es: (n, {(min(i, j), max(i, j)): w for i, j, w in es if i != j}))
)


@given(graphs, st.booleans())
@settings(max_examples=150, deadline=None)
def test_matches_exhaustive_search(g, maxcard):
    n, emap = g
    edges = [(i, j, w) for (i, j), w in sorted(emap.items())]
    if not edges:
        return
    mate = max_weight_matching(edges, maxcardinality=maxcard)
    for v, m in enumerate(mate):
        assert m == -1 or mate[m] == v
    chosen = [(i, j, w) for i, j, w in edges if mate[i] == j]
    got_w = sum(w for *_, w in chosen)
    want = brute_max_weight(n, edges, maxcard)
    if maxcard:
        assert (len(chosen), got_w) == want
    else:
        assert got_w == want[0]


def test_triangle_blossom():
    # odd cycle plus pendant forces blossom shrinking
    mate = max_weight_matching([(0, 1, 6), (1, 2, 6), (0, 2, 6), (2, 3, 5)])
    assert mate[2] == 3 and {mate[0], mate[1]} == {1, 0}


@given(st.integers(1, 4), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_min_weight_perfect(half, seed):
    n = 2 * half
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 5, size=(n, n))
    cost = (a + a.T) / 2
    mate = min_weight_perfect_matching(cost)
    got = sum(cost[i, mate[i]] for i in range(n) if i < mate[i])

    def best(rest):
        if not rest:
            return 0.0
        i, others = rest[0], rest[1:]
        return min(cost[i, j] + best(tuple(k for k in others if k != j)) for j in others)

    assert abs(got - best(tuple(range(n)))) < 1e-8


def test_empty_inputs():
    assert max_weight_matching([]) == []
    assert min_weight_perfect_matching(np.zeros((0, 0))) == []
