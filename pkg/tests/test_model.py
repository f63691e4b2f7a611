import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from metagin.episodes import sample_episode
from metagin.model import (
    ModelConfig,
    attention_weights,
    classify,
    confidence_scores,
    encode,
    episode_loss,
    episode_probabilities,
    forward_group,
    group_representations,
    group_statistics,
    interpolate_group,
    predict,
)
from metagin.numerics import ParamSet, gradient

from oracles import ref_episode_loss, ref_group, ref_softmax

T = lambda x: torch.as_tensor(np.asarray(x, dtype=np.float64))  # noqa: E731


def test_encode_identity_and_zero_rows():
    x = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(encode(x, torch.eye(3, dtype=torch.float64)).numpy(), x)
    assert torch.all(encode(np.zeros((2, 3)), T(np.ones((3, 5)))) == 0)


def test_encode_matches_dense_product():
    rng = np.random.default_rng(1)
    x, w = rng.standard_normal((7, 6)), rng.standard_normal((6, 4))
    ref = np.array([[sum(x[i, k] * w[k, j] for k in range(6)) for j in range(4)] for i in range(7)])
    assert np.abs(encode(x, T(w)).numpy() - ref).max() < 1e-12
    with pytest.raises(ValueError):
        encode(x, T(np.ones((5, 4))))


def test_group_statistics_examples():
    p, d = group_statistics(T(np.ones((3, 2))))
    assert torch.all(d == 0)
    p, d = group_statistics(T([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_array_equal(p.numpy(), [0, 0])
    np.testing.assert_array_equal(d.numpy(), [[1, 0], [-1, 0]])
    z = np.random.default_rng(2).standard_normal((5, 4))
    total = np.zeros(4)
    for row in z:
        total += row
    assert np.abs(group_statistics(T(z))[0].numpy() - total / 5).max() < 1e-15
    with pytest.raises(ValueError):
        group_statistics(T(np.zeros((0, 3))))


def test_attention_examples():
    z = T(np.ones((4, 3)))
    _, d = group_statistics(z)
    alpha = attention_weights(z, d, T(np.arange(6.0)), T([0.3, -0.7]))
    np.testing.assert_allclose(alpha.numpy(), np.full((4, 4), 0.25), atol=1e-15)
    z1 = T([[0.4, -2.0, 1.0]])
    assert attention_weights(z1, z1 * 0, T(np.ones(6)), T([1.0, 1.0])).numpy().tolist() == [[1.0]]


def test_attention_and_scores_match_direct_evaluation():
    rng = np.random.default_rng(3)
    z, w, a = rng.standard_normal((3, 4)), rng.standard_normal(8), rng.standard_normal(2)
    _, alpha_ref, s_ref = ref_group(z, w, a)
    _, d = group_statistics(T(z))
    alpha = attention_weights(T(z), d, T(w), T(a))
    s = confidence_scores(T(z), d, alpha, T(w))
    assert np.abs(alpha.numpy() - alpha_ref).max() < 1e-12
    assert np.abs(s.numpy() - s_ref).max() < 1e-12


def test_score_examples():
    z = T(np.tile([1.0, 2.0], (3, 1)))
    _, d = group_statistics(z)
    alpha = attention_weights(z, d, T([0.5, -1, 2, 3]), T([1.0, 0.2]))
    s = confidence_scores(z, d, alpha, T([0.5, -1, 2, 3]))
    assert torch.allclose(s, s[0].expand(3), atol=0, rtol=0)
    zr = T(np.random.default_rng(4).standard_normal((3, 2)))
    _, dr = group_statistics(zr)
    s0 = confidence_scores(zr, dr, attention_weights(zr, dr, T(np.zeros(4)), T([1.0, 1.0])), T(np.zeros(4)))
    np.testing.assert_array_equal(s0.numpy(), [0.5, 0.5, 0.5])


def test_interpolation_examples():
    z = T([[3.0, -1.0]])
    assert torch.equal(interpolate_group(z, T([0.123])), z[0])
    zz = T(np.random.default_rng(5).standard_normal((4, 3)))
    np.testing.assert_allclose(interpolate_group(zz, T([0.3] * 4)).numpy(), zz.mean(0).numpy(), atol=1e-15)
    c = interpolate_group(T([[1.0, 0.0], [0.0, 1.0]]), T([0.9, 0.1]))
    np.testing.assert_allclose(c.numpy(), [0.9, 0.1], atol=1e-15)


def test_classify_examples():
    np.testing.assert_allclose(classify(T([1.0, 2.0]), T(np.zeros((2, 3))), T(np.zeros(3))).numpy(), [1 / 3] * 3)
    p = classify(T([1.0, 2.0]), T(np.zeros((2, 3))), T([10.0, 0, 0]))
    assert float(p[0]) > 0.9999
    rng = np.random.default_rng(6)
    c, W, b = rng.standard_normal(4), rng.standard_normal((4, 3)), rng.standard_normal(3)
    assert np.abs(classify(T(c), T(W), T(b)).numpy() - ref_softmax(c @ W + b)).max() < 1e-15


def test_zero_params_give_log_n_loss(tiny_episode, propagated):
    loss = episode_loss(tiny_episode, propagated, ParamSet.zeros(6, 4, 3), "query")
    assert float(loss) == pytest.approx(math.log(3), abs=1e-14)


@pytest.mark.parametrize("variant", ["full", "mlp", "mean"])
@pytest.mark.parametrize("subset", ["support", "query"])
def test_episode_loss_matches_independent_pipeline(tiny_episode, propagated, tiny_params, variant, subset):
    x = np.asarray(propagated.matrix)
    ref = ref_episode_loss(x, tiny_episode.nodes(subset), tiny_episode.targets(subset), tiny_params, variant)
    got = float(episode_loss(tiny_episode, propagated, tiny_params, subset, variant))
    assert abs(got - ref) < 1e-10


def test_full_with_singletons_equals_naive(graph, propagated, tiny_params):
    ep = sample_episode(graph, None, "train", 3, 2, 2, 1, seed=4)
    full = gradient(lambda p: episode_loss(ep, propagated, p, "query", "full"), tiny_params)
    naive = gradient(lambda p: episode_loss(ep, propagated, p, "query", "naive"), tiny_params)
    assert float(episode_loss(ep, propagated, tiny_params, "query", "full")) == float(
        episode_loss(ep, propagated, tiny_params, "query", "naive")
    )
    for name in ("W_e", "W_c", "b_c"):
        assert torch.allclose(getattr(full, name), getattr(naive, name), atol=1e-10, rtol=0)
    assert torch.all(full.w == 0) and torch.all(full.a == 0)


def test_naive_requires_singletons(tiny_episode, propagated, tiny_params):
    with pytest.raises(ValueError, match="singleton"):
        episode_loss(tiny_episode, propagated, tiny_params, "query", "naive")
    with pytest.raises(ValueError):
        episode_loss(tiny_episode, propagated, tiny_params, "query", "bogus")


def test_head_size_must_match_way(tiny_episode, propagated):
    with pytest.raises(ValueError):
        episode_loss(tiny_episode, propagated, ParamSet.init(6, 4, 2, seed=0), "query")


def test_permuting_members_leaves_loss_unchanged(tiny_episode, propagated, tiny_params):
    from dataclasses import replace

    rng = np.random.default_rng(7)
    perm = lambda a: np.stack([row[rng.permutation(row.size)] for row in a])  # noqa: E731
    shuffled = replace(tiny_episode, support_nodes=perm(tiny_episode.support_nodes),
                       query_nodes=perm(tiny_episode.query_nodes))
    for subset in ("support", "query"):
        a = float(episode_loss(tiny_episode, propagated, tiny_params, subset))
        b = float(episode_loss(shuffled, propagated, tiny_params, subset))
        assert abs(a - b) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([1, 2, 3, 5, 8]), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_group_invariants(m, dh, seed):
    rng = np.random.default_rng(seed)
    z = T(rng.standard_normal((m, dh)) * rng.uniform(0.1, 3))
    params = ParamSet.init(3, dh, 2, seed=rng)
    fwd = forward_group(z, params)
    assert torch.abs(fwd.attention.sum(-1) - 1).max() <= 1e-12
    assert torch.all((fwd.scores > 0) & (fwd.scores < 1))
    assert torch.abs(fwd.deltas.sum(0)).max() <= 1e-10
    weights = fwd.scores / fwd.scores.sum()
    assert torch.all(weights >= 0) and abs(float(weights.sum()) - 1) <= 1e-12
    p = rng.permutation(m)
    c_perm = forward_group(z[p], params).representation
    assert torch.abs(c_perm - fwd.representation).max() <= 1e-12
    if m == 1:
        assert torch.equal(fwd.representation, z[0])
        naive = group_representations(z[None], params, "naive")[0]
        assert torch.equal(group_representations(z[None], params, "full")[0], naive)


def test_representations_lie_in_convex_hull(tiny_params):
    from scipy.optimize import linprog

    rng = np.random.default_rng(8)
    z = T(rng.standard_normal((6, 5, 4)))
    for variant in ("full", "mlp", "mean"):
        c = group_representations(z, tiny_params, variant).numpy()
        for g in range(6):
            # c = lambda^T z, lambda >= 0, sum lambda = 1 is feasible
            A = np.vstack([z[g].numpy().T, np.ones(5)])
            res = linprog(np.zeros(5), A_eq=A, b_eq=np.append(c[g], 1.0), bounds=[(0, None)] * 5)
            assert res.status == 0


def test_batched_probabilities_shape(graph, propagated, tiny_params):
    from metagin.model import EpisodeBatch

    eps = [sample_episode(graph, None, "train", 3, 2, 2, 3, seed=s) for s in range(4)]
    probs = episode_probabilities(EpisodeBatch.stack(eps), propagated, tiny_params.expand(4), "query")
    assert probs.shape == (4, 6, 3)
    single = episode_probabilities(eps[2], propagated, tiny_params, "query")
    assert torch.abs(probs[2] - single).max() <= 1e-14


def test_predict_breaks_ties_low():
    assert predict(T([[0.5, 0.5], [0.2, 0.8]])).tolist() == [0, 1]


def test_model_config_validation():
    cfg = ModelConfig(d=6, d_hidden=4, n_way=3)
    assert cfg.init_params(0).dims == (6, 4, 3)
    with pytest.raises(ValueError):
        ModelConfig(d=6, d_hidden=0)
