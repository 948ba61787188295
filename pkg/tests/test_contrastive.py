import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import jensenshannon
from torch import nn

from conftest import tiny_graph
from gradcheck import check_gradients
from stsccl.contrastive import (ContrastiveConfig, ContrastiveHeads, ProjectionHead,
                                basic_graph_contrastive_loss, build_negative_filter, info_nce_from_scores,
                                js_similarity, js_similarity_matrix, semantic_contextual_loss, sts_loss,
                                unfiltered_negatives)
from stsccl.exceptions import ConfigError, DomainError
from stsccl.graph_data import GraphSpec

D = torch.float64


def identity_maps(d, k):
    maps = nn.ModuleList(nn.Linear(d, d, bias=False).double() for _ in range(k))
    with torch.no_grad():
        for m in maps:
            m.weight.copy_(torch.eye(d, dtype=D))
    return maps


def js_oracle(p, q):
    # scipy returns the square root of the divergence
    return 1.0 - jensenshannon(p, q, base=2) ** 2


def brute_force_allowed(a_con, semantic, u):
    n = len(a_con)
    out = []
    for i in range(n):
        sims = [(-js_oracle(semantic[i], semantic[j]), j) for j in range(n) if j != i]
        top = {j for _, j in sorted(sims)[:u]}
        keep = {j for j in range(n) if j != i and not a_con[i][j] and j not in top}
        out.append(keep if keep else {j for j in range(n) if j != i})
    return out


def eq19_oracle(s_b, s_s, sigma):
    """Loop NT-Xent over nodes, positive in the denominator."""
    s_b, s_s = s_b.tolist(), s_s.tolist()

    def cos(a, b):
        return sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))

    n = len(s_b)
    total = 0.0
    for i in range(n):
        pos = math.exp(cos(s_b[i], s_s[i]) / sigma)
        denom = sum(math.exp(cos(s_b[i], s_s[j]) / sigma) for j in range(n))
        total += -math.log(pos / denom)
    return total / n


class TestStsLoss:
    def test_uniform_scores_give_log_m(self):
        m, s = 5, 0.7
        c = torch.full((1, m, m), s, dtype=D)
        z = torch.eye(m, dtype=D).reshape(1, 1, m, m)
        loss = sts_loss(c, z, identity_maps(m, 1))
        assert loss.item() == pytest.approx(math.log(m), abs=1e-12)

    def test_separated_scores_near_zero(self):
        m = 4
        c = (20 * torch.eye(m, dtype=D) - 10).reshape(1, m, m)
        z = torch.eye(m, dtype=D).reshape(1, 1, m, m).expand(1, 2, m, m)
        loss = sts_loss(c, z, identity_maps(m, 2))
        assert loss.item() == pytest.approx(3 * math.exp(-20), abs=1e-6)

    def test_shift_invariance(self):
        scores = torch.randn(6, 6, dtype=D)
        assert info_nce_from_scores(scores).item() == pytest.approx(info_nce_from_scores(scores + 3.3).item(),
                                                                    abs=1e-12)
        # a row-wise shift as well
        assert info_nce_from_scores(scores).item() == pytest.approx(
            info_nce_from_scores(scores + torch.arange(6.0, dtype=D)[:, None]).item(), abs=1e-12)

    def test_positive_score_monotone(self):
        scores = torch.randn(5, 5, dtype=D)
        previous = info_nce_from_scores(scores).item()
        for _ in range(5):
            scores[2, 2] += 0.5
            current = info_nce_from_scores(scores).item()
            assert current < previous
            previous = current

    def test_zero_horizon(self):
        with pytest.raises(ConfigError):
            sts_loss(torch.zeros(1, 2, 3), torch.zeros(1, 0, 2, 3), identity_maps(3, 1))

    def test_batches_pool_samples_and_nodes(self):
        g = torch.Generator().manual_seed(0)
        c = torch.randn(2, 3, 4, dtype=D, generator=g)
        z = torch.randn(2, 1, 3, 4, dtype=D, generator=g)
        loss = sts_loss(c, z, identity_maps(4, 1))
        flat_c, flat_z = c.reshape(6, 4).tolist(), z[:, 0].reshape(6, 4).tolist()
        total = 0.0
        for i in range(6):
            s = [sum(a * b for a, b in zip(flat_c[i], flat_z[j])) for j in range(6)]
            total += -s[i] + math.log(sum(math.exp(x) for x in s))
        assert loss.item() == pytest.approx(total / 6, abs=1e-12)

    def test_gradients(self):
        torch.manual_seed(0)
        heads = ContrastiveHeads(3, horizon=2, d_proj=2).double()
        c = torch.randn(2, 4, 3, dtype=D, requires_grad=True)
        z = torch.randn(2, 2, 4, 3, dtype=D)
        params = dict(heads.w_k.named_parameters())
        params["c"] = c
        errors = check_gradients(lambda: sts_loss(c, z, heads.w_k), params)
        assert max(errors.values()) < 1e-4, errors


class TestJS:
    def test_identity(self):
        p = np.array([0.2, 0.3, 0.5])
        assert js_similarity(p, p) == 1.0

    def test_disjoint_support(self):
        assert js_similarity([1, 0], [0, 1]) == pytest.approx(0.0, abs=1e-15)

    def test_half_vs_point(self):
        mid = (0.75, 0.25)
        kl_p = 0.5 * math.log2(0.5 / mid[0]) + 0.5 * math.log2(0.5 / mid[1])
        kl_q = math.log2(1 / mid[0])
        expected = 1 - 0.5 * (kl_p + kl_q)
        assert js_similarity([0.5, 0.5], [1, 0]) == pytest.approx(expected, abs=1e-12)
        assert js_similarity([1, 0], [0.5, 0.5]) == js_similarity([0.5, 0.5], [1, 0])
        assert expected == pytest.approx(0.688721875540867, abs=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(DomainError):
            js_similarity([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(DomainError):
            js_similarity([1.5, -0.5], [0.5, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 2 ** 31), st.floats(0.05, 5))
    def test_properties(self, q, seed, conc):
        rng = np.random.default_rng(seed)
        p1, p2 = rng.dirichlet(np.full(q, conc), size=2)
        if rng.random() < 0.3:
            p1[rng.integers(q)] = 0
            p1 /= p1.sum()
        s12, s21 = js_similarity(p1, p2), js_similarity(p2, p1)
        assert s12 == pytest.approx(s21, abs=1e-12)
        assert 0.0 <= s12 <= 1.0
        assert js_similarity(p1, p1) == 1.0
        if not np.allclose(p1, p2, atol=1e-6):
            assert s12 < 1.0
        assert s12 == pytest.approx(js_oracle(p1, p2), abs=1e-9)

    def test_matrix_matches_pairwise(self):
        m = np.random.default_rng(0).dirichlet(np.ones(5), size=6)
        mat = js_similarity_matrix(m)
        for i in range(6):
            for j in range(6):
                assert mat[i, j] == pytest.approx(js_similarity(m[i], m[j]), abs=1e-12)


def graph_from(a, semantic):
    return GraphSpec.build(a, np.zeros((len(a), 2)), semantic)


class TestNegativeFilter:
    def test_clique_falls_back(self, caplog):
        g = graph_from(np.ones((4, 4)), np.random.default_rng(0).dirichlet(np.ones(3), size=4))
        with caplog.at_level("WARNING"):
            f = build_negative_filter(g, u=0)
        assert f.fell_back.all()
        assert "without negatives" in caplog.text
        for i in range(4):
            assert f.negatives(i) == [j for j in range(4) if j != i]

    def test_isolated_nodes_u1(self):
        semantic = np.random.default_rng(3).dirichlet(np.ones(5), size=4)
        f = build_negative_filter(graph_from(np.eye(4), semantic), u=1)
        expected = brute_force_allowed(np.eye(4), semantic, 1)
        for i in range(4):
            assert len(f.negatives(i)) == 2
            assert set(f.negatives(i)) == expected[i]

    def test_tie_excludes_lower_index(self):
        # nodes 2 and 3 are identical and strictly closest to node 0; node 1 is far away
        semantic = np.array([[0.5, 0.5], [1.0, 0.0], [0.6, 0.4], [0.6, 0.4]])
        f = build_negative_filter(graph_from(np.eye(4), semantic), u=1)
        assert f.semantic[0].tolist() == [False, False, True, False]
        assert f.negatives(0) == [1, 3]
        assert f.semantic[2, 3] and f.semantic[3, 2]

    def test_u_too_large(self):
        with pytest.raises(ConfigError):
            build_negative_filter(tiny_graph(4), u=4)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 2 ** 31), st.floats(0.0, 1.0), st.data())
    def test_matches_brute_force(self, n, seed, density, data):
        rng = np.random.default_rng(seed)
        upper = np.triu(rng.random((n, n)) < density, 1)
        a = (upper | upper.T | np.eye(n, dtype=bool)).astype(float)
        semantic = rng.dirichlet(np.ones(4), size=n)
        if n > 2 and rng.random() < 0.5:
            semantic[rng.integers(n)] = semantic[rng.integers(n)]
        u = data.draw(st.integers(0, n - 1))
        f = build_negative_filter(graph_from(a, semantic), u=u)
        expected = brute_force_allowed(a, semantic / semantic.sum(1, keepdims=True), u)
        for i in range(n):
            assert set(f.negatives(i)) == expected[i]
            assert i not in f.negatives(i)

    def test_batch_subset(self):
        graph = tiny_graph(8, chords=2, seed=4)
        nodes = [1, 3, 4, 6]
        f = build_negative_filter(graph, nodes, u=1)
        sub_a = graph.a_con[np.ix_(nodes, nodes)]
        assert [set(f.negatives(i)) for i in range(4)] == brute_force_allowed(sub_a, graph.semantic[nodes], 1)

    def test_distance_filter(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [9.0, 0.0]])
        g = GraphSpec.build(np.eye(4), coords, np.full((4, 2), 0.5))
        f = build_negative_filter(g, u=0, matrix="dist", radius=1.5)
        assert f.negatives(0) == [2, 3] and f.negatives(2) == [0, 1, 3]
        with pytest.raises(ConfigError):
            build_negative_filter(g, u=0, matrix="dist")


class TestSemanticLoss:
    def test_closed_form(self):
        h = torch.tensor([[1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]], dtype=D)
        allowed = np.zeros((3, 3), dtype=bool)
        allowed[0, [1, 2]] = True
        loss = semantic_contextual_loss(h, h.clone(), allowed, delta=1.0)
        per_node = -math.log(math.e / (math.e + 2 * math.exp(-1)))
        # nodes 1 and 2 have no negatives and contribute exactly 0
        assert loss.item() == pytest.approx(per_node / 3, abs=1e-12)

    def test_empty_negatives_give_zero(self):
        h = torch.randn(5, 3, dtype=D)
        assert semantic_contextual_loss(h, torch.randn(5, 3, dtype=D), np.zeros((5, 5), bool)).item() == 0.0

    def test_row_scale_invariance(self):
        g = torch.Generator().manual_seed(0)
        h_b, h_s = torch.randn(6, 4, dtype=D, generator=g), torch.randn(6, 4, dtype=D, generator=g)
        f = build_negative_filter(tiny_graph(6), u=1)
        base = semantic_contextual_loss(h_b, h_s, f, 0.1)
        scale = torch.tensor([1.0, 3.0, 0.2, 7.0, 1.0, 0.5], dtype=D)[:, None]
        assert semantic_contextual_loss(h_b * scale, h_s / scale, f, 0.1).item() == pytest.approx(base.item(),
                                                                                                   abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_unfiltered_equals_reference_loss(self, seed):
        g = torch.Generator().manual_seed(seed)
        n = 2 + seed
        s_b, s_s = torch.randn(n, 5, dtype=D, generator=g), torch.randn(n, 5, dtype=D, generator=g)
        oracle = eq19_oracle(s_b, s_s, 0.3)
        assert basic_graph_contrastive_loss(s_b, s_s, 0.3).item() == pytest.approx(oracle, abs=1e-9)
        ours = semantic_contextual_loss(s_b, s_s, unfiltered_negatives(n), 0.3)
        assert ours.item() == pytest.approx(oracle, abs=1e-9)

    def test_reference_loss_edge_cases(self):
        assert basic_graph_contrastive_loss(torch.randn(1, 3, dtype=D), torch.randn(1, 3, dtype=D)).item() == 0.0
        h = torch.tensor([[1.0, 0.0]] * 4, dtype=D)
        # every pairwise cosine is 1, so the loss is log N for any sigma
        for sigma in (0.1, 0.2, 5.0):
            assert basic_graph_contrastive_loss(h, h, sigma).item() == pytest.approx(math.log(4), abs=1e-12)

    def test_zero_row(self):
        h = torch.randn(3, 2, dtype=D)
        h[1] = 0
        with pytest.raises(DomainError):
            semantic_contextual_loss(h, torch.randn(3, 2, dtype=D), unfiltered_negatives(3))

    def test_permutation_invariance(self):
        g = torch.Generator().manual_seed(1)
        h_b, h_s = torch.randn(6, 4, dtype=D, generator=g), torch.randn(6, 4, dtype=D, generator=g)
        graph = tiny_graph(6, chords=1)
        perm = np.array([2, 5, 0, 1, 4, 3])
        f = build_negative_filter(graph, u=1)
        pg = GraphSpec.build(graph.a_con[np.ix_(perm, perm)], graph.coords[perm], graph.semantic[perm])
        fp = build_negative_filter(pg, u=1)
        a = semantic_contextual_loss(h_b, h_s, f)
        b = semantic_contextual_loss(h_b[perm], h_s[perm], fp)
        assert a.item() == pytest.approx(b.item(), abs=1e-12)

    def test_positive_monotone(self):
        h_b = torch.tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2]], dtype=D)
        losses = []
        for angle in (1.5, 1.0, 0.5, 0.0):
            h_s = h_b.clone()
            h_s[0] = torch.tensor([math.cos(angle), math.sin(angle)], dtype=D)
            losses.append(semantic_contextual_loss(h_b, h_s, unfiltered_negatives(3), 0.5).item())
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_gradients(self):
        g = torch.Generator().manual_seed(2)
        h_b = torch.randn(4, 3, dtype=D, generator=g).requires_grad_()
        h_s = torch.randn(4, 3, dtype=D, generator=g).requires_grad_()
        f = build_negative_filter(tiny_graph(4), u=0)
        errors = check_gradients(lambda: semantic_contextual_loss(h_b, h_s, f, 0.5), {"h_b": h_b, "h_s": h_s})
        assert max(errors.values()) < 1e-4, errors
        errors = check_gradients(lambda: basic_graph_contrastive_loss(h_b, h_s, 0.5), {"h_b": h_b, "h_s": h_s})
        assert max(errors.values()) < 1e-4, errors


class TestProjectionHead:
    def test_zero_weights(self):
        head = ProjectionHead(8, 5).double()
        for p in head.parameters():
            nn.init.zeros_(p)
        assert torch.all(head(torch.randn(3, 8, dtype=D)) == 0)

    def test_width(self):
        assert ProjectionHead(8, 5)(torch.randn(2, 7, 8)).shape == (2, 7, 5)
        assert ContrastiveHeads(8, 3, d_proj=6).proj(torch.randn(4, 8)).shape == (4, 6)

    def test_gradients(self):
        torch.manual_seed(0)
        head = ProjectionHead(8, 4).double()
        x = torch.randn(3, 8, dtype=D)
        w = torch.randn(3, 4, dtype=D)
        errors = check_gradients(lambda: (torch.tanh(head(x)) * w).sum(), head.named_parameters())
        assert max(errors.values()) < 1e-4, errors

    def test_config(self):
        with pytest.raises(ConfigError):
            ContrastiveConfig(delta=0)
        with pytest.raises(ConfigError):
            ContrastiveConfig(filter_matrix="geo")
