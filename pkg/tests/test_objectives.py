import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from neucoreclass.exceptions import InvalidDistribution, NonPositiveTemperature, ShapeMismatch
from neucoreclass.model import UncertaintyWeights
from neucoreclass.objectives import (
    classification_loss,
    classification_loss_from_logits,
    combined_loss,
    compute_losses,
    contrastive_loss,
    reconstruction_loss,
    similarity,
)

from .conftest import central_difference_check


def literal_cos(a, b):
    na = max(math.sqrt(sum(v * v for v in a)), 1e-8)
    nb = max(math.sqrt(sum(v * v for v in b)), 1e-8)
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def literal_contrastive(z, tau):
    """Per-sample loss by direct double loops over the batch and views."""
    b, k = len(z), len(z[0])
    out = []
    for i in range(b):
        total = 0.0
        for kk in range(k):
            pos = sum(math.exp(literal_cos(z[i][kk], z[j][kk]) / tau) for j in range(b))
            neg = sum(math.exp(literal_cos(z[i][kk], z[j][q]) / tau)
                      for q in range(k) if q != kk for j in range(b))
            total += -math.log(pos / (pos + neg))
        out.append(total / k)
    return out


def weights_with(**log_sigma):
    w = UncertaintyWeights().double()
    with torch.no_grad():
        for t, v in log_sigma.items():
            w.log_sigma(t).fill_(v)
    return w


class TestSimilarity:
    def test_self_similarity(self):
        z = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
        assert similarity(z, z, 0.1).item() == pytest.approx(22026.465794806718, rel=1e-12)

    def test_orthogonal(self):
        assert similarity([1.0, 0.0], [0.0, 3.0], 0.37).item() == pytest.approx(1.0)

    def test_hand_computed_cosine(self):
        assert similarity([1.0, 0.0], [1.0, 1.0], 1.0).item() == pytest.approx(2.028114981647472)

    @pytest.mark.parametrize("tau", [0.0, -0.1])
    def test_non_positive_temperature(self, tau):
        with pytest.raises(NonPositiveTemperature):
            similarity([1.0], [1.0], tau)

    def test_zero_vector_is_finite(self):
        assert math.isfinite(similarity([0.0, 0.0], [1.0, 2.0], 0.1).item())


class TestContrastive:
    def test_identical_embeddings_give_log_k(self):
        z = torch.ones(3, 12, 5, dtype=torch.float64)
        loss, per_k = contrastive_loss(z, 0.1)
        np.testing.assert_allclose(loss.numpy(), 2.4849066497880004, atol=1e-6)
        np.testing.assert_allclose(per_k.mean(1).numpy(), loss.numpy(), atol=1e-12)

    def test_single_sample_two_orthogonal_views(self):
        z = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=torch.float64)
        loss, _ = contrastive_loss(z, 1.0)
        assert loss.item() == pytest.approx(0.3132616875182228, abs=1e-12)

    @pytest.mark.parametrize("instance", range(20))
    def test_matches_literal_loops(self, instance):
        rng = np.random.default_rng(instance)
        b, k, d = rng.integers(1, 5), rng.integers(2, 6), rng.integers(1, 9)
        tau = float(rng.choice([0.05, 0.1, 0.5, 1.0]))
        z = rng.standard_normal((b, k, d))
        loss, _ = contrastive_loss(torch.tensor(z), tau)
        np.testing.assert_allclose(loss.numpy(), literal_contrastive(z.tolist(), tau),
                                   rtol=1e-6, atol=1e-6)

    def test_strictly_positive(self, rng):
        loss, _ = contrastive_loss(torch.tensor(rng.standard_normal((4, 5, 8))), 0.1)
        assert torch.all(loss > 0)

    def test_permutation_equivariance(self, rng):
        z = torch.tensor(rng.standard_normal((4, 3, 6)))
        perm = torch.tensor([2, 0, 3, 1])
        loss, _ = contrastive_loss(z, 0.2)
        loss_p, _ = contrastive_loss(z[perm], 0.2)
        np.testing.assert_allclose(loss_p.numpy(), loss[perm].numpy(), atol=1e-12)

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            contrastive_loss(torch.zeros(2, 1, 3), 0.1)
        with pytest.raises(NonPositiveTemperature):
            contrastive_loss(torch.zeros(2, 3, 3), 0.0)

    def test_gradient(self, rng):
        z = torch.tensor(rng.standard_normal((3, 3, 8)))
        assert central_difference_check(lambda t: contrastive_loss(t, 0.1)[0].sum(), z) < 1e-4


class TestReconstruction:
    def test_perfect(self, rng):
        x = torch.tensor(rng.standard_normal((2, 3, 7)))
        loss, per_k = reconstruction_loss(x, x.unsqueeze(1).repeat(1, 4, 1, 1))
        assert torch.all(loss == 0) and per_k.shape == (2, 4)

    def test_constant_offset(self, rng):
        x = torch.tensor(rng.standard_normal((2, 1, 5)))
        loss, _ = reconstruction_loss(x, x.unsqueeze(1).repeat(1, 3, 1, 1) + 0.5)
        np.testing.assert_allclose(loss.numpy(), 0.25, atol=1e-12)

    def test_matches_elementwise_loops(self, rng):
        x = rng.standard_normal((2, 1, 5))
        r = rng.standard_normal((2, 3, 1, 5))
        expected = []
        for i in range(2):
            terms = []
            for k in range(3):
                sq = [(x[i, c, t] - r[i, k, c, t]) ** 2 for c in range(1) for t in range(5)]
                terms.append(sum(sq) / len(sq))
            expected.append(sum(terms) / 3)
        loss, _ = reconstruction_loss(torch.tensor(x), torch.tensor(r))
        np.testing.assert_allclose(loss.numpy(), expected, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            reconstruction_loss(torch.zeros(2, 1, 5), torch.zeros(2, 3, 1, 6))

    def test_gradient(self, rng):
        x = torch.tensor(rng.standard_normal((2, 1, 16)))
        r = torch.tensor(rng.standard_normal((2, 3, 1, 16)))
        assert central_difference_check(lambda t: reconstruction_loss(x, t)[0].sum(), r) < 1e-4


class TestClassification:
    def test_one_hot(self):
        loss, _ = classification_loss(torch.eye(5, dtype=torch.float64).expand(2, 5, 5))
        assert torch.all(loss == 0)

    def test_uniform(self):
        loss, _ = classification_loss(torch.full((3, 12, 12), 1 / 12, dtype=torch.float64))
        np.testing.assert_allclose(loss.numpy(), 2.4849066497880004, atol=1e-6)

    def test_diagonal_point_nine(self):
        k = 4
        p = torch.full((1, k, k), 0.1 / (k - 1), dtype=torch.float64)
        p[0].fill_diagonal_(0.9)
        loss, _ = classification_loss(p)
        assert loss.item() == pytest.approx(0.10536051565782628, abs=1e-12)

    def test_zero_probability_is_floored(self):
        p = torch.tensor([[[0.0, 1.0], [1.0, 0.0]]], dtype=torch.float64)
        loss, _ = classification_loss(p)
        assert loss.item() == pytest.approx(-math.log(1e-12))

    def test_invalid_distribution(self):
        with pytest.raises(InvalidDistribution):
            classification_loss(torch.full((1, 3, 3), 0.5, dtype=torch.float64))

    def test_logits_and_probability_paths_agree(self, rng):
        logits = torch.tensor(rng.standard_normal((3, 5, 5)))
        a, _ = classification_loss_from_logits(logits)
        b, _ = classification_loss(torch.softmax(logits, -1))
        np.testing.assert_allclose(a.numpy(), b.numpy(), atol=1e-12)

    def test_gradient(self, rng):
        logits = torch.tensor(rng.standard_normal((2, 3, 3)))
        fn = lambda t: classification_loss_from_logits(t)[0].sum()  # noqa: E731
        assert central_difference_check(fn, logits) < 1e-4


class TestCombined:
    def test_equal_sigmas(self):
        f = {t: torch.tensor([2.0], dtype=torch.float64) for t in ("con", "rec", "class")}
        assert combined_loss(f, weights_with()).item() == pytest.approx(5.079441541679836, abs=1e-6)

    def test_zero_losses(self):
        f = {t: torch.zeros(1, dtype=torch.float64) for t in ("con", "rec", "class")}
        assert combined_loss(f, weights_with()).item() == pytest.approx(2.0794415416798357, abs=1e-12)

    def test_sigma_e(self):
        f = {"con": torch.tensor([1.0], dtype=torch.float64),
             "rec": torch.zeros(1, dtype=torch.float64),
             "class": torch.zeros(1, dtype=torch.float64)}
        value = combined_loss(f, weights_with(con=1.0)).item()
        assert value == pytest.approx(2.7672236902564196, abs=1e-9)

    def test_single_task(self):
        f = {"rec": torch.tensor([0.7], dtype=torch.float64)}
        w = weights_with(rec=0.3)
        sigma = math.exp(0.3)
        expected = 0.7 / (2 * sigma ** 2) + math.log(1 + sigma)
        assert combined_loss(f, w, tasks=("rec",)).item() == pytest.approx(expected, abs=1e-12)

    def test_gradient_wrt_log_sigma(self):
        f = {t: torch.tensor([v], dtype=torch.float64)
             for t, v in zip(("con", "rec", "class"), (1.3, 0.4, 2.2))}

        class Plain:
            def __init__(self, s):
                self.values = dict(zip(("con", "rec", "class"), s))

            def log_sigma(self, task):
                return self.values[task]

        def fn(s):
            return combined_loss(f, Plain(s)).sum()

        s = torch.tensor([0.2, -0.5, 0.9], dtype=torch.float64)
        assert central_difference_check(fn, s, n_coords=3) < 1e-4

    def test_sigma_optimum_is_finite(self):
        w = weights_with()
        opt = torch.optim.Adam([w.log_sigma_con], lr=0.05)
        f = {"con": torch.ones(1, dtype=torch.float64)}
        for _ in range(3000):
            opt.zero_grad()
            combined_loss(f, w, tasks=("con",)).sum().backward()
            opt.step()
        sigma = w.sigma("con").item()
        # stationary point of 1/(2 s^2) + ln(1 + s): s^3 = 1 + s
        assert 0 < sigma < 10
        assert sigma ** 3 == pytest.approx(1 + sigma, rel=1e-3)

    @settings(max_examples=50, deadline=None)
    @given(
        base=st.lists(st.floats(0, 10), min_size=3, max_size=3),
        bump=st.floats(1e-3, 5),
        which=st.sampled_from(("con", "rec", "class")),
        log_sigmas=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    )
    def test_monotone_in_each_task(self, base, bump, which, log_sigmas):
        w = weights_with(**dict(zip(("con", "rec", "class"), log_sigmas)))
        f = {t: torch.tensor([v], dtype=torch.float64) for t, v in zip(("con", "rec", "class"), base)}
        g = dict(f)
        g[which] = f[which] + bump
        assert combined_loss(g, w).item() > combined_loss(f, w).item()


def test_compute_losses_breakdown(double_tiny, rng):
    x = torch.tensor(rng.standard_normal((3, 1, 16)))
    lb = compute_losses(double_tiny, x, 0.1)
    for t in ("con", "rec", "class"):
        assert lb.per_sample[t].shape == (3,)
        np.testing.assert_allclose(lb.per_transformation[t].mean(1).detach().numpy(),
                                   lb[t].detach().numpy(), atol=1e-6)
        assert torch.all(lb[t] >= 0)


def test_compute_losses_reconstruction_only(double_tiny, rng):
    x = torch.tensor(rng.standard_normal((2, 1, 16)))
    lb = compute_losses(double_tiny, x, 0.1, tasks=("rec",))
    sigma = double_tiny.weights.sigma("rec")
    expected = lb["rec"] / (2 * sigma ** 2) + torch.log1p(sigma)
    assert set(lb.per_sample) == {"rec"}
    np.testing.assert_array_equal(lb.combined.detach().numpy(), expected.detach().numpy())


def test_all_pairs_in_literal_oracle_are_counted():
    # sanity of the oracle itself: B=2, K=2 identical vectors -> Pos = 2e^{1/t}, Neg = 2e^{1/t}
    z = [[[1.0, 0.0]] * 2] * 2
    assert literal_contrastive(z, 1.0) == pytest.approx([math.log(2)] * 2)
    assert len(list(itertools.product(range(2), range(2)))) == 4
