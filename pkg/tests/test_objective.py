import math

import numpy as np
import pytest

from msda import tensor as T
from msda.model import ModelConfig, init_model
from msda.objective import (LossWeights, assign_pseudolabels, fd_loss,
                            final_lc_loss, lc_loss, lmm_loss, total_loss)
from msda.tensor import Tensor, backward


def logits_for_probs(probs):
    return np.log(np.asarray(probs, dtype=float))


def small_model(n_extractors=1, n_classes=2, seed=0):
    cfg = ModelConfig(n_extractors=n_extractors, input_dim=2, hidden_dims=(4,),
                      feature_dim=3, n_classes=n_classes, init_seed=seed)
    return init_model(cfg)


def zero_weights(model, prefixes=None):
    for name, p in model.params.items():
        if prefixes is None or any(name.startswith(pre) for pre in prefixes):
            p.values = np.zeros_like(p.values)


class TestAssignPseudolabels:
    def test_confident_row_included(self):
        out = assign_pseudolabels(logits_for_probs([[0.95, 0.05]]), tau=0.9)
        assert out.labels[0] == 0
        assert out.included[0]

    def test_low_confidence_excluded(self):
        out = assign_pseudolabels(logits_for_probs([[0.6, 0.4]]), tau=0.9)
        assert not out.included[0]

    def test_boundary_is_strict(self):
        out = assign_pseudolabels(logits_for_probs([[0.9, 0.1]]), tau=0.9)
        assert out.confidences[0] == pytest.approx(0.9)
        assert not out.included[0]

    def test_tie_breaks_to_low_index(self):
        out = assign_pseudolabels(np.array([[1.0, 1.0]]), tau=0.0)
        assert out.labels[0] == 0

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(500, 4)) * 3
        lo = assign_pseudolabels(logits, 0.5).included
        mid = assign_pseudolabels(logits, 0.9).included
        hi = assign_pseudolabels(logits, 0.95).included
        assert (hi <= mid).all()
        assert (mid <= lo).all()


def single_feature_fixture():
    source = Tensor(np.array([[1.0], [3.0]]))
    target = Tensor(np.array([[4.0]]))
    return [
        (source, np.zeros(2, dtype=int), np.ones(2, dtype=bool)),
        (target, np.zeros(1, dtype=int), np.ones(1, dtype=bool)),
    ]


class TestLmmLoss:
    def test_first_order_fixture(self):
        assert lmm_loss(single_feature_fixture(), 1, 1).item() == pytest.approx(2.0)

    def test_second_order_fixture(self):
        assert lmm_loss(single_feature_fixture(), 1, 2).item() == pytest.approx(13.0)

    def test_identical_multisets_zero(self):
        feats = np.array([[0.5], [2.0], [0.5], [2.0]])
        labels = np.array([0, 1, 0, 1])
        entries = [(Tensor(feats), labels, np.ones(4, dtype=bool))
                   for _ in range(3)]
        assert lmm_loss(entries, 2, 3).item() == pytest.approx(0.0)

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            entries = [(Tensor(rng.normal(size=(6, 3))),
                        rng.integers(0, 2, size=6),
                        rng.uniform(size=6) > 0.3) for _ in range(3)]
            entries = [(f, y, m | True) for f, y, m in entries[:1]] + entries[1:]
            try:
                assert lmm_loss(entries, 2, 2).item() >= 0.0
            except ValueError:
                pass

    def test_sample_permutation_invariant(self):
        rng = np.random.default_rng(2)
        feats = rng.normal(size=(8, 2))
        labels = rng.integers(0, 2, size=8)
        perm = rng.permutation(8)
        base = [(Tensor(feats), labels, np.ones(8, dtype=bool)),
                (Tensor(feats[perm] + 1.0), labels[perm], np.ones(8, dtype=bool))]
        swapped = [base[1], base[0]]
        assert lmm_loss(base, 2, 2).item() == pytest.approx(
            lmm_loss(swapped, 2, 2).item())

    @pytest.mark.parametrize("k", [1, 2])
    def test_feature_scaling_power_law(self, k):
        entries = single_feature_fixture()
        s = 1.7
        scaled = [(Tensor(s * f.values), y, m) for f, y, m in entries]
        base = lmm_loss(entries, 1, k).item()
        base_lower = lmm_loss(entries, 1, k - 1).item() if k > 1 else 0.0
        scaled_total = lmm_loss(scaled, 1, k).item()
        scaled_lower = lmm_loss(scaled, 1, k - 1).item() if k > 1 else 0.0
        assert scaled_total - scaled_lower == pytest.approx(
            (base - base_lower) * s ** k)

    def test_empty_class_terms_skipped_constants_fixed(self):
        # class 1 never appears: same value as the single-class fixture
        # apart from the 1/C constant
        entries = single_feature_fixture()
        half = lmm_loss(entries, 2, 1).item()
        full = lmm_loss(entries, 1, 1).item()
        assert half == pytest.approx(full / 2)

    def test_excluded_target_means_skip_pair_terms(self):
        source, target = single_feature_fixture()
        target = (target[0], target[1], np.zeros(1, dtype=bool))
        assert lmm_loss([source, target], 1, 2).item() == pytest.approx(0.0)

    def test_needs_two_domains(self):
        with pytest.raises(ValueError):
            lmm_loss(single_feature_fixture()[:1], 1, 1)


class TestLcLoss:
    def test_zero_weight_model_uniform(self):
        model = small_model()
        zero_weights(model)
        batches = [(Tensor(np.ones((4, 2))), np.array([0, 1, 0, 1]))]
        assert lc_loss(model, 1, batches).item() == pytest.approx(math.log(2))

    def test_perfect_logits_near_zero(self):
        model = small_model()
        zero_weights(model)
        # huge bias on the true class for every sample
        model.params["pair_clf1/b"].values[:] = [1000.0, 0.0]
        batches = [(Tensor(np.ones((3, 2))), np.zeros(3, dtype=int))]
        assert lc_loss(model, 1, batches).item() == pytest.approx(0.0, abs=1e-9)

    def test_outer_mean_over_domains(self):
        model = small_model()
        x1 = Tensor(np.random.default_rng(0).normal(size=(4, 2)))
        x2 = Tensor(np.random.default_rng(1).normal(size=(4, 2)))
        y1, y2 = np.array([0, 1, 1, 0]), np.array([1, 1, 0, 0])
        a = lc_loss(model, 1, [(x1, y1)]).item()
        b = lc_loss(model, 1, [(x2, y2)]).item()
        both = lc_loss(model, 1, [(x1, y1), (x2, y2)]).item()
        assert both == pytest.approx((a + b) / 2)

    def test_empty_batch_rejected(self):
        model = small_model()
        with pytest.raises(ValueError):
            lc_loss(model, 1, [(Tensor(np.zeros((0, 2))), np.zeros(0, dtype=int))])


class TestFdLoss:
    def test_single_extractor_zero(self):
        model = small_model(n_extractors=1)
        batches = [Tensor(np.random.default_rng(0).normal(size=(4, 2)))
                   for _ in range(3)]
        assert fd_loss(model, batches).item() == pytest.approx(0.0, abs=1e-12)

    def test_zero_logit_fixture(self):
        model = small_model(n_extractors=2)
        zero_weights(model, ["extractor_clf/"])
        batches = [Tensor(np.random.default_rng(1).normal(size=(5, 2)))
                   for _ in range(2)]
        assert fd_loss(model, batches).item() == pytest.approx(2 * math.log(2),
                                                               abs=1e-9)

    def test_perfect_separation_near_zero(self):
        model = small_model(n_extractors=2)
        zero_weights(model)
        # extractor k emits constant feature e_k; classifier reads it back
        model.params["extractor1/b1"].values[:] = [1.0, 0.0, 0.0]
        model.params["extractor2/b1"].values[:] = [0.0, 1.0, 0.0]
        model.params["extractor_clf/W"].values[:2, :] = np.array(
            [[1000.0, 0.0], [0.0, 1000.0]])
        batches = [Tensor(np.zeros((3, 2)))]
        assert fd_loss(model, batches).item() == pytest.approx(0.0, abs=1e-9)


class TestTotalLoss:
    def source_target(self, model, rng):
        sources = [(Tensor(rng.normal(size=(6, 2))), rng.integers(0, 2, size=6))
                   for _ in range(2)]
        target = Tensor(rng.normal(size=(6, 2)))
        return sources, target

    def test_zero_weights_equals_lc(self):
        model = small_model()
        rng = np.random.default_rng(3)
        sources, target = self.source_target(model, rng)
        weights = LossWeights(alpha=0.0, beta=0.0, K=2, tau=0.9)
        total, bd = total_loss(model, sources, target, weights)
        assert total.item() == pytest.approx(lc_loss(model, 1, sources).item())
        assert bd.fd == 0.0

    def test_breakdown_reconstitutes_total(self):
        model = small_model(n_extractors=2)
        rng = np.random.default_rng(4)
        sources, target = self.source_target(model, rng)
        weights = LossWeights(alpha=0.37, beta=1.3, K=2, tau=0.5)
        total, bd = total_loss(model, sources, target, weights)
        recon = bd.lc_sum + weights.alpha * bd.lmm_sum + weights.beta * bd.fd
        assert abs(total.item() - recon) < 1e-12

    def test_small_alpha_defaults_accepted(self):
        weights = LossWeights(alpha=0.0005, beta=1.0, K=2, tau=0.9)
        model = small_model(n_extractors=2)
        rng = np.random.default_rng(5)
        sources, target = self.source_target(model, rng)
        total, _ = total_loss(model, sources, target, weights)
        assert np.isfinite(total.item())

    def test_gradient_passes_grad_check(self):
        # 4-sample, 2-domain (1 source + target), 2-class fixture
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 2))
        y = np.array([0, 1, 0, 1])
        tx = rng.normal(size=(4, 2))
        weights = LossWeights(alpha=0.5, beta=1.0, K=2, tau=0.0)
        template = small_model(n_extractors=2, seed=9)
        names = [n for n in template.param_names
                 if not n.startswith("final_clf/")]
        shapes = [template.params[n].values.shape for n in names]
        sizes = [int(np.prod(s)) for s in shapes]
        flat = np.concatenate([template.params[n].values.reshape(-1)
                               for n in names])

        def build_loss(theta, requires_grad=False):
            model = small_model(n_extractors=2, seed=9)
            handles, offset = [], 0
            for name, size, shape in zip(names, sizes, shapes):
                t = Tensor(theta[offset:offset + size].reshape(shape),
                           requires_grad=requires_grad)
                model.params[name] = t
                handles.append(t)
                offset += size
            total, _ = total_loss(model, [(Tensor(x), y)], Tensor(tx), weights)
            return total, handles

        loss, handles = build_loss(flat, requires_grad=True)
        backward(loss)
        analytic = np.concatenate([
            (h.grad if h.grad is not None else np.zeros(h.values.shape)).reshape(-1)
            for h in handles])
        step = 1e-4
        worst = 0.0
        for i in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += step
            minus[i] -= step
            fd = (build_loss(plus)[0].item() - build_loss(minus)[0].item()) / (2 * step)
            err = abs(analytic[i] - fd) / max(1.0, abs(analytic[i]), abs(fd))
            worst = max(worst, err)
        assert worst < 1e-4


class TestFinalLcLoss:
    def test_zero_weight_final_classifier(self):
        model = small_model(n_extractors=2)
        zero_weights(model, ["final_clf/"])
        batches = [(Tensor(np.random.default_rng(7).normal(size=(4, 2))),
                    np.array([0, 1, 1, 0]))]
        assert final_lc_loss(model, batches).item() == pytest.approx(math.log(2))

    def test_extractors_carry_no_adjoint(self):
        model = small_model(n_extractors=2)
        batches = [(Tensor(np.random.default_rng(8).normal(size=(4, 2))),
                    np.array([0, 1, 1, 0]))]
        loss = final_lc_loss(model, batches)
        backward(loss)
        for name, p in model.params.items():
            if name.startswith("final_clf/"):
                assert p.grad is not None
            else:
                assert p.grad is None

    def test_single_extractor_matches_fresh_linear_head(self):
        model = small_model(n_extractors=1)
        x = Tensor(np.random.default_rng(9).normal(size=(5, 2)))
        y = np.array([0, 1, 0, 1, 1])
        feats = model.extract(1, x).values
        w = model.params["final_clf/W"]
        b = model.params["final_clf/b"]
        direct = T.softmax_cross_entropy(
            T.add(T.matmul(Tensor(feats), w), b), y).item()
        assert final_lc_loss(model, [(x, y)]).item() == pytest.approx(direct)
