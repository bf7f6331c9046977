import numpy as np
import pytest

from trajdiff import tensor as T
from trajdiff.errors import DataError
from trajdiff.guidance import (
    AttractorSpec,
    GuidanceConfig,
    RepellerSpec,
    attractor_cost,
    constraint_score,
    guidance_from_json,
    guidance_to_json,
    postprocess_optimize,
    repeller_cost,
)

N_A, N_T, N_F = 2, 4, 2


def make_attractor(lam=1.0):
    targets = np.zeros((N_A, N_T, N_F))
    targets[0, -1] = [1.0, 2.0]
    mask = np.zeros((N_A, N_T, N_F))
    mask[0, -1] = 1.0
    return AttractorSpec(targets=targets, mask=mask, lam=lam)


class TestAttractorCost:
    def test_satisfied_constraint_is_zero(self):
        spec = make_attractor()
        d_out = np.zeros((N_A, N_T, N_F))
        d_out[0, -1] = [1.0, 2.0]
        assert attractor_cost(d_out, spec) == 0.0

    def test_hand_computed_mean_absolute_deviation(self):
        targets = np.zeros((1, 2, 2))
        mask = np.ones((1, 2, 2))  # 4 masked scalar entries
        spec = AttractorSpec(targets=targets, mask=mask, lam=1.0)
        d_out = np.zeros((1, 2, 2))
        d_out[0, 0, 0] = 1.0  # one entry off by 1
        assert attractor_cost(d_out, spec) == pytest.approx(0.25, abs=1e-9)

    def test_invariant_to_unmasked_entries(self):
        spec = make_attractor()
        d_out = np.zeros((N_A, N_T, N_F))
        base = attractor_cost(d_out, spec)
        d_out2 = d_out.copy()
        d_out2[1, :, :] = 99.0  # unmasked agent
        assert attractor_cost(d_out2, spec) == base

    def test_all_zero_mask_is_inactive_not_error(self):
        spec = AttractorSpec(targets=np.zeros((1, 2, 2)), mask=np.zeros((1, 2, 2)), lam=1.0)
        assert attractor_cost(np.ones((1, 2, 2)), spec) == 0.0

    def test_batch_axis_sums_per_sample_costs(self):
        spec = make_attractor()
        rng = np.random.default_rng(0)
        batch = rng.normal(size=(3, N_A, N_T, N_F))
        total = attractor_cost(T.Tensor(batch), spec).data
        singles = sum(attractor_cost(b, spec) for b in batch)
        assert total == pytest.approx(singles, rel=1e-12)


class TestRepellerCost:
    def test_far_apart_is_zero(self):
        d_out = np.zeros((2, 3, 2))
        d_out[1, :, 0] = 100.0
        assert repeller_cost(d_out, RepellerSpec(radius=5.0, lam=1.0)) == 0.0

    def test_hand_computed_half_radius(self):
        # two agents at distance r/2 for exactly one timestep, r=5:
        # A has two symmetric entries of 0.5 -> cost 1.0 / 2 = 0.5
        d_out = np.zeros((2, 3, 2))
        d_out[1, :, 0] = 100.0
        d_out[1, 0, :] = [2.5, 0.0]  # timestep 0 at distance 2.5
        cost = repeller_cost(d_out, RepellerSpec(radius=5.0, lam=1.0))
        assert cost == pytest.approx(0.5, abs=1e-9)

    def test_diagonal_never_contributes(self):
        d_out = np.zeros((3, 2, 2))  # all agents at the same point
        cost = repeller_cost(d_out, RepellerSpec(radius=1.0, lam=1.0))
        # every off-diagonal pair fully violates (A=1); diagonal excluded
        # (1e-8 tolerance: the sqrt epsilon-floor shifts distances by ~1e-9)
        assert cost == pytest.approx(1.0, abs=1e-8)

    def test_single_agent_zero(self):
        assert repeller_cost(np.zeros((1, 4, 2)), RepellerSpec(radius=1.0)) == 0.0

    def test_gradient_finite_with_coincident_agents(self):
        d_out = T.parameter(np.zeros((2, 2, 2)))
        cost = repeller_cost(d_out, RepellerSpec(radius=1.0, lam=1.0))
        grads = T.backward(cost)
        assert np.all(np.isfinite(grads[id(d_out)].data))

    def test_gradient_matches_finite_differences(self):
        spec = RepellerSpec(radius=2.0, lam=1.0)
        rng = np.random.default_rng(1)
        base = rng.uniform(-1, 1, size=(3, 4, 2))

        p = T.parameter(base.copy())
        grads = T.backward(repeller_cost(p, spec))
        analytic = grads[id(p)].data

        h = 1e-6
        for idx in [(0, 1, 0), (2, 3, 1), (1, 0, 0)]:
            pert = base.copy()
            pert[idx] += h
            hi = repeller_cost(pert, spec)
            pert[idx] -= 2 * h
            lo = repeller_cost(pert, spec)
            numeric = (hi - lo) / (2 * h)
            assert analytic[idx] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


class IdentityDenoiser:
    """denoise_tensor = x, so the constraint gradient is the raw cost gradient."""

    def denoise_tensor(self, x, ctx, sigma):
        return T.mul(x, 1.0)


class ScaledDenoiser:
    def __init__(self, factor):
        self.factor = factor

    def denoise_tensor(self, x, ctx, sigma):
        return T.mul(x, self.factor)


class TestConstraintScore:
    def _spec_latent(self, lam=1.0):
        # latents (N_a, D) decoded to (N_a, N_t, N_f) via reshape
        targets = np.zeros((N_A, N_T, N_F))
        mask = np.ones((N_A, N_T, N_F))
        return AttractorSpec(targets=targets, mask=mask, lam=lam)

    @staticmethod
    def _decode(t):
        return T.reshape(t, t.shape[:-1] + (N_T, N_F))

    def test_zero_lambda_returns_zero(self):
        cfg = GuidanceConfig(specs=(self._spec_latent(lam=0.0),))
        s = np.ones((N_A, N_T * N_F))
        out = constraint_score(s, None, 0.5, IdentityDenoiser(), cfg, decode=self._decode)
        assert np.array_equal(out, np.zeros_like(s))

    def test_thresholded_magnitude_bounded(self):
        cfg = GuidanceConfig(specs=(self._spec_latent(lam=1000.0),), score_thresholding=True)
        rng = np.random.default_rng(0)
        s = rng.normal(size=(N_A, N_T * N_F)) * 5
        for sigma in (0.1, 0.5, 2.0):
            out = constraint_score(s, None, sigma, IdentityDenoiser(), cfg, decode=self._decode)
            assert np.all(np.abs(sigma * out) <= 1.0 + 1e-12)

    def test_hand_computed_threshold_value(self):
        # raw gradient element 10.0 at sigma=0.5 -> clip(5, +-1)/0.5 = 2.0
        targets = np.zeros((1, 1, 2))
        mask = np.zeros((1, 1, 2))
        mask[0, 0, 0] = 1.0
        spec = AttractorSpec(targets=targets, mask=mask, lam=10.0)
        cfg = GuidanceConfig(specs=(spec,), score_thresholding=True)
        s = np.array([[3.0, 0.0]])  # gradient of lam*|s|/1: 10 * sign(3) = 10
        out = constraint_score(
            s, None, 0.5, IdentityDenoiser(), cfg, decode=lambda t: T.reshape(t, (t.shape[0], 1, 1, 2))
        )
        assert out[0, 0] == pytest.approx(-2.0, abs=1e-12)

    def test_unthresholded_gradient_sign(self):
        # s above target -> cost grows with s -> score must point down
        spec = self._spec_latent(lam=2.0)
        cfg = GuidanceConfig(specs=(spec,), score_thresholding=False)
        s = np.ones((N_A, N_T * N_F))
        out = constraint_score(s, None, 0.5, IdentityDenoiser(), cfg, decode=self._decode)
        assert np.all(out < 0)
        # magnitude: d/ds lam * mean|s| = lam / (N_A*N_T*N_F)
        assert np.allclose(out, -2.0 / (N_A * N_T * N_F), atol=1e-12)

    def test_chain_rule_through_denoiser(self):
        spec = self._spec_latent(lam=1.0)
        cfg = GuidanceConfig(specs=(spec,), score_thresholding=False)
        s = np.ones((N_A, N_T * N_F))
        base = constraint_score(s, None, 0.5, IdentityDenoiser(), cfg, decode=self._decode)
        scaled = constraint_score(s, None, 0.5, ScaledDenoiser(3.0), cfg, decode=self._decode)
        assert np.allclose(scaled, 3.0 * base, atol=1e-12)

    def test_batched_matches_per_sample(self):
        spec = self._spec_latent(lam=1.5)
        cfg = GuidanceConfig(specs=(spec,), score_thresholding=True)
        rng = np.random.default_rng(5)
        batch = rng.normal(size=(4, N_A, N_T * N_F))
        batched = constraint_score(batch, None, 0.7, IdentityDenoiser(), cfg, decode=self._decode)
        for i in range(4):
            single = constraint_score(batch[i], None, 0.7, IdentityDenoiser(), cfg, decode=self._decode)
            assert np.allclose(batched[i], single, atol=1e-12)


class TestPostprocessOptimize:
    def test_masked_points_reach_targets(self):
        spec = make_attractor(lam=1.0)
        rng = np.random.default_rng(2)
        samples = rng.normal(size=(5, N_A, N_T, N_F))
        out = postprocess_optimize(samples, spec, steps=800, step_size=0.05)
        assert np.all(np.abs(out[:, 0, -1] - [1.0, 2.0]) < 1e-3)

    def test_unmasked_points_untouched(self):
        spec = make_attractor()
        samples = np.random.default_rng(3).normal(size=(4, N_A, N_T, N_F))
        out = postprocess_optimize(samples, spec, steps=100)
        mask = spec.mask.astype(bool)
        assert np.array_equal(out[:, ~mask], samples[:, ~mask])


class TestWireFormat:
    def test_roundtrip(self):
        doc = {
            "attractors": [{"agent": 1, "t_index": 3, "x": 0.5, "y": -2.0}],
            "repeller": {"radius": 1.5},
            "lambda_attract": 12.0,
            "lambda_repel": 7.0,
            "score_thresholding": False,
        }
        cfg = guidance_from_json(doc, n_agents=2, n_t=4)
        assert len(cfg.specs) == 2
        att, rep = cfg.specs
        assert att.lam == 12.0 and rep.lam == 7.0 and rep.radius == 1.5
        assert att.mask[1, 3, 0] == 1.0 and att.mask.sum() == 2.0
        assert not cfg.score_thresholding
        back = guidance_to_json(cfg)
        assert back["attractors"] == doc["attractors"]
        assert back["repeller"] == doc["repeller"]
        assert back["lambda_attract"] == 12.0
        assert back["lambda_repel"] == 7.0

    def test_out_of_range_agent_rejected(self):
        doc = {"attractors": [{"agent": 5, "t_index": 0, "x": 0, "y": 0}]}
        with pytest.raises(DataError):
            guidance_from_json(doc, n_agents=2, n_t=4)

    def test_malformed_attractor_rejected(self):
        with pytest.raises(DataError):
            guidance_from_json({"attractors": [{"agent": 0}]}, n_agents=2, n_t=4)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            RepellerSpec(radius=0.0)
        with pytest.raises(ValueError):
            AttractorSpec(targets=np.zeros((1, 1, 2)), mask=np.full((1, 1, 2), 0.5))
