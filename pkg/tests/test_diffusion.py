import numpy as np
import pytest

from difftween import (
    AffineTransform,
    Latent,
    ddim_denoise,
    forward_diffuse,
    forward_diffuse_step,
    make_schedule,
    warp_latent,
)
from difftween.backends import ConditioningBundle, ToyBackend
from difftween.diffusion import affine_power, ddim_timesteps

from conftest import random_image, random_latent


class TestSchedule:
    def test_clean_boundary(self):
        s = make_schedule(1000)
        assert s.alphas[0] == 1.0 and s.sigmas[0] == 0.0

    def test_monotone(self):
        s = make_schedule(200)
        assert len(s.alphas) == 201
        assert np.all(np.diff(s.alphas) < 0)
        assert np.all(np.diff(s.sigmas) > 0)

    def test_variance_preserving(self):
        s = make_schedule(500)
        assert np.abs(s.alphas**2 + s.sigmas**2 - 1.0).max() < 1e-9

    @pytest.mark.parametrize("profile", ["vp-cosine", "vp-linear"])
    def test_profiles_valid(self, profile):
        s = make_schedule(300, profile)
        s.validate()
        assert 0 < s.alphas[-1] <= 1 and 0 <= s.sigmas[-1] < 1

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            make_schedule(0)
        with pytest.raises(ValueError):
            make_schedule(-5)
        with pytest.raises(ValueError):
            make_schedule(100, "unknown")

    def test_betas_compose_to_closed_form(self):
        # Var(z_t) from the recursion must equal sigma_t^2 analytically.
        s = make_schedule(50)
        var = 0.0
        for t in range(1, 51):
            var = s.step_alpha(t) ** 2 * var + s.betas[t] ** 2
            assert abs(var - s.sigmas[t] ** 2) < 1e-12


class TestForwardDiffuse:
    def test_t0_identity(self, schedule):
        z0 = random_latent(0)
        eps = np.random.default_rng(1).standard_normal(z0.shape)
        out = forward_diffuse(z0, 0, eps, schedule)
        assert np.array_equal(out.data, z0.data)
        assert out.timestep == 0

    def test_zero_input_scales_noise(self, schedule):
        t = int(np.argmin(np.abs(schedule.alphas - 0.5)))
        sigma = schedule.sigmas[t]
        assert abs(sigma - 0.866) < 5e-3
        eps = np.random.default_rng(2).standard_normal((3, 4, 4))
        out = forward_diffuse(Latent(np.zeros((3, 4, 4))), t, eps, schedule)
        np.testing.assert_allclose(out.data, sigma * eps, rtol=1e-12)

    def test_monte_carlo_moments(self, schedule):
        # Empirical mean/variance against the closed form, 3 standard errors.
        n = 10_000
        t = 600
        a, sg = schedule.alphas[t], schedule.sigmas[t]
        z0 = random_latent(3, (1, 2, 2))
        rng = np.random.default_rng(42)
        samples = np.stack(
            [forward_diffuse(z0, t, rng.standard_normal(z0.shape), schedule).data for _ in range(n)]
        )
        se_mean = sg / np.sqrt(n)
        assert np.abs(samples.mean(axis=0) - a * z0.data).max() < 3 * se_mean
        se_var = sg**2 * np.sqrt(2.0 / (n - 1))
        assert np.abs(samples.var(axis=0, ddof=1) - sg**2).max() < 3 * se_var

    def test_errors(self, schedule):
        z0 = random_latent(0)
        with pytest.raises(ValueError):
            forward_diffuse(z0, 10, np.zeros((3, 2, 2)), schedule)
        noisy = forward_diffuse(z0, 5, np.zeros(z0.shape), schedule)
        with pytest.raises(ValueError):
            forward_diffuse(noisy, 10, np.zeros(z0.shape), schedule)


class TestForwardDiffuseStep:
    def test_zero_noise_scales_only(self, schedule):
        z0 = random_latent(4)
        out = forward_diffuse_step(z0, np.zeros(z0.shape), schedule)
        np.testing.assert_array_equal(out.data, schedule.step_alpha(1) * z0.data)
        assert out.timestep == 1

    def test_rejects_final_timestep(self):
        s = make_schedule(3)
        z = Latent(np.ones((1, 1, 1)), timestep=3)
        with pytest.raises(ValueError):
            forward_diffuse_step(z, np.zeros((1, 1, 1)), s)

    def test_composed_steps_match_closed_form_moments(self):
        # Composing steps 1..t equals the closed form in distribution:
        # Monte Carlo check of first and second moments at 3 standard errors.
        s = make_schedule(8)
        t = 6
        n = 10_000
        z0 = Latent(np.full((1, 2, 2), 0.7))
        rng = np.random.default_rng(11)
        finals = np.empty((n, 1, 2, 2))
        for i in range(n):
            z = z0
            for _ in range(t):
                z = forward_diffuse_step(z, rng.standard_normal(z0.shape), s)
            finals[i] = z.data
        a, sg = s.alphas[t], s.sigmas[t]
        assert np.abs(finals.mean(axis=0) - a * z0.data).max() < 3 * sg / np.sqrt(n)
        se_var = sg**2 * np.sqrt(2.0 / (n - 1))
        assert np.abs(finals.var(axis=0, ddof=1) - sg**2).max() < 3 * se_var

    def test_one_step_variance_propagation(self):
        # Var(a1 z0 + b1 eps) = a1^2 Var(z0) + b1^2 for unit-variance eps.
        s = make_schedule(8)
        n = 20_000
        rng = np.random.default_rng(12)
        z0_var = 0.25
        z0_samples = rng.normal(0.0, np.sqrt(z0_var), size=n)
        eps = rng.standard_normal(n)
        a1 = s.step_alpha(1)
        b1 = s.betas[1]
        out = a1 * z0_samples + b1 * eps
        expected = a1**2 * z0_var + b1**2
        se_var = expected * np.sqrt(2.0 / (n - 1))
        assert abs(out.var(ddof=1) - expected) < 3 * se_var


def _degenerate_cond(backend, image):
    emb = backend.encode_image(image).data.ravel()
    return ConditioningBundle(
        positive_embedding=emb, negative_embedding=emb, guidance_scale=1.0
    )


def _scalar_ddim_oracle(z, t_from, t_to, substeps, sched, m, tau):
    """Independent reimplementation of the DDIM recursion on raw arrays."""
    grid = np.round(np.linspace(t_from, t_to, substeps + 1)).astype(int)
    steps = [int(grid[0])]
    for v in grid[1:]:
        if int(v) != steps[-1]:
            steps.append(int(v))
    z = np.array(z, dtype=np.float64)
    for tc, tn in zip(steps[:-1], steps[1:]):
        a, sg = sched.alphas[tc], sched.sigmas[tc]
        denom = a * a * tau * tau + sg * sg
        eps_hat = sg * (z - a * m) / denom
        x0 = (z - sg * eps_hat) / a
        z = sched.alphas[tn] * x0 + sched.sigmas[tn] * eps_hat
    return z


class TestDDIM:
    def test_empty_trajectory(self, schedule, toy):
        z = forward_diffuse(random_latent(5), 300, np.zeros((3, 4, 4)), schedule)
        cond = _degenerate_cond(toy, random_image(6))
        out = ddim_denoise(z, 300, 300, cond, toy, schedule)
        assert np.array_equal(out.data, z.data) and out.timestep == 300

    def test_invalid_ordering(self, schedule, toy):
        z = forward_diffuse(random_latent(5), 300, np.zeros((3, 4, 4)), schedule)
        cond = _degenerate_cond(toy, random_image(6))
        with pytest.raises(ValueError):
            ddim_denoise(z, 300, 400, cond, toy, schedule)
        with pytest.raises(ValueError):
            ddim_denoise(z, 200, 0, cond, toy, schedule)

    @pytest.mark.parametrize("t", [50, 400, 999])
    def test_degenerate_prior_single_jump(self, schedule, toy, t):
        # eps_hat = (z - alpha*m)/sigma makes one DDIM jump reconstruct m.
        prior_image = random_image(7)
        m = toy.encode_image(prior_image).data
        cond = _degenerate_cond(toy, prior_image)
        z = forward_diffuse(random_latent(8), t, np.random.default_rng(9).standard_normal((3, 4, 4)), schedule)
        out = ddim_denoise(z, t, 0, cond, toy, schedule, substeps=1)
        assert np.abs(out.data - m).max() < 1e-6

    def test_deterministic(self, schedule, toy):
        cond = _degenerate_cond(toy, random_image(7))
        z = forward_diffuse(random_latent(8), 500, np.random.default_rng(9).standard_normal((3, 4, 4)), schedule)
        a = ddim_denoise(z, 500, 0, cond, toy, schedule, substeps=7)
        b = ddim_denoise(z, 500, 0, cond, toy, schedule, substeps=7)
        assert np.array_equal(a.data, b.data)

    def test_gaussian_prior_matches_scalar_oracle(self, schedule, toy_gaussian):
        prior_image = random_image(7)
        m = toy_gaussian.encode_image(prior_image).data
        cond = _degenerate_cond(toy_gaussian, prior_image)
        t = 600
        z = forward_diffuse(
            random_latent(8), t, np.random.default_rng(10).standard_normal((3, 4, 4)), schedule
        )
        for substeps in (1, 5, 25, 125):
            ours = ddim_denoise(z, t, 0, cond, toy_gaussian, schedule, substeps=substeps)
            oracle = _scalar_ddim_oracle(z.data, t, 0, substeps, schedule, m, 1.0)
            assert np.abs(ours.data - oracle).max() < 1e-4

    def test_gaussian_prior_monotone_convergence(self, schedule, toy_gaussian):
        # Error against the dense stepwise recursion shrinks as substeps grow.
        prior_image = random_image(7)
        m = toy_gaussian.encode_image(prior_image).data
        cond = _degenerate_cond(toy_gaussian, prior_image)
        t = 600
        z = forward_diffuse(
            random_latent(8), t, np.random.default_rng(10).standard_normal((3, 4, 4)), schedule
        )
        dense = _scalar_ddim_oracle(z.data, t, 0, t, schedule, m, 1.0)
        # The dense recursion converges to the analytic flow map for a unit
        # Gaussian prior: z0 = m + (z_t - alpha_t m).
        flow = m + (z.data - schedule.alphas[t] * m)
        assert np.abs(dense - flow).max() < 5e-3
        errs = [
            np.abs(ddim_denoise(z, t, 0, cond, toy_gaussian, schedule, substeps=k).data - dense).max()
            for k in (1, 5, 25, 125)
        ]
        assert all(a > b for a, b in zip(errs, errs[1:]))

    def test_timestep_grid(self):
        assert ddim_timesteps(10, 0, 5) == [10, 8, 6, 4, 2, 0]
        assert ddim_timesteps(4, 0, 8) == [4, 3, 2, 1, 0]


class TestWarp:
    def test_identity_bit_exact(self):
        z = random_latent(20, (2, 8, 8))
        out = warp_latent(z, AffineTransform.identity())
        assert out is z

    def test_translation_by_one_pixel(self):
        data = np.random.default_rng(21).random((1, 8, 8))
        z = Latent(data)
        out = warp_latent(z, AffineTransform.translation(1.0, 0.0))
        # Content moves one column to the right; interior columns preserved.
        np.testing.assert_allclose(out.data[0][:, 1:], data[0][:, :-1], atol=1e-6)

    def test_zoom_round_trip(self):
        yy, xx = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0, 1, 32), indexing="ij")
        smooth = (np.sin(2 * np.pi * xx) * np.cos(np.pi * yy))[None]
        z = Latent(smooth)
        center = (15.5, 15.5)
        zoomed = warp_latent(z, AffineTransform.zoom(2.0, center))
        back = warp_latent(zoomed, AffineTransform.zoom(0.5, center))
        interior = (slice(None), slice(8, 24), slice(8, 24))
        assert np.abs(back.data[interior] - smooth[interior]).max() < 1e-2

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            AffineTransform(np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]]))


class TestAffinePower:
    def test_zoom_sqrt(self):
        xf = affine_power(AffineTransform.zoom(2.0), 0.5)
        np.testing.assert_allclose(xf.matrix[:, :2], np.sqrt(2.0) * np.eye(2), atol=1e-12)

    def test_translation_linear(self):
        xf = affine_power(AffineTransform.translation(4.0, -2.0), 0.25)
        np.testing.assert_allclose(xf.matrix, [[1, 0, 1.0], [0, 1, -0.5]], atol=1e-12)

    def test_identity_power(self):
        assert affine_power(AffineTransform.identity(), 0.37).is_identity()
