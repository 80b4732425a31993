import math

import numpy as np
import pytest

from spotlight import (
    BackendError,
    ConfigError,
    ConstantLogitsBackend,
    InputError,
    MockMllm,
    OcclusionConfig,
    PageImage,
    SensitivityGrid,
    occlusion_sweep,
    response_probability,
    smooth_heatmap,
)
from spotlight.answering import build_prompt


def gray_page(w=64, h=64, value=200, page_id="p"):
    return PageImage(id=page_id, pixels=np.full((h, w, 3), value, dtype=np.uint8))


class RegionLogitsBackend:
    """Logits drop when the designated region no longer matches the original."""

    def __init__(self, original, rect, intact=math.log(9), broken=math.log(0.4 / 0.6)):
        self._original = np.asarray(original)
        self._rect = rect  # (y0, y1, x0, x1)
        self._intact = intact
        self._broken = broken

    def response_logits(self, query, pixels):
        y0, y1, x0, x1 = self._rect
        same = np.array_equal(pixels[y0:y1, x0:x1], self._original[y0:y1, x0:x1])
        return {"ref": self._intact if same else self._broken, "other": 0.0}


class TestResponseProbability:
    def test_logit_softmax(self):
        backend = ConstantLogitsBackend({"ref": 2.0, "other": 0.0})
        p = response_probability(backend, "q", gray_page(), "ref")
        assert p == pytest.approx(math.exp(2) / (math.exp(2) + 1), abs=1e-4)

    def test_uniform_logits(self):
        backend = ConstantLogitsBackend({"a": 0.0, "b": 0.0, "c": 0.0, "d": 0.0})
        assert response_probability(backend, "q", gray_page(), "b") == pytest.approx(0.25, abs=1e-12)

    def test_fallback_consistency(self):
        prompt = build_prompt("q", "baseline")
        match = MockMllm({"*": "yes"})
        assert response_probability(match, "q", gray_page(), "Yes.") == 1.0
        miss = MockMllm({"*": "no"})
        assert response_probability(miss, "q", gray_page(), "Yes.") == 0.0

    def test_missing_reference_outcome_is_zero(self):
        backend = ConstantLogitsBackend({"other": 1.0})
        assert response_probability(backend, "q", gray_page(), "ref") == 0.0

    def test_no_capability_is_config_error(self):
        with pytest.raises(ConfigError):
            response_probability(object(), "q", gray_page(), "ref")


class TestOcclusionSweep:
    def test_constant_model_yields_all_zero(self):
        backend = ConstantLogitsBackend({"ref": 1.0, "other": 0.0})
        grid = occlusion_sweep(gray_page(), "q", backend, OcclusionConfig(window=16, stride=16))
        assert np.all(grid.values == 0.0)

    def test_region_mock_argmax_covers_region(self):
        page = gray_page(96, 96)
        rect = (32, 48, 48, 64)  # y0, y1, x0, x1
        backend = RegionLogitsBackend(page.pixels, rect)
        cfg = OcclusionConfig(window=16, stride=16)
        grid = occlusion_sweep(page, "q", backend, cfg, reference="ref")
        row, col = grid.argmax_cell()
        y0, x0 = grid.origins_y[row], grid.origins_x[col]
        assert y0 < rect[1] and y0 + cfg.window > rect[0]
        assert x0 < rect[3] and x0 + cfg.window > rect[2]
        assert grid.values[row, col] == pytest.approx(0.5, abs=1e-9)

    def test_single_window_degenerate_sweep(self):
        page = gray_page(32, 32)
        backend = RegionLogitsBackend(page.pixels, (0, 32, 0, 32))
        grid = occlusion_sweep(page, "q", backend, OcclusionConfig(window=32, stride=32), reference="ref")
        assert grid.values.shape == (1, 1)
        assert grid.values[0, 0] == pytest.approx(0.9 - 0.4, abs=1e-9)

    def test_edges_clipped_full_coverage(self):
        page = gray_page(50, 30)
        backend = ConstantLogitsBackend({"ref": 1.0})
        cfg = OcclusionConfig(window=16, stride=12)
        grid = occlusion_sweep(page, "q", backend, cfg)
        covered = np.zeros((30, 50), dtype=bool)
        for y0 in grid.origins_y:
            for x0 in grid.origins_x:
                covered[y0 : y0 + cfg.window, x0 : x0 + cfg.window] = True
        assert covered.all()

    def test_oversized_window_rejected(self):
        with pytest.raises(InputError):
            occlusion_sweep(gray_page(16, 16), "q", ConstantLogitsBackend({"r": 0.0}), OcclusionConfig(window=20, stride=4))

    def test_backend_failure_aborts(self):
        class Flaky:
            calls = 0

            def response_logits(self, query, pixels):
                type(self).calls += 1
                if type(self).calls > 3:
                    raise BackendError("boom")
                return {"ref": 1.0}

        with pytest.raises(BackendError):
            occlusion_sweep(gray_page(32, 32), "q", Flaky(), OcclusionConfig(window=8, stride=8), reference="ref")

    def test_reference_defaults_to_model_answer(self):
        backend = ConstantLogitsBackend({"alpha": 3.0, "beta": 0.0})
        grid = occlusion_sweep(gray_page(32, 32), "q", backend, OcclusionConfig(window=32, stride=32))
        assert grid.p_orig == pytest.approx(math.exp(3) / (math.exp(3) + 1), abs=1e-9)
        assert np.all(grid.values == 0.0)


def brute_force_smooth(values, sigma):
    """Direct convolution with half-sample symmetric index reflection."""
    radius = math.ceil(3 * sigma)
    ks = np.arange(-radius, radius + 1)
    kernel = np.exp(-(ks**2) / (2 * sigma * sigma))
    kernel /= kernel.sum()
    rows, cols = values.shape

    def reflect(idx, n):
        while idx < 0 or idx >= n:
            if idx < 0:
                idx = -idx - 1
            else:
                idx = 2 * n - idx - 1
        return idx

    out = np.zeros_like(values)
    for r in range(rows):
        for c in range(cols):
            acc = 0.0
            for dr in range(-radius, radius + 1):
                for dc in range(-radius, radius + 1):
                    acc += kernel[dr + radius] * kernel[dc + radius] * values[reflect(r + dr, rows), reflect(c + dc, cols)]
            out[r, c] = acc
    return out


def make_grid(values):
    values = np.asarray(values, dtype=np.float64)
    rows, cols = values.shape
    return SensitivityGrid(
        values=values,
        origins_x=tuple(range(0, cols * 8, 8)),
        origins_y=tuple(range(0, rows * 8, 8)),
        window=8,
        stride=8,
        p_orig=0.5,
    )


class TestSmoothHeatmap:
    def test_tiny_sigma_is_identity(self):
        grid = make_grid(np.random.default_rng(0).uniform(-0.5, 0.5, size=(5, 5)))
        smoothed, _ = smooth_heatmap(grid, 1e-9)
        assert np.array_equal(smoothed.values, grid.values)

    def test_constant_grid_unchanged(self):
        grid = make_grid(np.full((6, 4), 0.25))
        smoothed, _ = smooth_heatmap(grid, 1.3)
        assert np.allclose(smoothed.values, 0.25, atol=1e-12)

    def test_spike_mass_conserved(self):
        for spot in [(0, 0), (3, 2), (5, 5)]:
            values = np.zeros((6, 6))
            values[spot] = 0.8
            smoothed, _ = smooth_heatmap(make_grid(values), 1.0)
            assert smoothed.values.sum() == pytest.approx(0.8, abs=1e-6)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        values = rng.uniform(-0.4, 0.6, size=(7, 9))
        smoothed, _ = smooth_heatmap(make_grid(values), 1.4)
        assert np.allclose(smoothed.values, brute_force_smooth(values, 1.4), atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        values = rng.uniform(-0.2, 0.2, size=(6, 6))
        once, _ = smooth_heatmap(make_grid(values), 0.9)
        scaled, _ = smooth_heatmap(make_grid(3.0 * values), 0.9)
        assert np.allclose(scaled.values, 3.0 * once.values, atol=1e-9)

    def test_overlay_rendered_on_page(self):
        page = gray_page(48, 48)
        values = np.zeros((6, 6))
        values[2, 3] = 0.7
        grid = make_grid(values)
        smoothed, overlay = smooth_heatmap(grid, 0.8, page=page)
        assert overlay is not None
        assert (overlay.width, overlay.height) == (48, 48)
        red_gain = overlay.pixels[:, :, 0].astype(int) - page.pixels[:, :, 0].astype(int)
        peak = np.unravel_index(np.argmax(red_gain), red_gain.shape)
        assert 16 <= peak[0] < 32 and 24 <= peak[1] < 40  # inside the hot stride block's neighborhood

    def test_empty_grid_rejected(self):
        grid = make_grid(np.zeros((1, 1)))
        object.__setattr__(grid, "values", np.zeros((0, 0)))
        with pytest.raises(InputError):
            smooth_heatmap(grid, 1.0)
