import math

import numpy as np
import pytest

from app.core.errors import CapabilityError, ConfigurationError
from app.models.schemas import ComplexitySpec, LayerKind, SRModelConfig
from app.services.complexity import (
    BENCH_HEADER,
    bench,
    bench_row,
    cost_of,
    flops_of,
    fouriersr_param_count,
    model_param_count,
    plugin_overhead,
    windowed_attention,
)


def spec(kind, **fields):
    values = dict(C=64, scale=2, hr_height=1280, hr_width=720)
    values.update(fields)
    return ComplexitySpec(kind=kind, **values)


def test_lr_extents_come_from_hr_size():
    s = spec(LayerKind.CONV, k=3)
    assert (s.H, s.W) == (640, 360)


@pytest.mark.parametrize(
    "kind,fields,flops,params",
    [
        (LayerKind.CONV, dict(k=3), 8.493, 36.864),
        (LayerKind.WTRANS, dict(M=8), 5.662, 16.384),
        (LayerKind.FOURIERSR, dict(rho=8), 0.643, 0.896),
    ],
)
def test_reference_layer_costs(kind, fields, flops, params):
    report = cost_of(spec(kind, **fields))
    assert round(report.flops, 3) == flops
    assert round(report.params, 3) == params


def test_fouriersr_reports_both_parameter_formulas():
    report = cost_of(spec(LayerKind.FOURIERSR, rho=8))
    assert report.params_shape_derived == pytest.approx(64 * 64 / 8 / 1e3 + 6 * 64 / 1e3)
    assert "6C" in report.formula_text
    assert cost_of(spec(LayerKind.CONV, k=3)).params_shape_derived is None


def test_fouriersr_is_cheaper_than_fft_baselines():
    fsr = flops_of(spec(LayerKind.FOURIERSR, rho=8))
    for kind, fields in [(LayerKind.AFNO, dict(rho=8)), (LayerKind.AFFNET, dict(rho=8)), (LayerKind.FFC, dict(k=3))]:
        assert fsr < flops_of(spec(kind, **fields))
    # only the parameter-free global filter is lighter
    assert flops_of(spec(LayerKind.GFNET)) < fsr
    assert cost_of(spec(LayerKind.GFNET)).params > cost_of(spec(LayerKind.FOURIERSR, rho=8)).params


def test_fft_term_uses_log2_of_area():
    s = ComplexitySpec(kind=LayerKind.GFNET, C=2, H=4, W=4)
    assert flops_of(s) == 2 * 16 + 2 * 2 * 16 * 4


def test_channel_mix_cost_scales_with_ctm():
    without = flops_of(spec(LayerKind.FOURIERSR, rho=8, ctm=0))
    once = flops_of(spec(LayerKind.FOURIERSR, rho=8, ctm=1))
    twice = flops_of(spec(LayerKind.FOURIERSR, rho=8, ctm=2))
    assert twice - once == pytest.approx(once - without)
    assert once - without == pytest.approx(64 * 64 * 640 * 360 / 8)
    assert fouriersr_param_count(64, 8, ctm=0) == 6 * 64


def test_param_count_requires_divisible_rho():
    with pytest.raises(ConfigurationError):
        fouriersr_param_count(6, 4)


def test_missing_fields():
    with pytest.raises(ConfigurationError, match="k"):
        flops_of(spec(LayerKind.CONV))
    with pytest.raises(ConfigurationError, match="M"):
        cost_of(spec(LayerKind.WTRANS))
    with pytest.raises(ConfigurationError, match="H, W"):
        flops_of(ComplexitySpec(kind=LayerKind.GFNET, C=4))


def test_edsr_scale_overhead():
    params_pct, flops_pct = plugin_overhead(1518e3, 114.0e9, 16, spec(LayerKind.FOURIERSR, rho=8))
    assert 16 * fouriersr_param_count(64, 8) == 14336
    assert round(params_pct, 2) == 0.94
    assert flops_pct == pytest.approx(100 * 16 * flops_of(spec(LayerKind.FOURIERSR, rho=8)) / 114.0e9)


def test_overhead_is_linear_in_plugin_count():
    s = spec(LayerKind.FOURIERSR, rho=8)
    assert plugin_overhead(1e6, 1e10, 0, s) == (0.0, 0.0)
    one = plugin_overhead(1e6, 1e10, 1, s)
    four = plugin_overhead(1e6, 1e10, 4, s)
    assert four[0] == pytest.approx(4 * one[0])
    assert four[1] == pytest.approx(4 * one[1])


def test_overhead_rejects_bad_inputs():
    s = spec(LayerKind.FOURIERSR, rho=8)
    with pytest.raises(ConfigurationError):
        plugin_overhead(0, 1e9, 1, s)
    with pytest.raises(ConfigurationError):
        plugin_overhead(1e6, 1e9, 1, spec(LayerKind.CONV, k=3))


def test_model_param_count_by_hand():
    cfg = SRModelConfig(channels=4, blocks=1, scale=2, rho=2, plugin_positions=[0])
    head = 9 * 4 + 4
    body = 2 * (9 * 16 + 4)
    tail = 9 * 4 * 4 + 4
    assert model_param_count(cfg) == head + body + tail + (8 + 24)


def test_windowed_attention_with_one_pixel_windows_returns_values(rng):
    x = rng.standard_normal((3, 4, 4))
    wq, wk, wv = (rng.standard_normal((3, 3)) for _ in range(3))
    out = windowed_attention(x, wq, wk, wv, window=1)
    expected = (x.reshape(3, 16).T @ wv).T.reshape(3, 4, 4)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_windowed_attention_stays_inside_windows(rng):
    x = rng.standard_normal((2, 4, 4))
    wq, wk, wv = (rng.standard_normal((2, 2)) for _ in range(3))
    base = windowed_attention(x, wq, wk, wv, window=2)
    bumped = x.copy()
    bumped[:, 3, 3] += 1.0
    changed = np.abs(windowed_attention(bumped, wq, wk, wv, window=2) - base).sum(axis=0) > 0
    assert not changed[:2, :].any() and not changed[:, :2].any()
    assert changed[2:, 2:].all()


@pytest.mark.parametrize(
    "kind,fields",
    [(LayerKind.CONV, dict(k=3)), (LayerKind.FOURIERSR, dict(rho=2)), (LayerKind.WTRANS, dict(M=4))],
)
def test_bench_returns_positive_time(kind, fields):
    s = ComplexitySpec(kind=kind, C=4, H=8, W=8, **fields)
    elapsed = bench(kind, s, repeats=1)
    assert math.isfinite(elapsed) and elapsed > 0


def test_bench_unimplemented_kinds():
    with pytest.raises(CapabilityError):
        bench(LayerKind.AFNO, ComplexitySpec(kind=LayerKind.AFNO, C=4, H=8, W=8, rho=2), repeats=1)
    with pytest.raises(CapabilityError):
        bench(LayerKind.CONV, ComplexitySpec(kind=LayerKind.CONV, C=4, H=8, W=8, k=5), repeats=1)


def test_bench_rejects_zero_repeats():
    with pytest.raises(ConfigurationError):
        bench(LayerKind.CONV, ComplexitySpec(kind=LayerKind.CONV, C=4, H=8, W=8, k=3), repeats=0)


def test_bench_row_matches_header():
    row = bench_row(spec(LayerKind.FOURIERSR, rho=8), 1.5)
    assert tuple(row) == BENCH_HEADER
    assert row["flops_G"] == "0.643"
    assert row["k"] == ""
    assert row["latency_ms"] == "1.500"


@pytest.mark.slow
def test_fouriersr_is_faster_than_windowed_attention():
    fields = dict(C=64, H=160, W=90)
    attention = bench(LayerKind.WTRANS, ComplexitySpec(kind=LayerKind.WTRANS, M=8, **fields), repeats=3)
    fsr = bench(LayerKind.FOURIERSR, ComplexitySpec(kind=LayerKind.FOURIERSR, rho=8, **fields), repeats=5)
    assert attention / fsr >= 5


@pytest.mark.slow
def test_conv_time_doubles_with_area():
    small = bench(LayerKind.CONV, ComplexitySpec(kind=LayerKind.CONV, C=32, H=64, W=64, k=3), repeats=5)
    large = bench(LayerKind.CONV, ComplexitySpec(kind=LayerKind.CONV, C=32, H=128, W=64, k=3), repeats=5)
    assert 1.0 <= large / small <= 3.0
