"""Analytic training-cost model: parameters, FLOPs, and memory.

The closed-form cell model counts U convolutions of c -> c channels per
cell (8 for the single-kernel cell; the multi-kernel cell adds the wide
branch and the 1x1 mixer for an 81 + 225 + 2 = 308 c^2 weight total), so a
cell's parameter count is independent of the resolution it runs at. FLOPs
count each multiply-add as 2 and scale with the per-layer pixel count, so
pyramid variants get cheaper while their parameter count stays put. Training
memory is modeled as m_all = 4 * m_par + 2 * m_out: parameters plus
optimizer state, and forward activations plus their gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

from .architecture import ArchitectureConfig, Model, receptive_field
from .errors import ConfigError

__all__ = [
    "LayerCost",
    "CostReport",
    "cost_report",
    "count_params_exact",
    "unit_params_model",
    "ACTIVATION_FACTOR",
]

# activation tensors alive per cell step in the memory model: the 8 (or 19)
# convolution outputs plus gate/product/tanh intermediates of similar size
ACTIVATION_FACTOR = {"conv": 12, "multikernel": 26}


def unit_params_model(cell: str, hidden: int, k_small: int = 3, k_large: int = 5) -> int:
    """Closed-form weight count of one cell with in = out = hidden."""
    c2 = hidden * hidden
    if cell == "conv":
        return 8 * c2 * k_small * k_small
    if cell == "multikernel":
        return 9 * c2 * k_small * k_small + 9 * c2 * k_large * k_large + 2 * c2
    raise ConfigError(f"unknown cell kind {cell!r}")


def _unit_flops_coeff(cell: str, hidden: int, k_small: int, k_large: int) -> int:
    """FLOPs of one cell step per pixel per batch item (multiply-add = 2)."""
    c2 = hidden * hidden
    if cell == "conv":
        return 2 * 8 * c2 * k_small * k_small
    return 2 * (9 * c2 * k_small * k_small + 9 * c2 * k_large * k_large + 2 * c2)


@dataclass(frozen=True)
class LayerCost:
    layer: int
    cell: str
    scale: int
    params_model: int
    flops: int
    m_out: int


@dataclass(frozen=True)
class CostReport:
    """Analytic cost of unrolling a configuration for ``steps`` frames.

    params_model is the closed-form cell count; params_exact enumerates
    every trainable tensor of a built model including biases and the output
    head. flops and m_out accumulate over all steps; m_par uses the exact
    count, and m_all = 4 m_par + 2 m_out.
    """

    preset: str
    batch: int
    channels: int
    height: int
    width: int
    steps: int
    per_layer: tuple[LayerCost, ...]
    params_model: int
    params_exact: int
    flops: int
    m_par: int
    m_out: int

    @property
    def m_all(self) -> int:
        return 4 * self.m_par + 2 * self.m_out

    def rows(self) -> list[dict]:
        out = []
        for lc in self.per_layer:
            out.append(
                {
                    "layer": lc.layer,
                    "cell": lc.cell,
                    "scale": lc.scale,
                    "params_model": lc.params_model,
                    "flops": lc.flops,
                    "m_out": lc.m_out,
                }
            )
        return out


def count_params_exact(model: Model) -> int:
    """Exact element count of every trainable tensor, biases and head included."""
    return model.parameter_count()


def cost_report(
    config: ArchitectureConfig,
    input_shape: tuple[int, int, int, int] = (4, 1, 64, 64),
    steps: int = 19,
) -> CostReport:
    """Evaluate the analytic cost model for one unrolled training pass."""
    b, c_img, h, w = input_shape
    if c_img != config.input_channels:
        raise ConfigError(
            f"input shape has {c_img} channels but the config declares {config.input_channels}"
        )
    s = config.max_scale
    if h % s or w % s:
        raise ConfigError(f"resolution {h}x{w} not divisible by the pyramid scale {s}")
    per_layer = []
    total_model = 0
    total_flops = 0
    total_mout = 0
    for idx, spec in enumerate(config.layers):
        hw = (h // spec.scale) * (w // spec.scale)
        pm = unit_params_model(spec.cell, spec.hidden, config.kernel_small, config.kernel_large)
        fl = _unit_flops_coeff(spec.cell, spec.hidden, config.kernel_small, config.kernel_large)
        fl = fl * b * hw * steps
        mo = ACTIVATION_FACTOR[spec.cell] * b * spec.hidden * hw * steps
        per_layer.append(LayerCost(idx, spec.cell, spec.scale, pm, fl, mo))
        total_model += pm
        total_flops += fl
        total_mout += mo
    exact = count_params_exact(Model(config, seed=0))
    return CostReport(
        preset=config.preset_name or "custom",
        batch=b,
        channels=c_img,
        height=h,
        width=w,
        steps=steps,
        per_layer=tuple(per_layer),
        params_model=total_model,
        params_exact=exact,
        flops=total_flops,
        m_par=exact,
        m_out=total_mout,
    )


def analysis_table(config: ArchitectureConfig, input_shape, steps) -> str:
    """Human-readable cost plus receptive-field table for one configuration."""
    report = cost_report(config, input_shape, steps)
    rf_rows = receptive_field(config)
    lines = [
        f"preset: {report.preset}",
        f"input: batch={report.batch} channels={report.channels} "
        f"size={report.height}x{report.width} steps={report.steps}",
        f"params_model: {report.params_model}",
        f"params_exact: {report.params_exact}",
        f"flops: {report.flops}",
        f"m_par: {report.m_par}",
        f"m_out: {report.m_out}",
        f"m_all: {report.m_all}",
        "layer,cell,scale,params_model,flops,m_out,rf,jump",
    ]
    for lc, rf in zip(report.per_layer, rf_rows):
        lines.append(
            f"{lc.layer},{lc.cell},{lc.scale},{lc.params_model},{lc.flops},"
            f"{lc.m_out},{rf['rf']},{rf['jump']}"
        )
    return "\n".join(lines) + "\n"
