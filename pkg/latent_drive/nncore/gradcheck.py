# nncore/gradcheck.py
"""
Finite-difference oracle for reverse-mode gradients.

Usage:
    report = grad_check(lambda: loss_fn(), dict(module.named_parameters()))
    assert report.passed
"""
from dataclasses import dataclass, field
from typing import Dict

import torch

from ..errors import DiagnosticError


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    tolerance: float
    per_param: Dict[str, float] = field(default_factory=dict)
    frozen_max_abs_grad: float = 0.0

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance and self.frozen_max_abs_grad == 0.0


def _evaluate(function, name):
    with torch.no_grad():
        value = function()
    value = float(value)
    if not torch.isfinite(torch.tensor(value)):
        raise DiagnosticError(f"Non-finite loss while perturbing '{name}'", term=name)
    return value


def grad_check(function, params, tolerance=1e-4, step=1e-5, frozen=(), floor=1e-6):
    """
    Compare reverse-mode gradients with central finite differences.

    Args:
        function: Zero-argument callable returning a scalar tensor; must be
            deterministic (re-seed any noise inside it)
        params (dict): name -> leaf tensor with requires_grad, ideally float64
        tolerance (float): Pass threshold on the max relative error
        step (float): Finite-difference step
        frozen (iterable): Names the oracle holds fixed, i.e. inputs that only
            reach the loss through a stop-gradient; their reverse-mode
            gradient must be exactly zero
        floor (float): Denominator floor for near-zero gradients

    Returns:
        GradCheckReport
    """
    frozen = set(frozen)
    names = list(params)
    loss = function()
    if not torch.isfinite(loss):
        raise DiagnosticError("Non-finite loss at the unperturbed point", term="loss")
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    analytic = {n: torch.zeros_like(params[n]) if g is None else g.detach() for n, g in zip(names, grads)}

    per_param = {}
    frozen_max = 0.0
    for name in names:
        if name in frozen:
            frozen_max = max(frozen_max, float(analytic[name].abs().max()) if analytic[name].numel() else 0.0)
            continue
        tensor = params[name]
        flat = tensor.data.view(-1)
        numeric = torch.zeros_like(flat)
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + step
            f_plus = _evaluate(function, name)
            flat[i] = original - step
            f_minus = _evaluate(function, name)
            flat[i] = original
            numeric[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name].reshape(-1)
        denom = torch.clamp(torch.maximum(a.abs(), numeric.abs()), min=floor)
        rel = ((a - numeric).abs() / denom)
        per_param[name] = float(rel.max()) if rel.numel() else 0.0

    worst = max(per_param, key=per_param.get) if per_param else ''
    return GradCheckReport(
        max_rel_error=per_param.get(worst, 0.0),
        worst_param=worst,
        tolerance=tolerance,
        per_param=per_param,
        frozen_max_abs_grad=frozen_max,
    )
