# nncore/optim.py
"""Adaptive-moment optimizer with gradient-norm clipping."""
import torch

from ..errors import DiagnosticError
from ..utils import check_finite


class Optimizer:
    """
    Wraps torch.optim.Adam for one group of modules.

    Calling the optimizer with a loss runs backward, clips, checks finiteness
    and steps, returning a small metrics dict.
    """

    def __init__(self, name, parameters, lr, eps=1e-8, grad_clip=100.0):
        self.name = name
        self.parameters = [p for p in parameters if p.requires_grad]
        self.grad_clip = grad_clip
        self._opt = torch.optim.Adam(self.parameters, lr=lr, eps=eps)

    def __call__(self, loss):
        check_finite(f"{self.name}_loss", loss)
        self._opt.zero_grad(set_to_none=True)
        loss.backward()
        norm = torch.nn.utils.clip_grad_norm_(self.parameters, self.grad_clip)
        if not torch.isfinite(norm):
            raise DiagnosticError(f"Non-finite gradient norm in {self.name}", term=f"{self.name}_grad")
        self._opt.step()
        return {f"{self.name}_loss": float(loss.detach()), f"{self.name}_grad_norm": float(norm)}
