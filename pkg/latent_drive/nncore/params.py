# nncore/params.py
"""
Parameter storage, EMA mirroring, stop-gradient and the autograd tape.

Every trainable component derives from ParamStore, an nn.Module whose
parameters are initialised from its own seeded generator.
"""
import copy
import math
from collections import OrderedDict
from typing import NamedTuple, Tuple

import torch
from torch import nn

from ..errors import ConfigurationError, DiagnosticError
from ..utils import torch_generator


class ParamEntry(NamedTuple):
    shape: Tuple[int, ...]
    values: torch.Tensor
    grads: torch.Tensor


class ParamStore(nn.Module):
    """Named trainable arrays with gradient slots and a reproducible initialiser."""

    def __init__(self, rng_seed=0):
        super().__init__()
        self.rng_seed = int(rng_seed)

    def reset_parameters(self):
        """Truncated-normal fan-in initialisation; biases and other vectors start at zero."""
        generator = torch_generator(self.rng_seed)
        with torch.no_grad():
            for _, param in self.named_parameters():
                if param.dim() >= 2:
                    fan_in = math.prod(param.shape[1:])
                    std = 1.0 / math.sqrt(fan_in)
                    nn.init.trunc_normal_(param, mean=0.0, std=std, a=-2.0 * std, b=2.0 * std,
                                          generator=generator)
                else:
                    param.zero_()
        return self

    def entries(self):
        """Return name -> ParamEntry(shape, values, grads); missing grads read as zeros."""
        result = OrderedDict()
        for name, param in self.named_parameters():
            grad = param.grad if param.grad is not None else torch.zeros_like(param)
            result[name] = ParamEntry(tuple(param.shape), param, grad)
        return result

    def assert_finite(self, label=None):
        """Raise DiagnosticError naming the first parameter holding a non-finite value."""
        label = label or type(self).__name__
        for name, param in self.named_parameters():
            if not torch.isfinite(param).all():
                raise DiagnosticError(f"Non-finite values in {label}.{name}", term=f"{label}.{name}")

    def to_arrays(self):
        """Copy every parameter out as a float32 numpy array, in registration order."""
        return OrderedDict((name, param.detach().to(torch.float32).cpu().numpy().copy())
                           for name, param in self.named_parameters())

    def load_arrays(self, arrays, section=None):
        """
        Overwrite parameters from name -> array. Names and shapes must match exactly.

        Args:
            arrays (dict): name -> numpy array
            section (str): Name used in error messages
        """
        section = section or type(self).__name__
        params = OrderedDict(self.named_parameters())
        if list(params) != list(arrays):
            missing = sorted(set(params) ^ set(arrays))
            raise ConfigurationError(f"Section '{section}' parameter names differ: {', '.join(missing)}")
        for name, param in params.items():
            if tuple(param.shape) != tuple(arrays[name].shape):
                raise ConfigurationError(
                    f"Section '{section}' entry '{name}' has shape {tuple(arrays[name].shape)}, "
                    f"expected {tuple(param.shape)}")
        with torch.no_grad():
            for name, param in params.items():
                param.copy_(torch.as_tensor(arrays[name], dtype=param.dtype))

    def frozen_copy(self):
        """Deep copy with gradients disabled, used for EMA teachers."""
        clone = copy.deepcopy(self)
        for param in clone.parameters():
            param.requires_grad_(False)
        return clone


def ema_update(teacher, student, tau):
    """
    teacher <- tau * teacher + (1 - tau) * student, elementwise and off the tape.

    Args:
        teacher (ParamStore): Gradient-free mirror
        student (ParamStore): Trained module with identical entry names and shapes
        tau (float): Decay in [0, 1]; 1 leaves the teacher unchanged, 0 copies the student
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"EMA decay must lie in [0, 1], got {tau}")
    teacher_params = OrderedDict(teacher.named_parameters())
    student_params = OrderedDict(student.named_parameters())
    if list(teacher_params) != list(student_params):
        raise ConfigurationError("EMA teacher and student have different parameter names")
    for name, t_param in teacher_params.items():
        if t_param.shape != student_params[name].shape:
            raise ConfigurationError(f"EMA shape mismatch for '{name}'")
    with torch.no_grad():
        for name, t_param in teacher_params.items():
            t_param.mul_(tau).add_(student_params[name], alpha=1.0 - tau)


def stop_gradient(x):
    """Identity on the forward pass, zero contribution on the backward pass."""
    return x.detach()


class TapeContext:
    """
    Scope in which operations are recorded for reverse-mode differentiation.

    Backed by torch autograd; `enabled=False` gives a no-recording scope.
    """

    def __init__(self, enabled=True):
        self.enabled = enabled
        self._scope = None

    def __enter__(self):
        self._scope = torch.enable_grad() if self.enabled else torch.no_grad()
        self._scope.__enter__()
        return self

    def __exit__(self, *exc):
        return self._scope.__exit__(*exc)

    @staticmethod
    def watch(tensor):
        """Mark a leaf tensor so gradients are recorded for it."""
        return tensor.detach().clone().requires_grad_(True)

    @staticmethod
    def gradient(loss, inputs):
        """Gradients of a scalar loss w.r.t. `inputs`; unused inputs get zeros."""
        inputs = list(inputs)
        grads = torch.autograd.grad(loss, inputs, allow_unused=True, retain_graph=True)
        return [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]
