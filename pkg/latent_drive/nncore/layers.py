# nncore/layers.py
"""Feed-forward and recurrent building blocks."""
from torch import nn

from ..errors import ConfigurationError

ACTIVATIONS = {
    'silu': nn.SiLU,
    'elu': nn.ELU,
    'tanh': nn.Tanh,
    'relu': nn.ReLU,
    'sigmoid': nn.Sigmoid,
    'identity': nn.Identity,
}


def _activation(name):
    if name not in ACTIVATIONS:
        raise ConfigurationError(f"Unknown activation '{name}'")
    return ACTIVATIONS[name]()


class MLP(nn.Module):
    """Stack of affine layers; `act` between hidden layers, `out_act` on the output."""

    def __init__(self, in_dim, out_dim, hidden=(), act='silu', out_act='identity'):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        widths = [in_dim, *hidden, out_dim]
        layers = []
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            layers.append(nn.Linear(w_in, w_out))
            last = i == len(widths) - 2
            layers.append(_activation(out_act if last else act))
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ConfigurationError(f"MLP expects input width {self.in_dim}, got {x.shape[-1]}")
        return self.layers(x)


def mlp_forward(mlp, x):
    return mlp(x)


class GatedRecurrentCell(nn.Module):
    """
    Gated-tanh cell with update and reset gates.

    h' = u * h + (1 - u) * tanh(W x + r * (U h)); with all parameters zero,
    h' = 0.5 * h.
    """

    def __init__(self, input_dim, hidden_dim):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.cell = nn.GRUCell(input_dim, hidden_dim)

    def forward(self, h, x):
        if h.shape[-1] != self.hidden_dim:
            raise ConfigurationError(f"Recurrent state width {h.shape[-1]} != {self.hidden_dim}")
        if x.shape[-1] != self.input_dim:
            raise ConfigurationError(f"Recurrent input width {x.shape[-1]} != {self.input_dim}")
        return self.cell(x, h)


def recurrent_step(cell, h, x):
    return cell(h, x)
