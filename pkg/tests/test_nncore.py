import math

import pytest
import torch
from torch import nn

from latent_drive.errors import ConfigurationError, DiagnosticError, UsageError
from latent_drive.nncore import (
    MLP, GatedRecurrentCell, Optimizer, ParamStore, TapeContext, bernoulli, categorical, diag_gaussian,
    dist_entropy, dist_kl, dist_log_prob, dist_mode, dist_sample, ema_update, grad_check, probabilities,
    stop_gradient,
)
from latent_drive.utils import torch_generator


class TinyStore(ParamStore):

    def __init__(self, rng_seed=0):
        super().__init__(rng_seed)
        self.net = MLP(3, 2, hidden=(4,))
        self.reset_parameters()

    def forward(self, x):
        return self.net(x)


def test_mlp_zero_weights_outputs_activation_of_bias():
    mlp = MLP(2, 3, out_act='tanh')
    with torch.no_grad():
        for p in mlp.parameters():
            p.zero_()
        mlp.layers[0].bias.copy_(torch.tensor([0.5, -1.0, 2.0]))
    out = mlp(torch.tensor([[3.0, -4.0]]))
    assert torch.allclose(out, torch.tanh(torch.tensor([[0.5, -1.0, 2.0]])))


def test_mlp_identity_layer():
    mlp = MLP(2, 2)
    with torch.no_grad():
        mlp.layers[0].weight.copy_(torch.eye(2))
        mlp.layers[0].bias.zero_()
    assert torch.equal(mlp(torch.tensor([1.0, 2.0])), torch.tensor([1.0, 2.0]))


def test_mlp_rejects_wrong_width():
    with pytest.raises(ConfigurationError):
        MLP(3, 2)(torch.zeros(1, 4))


def test_gated_cell_with_zero_parameters_halves_state():
    cell = GatedRecurrentCell(3, 4)
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    h = torch.tensor([[0.2, -0.4, 0.6, 1.0]])
    assert torch.allclose(cell(h, torch.ones(1, 3)), 0.5 * h)


def test_gated_cell_output_bounded():
    torch.manual_seed(0)
    cell = GatedRecurrentCell(3, 4)
    out = cell(torch.zeros(5, 4), torch.zeros(5, 3))
    assert torch.all(out.abs() < 1.0)


def test_gated_cell_width_mismatch():
    cell = GatedRecurrentCell(3, 4)
    with pytest.raises(ConfigurationError):
        cell(torch.zeros(1, 5), torch.zeros(1, 3))


def test_param_store_initialisation_is_reproducible():
    a, b = TinyStore(7), TinyStore(7)
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb), name
    assert torch.all(a.net.layers[0].bias == 0)


def test_param_store_entries_and_load_errors():
    store = TinyStore()
    entries = store.entries()
    assert entries['net.layers.0.weight'].shape == (4, 3)
    assert torch.all(entries['net.layers.0.weight'].grads == 0)
    arrays = store.to_arrays()
    arrays['net.layers.0.weight'] = arrays['net.layers.0.weight'][:, :2]
    with pytest.raises(ConfigurationError, match='actor'):
        store.load_arrays(arrays, section='actor')


def test_assert_finite_names_parameter():
    store = TinyStore()
    with torch.no_grad():
        store.net.layers[2].bias[0] = float('nan')
    with pytest.raises(DiagnosticError, match='net.layers.2.bias'):
        store.assert_finite()


def test_ema_update_arithmetic():
    teacher, student = TinyStore(), TinyStore()
    with torch.no_grad():
        for p in teacher.parameters():
            p.fill_(1.0)
        for p in student.parameters():
            p.fill_(0.0)
    ema_update(teacher, student, 0.996)
    for p in teacher.parameters():
        assert torch.allclose(p, torch.full_like(p, 0.996))


def test_ema_update_edge_cases():
    teacher, student = TinyStore(1), TinyStore(2)
    before = {n: p.clone() for n, p in teacher.named_parameters()}
    ema_update(teacher, student, 1.0)
    for n, p in teacher.named_parameters():
        assert torch.equal(p, before[n])
    ema_update(teacher, student, 0.0)
    for (n, p), (_, s) in zip(teacher.named_parameters(), student.named_parameters()):
        assert torch.equal(p, s), n


def test_ema_update_rejects_bad_tau_and_shapes():
    with pytest.raises(ConfigurationError):
        ema_update(TinyStore(), TinyStore(), 1.5)

    class Other(ParamStore):
        def __init__(self):
            super().__init__()
            self.net = MLP(3, 2, hidden=(5,))

    with pytest.raises(ConfigurationError):
        ema_update(TinyStore(), Other(), 0.5)


def test_stop_gradient_definition():
    x = torch.tensor(2.0, requires_grad=True)
    y = torch.tensor(3.0, requires_grad=True)
    gx, gy = TapeContext.gradient(stop_gradient(x) * y, [x, y])
    assert gx.item() == 0.0
    assert gy.item() == 2.0

    loss = (x - stop_gradient(x)) ** 2
    assert loss.item() == 0.0
    (g,) = TapeContext.gradient(loss, [x])
    assert g.item() == 0.0


def test_tape_context_disabled_records_nothing():
    x = torch.tensor(1.0, requires_grad=True)
    with TapeContext(enabled=False):
        y = x * 2
    assert not y.requires_grad


def test_kl_values():
    zero = torch.zeros(1, 1)
    assert dist_kl(diag_gaussian(zero, zero), diag_gaussian(zero, zero)).item() == 0.0
    kl = dist_kl(diag_gaussian(zero, zero), diag_gaussian(torch.ones(1, 1), zero))
    assert kl.item() == pytest.approx(0.5)


def test_kl_mismatches_raise_usage_error():
    g = diag_gaussian(torch.zeros(1, 2), torch.zeros(1, 2))
    with pytest.raises(UsageError):
        dist_kl(g, categorical(torch.zeros(1, 2)))
    with pytest.raises(UsageError):
        dist_kl(g, diag_gaussian(torch.zeros(1, 3), torch.zeros(1, 3)))


def test_categorical_uniform_entropy_and_probabilities():
    d = categorical(torch.zeros(5))
    assert dist_entropy(d).item() == pytest.approx(math.log(5))
    assert torch.allclose(probabilities(d), torch.full((5,), 0.2))


def test_bernoulli_and_modes():
    d = bernoulli(torch.tensor([2.0, -2.0]))
    assert torch.equal(dist_mode(d), torch.tensor([1.0, 0.0]))
    assert dist_log_prob(d, torch.tensor([1.0, 0.0]))[0].item() == pytest.approx(math.log(torch.sigmoid(torch.tensor(2.0)).item()))
    g = diag_gaussian(torch.tensor([[1.0, -1.0]]), torch.zeros(1, 2))
    assert torch.equal(dist_mode(g), torch.tensor([[1.0, -1.0]]))


def test_log_std_is_clamped():
    g = diag_gaussian(torch.zeros(1, 1), torch.tensor([[-50.0]]))
    assert g.params[1].item() == -5.0


def test_sampling_is_reproducible_and_reparameterised():
    mean = torch.zeros(3, 2, requires_grad=True)
    g = diag_gaussian(mean, torch.zeros(3, 2))
    a = dist_sample(g, torch_generator(1))
    b = dist_sample(g, torch_generator(1))
    assert torch.equal(a, b)
    (grad,) = torch.autograd.grad(a.sum(), [mean])
    assert torch.all(grad == 1.0)


def test_grad_check_linear_and_mlp(float64):
    torch.manual_seed(0)
    w = torch.randn(3, requires_grad=True)
    x = torch.randn(3)
    report = grad_check(lambda: (w * x).sum(), {'w': w})
    assert report.max_rel_error < 1e-8

    mlp = MLP(3, 2, hidden=(4,))
    inputs = torch.randn(5, 3)
    report = grad_check(lambda: mlp(inputs).sum(), dict(mlp.named_parameters()))
    assert report.passed


def test_grad_check_with_stop_gradient_needs_frozen_input(float64):
    x = torch.tensor([0.7], requires_grad=True)
    y = torch.tensor([1.3], requires_grad=True)
    fn = lambda: (stop_gradient(x) * y ** 2).sum()
    assert not grad_check(fn, {'x': x, 'y': y}).passed
    report = grad_check(fn, {'x': x, 'y': y}, frozen=('x',))
    assert report.passed
    assert report.frozen_max_abs_grad == 0.0


def test_grad_check_reports_non_finite_term():
    x = torch.tensor([1.0], requires_grad=True)
    with pytest.raises(DiagnosticError):
        grad_check(lambda: torch.log(x - 1.0).sum(), {'x': x})


def test_optimizer_steps_and_rejects_nan():
    store = TinyStore()
    opt = Optimizer('actor', store.parameters(), lr=1e-2)
    before = store.net.layers[0].weight.clone()
    metrics = opt(store(torch.ones(2, 3)).pow(2).sum())
    assert set(metrics) == {'actor_loss', 'actor_grad_norm'}
    assert not torch.equal(before, store.net.layers[0].weight)
    with pytest.raises(DiagnosticError):
        opt(torch.tensor(float('nan'), requires_grad=True))


def test_frozen_copy_has_no_gradients():
    store = TinyStore()
    clone = store.frozen_copy()
    assert all(not p.requires_grad for p in clone.parameters())
    assert isinstance(clone, nn.Module)
