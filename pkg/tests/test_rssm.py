import math

import pytest
import torch

from latent_drive.config import RssmConfig
from latent_drive.errors import ConfigurationError, DiagnosticError, UsageError
from latent_drive.nncore import diag_gaussian, dist_kl, grad_check
from latent_drive.rssm import HALF_LOG_2PI, RSSM, LatentState, kl_balance_terms, unit_gaussian_nll
from latent_drive.utils import torch_generator

EMBED, ACTIONS = 6, 2


def make_rssm(config, seed=2):
    return RSSM(config, embed_dim=EMBED, action_dim=ACTIONS, rng_seed=seed)


def make_sequence(batch=2, steps=5, seed=0):
    gen = torch_generator(seed)
    embeddings = torch.randn(batch, steps, EMBED, generator=gen)
    actions = torch.randn(batch, steps, ACTIONS, generator=gen)
    rewards = torch.randn(batch, steps, generator=gen)
    continues = torch.ones(batch, steps)
    return embeddings, actions, rewards, continues


def test_initial_state_zeros_and_learned(small_rssm_config):
    state = make_rssm(small_rssm_config).initial_state(4)
    assert state.h.shape == (4, 8) and state.z.shape == (4, 4)
    assert torch.all(state.h == 0) and torch.all(state.z == 0)

    learned = make_rssm(RssmConfig(h_dim=8, z_dim=4, hidden=16, initial='learned'))
    with torch.no_grad():
        learned.initial_h.copy_(torch.linspace(-1, 1, 8))
    h = learned.initial_state(3).h
    assert torch.equal(h[0], h[2])
    assert not torch.all(h == 0)


def test_dynamics_step_zero_params_halves_h(small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    with torch.no_grad():
        for p in rssm.cell.parameters():
            p.zero_()
    h = torch.randn(2, 8)
    state = LatentState(h, torch.randn(2, 4))
    assert torch.allclose(rssm.dynamics_step(state, torch.randn(2, ACTIONS)), 0.5 * h)


def test_dynamics_step_depends_on_action(small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    state = LatentState(torch.randn(1, 8), torch.randn(1, 4))
    a = rssm.dynamics_step(state, torch.tensor([[1.0, 0.0]]))
    b = rssm.dynamics_step(state, torch.tensor([[0.0, 1.0]]))
    assert not torch.allclose(a, b)
    with pytest.raises(ConfigurationError):
        rssm.dynamics_step(state, torch.zeros(1, 3))


def test_two_chained_steps_gradient(float64, small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    state = LatentState(torch.randn(2, 8), torch.randn(2, 4))
    actions = torch.randn(2, 2, ACTIONS)

    def chained():
        h = rssm.dynamics_step(state, actions[:, 0])
        h = rssm.dynamics_step(LatentState(h, state.z), actions[:, 1])
        return h.pow(2).sum()

    params = {name: p for name, p in rssm.cell.named_parameters()}
    assert grad_check(chained, params).passed


def test_posterior_is_pure(small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    x = torch.randn(1, EMBED).expand(3, -1)
    h = torch.randn(1, 8).expand(3, -1)
    mean, log_std = rssm.posterior(h, x).params
    assert torch.equal(mean[0], mean[2])
    assert torch.equal(log_std[0], log_std[1])
    with pytest.raises(ConfigurationError):
        rssm.posterior(h, torch.zeros(3, EMBED + 1))


def test_head_closed_forms(small_rssm_config):
    assert unit_gaussian_nll(torch.tensor(0.3), torch.tensor(0.3)).item() == pytest.approx(0.9189385)
    assert unit_gaussian_nll(torch.tensor(1.0), torch.tensor(0.0)).item() == pytest.approx(0.5 + HALF_LOG_2PI)
    rssm = make_rssm(small_rssm_config)
    prob = rssm.predict_continue(torch.randn(5, 8), torch.randn(5, 4))
    assert prob.shape == (5,)
    assert torch.all((prob > 0) & (prob < 1))


def test_continue_term_at_half_probability(small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    embeddings, actions, rewards, continues = make_sequence()
    seq = rssm.observe_sequence(embeddings, actions, generator=torch_generator(0))
    seq.continue_logit = torch.zeros_like(seq.continue_logit)
    losses = rssm.loss_world(seq, embeddings, rewards, continues)
    assert losses.cont.item() == pytest.approx(math.log(2.0))


def test_heads_gradient(float64, small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    h, z = torch.randn(3, 8), torch.randn(3, 4)
    x_target, r_target = torch.randn(3, EMBED), torch.randn(3)

    def heads():
        embed = unit_gaussian_nll(rssm.predict_embedding(h, z), x_target).sum()
        reward = unit_gaussian_nll(rssm.predict_reward(h, z).params[0].squeeze(-1), r_target).sum()
        return embed + reward + torch.log(rssm.predict_continue(h, z)).sum()

    params = {}
    for head in ('embed_head', 'reward_head', 'continue_head'):
        params.update({f"{head}.{n}": p for n, p in getattr(rssm, head).named_parameters()})
    assert grad_check(heads, params).passed


def test_free_bits_floor_and_pass_through():
    zero = torch.zeros(4, 3)
    same = diag_gaussian(zero, zero)
    dyn, rep, kl = kl_balance_terms(same, same, free_bits=1.0)
    assert dyn.item() == 1.0 and rep.item() == 1.0
    assert kl.item() == 0.0

    mean = torch.zeros(1, 1) + math.sqrt(5.0)
    dyn, rep, kl = kl_balance_terms(diag_gaussian(mean, torch.zeros(1, 1)),
                                    diag_gaussian(torch.zeros(1, 1), torch.zeros(1, 1)), free_bits=1.0)
    assert dyn.item() == pytest.approx(2.5)
    assert rep.item() == pytest.approx(2.5)


def test_dyn_and_rep_train_opposite_sides():
    post_mean = torch.full((1, 2), 3.0, requires_grad=True)
    prior_mean = torch.zeros(1, 2, requires_grad=True)
    zero = torch.zeros(1, 2)
    dyn, rep, _ = kl_balance_terms(diag_gaussian(post_mean, zero), diag_gaussian(prior_mean, zero), 1.0)

    g_post, g_prior = torch.autograd.grad(dyn, [post_mean, prior_mean], allow_unused=True)
    assert g_post is None
    assert torch.all(g_prior != 0)

    g_post, g_prior = torch.autograd.grad(rep, [post_mean, prior_mean], allow_unused=True)
    assert torch.all(g_post != 0)
    assert g_prior is None


def test_observe_sequence_is_reproducible(small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    embeddings, actions, _, _ = make_sequence()
    a = rssm.observe_sequence(embeddings, actions, generator=torch_generator(3))
    b = rssm.observe_sequence(embeddings, actions, generator=torch_generator(3))
    assert torch.equal(a.z, b.z)
    assert torch.equal(a.h, b.h)
    assert a.h.shape == (2, 5, 8)
    assert a.flat_states().h.shape == (10, 8)
    assert torch.equal(a.last_state().z, a.z[:, -1])
    with pytest.raises(UsageError):
        rssm.observe_sequence(embeddings, actions[:, :4])


def test_detaching_z_cuts_gradient_between_steps(small_rssm_config):
    def gradient(detach_z):
        config = RssmConfig(h_dim=8, z_dim=4, hidden=16, detach_z=detach_z)
        rssm = make_rssm(config)
        embeddings, actions, _, _ = make_sequence()
        embeddings.requires_grad_(True)
        seq = rssm.observe_sequence(embeddings, actions, generator=torch_generator(0))
        (grad,) = torch.autograd.grad(seq.h[:, 1].sum(), [embeddings], allow_unused=True)
        return torch.zeros_like(embeddings[:, 0]) if grad is None else grad[:, 0]

    assert torch.any(gradient(False) != 0)
    assert torch.all(gradient(True) == 0)


def test_loss_world_terms(small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    embeddings, actions, rewards, continues = make_sequence()
    seq = rssm.observe_sequence(embeddings, actions, generator=torch_generator(0))
    losses = rssm.loss_world(seq, embeddings, rewards, continues)
    cfg = small_rssm_config
    expected = cfg.w_pred * losses.pred + cfg.w_dyn * losses.dyn + cfg.w_rep * losses.rep
    assert losses.total.item() == pytest.approx(expected.item())
    assert losses.dyn.item() >= cfg.free_bits
    assert set(losses.as_dict()) == {'model_loss', 'pred_loss', 'embed_loss', 'reward_loss', 'cont_loss',
                                     'dyn_loss', 'rep_loss', 'kl'}


def test_loss_world_rejects_misaligned_and_non_finite_targets(small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    embeddings, actions, rewards, continues = make_sequence()
    seq = rssm.observe_sequence(embeddings, actions, generator=torch_generator(0))
    with pytest.raises(UsageError):
        rssm.loss_world(seq, embeddings, rewards[:, :3], continues)
    rewards[0, 0] = float('nan')
    with pytest.raises(DiagnosticError, match='reward_loss'):
        rssm.loss_world(seq, embeddings, rewards, continues)


def test_imagination_shapes(small_rssm_config):
    rssm = make_rssm(small_rssm_config)
    start = rssm.initial_state(3)
    state, reward, cont = rssm.imagine_step(start, torch.zeros(3, ACTIONS), torch_generator(0))
    assert state.h.shape == (3, 8) and state.z.shape == (3, 4)
    assert reward.shape == (3,) and cont.shape == (3,)
    predicted = rssm.open_loop_embeddings(start, torch.zeros(3, 7, ACTIONS), torch_generator(0))
    assert predicted.shape == (3, 7, EMBED)


def world_targets(batch=2, steps=3):
    embeddings, actions, rewards, continues = make_sequence(batch=batch, steps=steps, seed=4)
    continues[:, -1] = 0.0
    return embeddings, actions, rewards, continues


def test_world_loss_prediction_gradient(float64):
    rssm = make_rssm(RssmConfig(h_dim=8, z_dim=4, hidden=16, w_dyn=0.0, w_rep=0.0))
    embeddings, actions, rewards, continues = world_targets()

    def total():
        seq = rssm.observe_sequence(embeddings, actions, generator=torch_generator(1))
        return rssm.loss_world(seq, embeddings, rewards, continues).total

    report = grad_check(total, dict(rssm.named_parameters()))
    assert report.passed, (report.worst_param, report.max_rel_error)


@pytest.mark.parametrize('term', ['dyn', 'rep'])
def test_world_loss_kl_gradient_holds_the_stopped_side(float64, term):
    rssm = make_rssm(RssmConfig(h_dim=8, z_dim=4, hidden=16, free_bits=0.0))
    embeddings, actions, rewards, continues = world_targets()
    params = dict(rssm.named_parameters())

    def observe():
        return rssm.observe_sequence(embeddings, actions, generator=torch_generator(1))

    seq = observe()
    losses = rssm.loss_world(seq, embeddings, rewards, continues)
    frozen_posterior, frozen_prior = seq.posterior.detach(), seq.prior.detach()

    # the stopped side is replaced by its value at the unperturbed point
    def held():
        live = observe()
        if term == 'dyn':
            return dist_kl(frozen_posterior, live.prior).mean()
        return dist_kl(live.posterior, frozen_prior).mean()

    actual = torch.autograd.grad(getattr(losses, term), list(params.values()), allow_unused=True)
    expected = torch.autograd.grad(held(), list(params.values()), allow_unused=True)
    for name, a, e in zip(params, actual, expected):
        a = torch.zeros_like(params[name]) if a is None else a
        e = torch.zeros_like(params[name]) if e is None else e
        assert torch.allclose(a, e, atol=1e-12), name

    dynamics = {n: p for n, p in params.items() if n.split('.')[0] in ('cell', 'prior_net', 'posterior_net')}
    report = grad_check(held, dynamics)
    assert report.passed, (report.worst_param, report.max_rel_error)


def test_world_loss_is_batch_permutation_equivariant(float64):
    # near-deterministic posterior so per-row sampling noise does not depend on row order
    config = RssmConfig(h_dim=8, z_dim=4, hidden=16, log_std_min=-20.0, log_std_max=-19.0)
    rssm = make_rssm(config)
    embeddings, actions, rewards, continues = make_sequence(batch=4, steps=5, seed=6)
    order = torch.tensor([2, 0, 3, 1])

    seq = rssm.observe_sequence(embeddings, actions, generator=torch_generator(0))
    shuffled = rssm.observe_sequence(embeddings[order], actions[order], generator=torch_generator(1))
    assert torch.allclose(shuffled.h, seq.h[order], atol=1e-7)
    assert torch.allclose(shuffled.z, seq.z[order], atol=1e-7)

    a = rssm.loss_world(seq, embeddings, rewards, continues).as_dict()
    b = rssm.loss_world(shuffled, embeddings[order], rewards[order], continues[order]).as_dict()
    for key in a:
        assert a[key] == pytest.approx(b[key], rel=1e-6, abs=1e-7), key


def test_kl_is_non_negative_on_random_inputs():
    gen = torch_generator(9)
    size = (1000, 4)
    d1 = diag_gaussian(3.0 * torch.randn(size, generator=gen), 2.0 * torch.randn(size, generator=gen))
    d2 = diag_gaussian(3.0 * torch.randn(size, generator=gen), 2.0 * torch.randn(size, generator=gen))
    assert torch.all(dist_kl(d1, d2) >= -1e-6)
    assert torch.all(dist_kl(d1, d1).abs() < 1e-5)
    dyn, rep, kl = kl_balance_terms(d1, d2, free_bits=0.5)
    assert dyn.item() >= 0.5 and rep.item() >= 0.5 and kl.item() >= 0.0
