from __future__ import annotations

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from query_hedge.instances import LossSequence, kl_sign_pair
from query_hedge.learners import (
    ALGORITHMS,
    HedgeState,
    LearnerConfig,
    hedge_distributions,
    hedge_step,
    run_learner,
)
from query_hedge.oracles import (
    BoundSpec,
    lemma_certificate_margins,
    theorem_bound,
    vanilla_hedge_closed_form_regret,
    vanilla_hedge_exact_recursion,
)
from query_hedge.seeding import make_rng

unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def loss_matrices(draw, max_n=4, max_T=40):
    n = draw(st.integers(2, max_n))
    T = draw(st.integers(1, max_T))
    return draw(arrays(np.float64, (n, T), elements=unit))


@st.composite
def eps_sequences(draw, max_T=60):
    T = draw(st.integers(1, max_T))
    eps = np.array(draw(st.lists(st.floats(-1.0, 1.0), min_size=T, max_size=T)))
    return eps if eps.sum() >= 0 else -eps


@settings(max_examples=60, deadline=None)
@given(loss_matrices(), st.floats(0.0, 5.0))
def test_distributions_are_simplex(losses, eta):
    p = hedge_distributions(losses, eta)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(loss_matrices(), st.floats(0.0, 3.0))
def test_vectorized_equals_stepped(losses, eta):
    p = hedge_distributions(losses, eta)
    state = HedgeState.initial(losses.shape[0], eta)
    for t in range(losses.shape[1]):
        q, state = hedge_step(state, losses[:, t])
        np.testing.assert_allclose(p[:, t], q, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(eps_sequences(), st.sampled_from([0.01, 0.1, 1.0, 10.0]), st.floats(0.0, 1.0))
def test_closed_form_equals_recursion(eps, eta, frac):
    T = eps.size
    k = int(frac * T)
    a = vanilla_hedge_closed_form_regret(eps, eta, k, T)
    b = vanilla_hedge_exact_recursion(eps, eta, k, T)
    assert abs(a - b) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(loss_matrices(max_T=80), st.sampled_from([1.0, 2.0, 5.0]))
def test_lemma_certificate(losses, U):
    tilde = losses * U
    eta = 1.0 / (2.0 * U * math.sqrt(tilde.shape[1]))
    assert np.all(lemma_certificate_margins(tilde, eta, U) >= -1e-9)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([0.05, 0.1, 0.2, 0.25]), st.floats(1e-4, 1.0 - 1e-4))
def test_kl_bound(q, frac):
    eps = frac * q / math.sqrt(5.0)
    assert kl_sign_pair(q, eps) <= 5.0 * eps**2 / q + 1e-15


@settings(max_examples=40, deadline=None)
@given(loss_matrices(max_T=30), st.sampled_from(ALGORITHMS), st.floats(0.0, 1.0), st.integers(0, 2**32))
def test_budget_and_loss_bounds(losses, algorithm, frac, seed):
    n, T = losses.shape
    k = int(frac * T)
    if algorithm in ("etc", "ftl"):
        k = max(k, 1)
    seq = LossSequence(losses)
    traj = run_learner(LearnerConfig(algorithm, k, n, T), seq, make_rng(seed))
    assert traj.queries_used <= k
    assert seq.dynamic_min_loss - 1e-9 <= traj.total_expected_loss <= losses.max(axis=0).sum() + 1e-9
    assert np.all(traj.incurred_loss == losses[traj.actions, np.arange(T)])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10**6), st.integers(2, 50), st.sampled_from(["thm2", "thm3", "thm_adv3_uniform", "thm_etc",
                                                                      "thm_ftl", "thm_lb", "thm_lb_le"]))
def test_bounds_nonnegative(T, n, theorem):
    for k in (1, max(1, T // 3), T):
        assert theorem_bound(BoundSpec(theorem, T, n, k)).value >= 0
