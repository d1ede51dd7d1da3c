import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparsevit import tensor as T
from sparsevit.errors import ConfigError, ContractError
from sparsevit.sparse import (SparseConfig, default_lambda, hook_feature_count, penalized,
                              penalty, penalty_term, total_loss)
from sparsevit.tensor import Tensor
from sparsevit.vit import HookTap, SparsePosition, ViTConfig, forward, init_params

TOY = ViTConfig()


def test_penalty_examples():
    assert penalty(Tensor(np.zeros((3, 4)))).item() == 0.0
    assert penalty(Tensor([1.0])).item() == pytest.approx(0.693147, abs=1e-6)
    assert penalty(Tensor([1.0, -1.0])).item() == pytest.approx(2 * math.log(2), rel=1e-15)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)))
def test_penalty_properties(h):
    s = penalty(Tensor(h)).item()
    assert s >= 0
    assert s == pytest.approx(np.sum(np.log1p(h * h)), rel=1e-12)
    assert penalty(Tensor(-h)).item() == s


def test_penalty_gradient():
    h = np.array([-2.0, -0.1, 0.0, 0.7, 3.0])
    p = Tensor(h, requires_grad=True)
    np.testing.assert_allclose(T.backward(penalty(p))[p].data, 2 * h / (1 + h * h), rtol=1e-14)


def test_default_lambda_examples():
    assert default_lambda(768) == pytest.approx(0.0013021, abs=1e-7)
    assert default_lambda(1) == 1.0
    assert default_lambda(64) == 0.015625
    with pytest.raises(ConfigError):
        default_lambda(0)


def test_hook_feature_counts():
    assert hook_feature_count("similarity_score", TOY) == 17
    assert hook_feature_count("attention_weight", TOY) == 17
    assert hook_feature_count("weighted_value", TOY) == 16
    assert hook_feature_count("attention_output", TOY) == 64
    assert hook_feature_count("mlp_gelu_input", TOY) == 128
    cfg = SparseConfig(position="attention_output", enabled=True).resolve(TOY)
    assert cfg.lam == 1 / 64
    assert SparseConfig(n_feature=768, enabled=True).resolve(TOY).lam == 1 / 768


def _tap(*tensors, position=SparsePosition.ATTENTION_WEIGHT):
    tap = HookTap(position)
    for i, t in enumerate(tensors):
        tap.record(position, i, t)
    return tap


def test_total_loss_hand_example():
    cfg = SparseConfig(lam=0.5, enabled=True)
    e = total_loss(Tensor(1.0), _tap(Tensor([1.0, 0.0])), cfg)
    assert e.item() == pytest.approx(1.0 + 0.5 * math.log(2), abs=1e-12)
    assert e.item() == pytest.approx(1.346574, abs=1e-6)


def test_lambda_zero_and_disabled_return_ce_itself():
    ce = Tensor(1.25, requires_grad=True)
    assert total_loss(ce, _tap(Tensor([3.0])), SparseConfig(lam=0.0, enabled=True)) is ce
    assert total_loss(ce, None, SparseConfig(enabled=False)) is ce
    e, term = penalized(ce, _tap(Tensor([3.0])), SparseConfig(lam=0.0, enabled=True))
    assert e is ce and term is None


def test_penalty_is_additive_over_blocks():
    cfg = SparseConfig(lam=0.25, enabled=True)
    h = Tensor([0.5, -2.0])
    one = penalty_term(_tap(h), cfg).item()
    two = penalty_term(_tap(h, h), cfg).item()
    assert two == pytest.approx(2 * one, rel=1e-15)


def test_contract_errors():
    with pytest.raises(ContractError):
        penalty_term(HookTap("attention_weight"), SparseConfig(lam=1.0, enabled=True))
    with pytest.raises(ContractError):
        penalty_term(_tap(Tensor([1.0])), SparseConfig(enabled=True))
    with pytest.raises(ConfigError):
        SparseConfig(lam=-1.0)
    with pytest.raises(ConfigError):
        SparseConfig(position="nowhere")


@pytest.mark.parametrize("position", list(SparsePosition))
def test_penalty_term_matches_numpy_over_model_taps(position):
    params = init_params(TOY, 2)
    images = np.random.default_rng(2).uniform(size=(3, 32, 32, 3))
    cfg = SparseConfig(position=position, enabled=True).resolve(TOY)
    tap = cfg.make_tap()
    forward(images, params, TOY, tap)
    assert len(tap) == TOY.depth
    expected = cfg.lam * sum(np.log1p(t.data ** 2).sum() for t in tap.tensors)
    assert penalty_term(tap, cfg).item() == pytest.approx(expected, rel=1e-13)
