import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from spvp360 import numerics as nx
from spvp360.fovgru import FovConfig, FovPredictor, SpConvGruCell, aggregate_user_fovs, gru_step, predict_fov
from spvp360.spconv import shift_columns


def rand(*shape, seed=0, lo=0.0, hi=1.0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g, dtype=nx.DTYPE) * (hi - lo) + lo


def test_aggregate_single_is_identity():
    m = np.random.default_rng(0).random((4, 8))
    np.testing.assert_array_equal(aggregate_user_fovs([m]), m)


def test_aggregate_disjoint_peaks():
    a, b = np.zeros((4, 8)), np.zeros((4, 8))
    a[1, 1] = 1
    b[2, 6] = 1
    s = aggregate_user_fovs([a, b])
    assert s[1, 1] == 1 and s[2, 6] == 1 and s.sum() == 2


def test_aggregate_empty_is_zero():
    assert np.all(aggregate_user_fovs([], (4, 8)) == 0)
    with pytest.raises(ValueError):
        aggregate_user_fovs([])


def test_aggregate_grid_mismatch_rejected():
    with pytest.raises(ValueError):
        aggregate_user_fovs([np.zeros((4, 8)), np.zeros((4, 6))])


def test_aggregate_mean_mode():
    maps = [np.full((2, 2), 1.0), np.full((2, 2), 3.0)]
    np.testing.assert_array_equal(aggregate_user_fovs(maps, mode="mean"), np.full((2, 2), 2.0))


def zero_cell(hidden=4):
    cell = SpConvGruCell(1, hidden, 3)
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    return cell


def test_zero_weights_halve_state():
    cell = zero_cell()
    h = rand(4, 8, 16, seed=1, lo=-1, hi=1)
    with torch.no_grad():
        g = cell.gates(rand(1, 8, 16), h)
    assert torch.all(g["I"] == 0.5)
    assert torch.all(g["H_tilde"] == 0)
    torch.testing.assert_close(g["H"], 0.5 * h, rtol=0, atol=0)


def test_gru_step_matches_oracle():
    cell = SpConvGruCell(1, 4, 3, torch.Generator().manual_seed(2))
    with torch.no_grad():
        for k in (cell.W_z, cell.W_r, cell.W_o):
            k.bias.normal_(generator=torch.Generator().manual_seed(7))
    rng = np.random.default_rng(3)
    x, h = rng.normal(size=(1, 8, 16)), rng.uniform(-1, 1, size=(4, 8, 16))
    with torch.no_grad():
        got = cell.gates(torch.tensor(x), torch.tensor(h))
    ks = (cell.W_z, cell.W_r, cell.W_o)
    ref = oracles.gru_chain(x, h, *(k.weight.detach().numpy() for k in ks),
                            *(k.bias.detach().numpy() for k in ks))
    for key in ref:
        np.testing.assert_allclose(got[key].numpy(), ref[key], rtol=0, atol=1e-12)
    with torch.no_grad():
        np.testing.assert_allclose(gru_step(cell, torch.tensor(x), torch.tensor(h)).numpy(), ref["H"],
                                   rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 20))
def test_gate_ranges_and_bounded_state(seed, scale):
    cell = SpConvGruCell(1, 3, 3, torch.Generator().manual_seed(seed))
    h = rand(3, 8, 16, seed=seed, lo=-1, hi=1)
    x = rand(1, 8, 16, seed=seed + 1, lo=-scale, hi=scale)
    with torch.no_grad():
        g = cell.gates(x, h)
    assert 0 < float(g["I"].min()) and float(g["I"].max()) < 1
    assert 0 < float(g["R"].min()) and float(g["R"].max()) < 1
    assert -1 < float(g["H_tilde"].min()) and float(g["H_tilde"].max()) < 1
    assert float(g["H"].abs().max()) <= max(float(h.abs().max()), 1.0)


def test_gate_shape_mismatch_rejected():
    cell = SpConvGruCell(1, 3, 3)
    with pytest.raises(ValueError):
        cell(rand(2, 8, 16), rand(3, 8, 16))
    with pytest.raises(ValueError):
        cell(rand(1, 8, 16), rand(3, 4, 16))


def test_zero_sequence_zero_weights_uniform_output():
    model = FovPredictor(FovConfig(hidden=3, head_channels=2))
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        raw = model.head.raw(model.hidden_states(torch.zeros(3, 8, 16, dtype=nx.DTYPE))[-1])
        out = predict_fov(model.eval(), np.zeros((3, 8, 16)))
    assert float(raw.max() - raw.min()) == 0.0
    assert torch.all(out == 0)


def test_empty_sequence_rejected():
    model = FovPredictor(FovConfig(hidden=2, head_channels=2))
    with pytest.raises(ValueError):
        model(torch.zeros(0, 8, 16, dtype=nx.DTYPE))


def test_prediction_range_and_steps():
    model = FovPredictor(FovConfig(hidden=3, head_channels=2)).eval()
    seq = rand(3, 8, 16)
    with torch.no_grad():
        steps = model(seq, all_steps=True)
        last = model(seq)
    assert len(steps) == 3
    torch.testing.assert_close(steps[-1], last, rtol=0, atol=0)
    assert float(last.min()) >= 0 and float(last.max()) <= 1


@pytest.mark.parametrize("shift", [3, 8, -5])
def test_prediction_shift_covariant(shift):
    model = FovPredictor(FovConfig(hidden=3, head_channels=2, seed=4)).eval()
    seq = rand(3, 8, 16, seed=5)
    with torch.no_grad():
        a = model(shift_columns(seq, shift))
        b = shift_columns(model(seq), shift)
    assert float((a - b).abs().max()) < 1e-9
