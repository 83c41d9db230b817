import dataclasses

import pytest
from hypothesis import given, strategies as st

from gfscma.model import (
    ConfigError,
    FrameLayout,
    SystemConfig,
    config_from_mapping,
    dump_config,
    from_sparsity,
    load_config,
    parse_config_text,
    validate_config,
)


@pytest.mark.parametrize(
    "gamma,K,N",
    [(0.25, 8, 12), (0.20, 10, 15), (0.10, 20, 30)],  # [PAPER] the three simulated configurations
)
def test_reference_configurations(gamma, K, N):
    cfg = from_sparsity(2, 3, gamma, 1000)
    assert (cfg.K, cfg.N, cfg.J) == (K, N, N)
    assert cfg.gamma == pytest.approx(gamma)
    assert cfg.overload == pytest.approx(1.5)


def test_frame_length():
    # [DERIVED] L = K*I + K + 1
    assert from_sparsity(2, 3, 0.25, 1000).L == 8009
    assert FrameLayout(8, 2).L == 8 * 2 + 8 + 1 == 25


def test_layout_spans_partition():
    lay = FrameLayout(5, 7)
    idx = [lay.label_index] + list(range(lay.L))[lay.signature_span] + list(range(lay.L))[lay.data_span]
    assert sorted(idx) == list(range(lay.L))
    assert len(range(lay.L)[lay.signature_span]) == 5
    assert len(range(lay.L)[lay.data_span]) == 35


def test_defaults():
    cfg = from_sparsity(2, 3, 0.25, 10)
    assert cfg.beta == (1.0,) * 12 and cfg.beta_bar == 1.0 and cfg.P == 1.0


def test_validate_idempotent(cfg_small):
    assert validate_config(validate_config(cfg_small)) == cfg_small


@pytest.mark.parametrize(
    "changes",
    [
        dict(J=5),  # J < N
        dict(d_f=8),  # gamma = 1
        dict(M=3),
        dict(P=0.0),
        dict(sigma2=-1.0),
        dict(beta=(1.0,) * 11),
        dict(support_mode="sometimes"),
        dict(d_v=4),  # N != d_v / gamma
        dict(I=0),
    ],
)
def test_invalid_configs(cfg_small, changes):
    with pytest.raises(ConfigError):
        validate_config(dataclasses.replace(cfg_small, **changes))


def test_beta_bar_must_be_mean(cfg_small):
    with pytest.raises(ConfigError):
        validate_config(dataclasses.replace(cfg_small, beta_bar=2.0))


def test_non_integer_K():
    with pytest.raises(ConfigError):
        from_sparsity(2, 3, 0.3, 10)


def test_replace_resets_beta(cfg_small):
    c = cfg_small.replace(N=13, J=13, d_v=None)
    assert len(c.beta) == 13


def test_parse_and_load(tmp_path):
    text = "# sparse setting\ngamma = 0.1\nd_f = 2\nd_v = 3\nI = 50  # short frames\n"
    p = tmp_path / "c.cfg"
    p.write_text(text)
    cfg = load_config(p)
    assert (cfg.K, cfg.N, cfg.I) == (20, 30, 50)


def test_parse_errors():
    with pytest.raises(ConfigError):
        parse_config_text("K 8")
    with pytest.raises(ConfigError):
        parse_config_text("colour = blue")


def test_mapping_gamma_mismatch():
    with pytest.raises(ConfigError):
        config_from_mapping(dict(K=8, N=12, J=12, I=2, d_f=2, gamma=0.1))


@given(
    gamma=st.sampled_from([0.25, 0.2, 0.1, 0.5]),
    I=st.integers(1, 50),
    seed=st.integers(0, 100),
    mode=st.sampled_from(["per_symbol", "per_frame"]),
)
def test_dump_parse_round_trip(gamma, I, seed, mode):
    cfg = from_sparsity(2, 3, gamma, I, signature_seed=seed, support_mode=mode)
    assert config_from_mapping(parse_config_text(dump_config(cfg))) == cfg
