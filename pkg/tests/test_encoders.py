import numpy as np
import pytest

from clef.autodiff import Tensor
from clef.encoders import EncoderConfig, build_encoder
from clef.errors import ClefError, ShapeMismatch


def make_inputs(rng, length, batch, input_dim, hidden_dim):
    steps = [Tensor(rng.normal(0, 1, (batch, input_dim))) for _ in range(length)]
    time_embs = [Tensor(rng.normal(0, 0.1, (batch, hidden_dim))) for _ in range(length)]
    return steps, time_embs


@pytest.fixture(params=["recurrent", "attention"])
def encoder(request):
    config = EncoderConfig(input_dim=5, hidden_dim=6, kind=request.param,
                           layers=2, heads=2, dropout=0.3)
    return build_encoder(config, np.random.default_rng(11))


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ClefError):
            EncoderConfig(input_dim=4, hidden_dim=6, kind="attention", heads=4)

    def test_dropout_range(self):
        with pytest.raises(ClefError):
            EncoderConfig(input_dim=4, hidden_dim=4, dropout=1.0)

    def test_unknown_kind(self):
        with pytest.raises(ClefError):
            EncoderConfig(input_dim=4, hidden_dim=4, kind="conv")


class TestEncode:
    def test_length_one_history(self, encoder):
        rng = np.random.default_rng(0)
        steps, times = make_inputs(rng, 1, 2, 5, 6)
        out = encoder.encode(steps, times)
        assert out.array.shape == (2, 6)
        assert np.all(np.isfinite(out.array))

    def test_empty_history_rejected(self, encoder):
        with pytest.raises(ClefError):
            encoder.encode([], [])

    def test_dimension_mismatch_rejected(self, encoder):
        rng = np.random.default_rng(0)
        steps = [Tensor(rng.normal(0, 1, (2, 4)))]
        times = [Tensor(rng.normal(0, 1, (2, 6)))]
        with pytest.raises(ShapeMismatch):
            encoder.encode(steps, times)

    def test_eval_mode_deterministic(self, encoder):
        rng = np.random.default_rng(1)
        steps, times = make_inputs(rng, 4, 3, 5, 6)
        a = encoder.encode(steps, times).array
        b = encoder.encode(steps, times).array
        assert np.array_equal(a, b)

    def test_train_mode_dropout_seeded(self, encoder):
        rng = np.random.default_rng(2)
        steps, times = make_inputs(rng, 3, 2, 5, 6)
        a = encoder.encode(steps, times, train=True, rng=np.random.default_rng(9)).array
        b = encoder.encode(steps, times, train=True, rng=np.random.default_rng(9)).array
        assert np.array_equal(a, b)


class TestCausality:
    def test_prefix_states_ignore_suffix(self, encoder):
        rng = np.random.default_rng(3)
        steps, times = make_inputs(rng, 6, 2, 5, 6)
        reference = [s.array.copy() for s in encoder.encode_all(steps, times)]
        # overwrite the suffix after position 3 with noise
        altered = [Tensor(s.array.copy()) for s in steps]
        for t in (4, 5):
            altered[t] = Tensor(rng.normal(5, 3, (2, 5)))
        after = encoder.encode_all(altered, times)
        for t in range(4):
            assert np.array_equal(reference[t], after[t].array)
        assert not np.array_equal(reference[5], after[5].array)

    def test_recurrent_order_sensitivity(self):
        config = EncoderConfig(input_dim=5, hidden_dim=6, kind="recurrent",
                               layers=1, dropout=0.0)
        enc = build_encoder(config, np.random.default_rng(4))
        rng = np.random.default_rng(5)
        steps, times = make_inputs(rng, 6, 1, 5, 6)
        base = enc.encode(steps, times).array
        differ = 0
        perm_rng = np.random.default_rng(6)
        for _ in range(10):
            order = perm_rng.permutation(len(steps))
            permuted = [steps[k] for k in order]
            out = enc.encode(permuted, times).array
            if np.max(np.abs(out - base)) > 1e-9:
                differ += 1
        assert differ >= 1


class TestParameters:
    def test_parameter_names_unique(self, encoder):
        names = [n for n, _ in encoder.parameters()]
        assert len(names) == len(set(names))

    def test_all_require_grad(self, encoder):
        assert all(p.requires_grad for _, p in encoder.parameters())
