import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sleepstage.tokenizer import (
    NUM_TOKENS,
    TOKEN_SAMPLES,
    TOKEN_STRIDE,
    num_tokens,
    stitch,
    token_offsets,
    tokenize_array,
    tokenize_epoch,
    tokenize_recording,
)

epochs = hnp.arrays(np.float64, 3000, elements=st.floats(-1e3, 1e3, allow_nan=False))


def test_offsets_are_multiples_of_stride():
    assert token_offsets().tolist() == list(range(0, 2701, 225))


def test_ramp_token_one_starts_at_225():
    tb = tokenize_epoch(np.arange(3000.0), 4, "EOG")
    assert tb.tokens.shape == (13, 300)
    assert tb.tokens[1, 0] == 225
    assert (tb.source_epoch_index, tb.modality) == (4, "EOG")


def test_wrong_length_rejected():
    with pytest.raises(ValueError, match="3000"):
        tokenize_epoch(np.zeros(2999))


@given(epochs)
def test_stitch_reconstructs_epoch(x):
    np.testing.assert_array_equal(stitch(tokenize_epoch(x).tokens), x)


@given(epochs)
def test_tokens_are_slices(x):
    t = tokenize_epoch(x).tokens
    for j, off in enumerate(token_offsets()):
        np.testing.assert_array_equal(t[j], x[off : off + 300])


@given(epochs)
def test_token_energy_counts_overlaps_twice(x):
    t = tokenize_epoch(x).tokens
    overlap = sum(float((x[o + TOKEN_STRIDE : o + TOKEN_SAMPLES] ** 2).sum()) for o in token_offsets()[:-1])
    total = float((t**2).sum())
    assert total >= float((x**2).sum()) - 1e-6
    np.testing.assert_allclose(total, float((x**2).sum()) + overlap, rtol=1e-9, atol=1e-6)


@given(st.integers(50, 3000), st.integers(1, 3000))
def test_token_count_formula(w, s):
    expected = (3000 - w) // s + 1
    assert num_tokens(w / 100, s / 100) == expected
    assert tokenize_array(np.zeros((2, 3000)), w, s).shape == (2, expected, w)


def test_default_count():
    assert num_tokens() == NUM_TOKENS == 13


def test_recording_order_and_count():
    data = {m: np.arange(10 * 3000.0).reshape(10, 3000) + k for k, m in enumerate(("EEG1", "EEG2", "EOG"))}
    out = tokenize_recording(data)
    assert len(out) == 30
    assert [(b.modality, b.source_epoch_index) for b in out[:11]] == [("EEG1", i) for i in range(10)] + [("EEG2", 0)]
    assert out[12].tokens[0, 0] == 2 * 3000 + 1


def test_empty_recording():
    assert tokenize_recording({"EEG1": np.zeros((0, 3000))}) == []
