import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agekit.circuits import StimulusPlan, build_adder8, simulate
from agekit.core import DEFAULT_VDD, FormatError, QuantizerSpec, Trace, Waveform
from agekit.dataset import (
    SplitSpec,
    build_eol_dataset,
    build_history_dataset,
    build_seq_dataset,
    eol_from_csv,
    eol_to_csv,
    history_from_csv,
    history_to_csv,
    history_row,
    split,
)
from agekit.oracle import run_trace, run_traces

from conftest import digital

VDD = DEFAULT_VDD


def pairs_from_bits(rows):
    wfs = [digital(b, f"t{i}") for i, b in enumerate(rows)]
    return list(zip(wfs, run_traces(wfs)))


class TestHistory:
    def test_h0_is_memoryless(self):
        pairs = pairs_from_bits([[0, 1, 1, 0]])
        ds = build_history_dataset(pairs, 0)
        assert ds.X.shape == (4, 1)
        np.testing.assert_array_equal(ds.X[:, 0], pairs[0][0].volts)

    def test_h3_first_segment_fully_padded(self):
        (w, t), = pairs_from_bits([[0, 0, 1, 0, 1]])
        ds = build_history_dataset([(w, t)], 3)
        assert ds.X[0].tolist() == [0.0, VDD, VDD, VDD, 0.0, 0.0, 0.0]
        # segment 2 sees two real entries and one pad
        assert ds.X[2].tolist() == [VDD, 0.0, 0.0, VDD, t.dvt[1], t.dvt[0], 0.0]
        assert ds[2].label_mv == t.dvt[2]
        assert ds[2].segment == 2

    def test_sample_count(self, rng):
        rows = rng.integers(0, 2, size=(414, 32)).astype(bool).tolist()
        ds = build_history_dataset(pairs_from_bits(rows), 8)
        assert len(ds) == 13248
        assert ds.X.shape == (13248, 17)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.lists(st.booleans(), min_size=1, max_size=12), min_size=1, max_size=5),
           st.integers(0, 6))
    def test_labels_reconstruct_traces(self, rows, h):
        pairs = pairs_from_bits(rows)
        ds = build_history_dataset(pairs, h)
        ids = np.array(ds.transistor_ids)
        for w, t in pairs:
            sel = ids == w.transistor_id
            order = np.argsort(ds.segments[sel])
            assert tuple(ds.y[sel][order]) == t.dvt

    def test_history_row_matches_builder(self):
        (w, t), = pairs_from_bits([[0, 1, 0, 0, 1, 1]])
        ds = build_history_dataset([(w, t)], 2)
        for i in range(len(w)):
            np.testing.assert_array_equal(history_row(w.segments, t.dvt, i, 2, VDD), ds.X[i])

    def test_errors(self):
        w = Waveform("bad-id", 1e-3, [0.0, 0.0])
        with pytest.raises(ValueError, match="bad-id"):
            build_history_dataset([(w, Trace("bad-id", [1.0]))], 2)
        with pytest.raises(ValueError):
            build_history_dataset([], -1)

    def test_csv_round_trip(self):
        pairs = pairs_from_bits([[0, 1, 1, 0, 0], [1, 1, 0, 0, 1]])
        ds = build_history_dataset(pairs, 3)
        q = QuantizerSpec(0, 20, 8)
        text = history_to_csv(ds, q)
        assert text.splitlines()[0].endswith("label_mv,label_class")
        back = history_from_csv(text)
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)
        assert back.transistor_ids == ds.transistor_ids
        assert history_to_csv(back, q) == text
        with pytest.raises(FormatError):
            history_from_csv("id,x\n")


class TestEol:
    def test_labels_and_extremes(self, rng):
        rows = rng.integers(0, 2, size=(20, 16)).astype(bool).tolist()
        rows += [[True] * 16, [False] * 16]
        ds = build_eol_dataset(pairs_from_bits(rows))
        assert ds.X.shape == (22, 16)
        assert ds.y[-2] == 0.0
        assert ds.y[-1] == ds.y.max()

    def test_adder_labels_replay(self):
        wfs = list(simulate(build_adder8(), StimulusPlan(32, 7)).values())
        ds = build_eol_dataset(list(zip(wfs, run_traces(wfs))))
        assert ds.y.tolist() == [run_trace(w).last for w in wfs]

    def test_ragged(self):
        pairs = pairs_from_bits([[0, 1], [0, 1, 1]])
        with pytest.raises(ValueError, match="ragged"):
            build_eol_dataset(pairs)

    def test_csv_round_trip(self):
        ds = build_eol_dataset(pairs_from_bits([[0, 1, 1], [1, 0, 0]]))
        text = eol_to_csv(ds)
        back = eol_from_csv(text)
        assert eol_to_csv(back) == text
        np.testing.assert_array_equal(back.X, ds.X)
        with pytest.raises(FormatError):
            eol_from_csv("a,b\n")


class TestSeq:
    def test_reversal(self):
        pairs = pairs_from_bits([[0, 0, 1, 1]])
        fwd = build_seq_dataset(pairs, reverse=False)
        rev = build_seq_dataset(pairs, reverse=True)
        np.testing.assert_array_equal(rev.inputs, fwd.inputs[:, ::-1])
        np.testing.assert_array_equal(rev.targets, fwd.targets)
        assert rev.reversed_input and not fwd.reversed_input


class TestSplit:
    def test_ten_transistors(self):
        pairs = pairs_from_bits([[k % 2, 1] for k in range(10)])
        train, test = split(pairs)
        assert (len(train), len(test)) == (7, 3)
        assert not {w.transistor_id for w, _ in train} & {w.transistor_id for w, _ in test}

    def test_seed_determinism(self):
        pairs = pairs_from_bits([[k % 2, 1] for k in range(30)])
        ids = lambda part: [w.transistor_id for w, _ in part]  # noqa: E731
        assert ids(split(pairs, SplitSpec(0.7, 3))[0]) == ids(split(pairs, SplitSpec(0.7, 3))[0])
        assert ids(split(pairs, SplitSpec(0.7, 3))[0]) != ids(split(pairs, SplitSpec(0.7, 4))[0])

    @given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 1000))
    def test_disjoint_and_complete(self, n, frac, seed):
        pairs = [(Waveform(f"t{k}", 1e-3, [0.0]), Trace(f"t{k}", [1.0])) for k in range(n)]
        train, test = split(pairs, SplitSpec(frac, seed))
        a = {w.transistor_id for w, _ in train}
        b = {w.transistor_id for w, _ in test}
        assert a and b and not a & b
        assert len(a) + len(b) == n

    def test_errors(self):
        with pytest.raises(ValueError):
            SplitSpec(1.0)
        with pytest.raises(ValueError):
            split(pairs_from_bits([[0]]))
