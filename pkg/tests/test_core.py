import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agekit.core import (
    DEFAULT_VDD,
    FormatError,
    QuantizerSpec,
    RunConfig,
    Trace,
    Waveform,
    align,
    dequantize,
    dump_run_config,
    duty_cycle,
    load_run_config,
    parse_kv,
    quantize,
    traces_from_csv,
    traces_to_csv,
    transition_count,
    waveforms_from_csv,
    waveforms_to_csv,
)

from conftest import digital

VDD = DEFAULT_VDD


class TestWaveformStats:
    def test_duty_cycle_corners(self):
        assert duty_cycle(digital([1, 1, 1, 1])) == 0.0
        assert duty_cycle(digital([0, 0, 0, 0])) == 1.0
        assert duty_cycle(digital([0, 1, 0, 1])) == 0.5

    def test_duty_cycle_empty(self):
        with pytest.raises(ValueError, match="empty waveform"):
            duty_cycle(Waveform("x", 1e-3, []))

    def test_transition_count(self):
        assert transition_count(digital([1, 1, 1])) == 0
        assert transition_count(digital([0, 1, 0, 1])) == 3
        assert transition_count(digital([0, 0, 1, 1])) == 1

    def test_order_sensitive(self):
        # same duty cycle, different switching activity
        a, b = digital([0, 1, 0, 1]), digital([0, 0, 1, 1])
        assert duty_cycle(a) == duty_cycle(b)
        assert transition_count(a) != transition_count(b)

    @given(st.lists(st.booleans(), min_size=1, max_size=64))
    def test_duty_in_unit_interval(self, bits):
        d = duty_cycle(digital(bits))
        assert 0.0 <= d <= 1.0
        assert d == pytest.approx(bits.count(False) / len(bits))

    def test_waveform_limits(self):
        with pytest.raises(ValueError):
            Waveform("x", 0.0, [0.0])
        with pytest.raises(ValueError):
            Waveform("x", 1e-3, [0.0] * 1025)


class TestQuantizer:
    def test_examples(self):
        q = QuantizerSpec(0, 64, 64)
        assert quantize(q, 0.5) == 0
        assert dequantize(q, 0) == 0.5
        assert quantize(q, 200.0) == 63
        assert quantize(q, -3.0) == 0
        q10 = QuantizerSpec(0, 10, 10)
        assert quantize(q10, 4.9) == 4
        assert dequantize(q10, 4) == pytest.approx(4.5)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            quantize(QuantizerSpec(), float("nan"))
        with pytest.raises(ValueError):
            QuantizerSpec(5, 5, 10)
        with pytest.raises(ValueError):
            QuantizerSpec(0, 1, 1)

    @given(lo=st.floats(-50, 50), width=st.floats(0.1, 200), n=st.integers(2, 256), u=st.floats(0, 1))
    def test_round_trip_within_half_bin(self, lo, width, n, u):
        q = QuantizerSpec(lo, lo + width, n)
        x = lo + u * width
        c = quantize(q, x)
        assert 0 <= c < n
        assert abs(dequantize(q, c) - x) <= width / (2 * n) + 1e-9 * max(1.0, abs(x))

    def test_vectorised(self):
        q = QuantizerSpec(0, 10, 10)
        assert quantize(q, np.array([0.1, 9.99, 11.0])).tolist() == [0, 9, 9]

    def test_from_traces_pads_max(self):
        q = QuantizerSpec.from_traces([Trace("a", [1.0, 8.0]), Trace("b", [2.0])], n_bins=16)
        assert (q.min_mv, q.max_mv, q.n_bins) == (0.0, 10.0, 16)


class TestFiles:
    def test_waveform_csv_round_trip(self):
        wfs = [Waveform("u1.P0", 1e-3, [0.0, 0.7, 0.35]), Waveform("u2.P1", 1e-3, [0.7, 0.7, 0.1 + 0.2])]
        text = waveforms_to_csv(wfs)
        assert text.splitlines()[0] == "transistor_id,duration_s,v0,v1,v2"
        back = waveforms_from_csv(text)
        assert back == wfs
        assert waveforms_to_csv(back) == text

    @given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=1, max_size=40))
    def test_trace_csv_bit_exact(self, vals):
        t = Trace("x", vals)
        text = traces_to_csv([t])
        assert text.splitlines()[0].startswith("transistor_id,dvt0_mv")
        assert traces_from_csv(text) == [t]
        assert traces_to_csv(traces_from_csv(text)) == text

    @pytest.mark.parametrize("text", [
        "id,duration_s,v0\na,0.001,0\n",
        "transistor_id,duration_s,v0,v2\na,0.001,0,0\n",
        "transistor_id,duration_s,v0,v1\na,0.001,0\n",
    ])
    def test_waveform_schema_errors(self, text):
        with pytest.raises(FormatError):
            waveforms_from_csv(text)

    def test_trace_schema_errors(self):
        with pytest.raises(FormatError):
            traces_from_csv("transistor_id,dvt_mv\na,1\n")
        with pytest.raises(FormatError):
            traces_from_csv("transistor_id,dvt0_mv,dvt1_mv\na,1\n")

    def test_align_names_transistor(self):
        w = [Waveform("m1", 1e-3, [0.0, 0.7])]
        with pytest.raises(ValueError, match="m1"):
            align(w, [Trace("m1", [1.0])])
        with pytest.raises(ValueError, match="m1"):
            align(w, [Trace("other", [1.0, 2.0])])
        assert align(w, [Trace("m1", [1.0, 2.0])])[0][1].last == 2.0


class TestRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(vdd=0.8, segment_duration=2e-3, rng_seed=7)
        path = tmp_path / "run.cfg"
        path.write_text(dump_run_config(cfg))
        assert load_run_config(path) == cfg
        assert set(parse_kv(path.read_text())) == {"vdd", "temperature_c", "segment_duration", "eol_seconds",
                                                   "rng_seed"}

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("vdd = 0.7\nvoltage = 3\n")
        with pytest.raises(FormatError, match="voltage"):
            load_run_config(path)

    def test_invariants(self):
        with pytest.raises(ValueError):
            RunConfig(vdd=0.0)
        RunConfig().check_window(32)
        with pytest.raises(ValueError):
            RunConfig(eol_seconds=0.01).check_window(32)
        assert math.isclose(RunConfig().eol_seconds, 3.1536e8)
