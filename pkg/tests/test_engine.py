import numpy as np
import pytest

from deltagru.engine import accumulate_columns, accumulator_bound, reset, run_sequence, step
from deltagru.errors import DataError, DimensionMismatch
from deltagru.features import load_csv, load_feat, load_features, save_feat, synthetic_raw
from deltagru.fixedpoint import ACT_FMT, mac, quantize
from deltagru.model import NetworkConfig, convert, random_float_model

from oracles import DenseQuantGru, SparsifiedDeltaGru


def _setup(L=1, N=4, M=8, seed=0, theta=0x40, **kw):
    params = random_float_model(L, N, M, seed, **kw)
    cfg = NetworkConfig(L, N, M, theta)
    return params, convert(params, cfg)


def test_reset_zero_bias():
    params, _ = _setup()
    for p in params:
        p.b_r[:] = p.b_u[:] = p.b_c[:] = 0
    s = reset(convert(params, NetworkConfig(1, 4, 8)))
    for name in ("m_r", "m_u", "m_cx", "m_ch", "x_ref", "h_ref", "h_prev"):
        assert not getattr(s.layers[0], name).any()


def test_reset_loads_biases_and_is_idempotent():
    params, _ = _setup()
    params[0].b_r[:] = 0.5
    m = convert(params, NetworkConfig(1, 4, 8))
    s = reset(m)
    assert (s.layers[0].m_r == 16384).all()
    assert reset(m).equals(s)


def test_no_events_when_nothing_changes():
    _, m = _setup(theta=0x10)
    s = reset(m)
    x = quantize(np.array([0.5, -1.0, 0.25, 2.0]), ACT_FMT)
    step(m, s, x)
    st = s.layers[0]
    st.h_ref[:] = st.h_prev
    before = st.copy()
    tr = step(m, s, x)
    assert tr.events == []
    assert np.array_equal(st.m_r, before.m_r) and np.array_equal(st.m_ch, before.m_ch)


@pytest.mark.parametrize("delta,n_events", [(0x40, 1), (0x3F, 0), (0x41, 1), (-0x40, 1)])
def test_threshold_equality_transmits(delta, n_events):
    _, m = _setup(theta=0x40)
    s = reset(m)
    tr = step(m, s, np.array([delta, 0, 0, 0]))
    assert len(tr.events) == n_events
    if n_events:
        ev = tr.events[0]
        assert (ev.layer, ev.source, ev.col, ev.delta_raw) == (0, "input", 0, delta)


def test_dimension_errors():
    _, m = _setup()
    with pytest.raises(DimensionMismatch):
        step(m, reset(m), np.zeros(5, dtype=int))
    with pytest.raises(DimensionMismatch):
        run_sequence(m, np.zeros((3, 2), dtype=int))


def test_run_sequence_composition_and_determinism():
    _, m = _setup(L=2)
    xs = synthetic_raw(50, 4, seed=1)
    out, traces = run_sequence(m, xs)
    s = reset(m)
    first = step(m, s, xs[0])
    assert np.array_equal(out[0], first.h_out)
    out2, _ = run_sequence(m, xs)
    assert np.array_equal(out, out2)
    empty, tr = run_sequence(m, np.zeros((0, 4), dtype=int))
    assert empty.shape == (0, 8) and tr == []


def test_trace_counts_match_events():
    _, m = _setup(L=2, theta=0x08)
    _, traces = run_sequence(m, synthetic_raw(40, 4, seed=2))
    for tr in traces:
        for l in range(2):
            assert tr.nz_x[l] == sum(e.layer == l and e.source == "input" for e in tr.events)
            assert tr.nz_h[l] == sum(e.layer == l and e.source == "hidden" for e in tr.events)


@pytest.mark.parametrize("theta", [0, 0x08, 0x40])
def test_event_soundness(theta):
    _, m = _setup(L=2, theta=theta)
    s = reset(m)
    for x in synthetic_raw(60, 4, seed=3):
        before = s.copy()
        tr = step(m, s, x)
        inp = x
        for l, (b, a) in enumerate(zip(before.layers, s.layers)):
            for src, vals, ref_b, ref_a in (("input", inp, b.x_ref, a.x_ref),
                                             ("hidden", b.h_prev, b.h_ref, a.h_ref)):
                d = vals - ref_b
                fired = {e.col for e in tr.events if e.layer == l and e.source == src}
                expect = {j for j in range(len(d)) if d[j] != 0 and abs(d[j]) >= theta}
                assert fired == expect
                changed = set(np.flatnonzero(ref_a != ref_b))
                assert changed <= fired
                assert all(ref_a[j] == vals[j] for j in fired)
            inp = a.h_prev


def test_first_step_events_non_increasing_in_theta():
    _, m = _setup(L=2, N=6, M=16)
    x = quantize(np.random.default_rng(4).normal(size=6), ACT_FMT)
    counts = [len(step(m, reset(m), x, th).events) for th in range(0, 0x200, 8)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_output_stays_in_activation_range():
    _, m = _setup(L=2, scale=1.0)
    xs = quantize(np.random.default_rng(5).uniform(-60, 60, size=(200, 4)), ACT_FMT)
    out, _ = run_sequence(m, xs)
    assert np.abs(out).max() <= 256


@pytest.mark.parametrize("seed", range(3))
def test_zero_threshold_matches_dense_evaluator(seed):
    params, m = _setup(L=2, N=5, M=8, seed=seed, theta=0)
    dense = DenseQuantGru(params, m.config)
    s = reset(m)
    for x in synthetic_raw(200, 5, seed=seed, profile="iid"):
        assert np.array_equal(step(m, s, x).h_out, dense.step(x))


@pytest.mark.parametrize("theta", [0x08, 0x40, 0x80])
def test_column_skip_matches_sparsified_evaluator(theta):
    params, m = _setup(L=2, N=5, M=8, seed=1, theta=theta)
    oracle = SparsifiedDeltaGru(params, m.config, theta)
    s = reset(m)
    for x in synthetic_raw(200, 5, seed=7):
        assert np.array_equal(step(m, s, x).h_out, oracle.step(x))


def test_accumulation_order_does_not_matter():
    _, m = _setup(M=16)
    w_in = m.layers[0].hidden_block.data
    rng = np.random.default_rng(6)
    cols = rng.choice(16, size=10, replace=False)
    deltas = rng.integers(-600, 600, size=10)
    ref = accumulate_columns(w_in.astype(float), cols, deltas)
    perm = rng.permutation(10)
    assert np.array_equal(ref, accumulate_columns(w_in.astype(float), cols[perm], deltas[perm]))
    # one saturating scalar MAC at a time, in reverse order
    seq = np.zeros(w_in.shape[0], dtype=np.int64)
    for j, d in reversed(list(zip(cols, deltas))):
        for i in range(w_in.shape[0]):
            seq[i] = mac(int(w_in[i, j]), int(d), int(seq[i]))
    assert np.array_equal(ref, seq)


def test_accumulator_headroom():
    # worst case for 8-bit weights at N = M = 1024 with |x| < 63
    params = random_float_model(2, 1024, 1024, seed=0, scale=1.0)
    for p in params:
        for name in ("W_ir", "W_iu", "W_ic", "W_hr", "W_hu", "W_hc"):
            setattr(p, name, -np.ones_like(getattr(p, name)))
        p.b_r[:] = p.b_u[:] = p.b_c[:] = -1.0
    m = convert(params, NetworkConfig(2, 1024, 1024))
    assert accumulator_bound(m, quantize(62.99, ACT_FMT)) < 2 ** 31
    assert accumulator_bound(m, quantize(63.0, ACT_FMT)) >= 2 ** 31


def test_feature_files(tmp_path):
    raw = synthetic_raw(20, 3, seed=0)
    save_feat(raw, tmp_path / "f.feat")
    assert np.array_equal(load_feat(tmp_path / "f.feat"), raw)
    np.savetxt(tmp_path / "f.csv", raw / 256.0, delimiter=",")
    assert np.array_equal(load_csv(tmp_path / "f.csv"), raw)
    assert np.array_equal(load_features(tmp_path / "f.csv"), raw)
    (tmp_path / "bad.feat").write_bytes(b"FEAT" + b"\x05\0\0\0\x03\0\0\0" + b"\0" * 4)
    with pytest.raises(DataError):
        load_feat(tmp_path / "bad.feat")
    with pytest.raises(DataError):
        load_features(tmp_path / "missing.feat")
