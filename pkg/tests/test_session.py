import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpmra import tpm
from tpmra.errors import ProtocolError, SyncError
from tpmra.lfsr import SharedInputGenerator
from tpmra.session import (BitPackage, KeyQueue, Phase, RekeyService, Session, SessionPair, Status,
                           attach_consumer, decode_hello, encode_hello, handshake, run_key_exchange)
from tpmra.tpm import Role, TpmParams
from tpmra.transport import FrameType, channel_pair

PA = TpmParams()
PB = PA.for_role(Role.B)


def weights(seed, params=PA):
    return tpm.init_weights(np.random.default_rng(seed), params)


def own_bits(pkg):
    return BitPackage(pkg.bits, pkg.seq)


def test_bit_package_bytes_msb_first():
    bits = (1,) + (0,) * 30 + (1,)
    pkg = BitPackage(bits, 0)
    assert pkg.to_bytes() == bytes([0x80, 0, 0, 0x01])
    assert BitPackage.from_bytes(pkg.to_bytes(), 0, 32) == pkg
    with pytest.raises(ProtocolError):
        BitPackage.from_bytes(b"\x00", 0, 32)


def test_produce_package_freezes_weights():
    w = weights(1)
    s = Session(PA, w, 42).start()
    pkg = s.produce_package()
    assert len(pkg.bits) == 32 and pkg.seq == 0
    assert np.array_equal(s.weights, w)
    ref = SharedInputGenerator(42)
    ref.skip(32 * 3 * 100)
    assert s.gen.state == ref.state
    assert len(s.pending) == 32
    assert s.phase is Phase.AWAITING_PEER
    ref = SharedInputGenerator(42)
    for bit, (x, ev) in zip(pkg.bits, s.pending):
        assert np.array_equal(x, ref.next_input(3, 100))
        assert (1 if tpm.evaluate(w, x).output > 0 else 0) == bit


def test_same_seed_same_weights_same_package():
    w = weights(2)
    assert Session(PA, w, 9).produce_package() == Session(PB, w, 9).produce_package()


def test_wrong_phase_and_seq_gap():
    s = Session(PA, weights(3), 1).start()
    with pytest.raises(ProtocolError):
        s.absorb_package(BitPackage((0,) * 32, 0))
    pkg = s.produce_package()
    with pytest.raises(ProtocolError):
        s.produce_package()
    with pytest.raises(ProtocolError):
        s.absorb_package(BitPackage(pkg.bits, 1))
    with pytest.raises(ProtocolError):
        s.absorb_package(BitPackage(pkg.bits[:31], 0))


def test_threshold_crossing_enqueues_one_key():
    s = Session(PA, weights(4), 5).start()
    s.agree_count = PA.t_min - PA.b
    pkg = s.produce_package()
    assert s.absorb_package(own_bits(pkg)) is Status.SYNCHRONIZED
    assert s.phase is Phase.SYNCHRONIZED
    assert len(s.key_queue) == 1
    assert s.key_queue.pop() == tpm.extract_key(s.weights, PA.L)


def test_disagreement_at_last_position_resets_counter():
    s = Session(PA, weights(5), 6).start()
    pkg = s.produce_package()
    bits = list(pkg.bits)
    bits[-1] ^= 1
    assert s.absorb_package(BitPackage(tuple(bits), 0)) is Status.RUNNING
    assert s.agree_count == 0
    assert s.phase is Phase.GENERATING


def test_equal_weights_sync_after_exact_package_count():
    w = weights(6)
    pair = SessionPair(Session(PA, w, 77).start(), Session(PB, w, 77).start())
    rounds = 0
    while True:
        sa, sb = pair.round()
        rounds += 1
        if sa is not Status.RUNNING:
            break
    assert sa is sb is Status.SYNCHRONIZED
    assert rounds == math.ceil(PA.t_min / PA.b) == 3
    assert pair.a.total_iterations == 96 == pair.a.detected_at
    assert pair.a.key_queue.pop() == pair.b.key_queue.pop()


def test_run_key_exchange_equal_initial_weights():
    w = weights(7)
    r = run_key_exchange(PA, PB, 0x1234, weights_a=w, weights_b=w)
    assert r.iterations == 96 and r.packages == 3
    assert r.key_a == r.key_b


def test_watchdog_failure():
    p = TpmParams(watchdog_max=40)
    s = Session(p, weights(8), 1).start()
    statuses = []
    while not s.failed:
        pkg = s.produce_package()
        statuses.append(s.absorb_package(BitPackage(tuple(1 - b for b in pkg.bits), pkg.seq)))
    assert statuses == [Status.RUNNING, Status.FAILED]
    assert s.iter_count == 64 and not s.key_queue.history
    with pytest.raises(ProtocolError):
        s.produce_package()
    with pytest.raises(SyncError) as exc:
        run_key_exchange(p, p.for_role("B"), 3, rng=np.random.default_rng(0))
    assert exc.value.iterations > 40


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=8, max_size=8 * 12), st.integers(1, 20))
def test_counter_is_capped_agreeing_suffix(flips, t_min):
    p = TpmParams(K=2, N=3, L=2, b=8, t_min=t_min, watchdog_max=10**6)
    s = Session(p, weights(9, p), 3).start()
    history = []
    for start in range(0, len(flips) - len(flips) % 8, 8):
        pkg = s.produce_package()
        chunk = flips[start:start + 8]
        bits = tuple(b ^ f for b, f in zip(pkg.bits, chunk))
        s.absorb_package(BitPackage(bits, pkg.seq))
        history.extend(not f for f in chunk)
        if s.synchronized:
            break
        suffix = 0
        for ok in reversed(history):
            if not ok:
                break
            suffix += 1
        assert s.agree_count == min(suffix, t_min)
        assert 0 <= s.agree_count <= t_min


def test_loopback_exchange_keys_and_accounting():
    r = run_key_exchange(PA, PB, 0xBEEF, rng=np.random.default_rng(11))
    assert r.key_a == r.key_b
    assert r.key_a.nbits == 3 * 100 * 3
    assert r.packages == math.ceil(r.iterations / 32)
    assert r.detected_at <= r.iterations
    bp = [f for f in r.transcript_a if f[0] == FrameType.BP]
    assert len(bp) == r.packages


def test_transcript_determinism_and_socket_independence():
    wa, wb = weights(12), weights(13)
    one = run_key_exchange(PA, PB, 0xC0DE, weights_a=wa, weights_b=wb)
    two = run_key_exchange(PA, PB, 0xC0DE, weights_a=wa, weights_b=wb)
    sock = run_key_exchange(PA, PB, 0xC0DE, "socket", weights_a=wa, weights_b=wb)
    assert one.transcript_a == two.transcript_a == sock.transcript_a
    assert one.transcript_b == two.transcript_b == sock.transcript_b
    assert one.key_a == sock.key_a == sock.key_b
    assert one.iterations == sock.iterations


def test_exchange_validates_params():
    with pytest.raises(ValueError):
        run_key_exchange(PB, PA, 1)
    with pytest.raises(ValueError):
        run_key_exchange(PA, TpmParams(L=4, role=Role.B), 1)
    with pytest.raises(ValueError):
        run_key_exchange(TpmParams(b=16), TpmParams(b=16, role=Role.B), 1)
    with pytest.raises(ValueError):
        run_key_exchange(PA, PB, 1, "carrier-pigeon")


# -- handshake -----------------------------------------------------------------

def test_hello_codec():
    assert decode_hello(encode_hello(Role.A, 0x01020304, False)) == (Role.A, 0x01020304, False)
    assert decode_hello(encode_hello(Role.B, None, True)) == (Role.B, None, True)
    for bad in (b"", b"A", b"Z\x00", b"A\x01", b"A\x00\x00\x00\x00\x01"):
        with pytest.raises(ProtocolError):
            decode_hello(bad)


def _handshake_both(seed_a, seed_b, auth_a, auth_b, role_b=Role.B):
    ea, eb = channel_pair(default_timeout=1)
    out = {}

    def side_b():
        try:
            out["b"] = handshake(eb, role_b, seed_b, auth_b)
        except Exception as exc:
            out["b"] = exc

    t = threading.Thread(target=side_b)
    t.start()
    try:
        out["a"] = handshake(ea, Role.A, seed_a, auth_a)
    except Exception as exc:
        out["a"] = exc
    t.join(5)
    return out, ea


def test_public_handshake_carries_seed():
    out, ea = _handshake_both(0xABCD, None, False, False)
    assert out == {"a": 0xABCD, "b": 0xABCD}
    assert ea.transcript[0][7:-4] == b"A\x01\x00\x00\xab\xcd"


def test_authenticated_handshake_never_sends_seed():
    out, ea = _handshake_both(0x1111, 0x1111, True, True)
    assert out == {"a": 0x1111, "b": 0x1111}
    assert all(b"\x11\x11" not in frame for frame in ea.transcript)


def test_authenticated_wrong_secret_never_synchronizes():
    r = run_key_exchange(PA, PB, 7, weights_a=weights(1), weights_b=weights(1), authenticated=True)
    assert r.key_a == r.key_b
    a = Session(PA, weights(1), 0x1111).start()
    b = Session(PB, weights(2), 0x2222).start()
    pair = SessionPair(a, b)
    for _ in range(30):
        pair.round()
    assert not np.array_equal(a.weights, b.weights)


def test_handshake_mismatches():
    out, _ = _handshake_both(1, 1, True, False)
    assert isinstance(out["a"], ProtocolError) or isinstance(out["b"], ProtocolError)
    out, _ = _handshake_both(1, 1, False, False, role_b=Role.A)
    assert isinstance(out["a"], ProtocolError)
    with pytest.raises(ValueError):
        handshake(channel_pair()[0], Role.A, None, False)


# -- continuous mode and rekeying -------------------------------------------------

def continuous_pair(seed=0x77, restart="continue", same=False):
    rng_a, rng_b = np.random.default_rng(1), np.random.default_rng(2)
    wa = weights(21)
    wb = wa if same else weights(22)
    a = Session(PA, wa, seed, continuous=True, restart=restart, rng=rng_a).start()
    b = Session(PB, wb, seed, continuous=True, restart=restart, rng=rng_b).start()
    return SessionPair(a, b)


def test_rekey_keys_differ_and_weights_stay_equal():
    pair = continuous_pair()
    consumer = attach_consumer(pair.a, lambda: pair.round()[0])
    k1 = consumer.next_key()
    assert np.array_equal(pair.a.weights, pair.b.weights)
    k2 = consumer.next_key()
    assert k1 != k2
    assert np.array_equal(pair.a.weights, pair.b.weights)


def test_prefilled_queue_costs_no_iterations():
    pair = continuous_pair()
    consumer = attach_consumer(pair.a, lambda: pair.round()[0], depth=1)
    consumer.next_key()  # commit refills the queue to depth 1
    assert len(pair.a.key_queue) == 1
    before = pair.a.total_iterations
    key_id, key = consumer.request_key()
    assert pair.a.total_iterations == before
    consumer.commit(key_id)


def test_queue_agreement_over_100_rekeys():
    pair = continuous_pair()
    consumer = attach_consumer(pair.a, lambda: pair.round()[0], max_keys=100)
    delivered = [consumer.next_key() for _ in range(100)]
    assert delivered == pair.a.key_queue.history[:100]
    assert pair.a.key_queue.history == pair.b.key_queue.history
    assert len({k.data for k in delivered}) == 100
    for k in pair.a.key_queue.history[1:]:
        assert k.nbits == PA.key_bits


def test_reset_restart_policy():
    with pytest.raises(ValueError):
        Session(PA, weights(1), 1, continuous=True, restart="reset")
    pair = continuous_pair(restart="reset")
    consumer = attach_consumer(pair.a, lambda: pair.round()[0])
    k1, k2 = consumer.next_key(), consumer.next_key()
    assert k1 != k2
    assert pair.a.key_queue.history == pair.b.key_queue.history


def test_key_protocol_errors():
    pair = continuous_pair()
    consumer = attach_consumer(pair.a, lambda: pair.round()[0])
    service = consumer.service
    with pytest.raises(ProtocolError):
        service.handle(FrameType.KEY_COM, b"")
    key_id, _ = consumer.request_key()
    with pytest.raises(ProtocolError):
        service.handle(FrameType.REQ_KEY, b"")
    with pytest.raises(ProtocolError, match="unknown key id"):
        service.handle(FrameType.KEY_COM, (key_id + 5).to_bytes(4, "big"))
    with pytest.raises(ProtocolError):
        service.handle(FrameType.BP, bytes(4))
    consumer.commit()  # empty payload commits the outstanding key


def test_sync_error_reaches_consumer():
    p = TpmParams(watchdog_max=64)
    a = Session(p, weights(31), 5, continuous=True).start()
    b = Session(p.for_role("B"), weights(32), 5, continuous=True).start()
    pair = SessionPair(a, b)
    consumer = attach_consumer(a, lambda: pair.round()[0])
    with pytest.raises(SyncError):
        consumer.request_key()
    assert a.failed
    with pytest.raises(ProtocolError):
        a.restart()


def test_service_requires_continuous_session():
    with pytest.raises(ValueError):
        RekeyService(Session(PA, weights(1), 1), channel_pair()[0], lambda: Status.RUNNING)


def test_key_queue_blocking_pop():
    q = KeyQueue()
    assert q.pop() is None
    key = tpm.extract_key(weights(1), 3)
    threading.Timer(0.05, q.put, args=(key,)).start()
    assert q.pop(block=True, timeout=5) == key
    assert q.pop(block=True, timeout=0.01) is None
    assert q.history == [key]


def test_post_sync_permanence_in_session():
    pair = continuous_pair()
    pair.run_until_synchronized()
    a, b = pair.a, pair.b
    assert np.array_equal(a.weights, b.weights)
    mark = len(a.outputs)
    for _ in range(60):
        pair.round()
        assert np.array_equal(a.weights, b.weights)
    assert a.outputs[mark:] == b.outputs[mark:]
    assert a.key_queue.history == b.key_queue.history
