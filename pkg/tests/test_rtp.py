import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kfstream.media import DEFAULT_PROFILE, FrameDescriptor, FrameKind, StreamProfile, generate_stream, key_byte_share
from kfstream.rtp import (
    SEQ_MOD,
    DuplicationPolicy,
    RtpPacket,
    apply_duplication,
    deduplicate,
    duplication_overhead,
    packetize,
    propagate_damage,
    reassemble,
)


def frame(i, size, key=False, fps=24):
    return FrameDescriptor(i, FrameKind.KEY if key else FrameKind.USUAL, size, round(i * 1000 / fps))


def test_packetize_ceiling_split():
    pkts = packetize([frame(0, 3000, key=True)], mtu_payload=1400)
    assert [p.payload_bytes for p in pkts] == [1400, 1400, 200]
    assert [p.fragment_index for p in pkts] == [0, 1, 2]


def test_packetize_empty():
    assert packetize([]) == []


def test_packetize_rejects_zero_mtu():
    with pytest.raises(ValueError):
        packetize([frame(0, 10)], mtu_payload=0)


def test_packetize_default_stream_flags_and_sizes():
    frames = generate_stream(StreamProfile(duration_s=10))
    pkts = packetize(frames)
    by_frame = {}
    for p in pkts:
        by_frame.setdefault(p.frame_index, []).append(p)
    for f in frames:
        ps = by_frame[f.index]
        assert len(ps) == math.ceil(f.size_bytes / 1400)
        assert sum(p.payload_bytes for p in ps) == f.size_bytes
        assert all(p.is_key == (f.index % 24 == 0) for p in ps)
        assert all(p.timestamp_ms == f.pts_ms for p in ps)
    assert [p.seq for p in pkts] == list(range(len(pkts)))


def test_packetize_wraps_sequence_numbers():
    pkts = packetize([frame(i, 100) for i in range(4)], first_seq=SEQ_MOD - 2)
    assert [p.seq for p in pkts] == [65534, 65535, 0, 1]


def test_policy_none_is_identity():
    pkts = packetize(generate_stream(StreamProfile(duration_s=2)))
    assert apply_duplication(pkts, DuplicationPolicy.NONE) == pkts


def test_key_only_duplication_layout():
    pkts = packetize(generate_stream(StreamProfile(duration_s=2)))
    dup = apply_duplication(pkts, DuplicationPolicy.KEY_FRAMES_ONLY)
    assert len(dup) == len(pkts) + sum(p.is_key for p in pkts)
    assert [p.seq for p in dup] == list(range(len(dup)))
    for a, b in zip(dup, dup[1:]):
        if b.is_redundant_copy:
            assert a.is_key and not a.is_redundant_copy
            assert (a.frame_index, a.fragment_index, a.payload_bytes) == (b.frame_index, b.fragment_index, b.payload_bytes)
    assert all(p.is_key for p in dup if p.is_redundant_copy)


def test_all_policy_doubles_everything():
    pkts = packetize(generate_stream(StreamProfile(duration_s=2)))
    dup = apply_duplication(pkts, DuplicationPolicy.ALL)
    assert len(dup) == 2 * len(pkts)
    assert duplication_overhead(dup) == 1.0


def test_default_overhead_near_key_share():
    frames = generate_stream(DEFAULT_PROFILE)
    dup = apply_duplication(packetize(frames), DuplicationPolicy.KEY_FRAMES_ONLY)
    # one key frame of weight 3 per 23 usual frames
    assert duplication_overhead(dup) == pytest.approx(3 / 26, abs=1e-3)
    assert duplication_overhead(dup) == key_byte_share(frames)


def test_two_second_ratio_four_overhead_in_band():
    frames = generate_stream(StreamProfile(key_interval_s=2.0, key_size_ratio=4.0))
    dup = apply_duplication(packetize(frames), DuplicationPolicy.KEY_FRAMES_ONLY)
    assert duplication_overhead(dup) == pytest.approx(4 / 51, abs=1e-3)
    assert 0.07 <= duplication_overhead(dup) <= 0.10


@given(
    st.integers(1, 3),
    st.floats(1.5, 5.0),
    st.sampled_from([0.5, 1.0, 2.0]),
    st.integers(200, 3000),
)
def test_overhead_equals_summed_key_payload(duration, ratio, interval, mtu):
    frames = generate_stream(StreamProfile(duration_s=duration, key_size_ratio=ratio, key_interval_s=interval))
    pkts = packetize(frames, mtu)
    dup = apply_duplication(pkts, DuplicationPolicy.KEY_FRAMES_ONLY)
    key_bytes = sum(p.payload_bytes for p in pkts if p.is_key)
    total = sum(p.payload_bytes for p in pkts)
    assert duplication_overhead(dup) == key_bytes / total


def _pkt(frame_index, frag=0, seq=0, key=False, copy=False):
    return RtpPacket(seq, 0.0, frame_index, frag, key, 100, copy)


def test_dedup_sender_copy():
    orig, copy = _pkt(0, key=True, seq=0), _pkt(0, key=True, seq=1, copy=True)
    out = deduplicate([(orig, 10.0), (copy, 11.0)])
    assert out == [(orig, 10.0)]


def test_dedup_network_duplicate_of_usual_packet():
    p = _pkt(5, seq=7)
    assert deduplicate([(p, 30.0), (_pkt(6, seq=8), 31.0), (p, 33.0)]) == [(p, 30.0), (_pkt(6, seq=8), 31.0)]


def test_dedup_keeps_earliest_even_if_listed_later():
    a, b = _pkt(1, seq=1), _pkt(1, seq=2, copy=True)
    assert deduplicate([(a, 50.0), (b, 20.0)]) == [(b, 20.0)]


arrivals = st.lists(
    st.tuples(st.integers(0, 5), st.integers(0, 2), st.integers(0, 40)),
    max_size=40,
)


@given(arrivals)
def test_dedup_matches_set_oracle(items):
    received = [(_pkt(f, k, seq=i), float(t)) for i, (f, k, t) in enumerate(items)]
    out = deduplicate(received)
    # oracle: for each identity, the minimum arrival with earliest index on ties
    best = {}
    for i, (p, t) in enumerate(received):
        cur = best.get(p.identity)
        if cur is None or (t, i) < cur:
            best[p.identity] = (t, i)
    expected = sorted(best.values(), key=lambda ti: ti[1])
    assert [(p.seq, t) for p, t in out] == [(received[i][0].seq, t) for t, i in expected]
    assert len({p.identity for p, _ in out}) == len(out)
    assert deduplicate(out) == out


def gop_frames(n=240, period=24, size=1000):
    return [frame(i, size, key=(i % period == 0)) for i in range(n)]


def deliver_all(frames, drop=()):
    pkts = packetize(frames)
    return [(p, float(p.timestamp_ms)) for p in pkts if (p.frame_index, p.fragment_index) not in drop]


def test_all_on_time_means_no_damage():
    frames = gop_frames()
    verdicts = reassemble(deliver_all(frames), frames)
    assert not any(v.displayed_damaged for v in verdicts)
    assert all(v.delivered for v in verdicts)


def test_lost_key_fragment_damages_whole_gop():
    frames = generate_stream(StreamProfile(duration_s=10))
    verdicts = reassemble(deliver_all(frames, drop={(120, 1)}), frames)
    damaged = [v.frame_index for v in verdicts if v.displayed_damaged]
    assert damaged == list(range(120, 144))
    assert [v.frame_index for v in verdicts if not v.delivered] == [120]


def test_lost_usual_frame_damages_to_gop_end():
    frames = gop_frames()
    verdicts = reassemble(deliver_all(frames, drop={(130, 0)}), frames)
    assert [v.frame_index for v in verdicts if v.displayed_damaged] == list(range(130, 144))


def test_late_packet_counts_as_lost():
    frames = gop_frames(48)
    received = [(p, p.timestamp_ms + (900.0 if p.frame_index == 30 else 0.0)) for p in packetize(frames)]
    verdicts = reassemble(received, frames, playout_deadline_ms=500)
    assert not verdicts[30].delivered
    ok = reassemble(received, frames, playout_deadline_ms=1000)
    assert ok[30].delivered


def test_base_delay_extends_deadline():
    frames = gop_frames(24)
    received = [(p, p.timestamp_ms + 550.0) for p in packetize(frames)]
    assert not any(v.delivered for v in reassemble(received, frames, 500))
    assert all(v.delivered for v in reassemble(received, frames, 500, base_delay_ms=100))


@given(st.lists(st.booleans(), min_size=1, max_size=120), st.integers(1, 30))
def test_propagation_soundness(delivered, period):
    frames = [frame(i, 10, key=(i % period == 0)) for i in range(len(delivered))]
    damaged = propagate_damage(frames, delivered)
    for i, (ok, bad) in enumerate(zip(delivered, damaged)):
        if not ok:
            assert bad
    # every frame between an undelivered frame and the next delivered key is damaged
    for i, ok in enumerate(delivered):
        if ok:
            continue
        for j in range(i, len(frames)):
            if j > i and frames[j].is_key and delivered[j]:
                break
            assert damaged[j]
    # a delivered key frame always resets the picture
    for f, ok, bad in zip(frames, delivered, damaged):
        if f.is_key and ok:
            assert not bad


def test_reassemble_ignores_unknown_frames():
    frames = gop_frames(24)
    extra = (_pkt(999), 0.0)
    assert reassemble(deliver_all(frames) + [extra], frames) == reassemble(deliver_all(frames), frames)


def test_random_sender_duplicates_recover_key_loss():
    frames = gop_frames(48)
    dup = apply_duplication(packetize(frames), DuplicationPolicy.KEY_FRAMES_ONLY)
    # drop every original key packet; the copies alone must carry the frames
    received = [(p, float(p.timestamp_ms)) for p in dup if not (p.is_key and not p.is_redundant_copy)]
    random.Random(3).shuffle(received)
    verdicts = reassemble(deduplicate(received), frames)
    assert all(v.delivered for v in verdicts)
