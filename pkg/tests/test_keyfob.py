import random
import struct

import numpy as np
import pytest

from vehsim.keyfob import (
    COUNTER_MAX,
    CarReceiver,
    FobCommand,
    FobExhaustedError,
    FobPacket,
    KeyFob,
    PACKET_BITS,
    PACKET_BYTES,
    PREAMBLE,
    RejectReason,
    RxStatus,
    accept_packet,
    car_receive,
    press_button,
    prf_tag,
    speck64_128_encrypt,
    verify_tag,
)
from vehsim.rfphy import BasebandSignal, JammerConfig, OokConfig, channel_mix, \
    generate_jam, ook_modulate

SECRET = bytes(range(16))


def make_packet(secret=SECRET, key_id=0x12AB34CD, counter=1,
                command=int(FobCommand.UNLOCK), **overrides):
    tag = prf_tag(secret, key_id, counter, command)
    packet = FobPacket(key_id, counter, command, tag)
    if overrides:
        packet = FobPacket(**{**packet.__dict__, **overrides})
    return packet


# -- cipher ------------------------------------------------------------

def test_speck64_128_published_vector():
    key = bytes.fromhex("1b1a1918131211100b0a090803020100")
    plaintext = bytes.fromhex("3b7265747475432d")
    assert speck64_128_encrypt(key, plaintext) == bytes.fromhex("8c6fa548454e028b")


def test_speck_input_validation():
    with pytest.raises(ValueError):
        speck64_128_encrypt(b"short", bytes(8))
    with pytest.raises(ValueError):
        speck64_128_encrypt(SECRET, bytes(7))


def test_tag_matches_an_independent_cbc_mac_composition():
    rng = random.Random(23)
    for _ in range(50):
        key_id = rng.randrange(1 << 32)
        counter = rng.randrange(1, COUNTER_MAX)
        command = rng.randrange(256)
        msg = struct.pack(">IIB", key_id, counter, command) + b"\x80" + bytes(6)
        state = bytes(8)
        for block in (msg[:8], msg[8:]):
            state = speck64_128_encrypt(
                SECRET, bytes(a ^ b for a, b in zip(state, block)))
        assert prf_tag(SECRET, key_id, counter, command) == \
            int.from_bytes(state, "big")


def test_tag_depends_on_every_field():
    base = prf_tag(SECRET, 1, 2, 3)
    assert prf_tag(SECRET, 9, 2, 3) != base
    assert prf_tag(SECRET, 1, 9, 3) != base
    assert prf_tag(SECRET, 1, 2, 9) != base
    assert prf_tag(bytes(16), 1, 2, 3) != base


# -- packet ------------------------------------------------------------

def test_packet_is_nineteen_bytes():
    packet = make_packet()
    wire = packet.to_bytes()
    assert len(wire) == PACKET_BYTES
    assert wire[:2] == b"\xaa\xaa"
    assert struct.unpack(">HIIBQ", wire) == (
        PREAMBLE, packet.key_id, packet.counter, packet.command, packet.tag)


def test_bit_serialisation_round_trip():
    packet = make_packet(counter=0xDEADBEEF, command=0x7F)
    bits = packet.to_bits()
    assert len(bits) == PACKET_BITS == 152
    assert bits[:8] == [1, 0, 1, 0, 1, 0, 1, 0]
    assert FobPacket.from_bits(bits) == packet
    # Surplus bits after the packet are ignored.
    assert FobPacket.from_bits(bits + [1, 1, 1]) == packet


def test_from_bits_requires_a_full_packet():
    with pytest.raises(ValueError):
        FobPacket.from_bits([0] * (PACKET_BITS - 1))


def test_verify_tag():
    packet = make_packet()
    assert verify_tag(packet, SECRET)
    assert not verify_tag(packet, bytes(16))
    assert not verify_tag(make_packet(tag=packet.tag ^ 1), SECRET)


# -- fob ---------------------------------------------------------------

def test_fresh_fob_first_press_uses_counter_one():
    fob = KeyFob(0x12AB34CD, SECRET)
    packet, sig = press_button(fob, FobCommand.UNLOCK)
    assert fob.counter == 1
    assert packet.counter == 1
    assert verify_tag(packet, SECRET)
    assert len(sig) == PACKET_BITS * 2000


def test_presses_count_monotonically():
    fob = KeyFob(0x12AB34CD, SECRET, counter=41)
    for expected in (42, 43, 44):
        packet, _ = press_button(fob, FobCommand.LOCK)
        assert packet.counter == expected


def test_exhausted_fob_refuses_to_transmit():
    fob = KeyFob(0x12AB34CD, SECRET, counter=COUNTER_MAX - 1)
    packet, _ = press_button(fob, FobCommand.LOCK)
    assert packet.counter == COUNTER_MAX
    with pytest.raises(FobExhaustedError):
        press_button(fob, FobCommand.LOCK)
    assert fob.counter == COUNTER_MAX


def test_secret_length_enforced_on_both_sides():
    with pytest.raises(ValueError):
        KeyFob(1, b"short")
    with pytest.raises(ValueError):
        CarReceiver(1, b"short")
    with pytest.raises(ValueError):
        CarReceiver(1, SECRET, window=0)
    with pytest.raises(ValueError):
        CarReceiver(1, SECRET, window=257)


# -- acceptance window -------------------------------------------------

def window_oracle(last, window, counter):
    if counter <= last:
        return RejectReason.STALE_COUNTER
    if counter > last + window:
        return RejectReason.OUT_OF_WINDOW
    return None  # accepted


@pytest.mark.parametrize("window", [1, 4, 16])
def test_window_grid_against_oracle(window):
    for last in range(0, 7):
        for counter in range(0, 13):
            car = CarReceiver(0x12AB34CD, SECRET, last_accepted=last,
                              window=window)
            result = accept_packet(car, make_packet(counter=counter))
            expected = window_oracle(last, window, counter)
            if expected is None:
                assert result.status is RxStatus.ACCEPTED
                assert car.last_accepted == counter
            else:
                assert result.status is RxStatus.REJECTED
                assert result.reason is expected
                assert car.last_accepted == last


def test_acceptance_toggles_the_lock():
    car = CarReceiver(0x12AB34CD, SECRET)
    assert car.locked
    accept_packet(car, make_packet(counter=1, command=int(FobCommand.UNLOCK)))
    assert not car.locked
    accept_packet(car, make_packet(counter=2, command=int(FobCommand.LOCK)))
    assert car.locked


def test_unknown_command_is_accepted_but_does_nothing():
    car = CarReceiver(0x12AB34CD, SECRET)
    result = accept_packet(car, make_packet(counter=1, command=0x7F))
    assert result.status is RxStatus.ACCEPTED
    assert result.command is None
    assert car.locked
    assert car.last_accepted == 1


def test_replay_of_an_unblocked_code_is_stale():
    car = CarReceiver(0x12AB34CD, SECRET)
    packet = make_packet(counter=1)
    assert accept_packet(car, packet).status is RxStatus.ACCEPTED
    replay = accept_packet(car, packet)
    assert replay.status is RxStatus.REJECTED
    assert replay.reason is RejectReason.STALE_COUNTER


def test_blocked_code_stays_fresh_until_overtaken():
    car = CarReceiver(0x12AB34CD, SECRET)
    captured = make_packet(counter=1)
    # Victim presses again; counter 2 lands first.
    accept_packet(car, make_packet(counter=2))
    late = accept_packet(car, captured)
    assert late.reason is RejectReason.STALE_COUNTER


def test_wrong_key_id_reads_as_a_bad_tag():
    car = CarReceiver(0x12AB34CD, SECRET)
    foreign = make_packet(key_id=0x55555555, counter=1)
    result = accept_packet(car, foreign)
    assert result.reason is RejectReason.BAD_TAG


def test_rejection_order_prefers_the_preamble():
    car = CarReceiver(0x12AB34CD, SECRET)
    garbled = make_packet(counter=99, preamble=0xFFFF, tag=0)
    assert accept_packet(car, garbled).reason is RejectReason.BAD_PREAMBLE


def test_every_single_bit_flip_is_rejected():
    car = CarReceiver(0x12AB34CD, SECRET, last_accepted=0)
    bits = make_packet(counter=1).to_bits()
    for pos in range(PACKET_BITS):
        flipped = bits[:]
        flipped[pos] ^= 1
        result = accept_packet(car, FobPacket.from_bits(flipped))
        assert result.status is RxStatus.REJECTED, f"bit {pos} slipped through"
        expected = RejectReason.BAD_PREAMBLE if pos < 16 else RejectReason.BAD_TAG
        assert result.reason is expected, f"bit {pos}"
    assert car.last_accepted == 0 and car.locked


# -- radio path --------------------------------------------------------

def test_over_the_air_round_trip_unlocks():
    fob = KeyFob(0x12AB34CD, SECRET)
    car = CarReceiver(0x12AB34CD, SECRET)
    packet, sig = press_button(fob, FobCommand.UNLOCK)
    result = car_receive(car, sig)
    assert result.status is RxStatus.ACCEPTED
    assert result.command is FobCommand.UNLOCK
    assert not car.locked
    assert car.last_accepted == packet.counter


def test_short_burst_is_no_signal():
    car = CarReceiver(0x12AB34CD, SECRET)
    assert car_receive(car, BasebandSignal(np.zeros(100))).status is \
        RxStatus.NO_SIGNAL
    ten_bits = ook_modulate([1] * 10, OokConfig())
    assert car_receive(car, ten_bits).status is RxStatus.NO_SIGNAL


def test_in_band_jam_corrupts_the_wideband_receiver():
    fob = KeyFob(0x12AB34CD, SECRET)
    car = CarReceiver(0x12AB34CD, SECRET)
    _, sig = press_button(fob, FobCommand.UNLOCK)
    jam = generate_jam(JammerConfig(), PACKET_BITS + 8)
    result = car_receive(car, channel_mix([sig, jam]))
    assert result.status is RxStatus.REJECTED
    assert result.reason is RejectReason.BAD_PREAMBLE
    assert car.locked and car.last_accepted == 0
