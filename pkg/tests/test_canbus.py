import pytest

from vehsim.canbus import (
    BusError,
    CallbackNode,
    CanFrame,
    FrameError,
    VirtualBus,
)


def test_frame_defaults_dlc_to_payload_length():
    frame = CanFrame(0x123, b"\x01\x02")
    assert frame.dlc == 2
    frame.validate()


@pytest.mark.parametrize("can_id", [-1, 0x800, 0xFFFF])
def test_frame_rejects_out_of_range_ids(can_id):
    with pytest.raises(FrameError):
        CanFrame(can_id, b"").validate()


def test_frame_rejects_oversized_payload():
    with pytest.raises(FrameError):
        CanFrame(0x100, bytes(9)).validate()


def test_frame_rejects_dlc_payload_mismatch():
    with pytest.raises(FrameError):
        CanFrame(0x100, b"\x01", dlc=3).validate()


def test_trace_entry_format():
    frame = CanFrame(0x200, bytes.fromhex("1fc00010000301"),
                     timestamp_us=1_500_000)
    assert frame.trace_entry() == "(1.500000) can0 200#1FC00010000301"


def test_trace_entry_pads_micros_and_id():
    frame = CanFrame(0x01, b"\xff", timestamp_us=7)
    assert frame.trace_entry() == "(0.000007) can0 001#FF"


def test_lowest_id_wins_arbitration():
    bus = VirtualBus()
    sender = bus.attach(CallbackNode("sender"))
    listener = bus.attach(CallbackNode("listener"))
    bus.send_frame(sender, CanFrame(0x300, b"\x03"))
    bus.send_frame(sender, CanFrame(0x100, b"\x01"))
    bus.send_frame(sender, CanFrame(0x200, b"\x02"))
    assert bus.run_pending() == 3
    assert [f.can_id for f in listener.received] == [0x100, 0x200, 0x300]
    assert [f.can_id for f in bus.trace] == [0x100, 0x200, 0x300]


def test_equal_ids_deliver_in_enqueue_order():
    bus = VirtualBus()
    sender = bus.attach(CallbackNode("sender"))
    listener = bus.attach(CallbackNode("listener"))
    for marker in (b"a", b"b", b"c"):
        bus.send_frame(sender, CanFrame(0x1AA, marker))
    bus.run_pending()
    assert [f.payload for f in listener.received] == [b"a", b"b", b"c"]


def test_broadcast_excludes_the_sender():
    bus = VirtualBus()
    a = bus.attach(CallbackNode("a"))
    b = bus.attach(CallbackNode("b"))
    c = bus.attach(CallbackNode("c"))
    bus.send_frame(a, CanFrame(0x10, b"\x00"))
    bus.run_pending()
    assert not a.received
    assert len(b.received) == 1 and len(c.received) == 1


def test_frame_queued_mid_cascade_respects_arbitration():
    bus = VirtualBus()
    replies = []

    def answer(inner_bus, frame):
        if frame.can_id == 0x400:
            inner_bus.send_frame(responder, CanFrame(0x050, b"hi"))

    responder = bus.attach(CallbackNode("responder", on_frame=answer))
    sender = bus.attach(CallbackNode("sender",
                                     on_frame=lambda _b, f: replies.append(f)))
    bus.send_frame(sender, CanFrame(0x400, b""))
    bus.send_frame(sender, CanFrame(0x500, b""))
    bus.run_pending()
    # The 0x050 answer to 0x400 overtakes the already queued 0x500.
    assert [f.can_id for f in bus.trace] == [0x400, 0x050, 0x500]
    assert [f.can_id for f in replies] == [0x050]


def test_send_from_unattached_node_is_an_error():
    bus = VirtualBus()
    stranger = CallbackNode("stranger")
    with pytest.raises(BusError):
        bus.send_frame(stranger, CanFrame(0x100, b""))


def test_double_attach_is_an_error():
    bus = VirtualBus()
    node = bus.attach(CallbackNode("node"))
    with pytest.raises(BusError):
        bus.attach(node)


def test_cascade_guard_stops_ping_pong(monkeypatch):
    monkeypatch.setattr(VirtualBus, "MAX_CASCADE", 50)
    bus = VirtualBus()

    def ping(inner_bus, frame):
        inner_bus.send_frame(a, CanFrame(0x101, b""))

    def pong(inner_bus, frame):
        inner_bus.send_frame(b, CanFrame(0x102, b""))

    a = bus.attach(CallbackNode("a", on_frame=ping))
    b = bus.attach(CallbackNode("b", on_frame=pong))
    bus.send_frame(a, CanFrame(0x100, b""))
    with pytest.raises(BusError):
        bus.run_pending()


def test_timers_fire_in_deadline_order_and_observe_their_deadline():
    bus = VirtualBus()
    seen = []

    def record(inner_bus, tag):
        seen.append((tag, inner_bus.clock_us))

    node = bus.attach(CallbackNode("node", on_timer=record))
    bus.schedule_timer(node, 300, "late")
    bus.schedule_timer(node, 100, "early")
    fired = bus.advance_clock(500)
    assert seen == [("early", 100), ("late", 300)]
    assert [e.tag for e in fired] == ["early", "late"]
    assert bus.clock_us == 500


def test_timer_deadline_boundary_is_inclusive():
    bus = VirtualBus()
    seen = []
    node = bus.attach(CallbackNode("node",
                                   on_timer=lambda _b, tag: seen.append(tag)))
    bus.schedule_timer(node, 100, "edge")
    bus.advance_clock(99)
    assert seen == []
    bus.advance_clock(1)
    assert seen == ["edge"]


def test_timer_ties_fire_in_attach_order():
    bus = VirtualBus()
    order = []
    first = bus.attach(CallbackNode("first",
                                    on_timer=lambda _b, _t: order.append("first")))
    second = bus.attach(CallbackNode("second",
                                     on_timer=lambda _b, _t: order.append("second")))
    # Scheduled in reverse; attach order must win the tie.
    bus.schedule_timer(second, 50, "t")
    bus.schedule_timer(first, 50, "t")
    bus.advance_clock(50)
    assert order == ["first", "second"]


def test_timer_handler_can_reschedule_within_the_same_advance():
    bus = VirtualBus()
    ticks = []

    def tick(inner_bus, tag):
        ticks.append(inner_bus.clock_us)
        if len(ticks) < 3:
            inner_bus.schedule_timer(node, inner_bus.clock_us + 10, tag)

    node = bus.attach(CallbackNode("node", on_timer=tick))
    bus.schedule_timer(node, 10, "tick")
    bus.advance_clock(100)
    assert ticks == [10, 20, 30]


def test_cancel_timers_by_tag():
    bus = VirtualBus()
    seen = []
    node = bus.attach(CallbackNode("node",
                                   on_timer=lambda _b, tag: seen.append(tag)))
    bus.schedule_timer(node, 10, "keep")
    bus.schedule_timer(node, 10, "drop")
    bus.cancel_timers(node, "drop")
    bus.advance_clock(10)
    assert seen == ["keep"]


def test_detach_removes_pending_timers_and_deliveries():
    bus = VirtualBus()
    node = bus.attach(CallbackNode("node"))
    other = bus.attach(CallbackNode("other"))
    bus.schedule_timer(node, 10, "gone")
    bus.detach(node)
    assert bus.advance_clock(20) == []
    bus.send_frame(other, CanFrame(0x100, b""))
    bus.run_pending()
    assert node.received == []


def test_clock_cannot_run_backwards():
    bus = VirtualBus()
    with pytest.raises(ValueError):
        bus.advance_clock(-1)


def test_write_trace_round_trip(tmp_path):
    bus = VirtualBus()
    sender = bus.attach(CallbackNode("sender"))
    bus.attach(CallbackNode("listener"))
    bus.advance_clock(1_500_000)
    bus.send_frame(sender, CanFrame(0x200, bytes.fromhex("1fc00010000301")))
    bus.run_pending()
    out = tmp_path / "trace.log"
    with open(out, "w") as sink:
        assert bus.write_trace(sink) == 1
    assert out.read_text() == "(1.500000) can0 200#1FC00010000301\n"
