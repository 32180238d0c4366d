import random

import pytest

from adr.simnet import (
    AdversaryProfile,
    DelayModel,
    EventKind,
    EventQueue,
    SimError,
    US_PER_SECOND,
    seconds_to_us,
    substream,
)


class TestTimeAndStreams:
    def test_seconds_to_us(self):
        assert seconds_to_us(1.0) == US_PER_SECOND
        assert seconds_to_us(0.0000015) == 2  # rounds, never truncates
        assert seconds_to_us(440.0) == 440_000_000

    def test_substreams_independent_and_deterministic(self):
        a1 = substream(7, "delays")
        a2 = substream(7, "delays")
        b = substream(7, "election")
        seq1 = [a1.random() for _ in range(5)]
        assert seq1 == [a2.random() for _ in range(5)]
        assert seq1 != [b.random() for _ in range(5)]

    def test_substreams_differ_across_seeds(self):
        assert substream(1, "x").random() != substream(2, "x").random()


class TestDelayModel:
    def test_fixed(self):
        model = DelayModel(kind="fixed", fixed=0.25)
        assert model.sample_us(random.Random(0)) == 250_000

    def test_uniform_bounds(self):
        model = DelayModel(kind="uniform", lo=0.1, hi=1.0)
        rng = random.Random(3)
        for _ in range(5_000):
            d = model.sample_us(rng)
            assert seconds_to_us(0.1) <= d <= seconds_to_us(1.0)

    def test_exponential_mean(self):
        model = DelayModel(kind="exponential", mean=2.0)
        rng = random.Random(11)
        n = 50_000
        mean = sum(model.sample_us(rng) for _ in range(n)) / n / US_PER_SECOND
        assert abs(mean - 2.0) < 0.1

    def test_unknown_kind_rejected(self):
        with pytest.raises(SimError):
            DelayModel(kind="pareto").sample_us(random.Random(0))


class TestAdversaryProfile:
    def test_activation_window(self):
        always = AdversaryProfile(node_id=b"a", double_spend=True)
        assert always.active(0) and always.active(99)
        windowed = AdversaryProfile(node_id=b"a", active_epochs=frozenset({2, 3}))
        assert not windowed.active(1)
        assert windowed.active(2) and windowed.active(3)
        assert not windowed.active(4)


class TestEventQueue:
    def test_dispatch_order_matches_sort_oracle(self):
        rng = random.Random(99)
        queue = EventQueue()
        expected = []
        for _ in range(100_000):
            t = rng.randrange(0, 10**9)
            ev = queue.schedule(t, EventKind.DELIVER_TX, None)
            expected.append((t, ev.sequence))
        expected.sort()
        seen = []
        queue.run_until(None, lambda e: seen.append((e.fire_time, e.sequence)))
        assert seen == expected

    def test_tie_break_by_schedule_order(self):
        queue = EventQueue()
        first = queue.schedule(5, EventKind.DELIVER_TX, "a")
        second = queue.schedule(5, EventKind.DELIVER_TX, "b")
        out = []
        queue.run_until(None, lambda e: out.append(e.payload))
        assert out == ["a", "b"]
        assert first.sequence < second.sequence

    def test_past_scheduling_rejected(self):
        queue = EventQueue()
        queue.schedule(10, EventKind.DELIVER_TX, None)
        queue.run_until(None, lambda e: None)
        assert queue.now == 10
        with pytest.raises(SimError):
            queue.schedule(9, EventKind.DELIVER_TX, None)

    def test_run_until_stops_at_horizon(self):
        queue = EventQueue()
        for t in (1, 2, 3, 10):
            queue.schedule(t, EventKind.DELIVER_TX, t)
        seen = []
        queue.run_until(5, lambda e: seen.append(e.payload))
        assert seen == [1, 2, 3]
        assert len(queue) == 1

    def test_handler_may_schedule_followups(self):
        queue = EventQueue()
        seen = []

        def handler(event):
            seen.append(event.payload)
            if event.payload < 3:
                queue.schedule(queue.now + 1, EventKind.DELIVER_TX, event.payload + 1)

        queue.schedule(0, EventKind.DELIVER_TX, 0)
        queue.run_until(None, handler)
        assert seen == [0, 1, 2, 3]

    def test_broadcast_excludes_sender_and_counts(self):
        queue = EventQueue()
        nodes = [b"n%d" % k for k in range(6)]
        sent = queue.broadcast(
            0, EventKind.DELIVER_BLOCK, "blk", nodes[0], nodes,
            DelayModel(kind="fixed", fixed=0.1), random.Random(0),
        )
        assert sent == 5
        dests = []
        queue.run_until(None, lambda e: dests.append(e.destination))
        assert sorted(dests) == sorted(nodes[1:])
        assert all(e == 100_000 for e in [queue.now])

    def test_trace_lines_deterministic(self):
        def run():
            queue = EventQueue()
            rng = random.Random(5)
            queue.broadcast(
                0, EventKind.DELIVER_TX, "payload", b"src", [b"src", b"d1", b"d2"],
                DelayModel(kind="uniform"), rng,
            )
            queue.run_until(None, lambda e: None, payload_digest=lambda p: str(p))
            return list(queue.trace)

        first = run()
        assert first == run()
        assert all(line.endswith(",payload") for line in first)
        assert len(first) == 2
