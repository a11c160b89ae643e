"""Virtual time source shared by engines, telemetry and the simulator."""


class VirtualClock:
    def __init__(self, now: float = 0.0):
        self.now = now

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError("cannot advance time backwards")
        self.now += dt
        return self.now
