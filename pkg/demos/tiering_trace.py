"""Drive an 80/20 hot/cold access trace against a tiered object and watch
the tiering engine promote the hot fifth to the fastest tier while the cold
remainder sinks toward the archive tier, one tier per pass."""
import random
import tempfile

from strata import BlockSpec, Extent, Striped, config, spawn
from strata.hsm import HsmEngine, HsmPolicy

BLOCK = 4096


def main():
    cluster = spawn(config.default_config(seed=2),
                    tempfile.mkdtemp(prefix="tiering-"))
    stack = cluster.stack
    hsm = HsmEngine(stack, HsmPolicy(chunk_blocks=4,
                                     demote_idle_threshold=300.0))
    try:
        devs = tuple(d.device_id for d in stack.pool.by_tier(2))[:2]
        stack.obj_create(1, BlockSpec(BLOCK), Striped(2, 0, devs))
        rng = random.Random(2)
        stack.obj_write(1, 0, rng.randbytes(20 * BLOCK))

        hot, cold = Extent(0, 4), Extent(4, 16)
        for step in range(1, 1001):
            if rng.random() < 0.8:
                hsm.record_access(1, hot, "read", float(step))
            elif step <= 200:
                chunk = rng.randrange(4)
                hsm.record_access(1, Extent(4 + 4 * chunk, 4), "read",
                                  float(step))

        for i in range(4):
            moved = hsm.run_pass(1000.0 + i)
            print(f"pass {i + 1}: {len(moved)} extent migrations, "
                  f"hot extent on tier {hsm._extent_tier(1, hot)}, "
                  f"cold extent on tier {hsm._extent_tier(1, cold)}")
        occ = stack.objects.tier_occupancy()
        print("occupancy:", {t: f"{f:.1%}" for t, f in sorted(occ.items())})
    finally:
        cluster.close()


if __name__ == "__main__":
    main()
