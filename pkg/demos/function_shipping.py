"""Ship computations to the data instead of fetching the data: run the
built-in reductions against a striped object and compare the bytes that
actually crossed node boundaries with a fetch-then-compute equivalent."""
import random
import struct
import tempfile

from strata import BlockSpec, Shipper, Striped, config, spawn
from strata.shipping import histogram_params

BLOCK = 4096


def main():
    cluster = spawn(config.default_config(seed=4),
                    tempfile.mkdtemp(prefix="ship-"))
    stack = cluster.stack
    try:
        devs = tuple(d.device_id for d in stack.pool.by_tier(3))[:3]
        stack.obj_create(1, BlockSpec(BLOCK), Striped(2, 1, devs))
        data = random.Random(4).randbytes(1 << 20)
        stack.obj_write(1, 0, data)

        shipper = Shipper(stack, transport=cluster)
        for function, params in (("SUM_I64", b""),
                                 ("CHECKSUM64", b""),
                                 ("HISTOGRAM", histogram_params(8, 0.0, 1.0))):
            res = shipper.ship(function, 1, params=params)
            ratio = res.fetch_equivalent_bytes / res.shipped_bytes
            head = struct.unpack("<Q", res.aggregate[:8])[0]
            print(f"{function:<12} aggregate[0]={head:<22} "
                  f"shipped {res.shipped_bytes} B vs fetching "
                  f"{res.fetch_equivalent_bytes} B ({ratio:,.0f}x less traffic)")
    finally:
        cluster.close()


if __name__ == "__main__":
    main()
