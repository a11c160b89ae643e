"""Checkpoint a particle population through one-sided storage windows,
crash the storage domain, restart it, and verify the restored shards are
bit-exact. Compares virtual time against a collective-write baseline."""
import tempfile

from strata import config, spawn
from strata.bench import run_checkpoint


def main():
    cluster = spawn(config.default_config(seed=1),
                    tempfile.mkdtemp(prefix="ckpt-"))
    try:
        for processes in (2, 4, 8):
            m = run_checkpoint(cluster, particles=100_000, processes=processes)
            print(f"P={processes}: windows {m['windows_time']:.4f}s vs "
                  f"baseline {m['baseline_time']:.4f}s "
                  f"(ratio {m['ratio']:.2f}x, restart verified bit-exact)")
    finally:
        cluster.close()


if __name__ == "__main__":
    main()
