"""Scale a simulation that streams selected particles to a small consumer
set writing them to storage, against a baseline where every rank blocks on
a collective write per step. The improvement grows with the rank count."""
import tempfile

from strata import config, spawn
from strata.bench import run_offload


def main():
    cluster = spawn(config.default_config(seed=6),
                    tempfile.mkdtemp(prefix="offload-"))
    try:
        print(f"{'ranks':>6} {'offload':>10} {'baseline':>10} "
              f"{'improvement':>12} {'peak buffer':>12}")
        for ranks in (16, 64, 256, 1024):
            m = run_offload(cluster, sim_ranks=ranks)
            print(f"{ranks:>6} {m['offload_time']:>9.4f}s "
                  f"{m['baseline_time']:>9.4f}s {m['improvement']:>11.2f}x "
                  f"{m['peak_buffering']:>12}")
    finally:
        cluster.close()


if __name__ == "__main__":
    main()
