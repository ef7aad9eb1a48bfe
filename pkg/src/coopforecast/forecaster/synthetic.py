"""Synthetic training windows built from the parametric walks in `scene`."""
import numpy as np

from coopforecast.data import DEFAULT_FPS, RawRecord, WindowedDataset, concat, window
from coopforecast.scene import DT, WALK_KINDS, synth_walk


def walk_records(walk, ped, fps=DEFAULT_FPS):
    """Planar (x, z) samples of a walk as raw records, one per dt."""
    step = int(round(walk.dt * fps))
    return [RawRecord(i * step, ped, float(p[0]), float(p[2])) for i, p in enumerate(walk.xyz)]


def synthetic_dataset(n_walks=600, kinds=WALK_KINDS, duration_s=8.0, seed=0, speed=(0.8, 1.6),
                      dt=DT, past=8, future=12):
    """Windows from random walks of the given kinds, headings over the full circle.

    Each walk is resampled through the same windowing path as real data, so
    velocities are central differences just like for ETH/UCY tracks.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for i in range(n_walks):
        kind = kinds[i % len(kinds)]
        walk = synth_walk(kind, duration_s, dt, float(rng.uniform(*speed)), int(rng.integers(2**31)),
                          start=(rng.uniform(-3, 3), 0.0, rng.uniform(3, 8)),
                          heading_deg=float(rng.uniform(-180, 180)))
        parts.append(window(walk_records(walk, i), dt, past, future, source=f"synthetic:{kind}"))
    ds = concat(parts, source=f"synthetic:{'+'.join(kinds)}:seed={seed}")
    return WindowedDataset(ds.windows, ds.ped_ids, ds.source, dt, past, future, 0,
                           ({"generator": "synthetic", "n_walks": n_walks, "kinds": list(kinds),
                             "duration_s": duration_s, "seed": seed},))
