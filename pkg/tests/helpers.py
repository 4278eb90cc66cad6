import numpy as np

from akflow.structure import standard_blocks


def random_generator(rng, dim, scale=0.3):
    """A random element of sp(2n): omega_0^{-1} H with H symmetric."""
    H = rng.standard_normal((dim, dim))
    H = 0.5 * (H + H.T)
    return scale * np.linalg.solve(standard_blocks(dim), H)
