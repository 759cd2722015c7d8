"""Forward-mode derivative of a truncated SVD, checked against finite differences.

Run with ``python3 demos/svd_tangents.py``.
"""

from __future__ import annotations

import numpy as np

from hamlearn import TangentBundle, svd_jvp


def product(u, s, vh):
    return u @ (s[:, None] * vh)


def main():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(5, 4)) + 1j * rng.normal(size=(5, 4))
    da = rng.normal(size=(5, 4)) + 1j * rng.normal(size=(5, 4))

    u, s, vh, _ = svd_jvp(TangentBundle.of(a, da[None]))
    print("singular values:", np.round(s.primal.real, 4))

    # singular values are gauge invariant, so compare them directly
    h = 1e-6
    s_plus = np.linalg.svd(a + h * da, compute_uv=False)
    s_minus = np.linalg.svd(a - h * da, compute_uv=False)
    fd = (s_plus - s_minus) / (2 * h)
    print("ds (forward mode):", np.round(s.tangents[0].real, 6))
    print("ds (central FD):  ", np.round(fd, 6))

    # the reassembled product must reproduce the input tangent exactly
    d_prod = (u.tangents[0] @ (s.primal[:, None] * vh.primal)
              + u.primal @ (s.tangents[0][:, None] * vh.primal)
              + u.primal @ (s.primal[:, None] * vh.tangents[0]))
    print("max |d(USV^H) - dA|:", f"{np.abs(d_prod - da).max():.2e}")
    print("max |USV^H - A|:    ", f"{np.abs(product(u.primal, s.primal, vh.primal) - a).max():.2e}")


if __name__ == "__main__":
    main()
