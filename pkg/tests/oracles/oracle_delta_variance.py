"""Closed-form joint-output variances for the linear oracle scenario.

Plain-float arithmetic, no package imports: per output dimension k the
first-order propagation law for F(x, y) = W x + V y + c under image noise
with std sigma, token swap distance delta at probability p, and output-level
correlation rho is

    var_k = (a_k sigma)^2 + (b_k sigma_T)^2 + 2 a_k b_k rho sigma sigma_T

with sigma_T = delta * sqrt(p (1 - p)), a_k = W[k, 0], b_k = V[k, 0] when
only the first image component and first token carry perturbations.

Run:  python3 tests/oracles/oracle_delta_variance.py
The printed table is frozen into tests/test_estimation.py and
tests/test_acceptance.py.
"""

import math

A = (2.0, 1.0, 0.5)
B = (0.6, 1.2, 0.9)
SIGMA = 0.1
P_SWAP = 0.5
DELTA = 1.0


def var_joint(a: float, b: float, rho: float) -> float:
    sigma_t = DELTA * math.sqrt(P_SWAP * (1.0 - P_SWAP))
    return (a * SIGMA) ** 2 + (b * sigma_t) ** 2 + 2.0 * a * b * rho * SIGMA * sigma_t


def main() -> None:
    sigma_t = DELTA * math.sqrt(P_SWAP * (1.0 - P_SWAP))
    print(f"sigma_T = {sigma_t!r}")
    print("image:    " + ", ".join(repr((a * SIGMA) ** 2) for a in A))
    print("text:     " + ", ".join(repr((b * sigma_t) ** 2) for b in B))
    for rho in (0.0, 0.5, -0.5):
        row = [var_joint(a, b, rho) for a, b in zip(A, B)]
        print(f"rho={rho:+.1f}: " + ", ".join(repr(v) for v in row))


if __name__ == "__main__":
    main()
