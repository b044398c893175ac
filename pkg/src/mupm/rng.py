"""Deterministic random streams keyed by (seed, sample, branch, replicate, modality).

Every random draw in the toolkit flows through a stream derived here, so any
quantity is a pure function of its key. Results are therefore bitwise
reproducible no matter how work is scheduled across threads or processes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

BRANCH_IMAGE = "image-only"
BRANCH_TEXT = "text-only"
BRANCH_JOINT = "joint"

BRANCHES = (BRANCH_IMAGE, BRANCH_TEXT, BRANCH_JOINT)


def derive_seed(*parts) -> int:
    """Hash arbitrary key parts into a 128-bit integer seed."""
    token = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def generator_for(*parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream for one replicate of one branch.

    Calling ``generator()`` twice returns independent generator objects in the
    same state, so two perturbations with the same key are bitwise identical.
    """

    global_seed: int
    sample_id: str
    branch: str
    replicate: int
    modality: str

    def generator(self) -> np.random.Generator:
        return generator_for(
            self.global_seed,
            self.sample_id,
            self.branch,
            self.replicate,
            self.modality,
        )

    def sample_scoped(self, purpose: str) -> np.random.Generator:
        """Stream shared by every branch and replicate of this sample.

        Used for quantities drawn once per sample (for example the per-sample
        noise scale), which must agree between the single-modality branches
        and the joint branch.
        """
        return generator_for(self.global_seed, self.sample_id, "sample", purpose)


def replicate_stream(
    global_seed: int, sample_id: str, branch: str, replicate: int, modality: str
) -> RngStream:
    return RngStream(int(global_seed), str(sample_id), branch, int(replicate), modality)
