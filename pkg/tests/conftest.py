import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def entropy_oracle(m):
    """Von Neumann entropy in bits through scipy's matrix logarithm."""
    from scipy.linalg import logm

    w = np.linalg.eigvalsh(m)
    if np.min(w) < 1e-9:
        # logm is singular on rank-deficient input; fall back to eigenvalues there
        w = w[w > 1e-12]
        return float(-np.sum(w * np.log2(w)))
    return float(-np.trace(m @ logm(m)).real / np.log(2))


def ptrace_oracle(m, dims, keep):
    """Partial trace by explicit index loops."""
    import itertools

    dims = list(dims)
    keep = sorted(keep)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    out = np.zeros((dk, dk), complex)
    for a in itertools.product(*[range(d) for d in dims]):
        for b in itertools.product(*[range(d) for d in dims]):
            if any(a[i] != b[i] for i in range(len(dims)) if i not in keep):
                continue
            ra = np.ravel_multi_index([a[i] for i in keep], [dims[i] for i in keep]) if keep else 0
            rb = np.ravel_multi_index([b[i] for i in keep], [dims[i] for i in keep]) if keep else 0
            out[ra, rb] += m[np.ravel_multi_index(a, dims), np.ravel_multi_index(b, dims)]
    return out
