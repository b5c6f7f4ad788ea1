import numpy as np
import pytest

from tensorstick import sampling
from tensorstick.model import ParamState


@pytest.fixture
def rng():
    return sampling.make_rng(20240601)


def naive_cp(F1, F2, F3):
    out = np.zeros((F1.shape[0], F2.shape[0], F3.shape[0]))
    for a in range(F1.shape[0]):
        for b in range(F2.shape[0]):
            for c in range(F3.shape[0]):
                for r in range(F1.shape[1]):
                    out[a, b, c] += F1[a, r] * F2[b, r] * F3[c, r]
    return out


def random_state(rng, I=5, J=3, D=2, H=6, coef="low_rank", R=2, Re=1):
    st = ParamState(
        theta=rng.uniform(0.05, 0.95, H),
        Z=rng.normal(size=(J, H)),
        alpha=0.3,
        C=rng.integers(0, H, size=(I, J)),
        Zstar=np.zeros((I, J, H)),
    )
    if coef == "low_rank":
        st.B1, st.B2, st.B3 = rng.normal(size=(D, R)), rng.normal(size=(J, R)), rng.normal(size=(H, R))
    elif coef == "full":
        st.B_full = rng.normal(size=(D, J, H))
    elif coef == "shared_types":
        st.B_shared = rng.normal(size=(D, H))
    if Re:
        st.E1, st.E2, st.E3 = rng.normal(size=(I, Re)), rng.normal(size=(J, Re)), rng.normal(size=(H, Re))
        st.sigma2 = np.ones(Re)
    return st


def batch_means_var(x, n_batches=50):
    """Variance of the mean of a correlated series, by non-overlapping batch means."""
    x = np.asarray(x, float)
    size = len(x) // n_batches
    b = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return b.var(ddof=1) / n_batches


def geweke_z(A, B):
    """z-scores comparing column means of independent draws A and chain draws B."""
    A, B = np.asarray(A, float), np.asarray(B, float)
    se2 = A.var(axis=0) / A.shape[0] + np.array([batch_means_var(B[:, k]) for k in range(B.shape[1])])
    return (A.mean(axis=0) - B.mean(axis=0)) / np.sqrt(se2)


# --------------------------------------------------------------------------
# Acceptance reporting: one line per criterion, shown in the terminal summary

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
