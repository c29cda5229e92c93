"""Shared fixtures and independent dense-matrix oracles.

The oracles transcribe the defining formulas directly with explicit projection
matrices, Gram inversions, and per-observation loops. They deliberately avoid
the package's vectorized/QR code paths so agreement is meaningful.
"""

import numpy as np
import pytest

from regsdml.data import ResidualFold


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_fold(rng, n, q, d, fold_index=0, noise=1.0):
    """A well-conditioned random residual fold with correlated RX and RA."""
    RA = rng.standard_normal((n, q))
    RX = RA[:, :d] + 0.5 * rng.standard_normal((n, d))
    beta = rng.standard_normal(d)
    RY = RX @ beta + noise * rng.standard_normal(n)
    return ResidualFold(RA=RA, RX=RX, RY=RY, fold_index=fold_index)


def random_folds(rng, K, n, q, d):
    return [random_fold(rng, n, q, d, fold_index=k) for k in range(K)]


# ---------------------------------------------------------------------------
# dense oracles
# ---------------------------------------------------------------------------

def projection_matrix(RA):
    RA = np.atleast_2d(RA)
    return RA @ np.linalg.inv(RA.T @ RA) @ RA.T


def tsls_oracle(RA, RX, RY):
    P = projection_matrix(RA)
    return np.linalg.inv(RX.T @ P @ RX) @ (RX.T @ P @ RY)


def dml2_oracle(folds):
    """Moment-averaging estimator: average the unnormalized projected moments."""
    K = len(folds)
    d = folds[0].RX.shape[1]
    M = np.zeros((d, d))
    v = np.zeros(d)
    for f in folds:
        P = projection_matrix(f.RA)
        M += f.RX.T @ P @ f.RX / K
        v += f.RX.T @ P @ f.RY / K
    return np.linalg.inv(M) @ v


def dml1_oracle(folds):
    return np.mean([tsls_oracle(f.RA, f.RX, f.RY) for f in folds], axis=0)


def dml_variance_oracle(folds, beta):
    """Sandwich variance, transcribed with explicit Gram inverses and 1/K averages."""
    K = len(folds)
    d = folds[0].RX.shape[1]
    q = folds[0].RA.shape[1]
    J0 = np.zeros((d, q))
    meat = np.zeros((q, q))
    for f in folds:
        n = f.n
        SXA = f.RX.T @ f.RA / n
        SAA = f.RA.T @ f.RA / n
        SAX = f.RA.T @ f.RX / n
        Jk = np.linalg.inv(SXA @ np.linalg.inv(SAA) @ SAX) @ SXA @ np.linalg.inv(SAA)
        J0 += Jk / K
        outer = np.zeros((q, q))
        for i in range(n):
            psi = f.RA[i] * (f.RY[i] - f.RX[i] @ beta)
            outer += np.outer(psi, psi)
        meat += outer / n / K
    return J0 @ meat @ J0.T


def regdml_oracle(folds, gamma, assembly="DML2"):
    """Regularized coefficient via explicitly transformed residuals."""
    K = len(folds)
    d = folds[0].RX.shape[1]
    per_fold = []
    M = np.zeros((d, d))
    v = np.zeros(d)
    for f in folds:
        P = projection_matrix(f.RA)
        T = np.eye(f.n) + (np.sqrt(gamma) - 1.0) * P
        RtX = T @ f.RX
        RtY = T @ f.RY
        M += RtX.T @ RtX / K
        v += RtX.T @ RtY / K
        per_fold.append(np.linalg.inv(RtX.T @ RtX) @ (RtX.T @ RtY))
    if assembly == "DML1":
        return np.mean(per_fold, axis=0)
    return np.linalg.inv(M) @ v


def regdml_variance_oracle(folds, gamma, b):
    """Regularized sandwich variance, per-observation loop transcription."""
    K = len(folds)
    d = folds[0].RX.shape[1]
    b = np.atleast_1d(b)
    D1 = np.zeros((d, d))
    D2 = np.zeros((d, d))
    D4 = np.zeros((d, d))
    g1 = gamma - 1.0
    for f in folds:
        n = f.n
        psi1 = [np.outer(f.RX[i], f.RA[i]) for i in range(n)]
        psi2 = [np.outer(f.RA[i], f.RA[i]) for i in range(n)]
        psi3 = [np.outer(f.RX[i], f.RX[i]) for i in range(n)]
        eps = [float(f.RY[i] - f.RX[i] @ b) for i in range(n)]
        psi = [f.RA[i] * eps[i] for i in range(n)]
        psit = [f.RX[i] * eps[i] for i in range(n)]
        m1 = sum(psi1) / n
        m2 = sum(psi2) / n
        D1k = sum(psi3) / n
        D3k = m1 @ np.linalg.inv(m2)
        D2k = D3k @ m1.T
        D5k = np.linalg.inv(m2) @ (sum(psi) / n)
        D4k = np.zeros((d, d))
        for i in range(n):
            comp = (
                psit[i]
                + g1 * D3k @ psi[i]
                + g1 * (psi1[i] - m1) @ D5k
                - g1 * D3k @ (psi2[i] - m2) @ D5k
            )
            D4k += np.outer(comp, comp) / n
        D1 += D1k / K
        D2 += D2k / K
        D4 += D4k / K
    bread_inv = np.linalg.inv(D1 + g1 * D2)
    return bread_inv @ D4 @ bread_inv.T


def kclass_direct_oracle(fold, kappa):
    """k-class closed form with the explicit annihilator matrix."""
    P = projection_matrix(fold.RA)
    Wmat = np.eye(fold.n) - kappa * (np.eye(fold.n) - P)
    return np.linalg.inv(fold.RX.T @ Wmat @ fold.RX) @ (fold.RX.T @ Wmat @ fold.RY)


def liml_kappa_oracle(fold):
    """Brute-force smallest eigenvalue of inv(Z'(I-P)Z) Z'Z for Z = [RY | RX]."""
    Z = np.column_stack([fold.RY, fold.RX])
    P = projection_matrix(fold.RA)
    M = np.eye(fold.n) - P
    eigvals = np.linalg.eigvals(np.linalg.inv(Z.T @ M @ Z) @ (Z.T @ Z))
    return float(np.min(eigvals.real))
