import numpy as np
import pytest

from opfbench import SystemModel, solve_dare


def tracking_model() -> SystemModel:
    """3-D target tracking system: three decoupled marginally stable
    blocks with correlated process noise."""
    At = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.9]])
    Ct = np.array([[1.0, 0.0, 0.0]])
    corr = np.array([[1.0, 0.2, 0.2], [0.2, 1.0, 0.2], [0.2, 0.2, 1.0]])
    return SystemModel(
        A=np.kron(np.eye(3), At),
        C=np.kron(np.eye(3), Ct),
        Q=np.kron(corr, np.eye(3)),
        R=np.eye(3),
    )


def illcond_model() -> SystemModel:
    """Stable but slowly mixing system with heavy measurement noise."""
    A = np.array([[0.98, 0.8, 0.0], [0.0, 0.98, 0.8], [0.0, 0.0, 0.9]])
    return SystemModel(A=A, C=np.eye(3), Q=np.eye(3), R=100.0 * np.eye(3))


def scalar_model(a=0.5, c=1.0, q=1.0, r=1.0) -> SystemModel:
    return SystemModel(A=[[a]], C=[[c]], Q=[[q]], R=[[r]])


@pytest.fixture(scope="session")
def tracking():
    model = tracking_model()
    return model, solve_dare(model)


@pytest.fixture(scope="session")
def illcond():
    model = illcond_model()
    return model, solve_dare(model)


@pytest.fixture(scope="session")
def scalar():
    model = scalar_model()
    return model, solve_dare(model)
