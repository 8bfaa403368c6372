import pytest
from threadpoolctl import threadpool_limits


@pytest.fixture(autouse=True, scope="session")
def single_threaded_blas():
    # Determinism and timing-exponent fits both require one BLAS thread.
    with threadpool_limits(limits=1):
        yield
