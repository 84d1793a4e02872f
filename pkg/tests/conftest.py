import pytest


@pytest.fixture
def verdict(capsys):
    """Print a one-line PASS/FAIL verdict outside pytest's capture, then assert it."""
    def emit(label, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, f"{label}: {detail}"
    return emit
