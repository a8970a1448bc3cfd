"""Adversarial-robustness workbench for IQ modulation classifiers."""

from .version import __version__

__all__ = ["backend_name", "__version__"]


def backend_name() -> str:
    """Selected hot-kernel backend ("c" when the compiled extension loaded)."""
    from .kernels import backend_name as _bn

    return _bn()
