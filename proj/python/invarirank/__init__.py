"""Permutation-invariant listwise reranking (C++ core)."""

from ._invarirank import *  # noqa: F401,F403
from ._invarirank import Error, Mode

__all__ = [name for name in dir() if not name.startswith("_")]
