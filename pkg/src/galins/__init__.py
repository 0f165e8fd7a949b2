"""Galilean-symmetry state estimation for inertial navigation with an unknown GNSS delay."""

import hashlib
import os
from pathlib import Path

__version__ = "0.1.0"


def _numba_cache_dir():
    # numba keys cached kernels on their own file only; a kernel calling into an
    # edited module would be reused stale, so the cache lives under a source hash
    if os.environ.get("NUMBA_CACHE_DIR"):
        return
    import numba

    h = hashlib.sha1()
    for p in sorted(Path(__file__).parent.rglob("*.py")):
        h.update(p.read_bytes())
    base = Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache"))
    numba.config.CACHE_DIR = str(base / "galins" / "numba" / h.hexdigest()[:16])


_numba_cache_dir()
