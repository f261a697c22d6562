# Copyright Contributors to the corea project
# SPDX-License-Identifier: Apache-2.0
"""Python interface to the corea scene-optimization library."""

try:
    from ._corea import *  # noqa: F401,F403  (installed wheel layout)
    from ._corea import __version__  # noqa: F401
except ImportError:  # build-tree layout: the module sits on PYTHONPATH
    from _corea import *  # noqa: F401,F403
    from _corea import __version__  # noqa: F401
