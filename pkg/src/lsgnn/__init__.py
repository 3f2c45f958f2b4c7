"""Graph learning with locally similarity-guided channel fusion.

Submodules import numpy and scipy; this top-level module stays light so
the CLI can configure thread environment variables before any numeric
library loads.
"""

__version__ = "0.1.0"
