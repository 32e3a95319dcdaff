"""Out-of-process execution worker for notebook-style code cells.

One worker process serves one session. Cells run in a resource-limited
child interpreter; stdout, stderr, produced files, and failures travel
back over length-prefixed JSON frames on stdio.
"""

from __future__ import annotations

__version__ = "0.1.0"

PROTOCOL_VERSION = "exec/1"
