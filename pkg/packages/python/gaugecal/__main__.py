"""Run the Gaugecal CLI with ``python -m gaugecal``."""

import sys

from gaugecal.cli import main

sys.exit(main())
