"""Allow ``python -m htbb``."""

import sys

from .cli import main

sys.exit(main())
