"""Allow ``python -m hamiltonian_learning``."""

import sys

from .cli import main

sys.exit(main())
