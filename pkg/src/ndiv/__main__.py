import sys

from ndiv.cli import main

sys.exit(main())
