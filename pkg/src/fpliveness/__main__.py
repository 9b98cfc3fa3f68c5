import sys

from fpliveness.cli import main

sys.exit(main())
