import sys

from tdpo.cli import main

sys.exit(main())
