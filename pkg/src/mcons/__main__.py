import sys

from mcons.cli import main

sys.exit(main())
