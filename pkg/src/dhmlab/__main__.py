import sys

from dhmlab.cli import main

sys.exit(main())
