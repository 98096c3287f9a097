import sys

from bflow.cli import main

sys.exit(main())
