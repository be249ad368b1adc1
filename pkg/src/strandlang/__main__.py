import sys

from strandlang.cli import main

sys.exit(main())
