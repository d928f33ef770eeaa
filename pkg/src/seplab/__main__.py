import sys

from seplab.cli import main

sys.exit(main())
