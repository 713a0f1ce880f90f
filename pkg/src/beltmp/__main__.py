import sys

from beltmp.cli import main

sys.exit(main())
