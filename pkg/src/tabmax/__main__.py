import sys

from tabmax.cli import main

sys.exit(main())
