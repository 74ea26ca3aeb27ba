import sys

from medledger.cli import main

sys.exit(main())
