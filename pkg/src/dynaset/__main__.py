import sys

from dynaset.cli import main

sys.exit(main())
