import sys

from qrcauchy.cli import main

sys.exit(main())
