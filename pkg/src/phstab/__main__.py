import sys

from phstab.cli import main

sys.exit(main())
