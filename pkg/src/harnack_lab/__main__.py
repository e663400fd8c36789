import sys

from harnack_lab.cli import main

sys.exit(main())
