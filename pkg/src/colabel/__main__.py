import sys

from colabel.cli import main

sys.exit(main())
