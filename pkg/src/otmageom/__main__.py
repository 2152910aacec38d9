import sys

from otmageom.cli import main

sys.exit(main())
