import sys

from jumpchain.cli import main

sys.exit(main())
