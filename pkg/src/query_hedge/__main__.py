import sys

from query_hedge.cli import main

sys.exit(main())
