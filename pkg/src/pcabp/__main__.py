import sys

from pcabp import main

if __name__ == "__main__":
    sys.exit(main())
