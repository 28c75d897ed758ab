#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import sys

from mmrisk.mm_cli import main


if __name__ == '__main__':
    sys.exit(main())
