"""Byte-for-byte copy of the input file; exits with $COPY_EXIT when set."""

import os
import shutil
import sys


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    forced = os.environ.get("COPY_EXIT")
    if forced:
        return int(forced)
    shutil.copyfile(argv[0], argv[1])
    return 0


if __name__ == "__main__":
    sys.exit(main())
