"""Writes the number of non-empty lines in the input file to the output file."""

import sys


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: linecount INPUT OUTPUT", file=sys.stderr)
        return 2
    src, dst = argv
    with open(src, "rb") as fh:
        n = sum(1 for line in fh if line.strip())
    with open(dst, "w") as fh:
        fh.write(str(n))
    return 0


if __name__ == "__main__":
    sys.exit(main())
