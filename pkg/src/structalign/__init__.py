import sys

from . import cli


def main():
    sys.exit(cli.main())


__all__ = ["main", "cli"]
