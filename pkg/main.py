#!/usr/bin/env python
"""Entry point for sstep-krylov CLI."""
from sstep_krylov.cli import cli

if __name__ == '__main__':
    cli()
