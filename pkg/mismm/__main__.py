from mismm.cli import run

run()
