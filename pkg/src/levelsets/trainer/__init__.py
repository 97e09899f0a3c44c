"""Training loops, attacks, datasets, run persistence and the CLI."""
