"""Command line harness: config loading, orchestration, artifacts."""
