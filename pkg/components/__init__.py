"""CLI commands, stage pipeline and property checks of glpin."""
