"""CLI entry points and the HTTP session service."""
