"""Time-memory trade-off attack toolkit for A5/1 and reduced A5/1-shaped ciphers."""
