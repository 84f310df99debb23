"""Training engine, growth, storage and command-line surface."""
