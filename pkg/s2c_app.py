"""Command-line entrypoint.

Run: `python s2c_app.py synth-demo` or `python s2c_app.py train-s2c --data-dir data/`
"""

from simple2complex.backend.app import main

if __name__ == "__main__":
    raise SystemExit(main())
