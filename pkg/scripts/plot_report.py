"""Render a PDF report (accuracy curves, stage/rung/growth/gamma tables) for a run directory.

Run: `python scripts/plot_report.py runs/s2c-seed1 [--output report.pdf]`
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from simple2complex.backend.exports import export_run_report  # noqa: E402
from simple2complex.common.errors import S2CError  # noqa: E402
from simple2complex.common.log import configure_logging  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--output", type=Path)
    args = parser.parse_args()
    configure_logging("info")
    try:
        out = export_run_report(args.run_dir, args.output)
    except S2CError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
