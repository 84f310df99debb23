"""Download the CIFAR-10 binary release into a data directory.

Run: `python scripts/fetch_cifar10.py [target_dir]` (default: <repo>/data)
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from simple2complex.backend.services.fetch import CIFAR10_BINARY_URL, fetch_cifar10  # noqa: E402
from simple2complex.common.errors import S2CError  # noqa: E402
from simple2complex.common.log import configure_logging  # noqa: E402
from simple2complex.common.paths import default_data_dir  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("target_dir", nargs="?", type=Path, default=default_data_dir())
    parser.add_argument("--url", default=CIFAR10_BINARY_URL)
    parser.add_argument("--keep-archive", action="store_true")
    args = parser.parse_args()
    configure_logging("info")
    try:
        batch_dir = fetch_cifar10(args.target_dir, url=args.url, keep_archive=args.keep_archive)
    except S2CError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(batch_dir)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
