#!/usr/bin/env python3
"""Download MovieLens-100k and extract u.data (needs network access).

The simulator consumes the unfiltered u.data file directly.  When this host
has no internet access, use scripts/generate_synthetic_ratings.py instead;
the evaluation pipeline accepts either file through --data.
"""

import argparse
import io
import urllib.request
import zipfile
from pathlib import Path

URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/u.data")
    args = parser.parse_args()
    print(f"downloading {URL} ...")
    with urllib.request.urlopen(URL, timeout=60) as response:
        payload = response.read()
    with zipfile.ZipFile(io.BytesIO(payload)) as archive:
        raw = archive.read("ml-100k/u.data")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(raw)
    print(f"wrote {out} ({len(raw)} bytes)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
