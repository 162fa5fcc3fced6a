#!/usr/bin/env python3
"""Materialize MovieLens-100K as `u.data` / `u.user` under data/ml-100k.

Tries the GroupLens archive first. When that host is unreachable, falls back
to the copy bundled in the `pytorch-widedeep` wheel (fetched with
`pip download --no-deps`), which ships the same 100,000 ratings.
"""
import argparse
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens(out: pathlib.Path) -> bool:
    try:
        payload = urllib.request.urlopen(GROUPLENS_URL, timeout=30).read()
    except Exception as exc:  # noqa: BLE001
        print(f"grouplens unavailable: {exc}", file=sys.stderr)
        return False
    with zipfile.ZipFile(io.BytesIO(payload)) as archive:
        for name in ("u.data", "u.user"):
            (out / name).write_bytes(archive.read(f"ml-100k/{name}"))
    return True


def from_wheel(out: pathlib.Path) -> bool:
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "-d", tmp, "pytorch-widedeep"],
            check=True)
        wheel = next(pathlib.Path(tmp).glob("pytorch_widedeep-*.whl"))
        prefix = "pytorch_widedeep/datasets/data/"
        with zipfile.ZipFile(wheel) as archive:
            ratings = pd.read_parquet(io.BytesIO(
                archive.read(prefix + "MovieLens100k_data.parquet.brotli")))
            users = pd.read_parquet(io.BytesIO(
                archive.read(prefix + "MovieLens100k_users.parquet.brotli")))
    ratings[["user_id", "movie_id", "rating", "timestamp"]].to_csv(
        out / "u.data", sep="\t", header=False, index=False)
    users[["user_id", "age", "gender", "occupation", "zip_code"]].to_csv(
        out / "u.user", sep="|", header=False, index=False)
    return True


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(
        pathlib.Path(__file__).resolve().parent.parent / "data" / "ml-100k"))
    args = parser.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not (from_grouplens(out) or from_wheel(out)):
        return 1
    print(f"wrote {out / 'u.data'} and {out / 'u.user'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
