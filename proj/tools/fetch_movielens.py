#!/usr/bin/env python3
# Copyright 2026 The delrec Authors
# SPDX-License-Identifier: Apache-2.0
"""Materialize MovieLens-100K in its native layout (u.data + u.item).

The GroupLens host is not always reachable from build machines, so the files
are rebuilt from the copy bundled with the RecBole wheel (same 100,000 rows,
same ids, same timestamps). Titles regain their "(year)" suffix so u.item
matches the upstream format.
"""
import argparse
import pathlib
import subprocess
import sys
import tempfile
import zipfile

INTER = "recbole/dataset_example/ml-100k/ml-100k.inter"
ITEM = "recbole/dataset_example/ml-100k/ml-100k.item"


def find_wheel(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
         "-d", str(workdir), "recbole==1.2.1"],
        check=True)
    wheels = sorted(workdir.glob("recbole-*.whl"))
    if not wheels:
        raise SystemExit("recbole wheel not found after download")
    return wheels[0]


def convert(wheel: pathlib.Path, out: pathlib.Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as z:
        inter = z.read(INTER).decode("utf-8").splitlines()
        items = z.read(ITEM).decode("utf-8", "replace").splitlines()
    with open(out / "u.data", "w", encoding="utf-8", newline="\n") as f:
        for line in inter[1:]:
            user, item, rating, ts = line.split("\t")
            f.write(f"{user}\t{item}\t{int(float(rating))}\t{int(float(ts))}\n")
    with open(out / "u.item", "w", encoding="utf-8", newline="\n") as f:
        for line in items[1:]:
            cols = line.split("\t")
            item, title = cols[0], cols[1].strip()
            year = cols[2].strip() if len(cols) > 2 else ""
            full = f"{title} ({year})" if year.isdigit() else title
            f.write(f"{item}|{full}|||0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0\n")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/ml-100k")
    ap.add_argument("--wheel", help="use an already-downloaded recbole wheel")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    if args.wheel:
        convert(pathlib.Path(args.wheel), out)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            convert(find_wheel(pathlib.Path(tmp)), out)
    print(f"wrote {out / 'u.data'} and {out / 'u.item'}")


if __name__ == "__main__":
    main()
