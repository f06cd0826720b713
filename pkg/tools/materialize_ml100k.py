"""Rebuild the MovieLens 100k ``u.data`` / ``u.user`` / ``u.item`` files locally.

The RecBole wheel ships the full ml-100k tables in its own atomic-file
format.  This script fetches the wheel with pip (unless one is passed
with ``--wheel``) and rewrites the three tables in the original
MovieLens layout.  Ratings, timestamps and user records come through
unchanged; titles are re-assembled from title and year, release dates
are set to January 1 of the release year, and the URL fields are left
empty, none of which the loaders read.

    python tools/materialize_ml100k.py data/ml-100k
"""
from __future__ import annotations

import argparse
import glob
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

GENRES = ("unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
          "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
          "Romance", "Sci-Fi", "Thriller", "War", "Western")
PREFIX = "recbole/dataset_example/ml-100k/ml-100k."


def fetch_wheel(dest: str) -> str:
    subprocess.run([sys.executable, "-m", "pip", "download", "recbole==1.2.1", "--no-deps",
                    "-q", "-d", dest], check=True)
    return glob.glob(f"{dest}/recbole-*.whl")[0]


def rows(z: zipfile.ZipFile, table: str) -> list[list[str]]:
    text = z.read(PREFIX + table).decode("latin-1")
    return [line.split("\t") for line in text.splitlines()[1:] if line]


def materialize(wheel: str, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as z:
        with open(out / "u.data", "w", encoding="latin-1") as f:
            for user, item, rating, ts in rows(z, "inter"):
                f.write(f"{user}\t{item}\t{int(float(rating))}\t{int(float(ts))}\n")
        with open(out / "u.user", "w", encoding="latin-1") as f:
            for user, age, gender, occupation, zipcode in rows(z, "user"):
                f.write(f"{user}|{age}|{gender}|{occupation}|{zipcode}\n")
        with open(out / "u.item", "w", encoding="latin-1") as f:
            for fields in rows(z, "item"):
                item, title, year = fields[:3]
                tags = set(fields[3].split()) if len(fields) > 3 else set()
                flags = "|".join("1" if g in tags else "0" for g in GENRES)
                date = f"01-Jan-{year}" if year.strip() else ""
                name = f"{title} ({year})" if year.strip() else title
                f.write(f"{item}|{name}|{date}|||{flags}\n")


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", type=Path)
    parser.add_argument("--wheel")
    args = parser.parse_args(argv)
    if args.wheel:
        materialize(args.wheel, args.out)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            materialize(fetch_wheel(tmp), args.out)
    print(f"wrote {args.out}/u.data, u.user, u.item")


if __name__ == "__main__":
    main()
