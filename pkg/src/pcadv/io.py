"""Text formats: point clouds, dataset manifests, and the synthetic dataset."""
import csv
import os
from pathlib import Path

import numpy as np

from .geometry import SHAPES, PointCloud, sample_shape


class FormatError(ValueError):
    pass


def format_points(points):
    # repr round-trips float64 exactly
    return "".join(f"{repr(float(x))} {repr(float(y))} {repr(float(z))}\n" for x, y, z in points)


def write_cloud(path, cloud, normals_path=None):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    Path(path).write_text(format_points(pts))
    if normals_path is not None:
        if cloud.normals is None:
            raise ValueError("cloud has no normals to write")
        Path(normals_path).write_text(format_points(cloud.normals))


def _parse_rows(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise FormatError(f"{path}: no points")
    return np.array(rows)


def read_cloud(path, normals_path=None):
    pts = _parse_rows(path)
    normals = _parse_rows(normals_path) if normals_path is not None else None
    return PointCloud(pts, normals)


def write_manifest(path, entries):
    with open(path, "w", newline="") as fh:
        fh.write("path,label\n")
        for rel, label in entries:
            fh.write(f"{rel},{int(label)}\n")


def read_manifest(directory):
    """List of (cloud path, label) from ``directory/manifest.csv``."""
    directory = Path(directory)
    path = directory / "manifest.csv"
    if not path.is_file():
        raise FormatError(f"manifest not found: {path}")
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label"]:
            raise FormatError(f"{path}:1: expected header 'path,label', got {header}")
        for lineno, row in enumerate(reader, 2):
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 fields")
            try:
                label = int(row[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: label is not an integer") from None
            if label < 0:
                raise FormatError(f"{path}:{lineno}: negative label")
            entries.append((directory / row[0], label))
    return entries


def load_dataset(directory):
    return [(read_cloud(p), label) for p, label in read_manifest(directory)]


def synthetic_dataset(classes=SHAPES, per_class=100, points=256, seed=0):
    """Deterministic list of (cloud, label, sample_id) triples.

    Sample j of class c uses its own child seed, so the dataset is stable
    under changes to ``per_class`` ordering.
    """
    out = []
    for label, kind in enumerate(classes):
        for j in range(per_class):
            child = np.random.SeedSequence([seed, label, j])
            s = int(child.generate_state(1)[0])
            out.append((sample_shape(kind, points, s), label, f"{kind}_{j:04d}"))
    return out


def write_dataset(directory, classes=SHAPES, per_class=100, points=256, seed=0):
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for cloud, label, sid in synthetic_dataset(classes, per_class, points, seed):
            rel = f"{sid}.txt"
            write_cloud(directory / rel, cloud)
            entries.append((rel, label))
        write_manifest(directory / "manifest.csv", entries)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {directory}: {exc.strerror or exc}") from exc
    return entries


def sample_id(path):
    return os.path.splitext(os.path.basename(str(path)))[0]
