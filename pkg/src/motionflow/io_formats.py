"""Point cloud files (xyz / obj / ascii ply), checkpoints, episodes and CSV outputs."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .geometry import Episode, FlowField, PointCloud
from .morpher import LayerParams, MorpherNet, check_dimension_chain

FORMAT_VERSION = 1
CLOUD_FORMATS = ("xyz", "obj", "ply")


class FormatError(ValueError):
    """A file could not be parsed."""


class UnsupportedFormatError(FormatError):
    pass


class IncompatibleVersionError(FormatError):
    pass


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def infer_format(path) -> str:
    ext = Path(path).suffix.lower().lstrip(".")
    if ext not in CLOUD_FORMATS:
        raise UnsupportedFormatError(f"cannot infer cloud format from {str(path)!r}; use one of {CLOUD_FORMATS}")
    return ext


def _parse_floats(tokens, lineno, path):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise FormatError(f"{path}: line {lineno}: expected numbers, got {' '.join(tokens)!r}") from None


def _load_xyz(lines, path):
    pts = []
    for lineno, line in enumerate(lines, 1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) != 3:
            raise FormatError(f"{path}: line {lineno}: expected 3 coordinates, got {len(tokens)}")
        pts.append(_parse_floats(tokens, lineno, path))
    return pts


def _load_obj(lines, path):
    pts = []
    for lineno, line in enumerate(lines, 1):
        tokens = line.split()
        if not tokens or tokens[0] != "v":
            continue
        # optional 4th (w) or vertex colours after xyz are ignored
        if len(tokens) < 4:
            raise FormatError(f"{path}: line {lineno}: vertex needs 3 coordinates")
        pts.append(_parse_floats(tokens[1:4], lineno, path))
    return pts


def _load_ply(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}: line 1: missing 'ply' magic")
    n_vertex = None
    props: List[str] = []
    in_vertex = False
    header_end = None
    for lineno, line in enumerate(lines[1:], 2):
        tokens = line.split()
        if not tokens:
            continue
        key = tokens[0]
        if key == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise UnsupportedFormatError(f"{path}: only ascii PLY is supported, got {' '.join(tokens[1:])!r}")
        elif key == "element":
            in_vertex = len(tokens) >= 3 and tokens[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tokens[2])
                except ValueError:
                    raise FormatError(f"{path}: line {lineno}: bad vertex count") from None
        elif key == "property" and in_vertex:
            if tokens[1] == "list":
                raise FormatError(f"{path}: line {lineno}: list properties on vertices are not supported")
            props.append(tokens[-1])
        elif key == "end_header":
            header_end = lineno
            break
    if header_end is None:
        raise FormatError(f"{path}: missing end_header")
    if n_vertex is None:
        raise FormatError(f"{path}: no vertex element declared")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise FormatError(f"{path}: vertex element lacks x/y/z properties") from None
    pts = []
    lineno = header_end
    body = lines[header_end:]
    for offset, line in enumerate(body):
        if len(pts) == n_vertex:
            break
        lineno = header_end + offset + 1
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < len(props):
            raise FormatError(f"{path}: line {lineno}: expected {len(props)} values, got {len(tokens)}")
        vals = _parse_floats(tokens[: len(props)], lineno, path)
        pts.append([vals[c] for c in cols])
    if len(pts) != n_vertex:
        raise FormatError(f"{path}: header declares {n_vertex} vertices, found {len(pts)}")
    return pts


def load_cloud(path, format: Optional[str] = None, frame_id: int = 0) -> PointCloud:
    fmt = format or infer_format(path)
    if fmt not in CLOUD_FORMATS:
        raise UnsupportedFormatError(f"unknown cloud format {fmt!r}")
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        if fmt == "ply":
            raise UnsupportedFormatError(f"{path}: binary PLY is not supported") from None
        raise FormatError(f"{path}: file is not ascii text") from None
    lines = text.splitlines()
    loader = {"xyz": _load_xyz, "obj": _load_obj, "ply": _load_ply}[fmt]
    pts = loader(lines, path)
    if not pts:
        raise FormatError(f"{path}: no points found")
    try:
        return PointCloud(np.array(pts), frame_id)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_cloud(cloud: PointCloud, path, format: Optional[str] = None) -> None:
    fmt = format or infer_format(path)
    if len(cloud) == 0:
        raise ValueError("refusing to save an empty cloud")
    rows = [" ".join(_fmt(v) for v in p) for p in cloud.points.tolist()]
    if fmt == "xyz":
        lines = rows
    elif fmt == "obj":
        lines = ["v " + r for r in rows]
    elif fmt == "ply":
        lines = [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(cloud)}",
            "property double x",
            "property double y",
            "property double z",
            "end_header",
            *rows,
        ]
    else:
        raise UnsupportedFormatError(f"unknown cloud format {fmt!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def checkpoint_dict(net: MorpherNet, latents: Optional[Dict[str, np.ndarray]] = None, metadata=None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "latent_dim": net.latent_dim,
        "hidden_dims": net.hidden_dims,
        "layers": [{"weights": l.weights.tolist(), "bias": l.bias.tolist()} for l in net.layers],
        "metadata": dict(metadata or {}),
        "latents": [
            {"pair_id": pid, "z": np.asarray(z, dtype=np.float64).tolist()}
            for pid, z in (latents or {}).items()
        ],
    }


def save_checkpoint(net: MorpherNet, latents, path, metadata=None) -> None:
    """Write the net and latents as JSON (floats round-trip exactly)."""
    if hasattr(latents, "items"):
        latents = dict(latents.items())
    doc = checkpoint_dict(net, latents, metadata)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, allow_nan=False)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(net, latents, metadata)``; ``latents`` maps pair id to z."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid checkpoint JSON ({exc})") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise FormatError(f"{path}: not a checkpoint document")
    if doc["format_version"] != FORMAT_VERSION:
        raise IncompatibleVersionError(
            f"{path}: checkpoint format_version {doc['format_version']} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        latent_dim = int(doc["latent_dim"])
        layers = [
            LayerParams(np.array(l["weights"], dtype=np.float64), np.array(l["bias"], dtype=np.float64))
            for l in doc["layers"]
        ]
        hidden = [int(h) for h in doc["hidden_dims"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from None
    for k, l in enumerate(layers):
        if l.weights.ndim != 2:
            raise FormatError(f"{path}: layer {k} weights are not a matrix")
    try:
        check_dimension_chain(latent_dim, [(l.out_dim, l.in_dim, l.bias.shape) for l in layers])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if hidden != [l.out_dim for l in layers[:-1]]:
        raise FormatError(f"{path}: hidden_dims {hidden} disagree with the stored layers")
    net = MorpherNet(layers, latent_dim)
    latents = {}
    for rec in doc.get("latents", []):
        z = np.array(rec["z"], dtype=np.float64)
        if z.shape != (latent_dim,):
            raise FormatError(f"{path}: latent {rec.get('pair_id')!r} has length {z.size}, expected {latent_dim}")
        latents[str(rec["pair_id"])] = z
    return net, latents, doc.get("metadata", {})


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def save_loss_history(path, history: Sequence[float]) -> None:
    write_csv(path, ["step", "loss"], ((i, float(l)) for i, l in enumerate(history)))


def save_correspondence(path, positions: np.ndarray) -> None:
    write_csv(path, ["src_index", "x", "y", "z"], ((i, *map(float, p)) for i, p in enumerate(positions)))


def save_cma(path, curve) -> None:
    write_csv(path, ["delta", "accuracy"], zip(map(float, curve.thresholds), map(float, curve.accuracies)))


def save_episode(ep: Episode, directory) -> None:
    """Three xyz files plus ``manifest.json`` carrying the ground-truth flows."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for k, frame in enumerate(ep.frames):
        name = f"frame{k}.xyz"
        save_cloud(frame, d / name, "xyz")
        names.append(name)
    manifest = {
        "episode_id": ep.episode_id,
        "frames": names,
        "gt_flows": None if ep.gt_flows is None else [f.vectors.tolist() for f in ep.gt_flows],
    }
    (d / "manifest.json").write_text(json.dumps(manifest))


def load_episode(directory) -> Episode:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{d}/manifest.json: {exc}") from None
    frames = tuple(load_cloud(d / name, "xyz", frame_id=k) for k, name in enumerate(manifest["frames"]))
    flows = manifest.get("gt_flows")
    if flows is not None:
        flows = tuple(FlowField(np.array(f, dtype=np.float64).reshape(-1, 3), k) for k, f in enumerate(flows))
    return Episode(frames, flows, manifest["episode_id"])


def save_dataset(episodes: Sequence[Episode], directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = []
    for ep in episodes:
        save_episode(ep, d / ep.episode_id)
        ids.append(ep.episode_id)
    (d / "dataset.json").write_text(json.dumps({"episodes": ids}, indent=1))


def load_dataset(directory) -> List[Episode]:
    d = Path(directory)
    index = d / "dataset.json"
    if not index.exists():
        raise FormatError(f"{d}: no dataset.json found")
    ids = json.loads(index.read_text())["episodes"]
    return [load_episode(d / i) for i in ids]
