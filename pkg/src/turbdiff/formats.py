"""On-disk formats: 16-bit PGM images, "ATDD" checkpoints, dataset
manifests, and key=value config files.

Everything here is bit-exact by construction: checkpoints round-trip
losslessly (save -> load -> save reproduces identical bytes), and PGM
quantization error is at most half of one 16-bit quantum per pixel.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .denoiser import DenoiserParams, NetSpec, param_shapes

MAGIC = b"ATDD"
FORMAT_VERSION = 1
PGM_MAXVAL = 65535


class DataError(Exception):
    """Malformed inputs or violated file/data contracts (CLI exit code 2)."""


# ---------------------------------------------------------------------------
# PGM images (binary P5, 16-bit big-endian, [0,1] mapped linearly)
# ---------------------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DataError(f"write_pgm: need a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise DataError("write_pgm: pixel values must be finite and in [0, 1]")
    q = np.floor(img * PGM_MAXVAL + 0.5).astype(">u2")  # round half up
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        f.write(q.tobytes())


def _pgm_token(f) -> bytes:
    """Next whitespace-delimited header token, skipping '#' comments."""
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise DataError("read_pgm: truncated header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a float64 [0, 1] image."""
    with open(path, "rb") as f:
        if _pgm_token(f) != b"P5":
            raise DataError(f"read_pgm: {path} is not a binary PGM (P5)")
        try:
            w = int(_pgm_token(f))
            h = int(_pgm_token(f))
            maxval = int(_pgm_token(f))
        except ValueError as e:
            raise DataError(f"read_pgm: bad header in {path}: {e}") from None
        if not (0 < maxval < 65536):
            raise DataError(f"read_pgm: bad maxval {maxval} in {path}")
        dtype = ">u2" if maxval > 255 else "u1"
        raw = f.read(w * h * np.dtype(dtype).itemsize)
    data = np.frombuffer(raw, dtype=dtype)
    if data.size != w * h:
        raise DataError(f"read_pgm: truncated pixel data in {path}")
    return data.reshape(h, w).astype(np.float64) / maxval


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class CheckpointMeta:
    """Self-describing header values of a checkpoint."""

    stage: str = "weak"
    step: int = 0
    gamma: float = 0.01
    gamma1: float = 0.9909
    seed: int = 0
    t_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class Checkpoint:
    student: DenoiserParams
    teacher: DenoiserParams | None
    opt_m: dict[str, np.ndarray] | None
    opt_v: dict[str, np.ndarray] | None
    meta: CheckpointMeta


def _header_text(spec: NetSpec, meta: CheckpointMeta, has_teacher: bool,
                 has_opt: bool) -> str:
    kv = {
        "image_size": spec.image_size,
        "widths": ",".join(str(w) for w in spec.widths),
        "emb_dim": spec.emb_dim,
        "groups": spec.groups,
        "cond_channels": spec.cond_channels,
        "out_channels": spec.out_channels,
        "stage": meta.stage,
        "step": meta.step,
        "gamma": repr(float(meta.gamma)),
        "gamma1": repr(float(meta.gamma1)),
        "seed": meta.seed,
        "t_steps": meta.t_steps,
        "beta_start": repr(float(meta.beta_start)),
        "beta_end": repr(float(meta.beta_end)),
        "has_teacher": int(has_teacher),
        "has_opt": int(has_opt),
    }
    return "".join(f"{k}={v}\n" for k, v in kv.items())


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"checkpoint: non-finite values in tensor {name}")
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<Q", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<Q", d))
    f.write(arr.astype("<f8", copy=False).tobytes())


def _read_tensor(f) -> tuple[str, np.ndarray]:
    raw = f.read(4)
    if len(raw) < 4:
        raise DataError("checkpoint: truncated tensor table")
    (nlen,) = struct.unpack("<I", raw)
    name = f.read(nlen).decode("utf-8")
    (rank,) = struct.unpack("<Q", f.read(8))
    dims = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
    n = int(np.prod(dims)) if dims else 1
    payload = f.read(8 * n)
    if len(payload) != 8 * n:
        raise DataError(f"checkpoint: truncated payload for tensor {name}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return name, arr


def save_checkpoint(path, student: DenoiserParams,
                    teacher: DenoiserParams | None = None,
                    opt_m: dict[str, np.ndarray] | None = None,
                    opt_v: dict[str, np.ndarray] | None = None,
                    meta: CheckpointMeta | None = None) -> None:
    meta = meta or CheckpointMeta()
    has_opt = opt_m is not None and opt_v is not None
    order = list(param_shapes(student.spec))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        header = _header_text(student.spec, meta, teacher is not None,
                              has_opt).encode("utf-8")
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for name in order:
            _write_tensor(f, f"student/{name}", student.tensors[name].data)
        if teacher is not None:
            if teacher.spec != student.spec:
                raise DataError("checkpoint: teacher/student descriptor mismatch")
            for name in order:
                _write_tensor(f, f"teacher/{name}", teacher.tensors[name].data)
        if has_opt:
            for name in order:
                _write_tensor(f, f"opt_m/{name}", opt_m[name])
            for name in order:
                _write_tensor(f, f"opt_v/{name}", opt_v[name])


def _parse_header(text: str) -> dict[str, str]:
    kv = {}
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"checkpoint: malformed header line {line!r}")
        k, v = line.split("=", 1)
        kv[k] = v
    return kv


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        f = io.BytesIO(fh.read())
    if f.read(4) != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", f.read(4))
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", f.read(4))
    kv = _parse_header(f.read(hlen).decode("utf-8"))
    try:
        spec = NetSpec(
            image_size=int(kv["image_size"]),
            widths=tuple(int(w) for w in kv["widths"].split(",")),
            emb_dim=int(kv["emb_dim"]),
            groups=int(kv["groups"]),
            cond_channels=int(kv["cond_channels"]),
            out_channels=int(kv["out_channels"]),
        )
        meta = CheckpointMeta(
            stage=kv["stage"], step=int(kv["step"]),
            gamma=float(kv["gamma"]), gamma1=float(kv["gamma1"]),
            seed=int(kv["seed"]), t_steps=int(kv["t_steps"]),
            beta_start=float(kv["beta_start"]), beta_end=float(kv["beta_end"]),
        )
        has_teacher = bool(int(kv["has_teacher"]))
        has_opt = bool(int(kv["has_opt"]))
    except (KeyError, ValueError) as e:
        raise DataError(f"checkpoint: bad header field: {e}") from None

    expected = param_shapes(spec)

    def read_group(prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name, shape in expected.items():
            got_name, arr = _read_tensor(f)
            if got_name != f"{prefix}/{name}":
                raise DataError(
                    f"checkpoint: expected tensor {prefix}/{name}, got {got_name}")
            if arr.shape != shape:
                raise DataError(
                    f"checkpoint: tensor {got_name} has shape {arr.shape}, "
                    f"descriptor implies {shape}")
            out[name] = arr
        return out

    student = DenoiserParams(spec, {k: Tensor(v, requires_grad=True)
                                    for k, v in read_group("student").items()})
    teacher = None
    if has_teacher:
        teacher = DenoiserParams(spec, {k: Tensor(v, requires_grad=False)
                                        for k, v in read_group("teacher").items()})
    opt_m = read_group("opt_m") if has_opt else None
    opt_v = read_group("opt_v") if has_opt else None
    return Checkpoint(student=student, teacher=teacher,
                      opt_m=opt_m, opt_v=opt_v, meta=meta)


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------

def write_manifest(path, rows) -> None:
    """One tab-separated line per item: id, clean, weak, strong, seed."""
    with open(path, "w", encoding="utf-8") as f:
        for item_id, clean, weak, strong, seed in rows:
            f.write(f"{item_id}\t{clean}\t{weak}\t{strong}\t{seed}\n")


def read_manifest(path) -> list[tuple[str, str, str, str, int]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"manifest line {ln}: expected 5 fields, "
                                f"got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2], parts[3], int(parts[4])))
    return rows


def load_dataset_dir(dirpath):
    """Load a generated dataset directory into memory.

    Returns (ids, clean, weak, strong) with image stacks shaped (N, 1, S, S)
    in [0, 1].  Holding 4096 32x32 triplets is ~100 MB, well within desk
    scale.
    """
    manifest = os.path.join(dirpath, "manifest.txt")
    if not os.path.exists(manifest):
        raise DataError(f"no manifest.txt in {dirpath}")
    rows = read_manifest(manifest)
    ids, clean, weak, strong = [], [], [], []
    for item_id, c, w, s, _seed in rows:
        ids.append(item_id)
        clean.append(read_pgm(os.path.join(dirpath, c)))
        weak.append(read_pgm(os.path.join(dirpath, w)))
        strong.append(read_pgm(os.path.join(dirpath, s)))
    if not ids:
        empty = np.empty((0, 1, 0, 0))
        return [], empty, empty.copy(), empty.copy()
    stack = [np.stack(a)[:, None] for a in (clean, weak, strong)]
    return ids, stack[0], stack[1], stack[2]


# ---------------------------------------------------------------------------
# key=value config files
# ---------------------------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    """Parse key=value lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {ln}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise DataError(f"config line {ln}: empty key")
        out[k] = v
    return out


def read_config_file(path, allowed_keys) -> dict[str, str]:
    """Parse a config file and reject unknown keys (all listed at once)."""
    with open(path, encoding="utf-8") as f:
        kv = parse_config_text(f.read())
    unknown = sorted(set(kv) - set(allowed_keys))
    if unknown:
        raise DataError(
            f"unknown config keys in {path}: {', '.join(unknown)} "
            f"(allowed: {', '.join(sorted(allowed_keys))})")
    return kv
