"""NIfTI-1 reading, writing and orientation canonicalization.

The parser is self-contained: a 348-byte header (little- or big-endian,
detected via sizeof_hdr), optional gzip container, and the common scalar
datatypes. Two layers are exposed:

* read_nifti / write_nifti operate on raw stored arrays and round-trip
  bit-identically for every supported datatype.
* parse_nifti builds a normalized, canonically oriented Volume (header
  scaling applied, intensities min-max mapped to [0,1], array axes
  reordered to the RAS convention).
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path

import numpy as np

from planemeta.errors import CorruptAffine, MalformedHeader, UnsupportedDatatype
from planemeta.ingest.types import Volume, min_max_normalize

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"   # data in the same file
MAGIC_PAIR = b"ni1\x00"     # data in a sibling .img file

# NIfTI datatype code -> numpy dtype character. Signed/unsigned 8/16/32-bit
# integers and 32/64-bit floats; everything else is rejected.
DATATYPES = {
    2: "u1",    # uint8
    4: "i2",    # int16
    8: "i4",    # int32
    16: "f4",   # float32
    64: "f8",   # float64
    256: "i1",  # int8
    512: "u2",  # uint16
    768: "u4",  # uint32
}
_DTYPE_TO_CODE = {np.dtype(v): k for k, v in DATATYPES.items()}
_BITPIX = {2: 8, 4: 16, 8: 32, 16: 32, 64: 64, 256: 8, 512: 16, 768: 32}

MAX_EXTENT = 1 << 15  # dim fields are int16

AXIS_CODES = "RAS"  # canonical: +x left->right, +y post->ant, +z inf->sup
_CODE_FOR_AXIS = {0: ("L", "R"), 1: ("P", "A"), 2: ("I", "S")}
_AXIS_FOR_CODE = {
    "R": (0, 1), "L": (0, -1),
    "A": (1, 1), "P": (1, -1),
    "S": (2, 1), "I": (2, -1),
}


@dataclass
class NiftiImage:
    """Raw decoded NIfTI-1 contents, before scaling or reorientation."""

    data: np.ndarray                       # stored dtype, shape (nx, ny, nz)
    spacing: tuple[float, float, float]
    affine: np.ndarray                     # 4x4 voxel->world map
    scl_slope: float
    scl_inter: float


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _detect_byteorder(header: bytes) -> str:
    for order in ("<", ">"):
        if struct.unpack(order + "i", header[:4])[0] == HEADER_SIZE:
            return order
    raise MalformedHeader(
        f"sizeof_hdr is not {HEADER_SIZE} in either byte order"
    )


def _quaternion_affine(order: str, header: bytes) -> np.ndarray:
    b, c, d = struct.unpack(order + "3f", header[256:268])
    qx, qy, qz = struct.unpack(order + "3f", header[268:280])
    pixdim = struct.unpack(order + "8f", header[76:108])
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    a_sq = 1.0 - (b * b + c * c + d * d)
    a = float(np.sqrt(max(a_sq, 0.0)))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    scales = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    affine = np.eye(4)
    affine[:3, :3] = rot * scales
    affine[:3, 3] = (qx, qy, qz)
    return affine


def read_nifti(path: str | Path) -> NiftiImage:
    """Decode a NIfTI-1 file (optionally gzipped) without any rescaling."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise MalformedHeader(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    header = raw[:HEADER_SIZE]
    order = _detect_byteorder(header)

    magic = header[344:348]
    if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
        raise MalformedHeader(f"{path}: bad magic {magic!r}")

    dim = struct.unpack(order + "8h", header[40:56])
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise MalformedHeader(f"{path}: dim[0]={ndim} out of range")
    extents = [max(1, dim[i]) for i in range(1, 4)]
    if any(dim[i] < 1 for i in range(1, min(ndim, 3) + 1)):
        raise MalformedHeader(f"{path}: non-positive extent in dim {dim[1:4]}")
    if any(e > MAX_EXTENT for e in extents):
        raise MalformedHeader(f"{path}: implausible extent in dim {dim[1:4]}")
    if ndim > 3 and any(dim[i] > 1 for i in range(4, ndim + 1)):
        raise MalformedHeader(f"{path}: 4D+ volumes are not supported")

    datatype = struct.unpack(order + "h", header[70:72])[0]
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"{path}: NIfTI datatype code {datatype}")
    dtype = np.dtype(order + DATATYPES[datatype])

    pixdim = struct.unpack(order + "8f", header[76:108])
    spacing = tuple(abs(p) if p != 0 else 1.0 for p in pixdim[1:4])

    vox_offset = struct.unpack(order + "f", header[108:112])[0]
    scl_slope, scl_inter = struct.unpack(order + "2f", header[112:120])

    nvox = extents[0] * extents[1] * extents[2]
    nbytes = nvox * dtype.itemsize
    if magic == MAGIC_SINGLE:
        offset = int(vox_offset) if vox_offset >= HEADER_SIZE + 4 else HEADER_SIZE + 4
        payload = raw[offset : offset + nbytes]
    else:
        img_path = path.with_suffix(".img")
        if not img_path.exists() and img_path.with_suffix(".img.gz").exists():
            img_path = img_path.with_suffix(".img.gz")
        if not img_path.exists():
            raise MalformedHeader(f"{path}: paired image file {img_path} not found")
        payload = _read_bytes(img_path)[: nbytes]
    if len(payload) < nbytes:
        raise MalformedHeader(f"{path}: truncated voxel payload")

    data = np.frombuffer(payload, dtype=dtype).reshape(extents, order="F")

    sform_code = struct.unpack(order + "h", header[254:256])[0]
    qform_code = struct.unpack(order + "h", header[252:254])[0]
    if sform_code > 0:
        affine = np.eye(4)
        affine[0, :] = struct.unpack(order + "4f", header[280:296])
        affine[1, :] = struct.unpack(order + "4f", header[296:312])
        affine[2, :] = struct.unpack(order + "4f", header[312:328])
    elif qform_code > 0:
        affine = _quaternion_affine(order, header)
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    return NiftiImage(
        data=data,
        spacing=spacing,
        affine=affine,
        scl_slope=float(scl_slope),
        scl_inter=float(scl_inter),
    )


def write_nifti(
    path: str | Path,
    data: np.ndarray,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    affine: np.ndarray | None = None,
    scl_slope: float = 0.0,
    scl_inter: float = 0.0,
    byteorder: str = "<",
    compress: bool | None = None,
) -> Path:
    """Serialize a 3D array as a single-file NIfTI-1 (.nii / .nii.gz).

    The stored dtype is data.dtype, which must be one of the supported
    datatypes; round-trips through read_nifti bit-identically.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {data.shape}")
    base_dtype = data.dtype.newbyteorder("=")
    if base_dtype not in _DTYPE_TO_CODE:
        raise UnsupportedDatatype(f"cannot serialize dtype {data.dtype}")
    code = _DTYPE_TO_CODE[base_dtype]
    if affine is None:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    header = bytearray(HEADER_SIZE)
    struct.pack_into(byteorder + "i", header, 0, HEADER_SIZE)
    struct.pack_into(byteorder + "8h", header, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into(byteorder + "h", header, 70, code)
    struct.pack_into(byteorder + "h", header, 72, _BITPIX[code])
    struct.pack_into(byteorder + "8f", header, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(byteorder + "f", header, 108, 352.0)  # vox_offset
    struct.pack_into(byteorder + "2f", header, 112, scl_slope, scl_inter)
    struct.pack_into(byteorder + "2h", header, 252, 0, 1)  # qform=0, sform=1
    struct.pack_into(byteorder + "4f", header, 280, *affine[0, :])
    struct.pack_into(byteorder + "4f", header, 296, *affine[1, :])
    struct.pack_into(byteorder + "4f", header, 312, *affine[2, :])
    header[344:348] = MAGIC_SINGLE

    stored = np.asfortranarray(data.astype(base_dtype.newbyteorder(byteorder), copy=False))
    blob = bytes(header) + b"\x00" * 4 + stored.tobytes(order="F")

    if compress is None:
        compress = path.name.endswith(".gz")
    if compress:
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)
    return path


def orientation_transform(affine: np.ndarray) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    """Derive (permutation, signs) mapping array axes to world axes.

    permutation[j] = world axis that array axis j mostly points along;
    signs[j] = +1 when increasing index moves toward the positive world
    direction. Chosen as the axis assignment maximizing total alignment.
    """
    mat = np.asarray(affine, dtype=float)[:3, :3]
    if not np.all(np.isfinite(mat)):
        raise CorruptAffine("affine contains non-finite entries")
    if abs(np.linalg.det(mat)) < 1e-12:
        raise CorruptAffine("affine is singular")

    best, best_score = None, -np.inf
    for perm in permutations(range(3)):
        score = sum(abs(mat[perm[j], j]) for j in range(3))
        if score > best_score:
            best, best_score = perm, score
    signs = tuple(1 if mat[best[j], j] >= 0 else -1 for j in range(3))
    return best, signs


def orientation_codes(affine: np.ndarray) -> str:
    """Axis-code string ('RAS', 'LPI', ...) for the given affine."""
    perm, signs = orientation_transform(affine)
    return "".join(
        _CODE_FOR_AXIS[perm[j]][1 if signs[j] > 0 else 0] for j in range(3)
    )


def canonicalize(data: np.ndarray, codes: str) -> np.ndarray:
    """Reorder/flip an array described by axis codes into RAS order.

    Idempotent: canonicalizing an already-RAS array returns it unchanged.
    """
    codes = codes.upper()
    if sorted(_AXIS_FOR_CODE[c][0] for c in codes) != [0, 1, 2]:
        raise CorruptAffine(f"invalid orientation codes {codes!r}")
    out = data
    # flip axes pointing the negative way, then permute into world order
    for j, c in enumerate(codes):
        if _AXIS_FOR_CODE[c][1] < 0:
            out = np.flip(out, axis=j)
    perm = [_AXIS_FOR_CODE[c][0] for c in codes]
    inverse = [perm.index(i) for i in range(3)]
    return np.transpose(out, inverse)


def parse_nifti(
    path: str | Path,
    assume_orientation: str | None = None,
    source_id: str | None = None,
) -> Volume:
    """Parse a NIfTI-1 file into a normalized, canonically oriented Volume.

    Header scale slope/intercept are applied before per-volume min-max
    normalization. When the affine is corrupt, assume_orientation (axis
    codes such as 'RAS' or 'LPI' describing the stored array) may be
    supplied instead of failing.
    """
    path = Path(path)
    img = read_nifti(path)

    values = img.data.astype(np.float64)
    # NIfTI convention: scaling applies only when scl_slope is nonzero
    if img.scl_slope != 0.0 and (img.scl_slope, img.scl_inter) != (1.0, 0.0):
        values = values * img.scl_slope + img.scl_inter

    try:
        codes = orientation_codes(img.affine)
    except CorruptAffine:
        if assume_orientation is None:
            raise
        codes = assume_orientation.upper()

    perm = [_AXIS_FOR_CODE[c][0] for c in codes]
    spacing_world = [0.0, 0.0, 0.0]
    for j in range(3):
        spacing_world[perm[j]] = img.spacing[j]

    voxels = min_max_normalize(canonicalize(values, codes))
    name = source_id if source_id is not None else path.name.split(".")[0]
    return Volume(
        voxels=np.ascontiguousarray(voxels),
        spacing=tuple(spacing_world),
        orientation=AXIS_CODES,
        source_id=name,
    )
