"""Minimal glTF 2.0 / GLB reader producing triangulated MeshAssets.

Supports the subset needed for quality screening: positions, indices,
COLOR_0, base color factors, node transforms, and multiple primitives
(concatenated with remapped indices). Triangle strips and fans are expanded
to triangle lists; points/lines primitives are skipped with a warning.
"""
from __future__ import annotations

import base64
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .mesh import EmptyMeshError, MeshAsset, MeshError

__all__ = [
    "load_mesh",
    "UnsupportedFormatError",
    "CorruptContainerError",
    "EmptyMeshError",
]

GLB_MAGIC = 0x46546C67  # "glTF"
CHUNK_JSON = 0x4E4F534A
CHUNK_BIN = 0x004E4942

MODE_POINTS = 0
MODE_LINES = 1
MODE_LINE_LOOP = 2
MODE_LINE_STRIP = 3
MODE_TRIANGLES = 4
MODE_TRIANGLE_STRIP = 5
MODE_TRIANGLE_FAN = 6

_COMPONENT_DTYPES = {
    5120: np.int8,
    5121: np.uint8,
    5122: np.int16,
    5123: np.uint16,
    5125: np.uint32,
    5126: np.float32,
}

_TYPE_COMPONENTS = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4, "MAT4": 16}

_SUPPORTED_EXTENSIONS: frozenset[str] = frozenset()


class UnsupportedFormatError(MeshError):
    """The file is not a glTF 2.0 container we can read."""


class CorruptContainerError(MeshError):
    """The container violates its own offsets, lengths, or references."""


def load_mesh(path: Path | str, object_id: Optional[str] = None) -> MeshAsset:
    """Load a .glb or .gltf file into a triangulated MeshAsset.

    Raises UnsupportedFormatError for non-glTF-2.0 input,
    CorruptContainerError for offset/length/reference violations, and
    EmptyMeshError when no triangles remain after parsing.
    """
    path = Path(path)
    data = path.read_bytes()
    if object_id is None:
        object_id = path.stem

    if data[:4] == b"glTF":
        doc, bin_chunk = _parse_glb(data)
    else:
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise UnsupportedFormatError(f"{path}: neither GLB nor glTF JSON") from exc
        bin_chunk = None

    if not isinstance(doc, dict):
        raise CorruptContainerError(f"{path}: glTF root must be a JSON object")
    version = str(doc.get("asset", {}).get("version", ""))
    if not version.startswith("2."):
        raise UnsupportedFormatError(f"{path}: glTF version {version!r} is not supported (need 2.x)")
    unsupported = set(doc.get("extensionsRequired", [])) - _SUPPORTED_EXTENSIONS
    if unsupported:
        raise UnsupportedFormatError(f"{path}: requires unsupported extensions {sorted(unsupported)}")

    reader = _GltfReader(doc, bin_chunk, path)
    return reader.build_asset(object_id)


def _parse_glb(data: bytes) -> tuple[dict, Optional[bytes]]:
    if len(data) < 12:
        raise CorruptContainerError("GLB header truncated")
    magic, version, total_length = struct.unpack_from("<III", data, 0)
    if magic != GLB_MAGIC:
        raise UnsupportedFormatError("bad GLB magic")
    if version != 2:
        raise UnsupportedFormatError(f"GLB container version {version} is not supported")
    if total_length > len(data):
        raise CorruptContainerError(f"GLB declares {total_length} bytes but file has {len(data)}")

    offset = 12
    json_chunk: Optional[bytes] = None
    bin_chunk: Optional[bytes] = None
    while offset + 8 <= total_length:
        chunk_length, chunk_type = struct.unpack_from("<II", data, offset)
        offset += 8
        if offset + chunk_length > total_length:
            raise CorruptContainerError("GLB chunk extends past declared file length")
        chunk = data[offset : offset + chunk_length]
        if chunk_type == CHUNK_JSON and json_chunk is None:
            json_chunk = chunk
        elif chunk_type == CHUNK_BIN and bin_chunk is None:
            bin_chunk = chunk
        # Unknown chunk types are skipped per the container spec.
        offset += chunk_length + (-chunk_length % 4)

    if json_chunk is None:
        raise CorruptContainerError("GLB has no JSON chunk")
    try:
        doc = json.loads(json_chunk.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptContainerError(f"GLB JSON chunk is not valid JSON: {exc}") from exc
    return doc, bin_chunk


def _trs_matrix(node: dict) -> np.ndarray:
    if "matrix" in node:
        return np.asarray(node["matrix"], dtype=np.float64).reshape(4, 4, order="F")
    matrix = np.eye(4)
    if "scale" in node:
        matrix[:3, :3] = np.diag(np.asarray(node["scale"], dtype=np.float64))
    if "rotation" in node:
        x, y, z, w = (float(v) for v in node["rotation"])
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        matrix[:3, :3] = rot @ matrix[:3, :3]
    if "translation" in node:
        matrix[:3, 3] = np.asarray(node["translation"], dtype=np.float64)
    return matrix


class _GltfReader:
    def __init__(self, doc: dict, bin_chunk: Optional[bytes], path: Path):
        self.doc = doc
        self.bin_chunk = bin_chunk
        self.path = path
        self.warnings: list[str] = []
        self._buffer_cache: dict[int, bytes] = {}

    def _buffer(self, index: int) -> bytes:
        if index in self._buffer_cache:
            return self._buffer_cache[index]
        buffers = self.doc.get("buffers", [])
        if not 0 <= index < len(buffers):
            raise CorruptContainerError(f"buffer index {index} out of range")
        spec = buffers[index]
        uri = spec.get("uri")
        if uri is None:
            if self.bin_chunk is None:
                raise CorruptContainerError("buffer references the GLB BIN chunk but none is present")
            data = self.bin_chunk
        elif uri.startswith("data:"):
            try:
                _, b64 = uri.split(",", 1)
                data = base64.b64decode(b64)
            except (ValueError, base64.binascii.Error) as exc:
                raise CorruptContainerError(f"bad data URI in buffer {index}") from exc
        else:
            external = self.path.parent / uri
            if not external.is_file():
                raise CorruptContainerError(f"buffer {index} references missing file {uri!r}")
            data = external.read_bytes()
        declared = int(spec.get("byteLength", len(data)))
        if declared > len(data):
            raise CorruptContainerError(
                f"buffer {index} declares {declared} bytes but only {len(data)} are available"
            )
        self._buffer_cache[index] = data
        return data

    def _accessor(self, index: int) -> np.ndarray:
        accessors = self.doc.get("accessors", [])
        if not 0 <= index < len(accessors):
            raise CorruptContainerError(f"accessor index {index} out of range")
        acc = accessors[index]
        if "sparse" in acc:
            raise UnsupportedFormatError("sparse accessors are not supported")
        component = acc.get("componentType")
        if component not in _COMPONENT_DTYPES:
            raise CorruptContainerError(f"accessor {index}: unknown componentType {component}")
        kind = acc.get("type")
        if kind not in _TYPE_COMPONENTS:
            raise CorruptContainerError(f"accessor {index}: unknown type {kind!r}")
        dtype = np.dtype(_COMPONENT_DTYPES[component]).newbyteorder("<")
        n_comp = _TYPE_COMPONENTS[kind]
        count = int(acc.get("count", 0))
        elem_size = dtype.itemsize * n_comp

        if "bufferView" not in acc:
            return np.zeros((count, n_comp), dtype=dtype)

        views = self.doc.get("bufferViews", [])
        view_index = acc["bufferView"]
        if not 0 <= view_index < len(views):
            raise CorruptContainerError(f"accessor {index}: bufferView {view_index} out of range")
        view = views[view_index]
        buffer = self._buffer(int(view.get("buffer", 0)))
        view_offset = int(view.get("byteOffset", 0))
        view_length = int(view.get("byteLength", 0))
        if view_offset + view_length > len(buffer):
            raise CorruptContainerError(
                f"bufferView {view_index} range [{view_offset}, {view_offset + view_length}) "
                f"exceeds buffer of {len(buffer)} bytes"
            )
        stride = int(view.get("byteStride", 0)) or elem_size
        acc_offset = int(acc.get("byteOffset", 0))
        needed = acc_offset + (count - 1) * stride + elem_size if count else 0
        if needed > view_length:
            raise CorruptContainerError(
                f"accessor {index} needs {needed} bytes but bufferView {view_index} has {view_length}"
            )
        window = buffer[view_offset + acc_offset : view_offset + view_length]
        if stride == elem_size:
            flat = np.frombuffer(window, dtype=dtype, count=count * n_comp)
            return flat.reshape(count, n_comp)
        raw = np.frombuffer(window, dtype=np.uint8)
        gather = (np.arange(count)[:, None] * stride + np.arange(elem_size)[None, :]).astype(np.intp)
        packed = np.ascontiguousarray(raw[gather])
        return packed.view(dtype).reshape(count, n_comp)

    def _normalized_colors(self, index: int) -> np.ndarray:
        acc = self.doc["accessors"][index]
        values = self._accessor(index).astype(np.float64)
        component = acc.get("componentType")
        if component == 5121:
            values /= 255.0
        elif component == 5123:
            values /= 65535.0
        return np.clip(values[:, :3], 0.0, 1.0)

    def _base_color(self, material_index: Optional[int]) -> Optional[np.ndarray]:
        if material_index is None:
            return None
        materials = self.doc.get("materials", [])
        if not 0 <= material_index < len(materials):
            raise CorruptContainerError(f"material index {material_index} out of range")
        pbr = materials[material_index].get("pbrMetallicRoughness", {})
        factor = pbr.get("baseColorFactor")
        if factor is None:
            return None
        return np.clip(np.asarray(factor[:3], dtype=np.float64), 0.0, 1.0)

    def _triangulate(self, indices: np.ndarray, mode: int) -> Optional[np.ndarray]:
        n = len(indices)
        if mode == MODE_TRIANGLES:
            if n % 3:
                raise CorruptContainerError(f"TRIANGLES primitive has {n} indices (not divisible by 3)")
            return indices.reshape(-1, 3)
        if mode == MODE_TRIANGLE_STRIP:
            if n < 3:
                return np.zeros((0, 3), dtype=indices.dtype)
            tris = np.stack([indices[:-2], indices[1:-1], indices[2:]], axis=1)
            odd = np.arange(len(tris)) % 2 == 1
            tris[odd] = tris[odd][:, [1, 0, 2]]
            return tris
        if mode == MODE_TRIANGLE_FAN:
            if n < 3:
                return np.zeros((0, 3), dtype=indices.dtype)
            first = np.full(n - 2, indices[0], dtype=indices.dtype)
            return np.stack([first, indices[1:-1], indices[2:]], axis=1)
        self.warnings.append(f"skipped non-triangle primitive (mode {mode})")
        return None

    def _iter_mesh_instances(self):
        """Yield (mesh_index, world_matrix) for every drawn mesh instance."""
        nodes = self.doc.get("nodes", [])
        scenes = self.doc.get("scenes", [])
        if scenes:
            scene = scenes[int(self.doc.get("scene", 0))] if 0 <= int(self.doc.get("scene", 0)) < len(scenes) else scenes[0]
            roots = scene.get("nodes", [])
            stack = [(int(i), np.eye(4)) for i in roots]
            seen_meshes = False
            while stack:
                node_index, parent = stack.pop()
                if not 0 <= node_index < len(nodes):
                    raise CorruptContainerError(f"node index {node_index} out of range")
                node = nodes[node_index]
                world = parent @ _trs_matrix(node)
                if "mesh" in node:
                    seen_meshes = True
                    yield int(node["mesh"]), world
                for child in node.get("children", []):
                    stack.append((int(child), world))
            if seen_meshes:
                return
        # No scene graph (or none of its nodes draw a mesh): fall back to
        # drawing every mesh untransformed.
        for mesh_index in range(len(self.doc.get("meshes", []))):
            yield mesh_index, np.eye(4)

    def build_asset(self, object_id: str) -> MeshAsset:
        meshes = self.doc.get("meshes", [])
        all_vertices: list[np.ndarray] = []
        all_faces: list[np.ndarray] = []
        all_colors: list[Optional[np.ndarray]] = []
        vertex_base = 0

        for mesh_index, world in self._iter_mesh_instances():
            if not 0 <= mesh_index < len(meshes):
                raise CorruptContainerError(f"mesh index {mesh_index} out of range")
            for prim in meshes[mesh_index].get("primitives", []):
                mode = int(prim.get("mode", MODE_TRIANGLES))
                attributes = prim.get("attributes", {})
                if "POSITION" not in attributes:
                    raise CorruptContainerError("primitive has no POSITION attribute")
                positions = self._accessor(int(attributes["POSITION"])).astype(np.float64)
                if positions.shape[1] != 3:
                    raise CorruptContainerError("POSITION accessor is not VEC3")

                if "indices" in prim:
                    indices = self._accessor(int(prim["indices"])).reshape(-1).astype(np.int64)
                else:
                    indices = np.arange(len(positions), dtype=np.int64)
                if len(indices) and indices.max() >= len(positions):
                    raise CorruptContainerError(
                        f"index {int(indices.max())} out of range for {len(positions)} vertices"
                    )
                faces = self._triangulate(indices, mode)
                if faces is None or len(faces) == 0:
                    continue

                homogeneous = np.concatenate([positions, np.ones((len(positions), 1))], axis=1)
                transformed = (homogeneous @ world.T)[:, :3]

                colors: Optional[np.ndarray] = None
                if "COLOR_0" in attributes:
                    colors = self._normalized_colors(int(attributes["COLOR_0"]))
                    if len(colors) != len(positions):
                        raise CorruptContainerError("COLOR_0 count does not match POSITION count")
                else:
                    base = self._base_color(prim.get("material"))
                    if base is not None:
                        colors = np.tile(base, (len(positions), 1))

                all_vertices.append(transformed)
                all_faces.append(faces + vertex_base)
                all_colors.append(colors)
                vertex_base += len(positions)

        if not all_faces:
            raise EmptyMeshError(f"{self.path}: no triangles found")

        vertices = np.concatenate(all_vertices)
        faces = np.concatenate(all_faces)
        vertex_colors: Optional[np.ndarray] = None
        if any(c is not None for c in all_colors):
            filled = [
                c if c is not None else np.full((len(v), 3), 0.5)
                for c, v in zip(all_colors, all_vertices)
            ]
            vertex_colors = np.concatenate(filled)

        return MeshAsset(
            object_id=object_id,
            vertices=vertices,
            faces=faces,
            vertex_colors=vertex_colors,
            source_path=self.path,
            warnings=list(self.warnings),
        )
