/**
 * Reader for the pipeline's binary little-endian PLY dialect:
 * per-vertex float x/y/z/nx/ny/nz + uchar red/green/blue, faces as
 * uchar count (always 3) + three uint32 indices.
 */

export interface ParsedMesh {
  vertexCount: number;
  faceCount: number;
  /** xyz triples, length 3 * vertexCount */
  positions: Float32Array;
  /** unit normals, length 3 * vertexCount */
  normals: Float32Array;
  /** rgb in [0, 1], length 3 * vertexCount */
  colors: Float32Array;
  /** vertex indices, length 3 * faceCount */
  indices: Uint32Array;
}

const VERTEX_STRIDE = 27; // 6 * f32 + 3 * u8
const FACE_STRIDE = 13; // u8 + 3 * u32

export function parsePly(buffer: ArrayBuffer): ParsedMesh {
  const bytes = new Uint8Array(buffer);
  const headerEnd = findHeaderEnd(bytes);
  const header = asciiSlice(bytes, 0, headerEnd);
  if (!header.startsWith("ply")) {
    throw new Error("not a PLY file");
  }
  if (!header.includes("binary_little_endian")) {
    throw new Error("only binary little-endian PLY is supported");
  }
  let vertexCount = 0;
  let faceCount = 0;
  for (const line of header.split("\n")) {
    if (line.startsWith("element vertex ")) {
      vertexCount = parseInt(line.split(" ")[2], 10);
    } else if (line.startsWith("element face ")) {
      faceCount = parseInt(line.split(" ")[2], 10);
    }
  }
  const body = headerEnd;
  const need = vertexCount * VERTEX_STRIDE + faceCount * FACE_STRIDE;
  if (bytes.length - body < need) {
    throw new Error(
      `truncated PLY payload: need ${body + need} bytes, have ${bytes.length}`,
    );
  }
  const view = new DataView(buffer);
  const positions = new Float32Array(vertexCount * 3);
  const normals = new Float32Array(vertexCount * 3);
  const colors = new Float32Array(vertexCount * 3);
  for (let i = 0; i < vertexCount; i++) {
    const off = body + i * VERTEX_STRIDE;
    positions[i * 3] = view.getFloat32(off, true);
    positions[i * 3 + 1] = view.getFloat32(off + 4, true);
    positions[i * 3 + 2] = view.getFloat32(off + 8, true);
    normals[i * 3] = view.getFloat32(off + 12, true);
    normals[i * 3 + 1] = view.getFloat32(off + 16, true);
    normals[i * 3 + 2] = view.getFloat32(off + 20, true);
    colors[i * 3] = view.getUint8(off + 24) / 255;
    colors[i * 3 + 1] = view.getUint8(off + 25) / 255;
    colors[i * 3 + 2] = view.getUint8(off + 26) / 255;
  }
  const faceBase = body + vertexCount * VERTEX_STRIDE;
  const indices = new Uint32Array(faceCount * 3);
  for (let i = 0; i < faceCount; i++) {
    const off = faceBase + i * FACE_STRIDE;
    const count = view.getUint8(off);
    if (count !== 3) {
      throw new Error(`face ${i} has ${count} vertices; expected triangles`);
    }
    indices[i * 3] = view.getUint32(off + 1, true);
    indices[i * 3 + 1] = view.getUint32(off + 5, true);
    indices[i * 3 + 2] = view.getUint32(off + 9, true);
  }
  return { vertexCount, faceCount, positions, normals, colors, indices };
}

function findHeaderEnd(bytes: Uint8Array): number {
  const marker = "end_header\n";
  const limit = Math.min(bytes.length, 64 * 1024);
  outer: for (let i = 0; i + marker.length <= limit; i++) {
    for (let j = 0; j < marker.length; j++) {
      if (bytes[i + j] !== marker.charCodeAt(j)) continue outer;
    }
    return i + marker.length;
  }
  throw new Error("PLY header terminator not found");
}

function asciiSlice(bytes: Uint8Array, start: number, end: number): string {
  let out = "";
  for (let i = start; i < end; i++) out += String.fromCharCode(bytes[i]);
  return out;
}
