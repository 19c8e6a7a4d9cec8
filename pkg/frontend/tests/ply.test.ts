import { describe, expect, it } from "vitest";
import { parsePly } from "../src/ply.js";

/** Build a PLY buffer in the pipeline's exact dialect. */
export function buildPly(
  vertices: [number, number, number][],
  normals: [number, number, number][],
  colors: [number, number, number][],
  faces: [number, number, number][],
): ArrayBuffer {
  const header = [
    "ply",
    "format binary_little_endian 1.0",
    `element vertex ${vertices.length}`,
    "property float x", "property float y", "property float z",
    "property float nx", "property float ny", "property float nz",
    "property uchar red", "property uchar green", "property uchar blue",
    `element face ${faces.length}`,
    "property list uchar uint vertex_indices",
    "end_header",
    "",
  ].join("\n");
  const headerBytes = new TextEncoder().encode(header);
  const total = headerBytes.length + vertices.length * 27 + faces.length * 13;
  const buf = new ArrayBuffer(total);
  const bytes = new Uint8Array(buf);
  bytes.set(headerBytes, 0);
  const view = new DataView(buf);
  let off = headerBytes.length;
  for (let i = 0; i < vertices.length; i++) {
    const [x, y, z] = vertices[i];
    const [nx, ny, nz] = normals[i];
    const [r, g, b] = colors[i];
    view.setFloat32(off, x, true);
    view.setFloat32(off + 4, y, true);
    view.setFloat32(off + 8, z, true);
    view.setFloat32(off + 12, nx, true);
    view.setFloat32(off + 16, ny, true);
    view.setFloat32(off + 20, nz, true);
    view.setUint8(off + 24, Math.round(r * 255));
    view.setUint8(off + 25, Math.round(g * 255));
    view.setUint8(off + 26, Math.round(b * 255));
    off += 27;
  }
  for (const [a, b, c] of faces) {
    view.setUint8(off, 3);
    view.setUint32(off + 1, a, true);
    view.setUint32(off + 5, b, true);
    view.setUint32(off + 9, c, true);
    off += 13;
  }
  return buf;
}

describe("parsePly", () => {
  it("round-trips a synthetic mesh", () => {
    const buf = buildPly(
      [[0, 0, 0], [1, 0, 0], [0, 1, 0.5]],
      [[0, 0, 1], [0, 0, 1], [0, 0, 1]],
      [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
      [[0, 1, 2]],
    );
    const mesh = parsePly(buf);
    expect(mesh.vertexCount).toBe(3);
    expect(mesh.faceCount).toBe(1);
    expect(mesh.positions[3]).toBeCloseTo(1, 6);
    expect(mesh.positions[8]).toBeCloseTo(0.5, 6);
    expect(mesh.normals[2]).toBeCloseTo(1, 6);
    expect(mesh.colors[0]).toBeCloseTo(1, 6);
    expect(mesh.colors[4]).toBeCloseTo(1, 6);
    expect(Array.from(mesh.indices)).toEqual([0, 1, 2]);
  });

  it("accepts an empty mesh", () => {
    const mesh = parsePly(buildPly([], [], [], []));
    expect(mesh.vertexCount).toBe(0);
    expect(mesh.faceCount).toBe(0);
  });

  it("rejects truncated payloads", () => {
    const buf = buildPly(
      [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
      [[0, 0, 1], [0, 0, 1], [0, 0, 1]],
      [[1, 1, 1], [1, 1, 1], [1, 1, 1]],
      [[0, 1, 2]],
    );
    expect(() => parsePly(buf.slice(0, buf.byteLength - 5))).toThrow(/truncated/);
  });

  it("rejects non-PLY data", () => {
    const junk = new TextEncoder().encode("hello world\nend_header\n").buffer;
    expect(() => parsePly(junk as ArrayBuffer)).toThrow(/not a PLY/);
  });
});
