/** Surface picking: ray-cast a mesh and snap to the nearest vertex. */

import * as THREE from "three";
import type { ParsedMesh } from "./ply.js";
import type { Pick } from "./session.js";

export function buildGeometry(mesh: ParsedMesh): THREE.BufferGeometry {
  const geometry = new THREE.BufferGeometry();
  geometry.setAttribute("position", new THREE.BufferAttribute(mesh.positions, 3));
  geometry.setAttribute("normal", new THREE.BufferAttribute(mesh.normals, 3));
  geometry.setAttribute("color", new THREE.BufferAttribute(mesh.colors, 3));
  geometry.setIndex(new THREE.BufferAttribute(mesh.indices, 1));
  return geometry;
}

/**
 * The nearest surface intersection of a ray with a mesh, snapped to the
 * closest vertex of the hit triangle. Vertex snapping keeps exported
 * correspondences reproducible across sessions. Returns null on a miss.
 */
export function pickVertex(
  raycaster: THREE.Raycaster,
  object: THREE.Mesh,
): Pick | null {
  const hits = raycaster.intersectObject(object, false);
  if (hits.length === 0) return null;
  const hit = hits[0];
  if (hit.faceIndex === undefined || hit.faceIndex === null) return null;
  const geometry = object.geometry as THREE.BufferGeometry;
  const position = geometry.getAttribute("position") as THREE.BufferAttribute;
  const index = geometry.getIndex();
  const corner = (k: number): number =>
    index ? index.getX(hit.faceIndex! * 3 + k) : hit.faceIndex! * 3 + k;

  let bestIndex = -1;
  let bestDist = Infinity;
  const v = new THREE.Vector3();
  const local = object.worldToLocal(hit.point.clone());
  for (let k = 0; k < 3; k++) {
    const vi = corner(k);
    v.fromBufferAttribute(position, vi);
    const d = v.distanceToSquared(local);
    if (d < bestDist) {
      bestDist = d;
      bestIndex = vi;
    }
  }
  v.fromBufferAttribute(position, bestIndex);
  return {
    position: [v.x, v.y, v.z],
    vertexIndex: bestIndex,
  };
}

/** Ray through a canvas click for a given camera (NDC conversion). */
export function rayFromClick(
  clientX: number,
  clientY: number,
  rect: { left: number; top: number; width: number; height: number },
  camera: THREE.Camera,
): THREE.Raycaster {
  const ndc = new THREE.Vector2(
    ((clientX - rect.left) / rect.width) * 2 - 1,
    -((clientY - rect.top) / rect.height) * 2 + 1,
  );
  const raycaster = new THREE.Raycaster();
  raycaster.setFromCamera(ndc, camera);
  return raycaster;
}
