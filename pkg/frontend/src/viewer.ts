/** One 3D pane: mesh with vertex colors, orbit controls, pick markers. */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { buildGeometry, pickVertex, rayFromClick } from "./picking.js";
import type { ParsedMesh } from "./ply.js";
import type { Pick } from "./session.js";

export const MARKER_COLORS = [
  0xe6194b, 0x3cb44b, 0x4363d8, 0xf58231, 0x911eb4,
  0x46f0f0, 0xf032e6, 0xbcf60c, 0xfabebe, 0x008080,
];

function makeLabelSprite(text: string, color: number): THREE.Sprite {
  const canvas = document.createElement("canvas");
  canvas.width = canvas.height = 64;
  const ctx = canvas.getContext("2d")!;
  ctx.fillStyle = `#${color.toString(16).padStart(6, "0")}`;
  ctx.beginPath();
  ctx.arc(32, 32, 30, 0, 2 * Math.PI);
  ctx.fill();
  ctx.fillStyle = "#ffffff";
  ctx.font = "bold 36px system-ui, sans-serif";
  ctx.textAlign = "center";
  ctx.textBaseline = "middle";
  ctx.fillText(text, 32, 34);
  const texture = new THREE.CanvasTexture(canvas);
  const material = new THREE.SpriteMaterial({ map: texture, depthTest: false });
  return new THREE.Sprite(material);
}

export class ViewerPane {
  readonly canvas: HTMLCanvasElement;
  readonly scene: THREE.Scene;
  readonly camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private controls: OrbitControls;
  private mesh: THREE.Mesh | null = null;
  private markers = new THREE.Group();
  private onPick: ((pick: Pick) => void) | null = null;
  private onMiss: (() => void) | null = null;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
    this.scene = new THREE.Scene();
    this.scene.background = new THREE.Color(0x161a20);
    this.camera = new THREE.PerspectiveCamera(45, 1, 0.001, 100);
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.enableDamping = true;
    this.scene.add(this.markers);

    canvas.addEventListener("pointerdown", (ev) => {
      // Plain left click picks; drags orbit. Distinguish via a small
      // movement budget between down and up.
      const startX = ev.clientX;
      const startY = ev.clientY;
      const up = (ev2: PointerEvent) => {
        canvas.removeEventListener("pointerup", up);
        if (ev2.button !== 0) return;
        const moved = Math.hypot(ev2.clientX - startX, ev2.clientY - startY);
        if (moved > 4) return;
        this.handleClick(ev2);
      };
      canvas.addEventListener("pointerup", up);
    });

    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.resize();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  private resize() {
    const w = this.canvas.clientWidth;
    const h = this.canvas.clientHeight;
    if (w === 0 || h === 0) return;
    const current = this.renderer.getSize(new THREE.Vector2());
    if (current.x !== w || current.y !== h) {
      this.renderer.setSize(w, h, false);
      this.camera.aspect = w / h;
      this.camera.updateProjectionMatrix();
    }
  }

  setMesh(parsed: ParsedMesh): void {
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
    }
    const geometry = buildGeometry(parsed);
    const material = new THREE.MeshBasicMaterial({ vertexColors: true });
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);
    this.frame(geometry);
  }

  addOverlayMesh(parsed: ParsedMesh, transform: number[] | null,
                 tint: number): THREE.Mesh {
    const geometry = buildGeometry(parsed);
    const material = new THREE.MeshBasicMaterial({
      vertexColors: true,
      transparent: true,
      opacity: 0.75,
      color: tint,
    });
    const mesh = new THREE.Mesh(geometry, material);
    if (transform) {
      const m = new THREE.Matrix4();
      m.fromArray(transform); // row-major (service) -> three is column-major
      m.transpose();
      mesh.applyMatrix4(m);
    }
    this.scene.add(mesh);
    return mesh;
  }

  private frame(geometry: THREE.BufferGeometry) {
    geometry.computeBoundingSphere();
    const sphere = geometry.boundingSphere;
    if (!sphere) return;
    const r = Math.max(sphere.radius, 1e-6);
    this.controls.target.copy(sphere.center);
    this.camera.position.set(
      sphere.center.x + 2.2 * r,
      sphere.center.y - 2.2 * r,
      sphere.center.z + 1.4 * r,
    );
    this.camera.near = r / 100;
    this.camera.far = r * 100;
    this.camera.updateProjectionMatrix();
    this.controls.update();
  }

  setPickHandler(handler: (pick: Pick) => void, onMiss?: () => void): void {
    this.onPick = handler;
    this.onMiss = onMiss ?? null;
  }

  private handleClick(ev: PointerEvent) {
    if (!this.mesh || !this.onPick) return;
    const rect = this.canvas.getBoundingClientRect();
    const raycaster = rayFromClick(ev.clientX, ev.clientY, rect, this.camera);
    const pick = pickVertex(raycaster, this.mesh);
    if (pick) {
      this.onPick(pick);
    } else {
      // Background click: leave the pick list untouched, hint only.
      this.onMiss?.();
    }
  }

  /** Numbered, color-coded pick markers; index pairs them across panes. */
  showMarkers(picks: { position: [number, number, number] }[]): void {
    this.markers.clear();
    const sphere = this.mesh?.geometry.boundingSphere;
    const r = sphere ? sphere.radius : 1;
    for (let i = 0; i < picks.length; i++) {
      const color = MARKER_COLORS[i % MARKER_COLORS.length];
      const geom = new THREE.SphereGeometry(r * 0.02, 12, 12);
      const mat = new THREE.MeshBasicMaterial({ color });
      const marker = new THREE.Mesh(geom, mat);
      marker.position.fromArray(picks[i].position);
      this.markers.add(marker);
      const label = makeLabelSprite(String(i + 1), color);
      label.position.fromArray(picks[i].position);
      label.position.z += r * 0.05;
      label.scale.setScalar(r * 0.12);
      this.markers.add(label);
    }
  }
}
