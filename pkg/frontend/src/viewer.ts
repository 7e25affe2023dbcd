/** three.js adapter: point-sprite cloud with orbit/zoom/pan, screen-space
 * picking, and per-point overlay colors driven by the state machine. */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { Cloud } from "./pcb";
import { overlayColors } from "./overlay";
import { pickNearest, ProjectedPoint } from "./picking";

const PICK_RADIUS_PX = 12;

export class Viewer {
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private controls: OrbitControls;
  private points: THREE.Points | null = null;
  private pinGroup = new THREE.Group();
  private cloud: Cloud | null = null;

  constructor(private canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(50, 1, 0.01, 100);
    this.camera.position.set(0, 0.6, 2.4);
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.enableDamping = true;
    this.scene.background = new THREE.Color(0x14161a);
    this.scene.add(this.pinGroup);
    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.resize();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  private resize(): void {
    const w = this.canvas.clientWidth || 800;
    const h = this.canvas.clientHeight || 600;
    if (this.canvas.width !== w || this.canvas.height !== h) {
      this.renderer.setSize(w, h, false);
      this.camera.aspect = w / h;
      this.camera.updateProjectionMatrix();
    }
  }

  setCloud(cloud: Cloud): void {
    this.cloud = cloud;
    if (this.points) this.scene.remove(this.points);
    const geo = new THREE.BufferGeometry();
    geo.setAttribute("position", new THREE.BufferAttribute(cloud.positions, 3));
    geo.setAttribute("color", new THREE.BufferAttribute(overlayColors(null, cloud.colors, cloud.n), 3));
    const mat = new THREE.PointsMaterial({ size: 0.02, vertexColors: true });
    this.points = new THREE.Points(geo, mat);
    this.scene.add(this.points);
    this.clearPins();
  }

  setOverlay(maskBytes: Uint8Array | null): void {
    if (!this.points || !this.cloud) return;
    const attr = this.points.geometry.getAttribute("color") as THREE.BufferAttribute;
    (attr.array as Float32Array).set(overlayColors(maskBytes, this.cloud.colors, this.cloud.n));
    attr.needsUpdate = true;
  }

  clearPins(): void {
    this.pinGroup.clear();
  }

  addPin(position: [number, number, number], label: 0 | 1): void {
    const geom = new THREE.SphereGeometry(0.015, 12, 12);
    const mat = new THREE.MeshBasicMaterial({ color: label ? 0x2ecc71 : 0xe74c3c });
    const pin = new THREE.Mesh(geom, mat);
    pin.position.set(position[0], position[1], position[2]);
    this.pinGroup.add(pin);
  }

  /** Nearest rendered point within a fixed pixel radius of the click. */
  pick(clientX: number, clientY: number): number | null {
    if (!this.cloud) return null;
    const rect = this.canvas.getBoundingClientRect();
    const sx = clientX - rect.left;
    const sy = clientY - rect.top;
    const w = rect.width;
    const h = rect.height;
    this.camera.updateMatrixWorld();
    const mvp = new THREE.Matrix4()
      .multiplyMatrices(this.camera.projectionMatrix, this.camera.matrixWorldInverse);
    const projected: ProjectedPoint[] = new Array(this.cloud.n);
    const v = new THREE.Vector4();
    for (let i = 0; i < this.cloud.n; i++) {
      v.set(this.cloud.positions[i * 3], this.cloud.positions[i * 3 + 1], this.cloud.positions[i * 3 + 2], 1);
      v.applyMatrix4(mvp);
      const visible = v.w > 0;
      projected[i] = {
        x: ((v.x / v.w) * 0.5 + 0.5) * w,
        y: (1 - ((v.y / v.w) * 0.5 + 0.5)) * h,
        depth: v.w,
        visible,
      };
    }
    return pickNearest(projected, sx, sy, PICK_RADIUS_PX);
  }

  pointAt(index: number): [number, number, number] {
    if (!this.cloud) throw new Error("no cloud");
    return [
      this.cloud.positions[index * 3],
      this.cloud.positions[index * 3 + 1],
      this.cloud.positions[index * 3 + 2],
    ];
  }
}
