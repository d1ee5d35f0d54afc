/** three.js viewer: GLB display with orbit interaction and a wireframe
 * overlay built once per asset (toggling never refetches). */

import * as THREE from "three";
import { GLTFLoader } from "three/examples/jsm/loaders/GLTFLoader.js";

import {
  initialViewerState,
  markError,
  markReady,
  orbitToPosition,
  rotateOrbit,
  toggleEdges,
  zoomOrbit,
  type ViewerState,
} from "./viewerState.js";

export interface ViewerHandle {
  readonly state: ViewerState;
  load(objectId: string, url: string): Promise<void>;
  toggleEdges(): void;
  dispose(): void;
}

export function createViewer(canvas: HTMLCanvasElement, onChange?: (s: ViewerState) => void): ViewerHandle {
  const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
  renderer.setSize(canvas.clientWidth || 640, canvas.clientHeight || 480, false);
  const scene = new THREE.Scene();
  scene.background = new THREE.Color(0xffffff);
  const camera = new THREE.PerspectiveCamera(40, (canvas.clientWidth || 640) / (canvas.clientHeight || 480), 0.01, 100);
  scene.add(new THREE.AmbientLight(0xffffff, 0.6));
  const headlight = new THREE.DirectionalLight(0xffffff, 1.2);
  scene.add(headlight);

  let state = initialViewerState();
  let modelGroup: THREE.Group | null = null;
  let edgeGroup: THREE.Group | null = null;
  let disposed = false;

  const loader = new GLTFLoader();

  function update(next: ViewerState): void {
    state = next;
    if (edgeGroup) edgeGroup.visible = state.edgesVisible;
    onChange?.(state);
  }

  function applyCamera(): void {
    const [x, y, z] = orbitToPosition(state.orbit);
    camera.position.set(x, y, z);
    camera.lookAt(0, 0, 0);
    headlight.position.copy(camera.position);
  }

  function renderFrame(): void {
    if (disposed) return;
    applyCamera();
    renderer.render(scene, camera);
    requestAnimationFrame(renderFrame);
  }
  requestAnimationFrame(renderFrame);

  function clearModel(): void {
    if (modelGroup) scene.remove(modelGroup);
    if (edgeGroup) scene.remove(edgeGroup);
    modelGroup = null;
    edgeGroup = null;
  }

  function buildEdgeOverlay(group: THREE.Group): THREE.Group {
    const edges = new THREE.Group();
    const material = new THREE.LineBasicMaterial({ color: 0x000000 });
    group.traverse((child) => {
      if ((child as THREE.Mesh).isMesh) {
        const mesh = child as THREE.Mesh;
        const segments = new THREE.LineSegments(new THREE.EdgesGeometry(mesh.geometry), material);
        segments.applyMatrix4(mesh.matrixWorld);
        edges.add(segments);
      }
    });
    return edges;
  }

  function fitToUnitSphere(group: THREE.Group): void {
    const box = new THREE.Box3().setFromObject(group);
    const center = box.getCenter(new THREE.Vector3());
    const radius = Math.max(box.getSize(new THREE.Vector3()).length() / 2, 1e-6);
    group.position.sub(center);
    group.scale.setScalar(1 / radius);
  }

  // Pointer orbit: drag rotates, wheel zooms.
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (event) => {
    dragging = true;
    lastX = event.clientX;
    lastY = event.clientY;
    canvas.setPointerCapture(event.pointerId);
  });
  canvas.addEventListener("pointermove", (event) => {
    if (!dragging) return;
    update(rotateOrbit(state, (event.clientX - lastX) * 0.4, (event.clientY - lastY) * -0.4));
    lastX = event.clientX;
    lastY = event.clientY;
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
  });
  canvas.addEventListener("wheel", (event) => {
    event.preventDefault();
    update(zoomOrbit(state, event.deltaY > 0 ? 1.1 : 0.9));
  });

  return {
    get state() {
      return state;
    },

    async load(objectId: string, url: string): Promise<void> {
      clearModel();
      update({ ...initialViewerState(objectId), orbit: state.orbit });
      try {
        const gltf = await loader.loadAsync(url);
        modelGroup = gltf.scene;
        modelGroup.updateMatrixWorld(true);
        fitToUnitSphere(modelGroup);
        edgeGroup = buildEdgeOverlay(modelGroup);
        edgeGroup.position.copy(modelGroup.position);
        edgeGroup.scale.copy(modelGroup.scale);
        edgeGroup.visible = false;
        scene.add(modelGroup);
        scene.add(edgeGroup);
        update(markReady(state));
      } catch (error) {
        update(markError(state));
        throw error;
      }
    },

    toggleEdges(): void {
      update(toggleEdges(state));
    },

    dispose(): void {
      disposed = true;
      clearModel();
      renderer.dispose();
    },
  };
}
